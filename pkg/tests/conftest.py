from __future__ import annotations

import pytest

from parley.engine import initial_state
from parley.model import (
    ParticipantId,
    ParticipantKind,
    ProtocolConfig,
    RoomId,
    RoomKind,
    Turn,
    TurnOrigin,
)
from parley.modes import AgentLocation, Mode, policy_for

D1 = ParticipantId("D1", ParticipantKind.HUMAN)
D2 = ParticipantId("D2", ParticipantKind.HUMAN)
AGENT = ParticipantId("A", ParticipantKind.AGENT)
HOST = ParticipantId("H", ParticipantKind.HOST)
MAIN = RoomId("main", RoomKind.MAIN)


@pytest.fixture
def config() -> ProtocolConfig:
    return ProtocolConfig()


def human_turn(seq: int, text: str, started: int, ended: int, speaker: ParticipantId = D1, room: RoomId = MAIN) -> Turn:
    return Turn(
        seq=seq,
        speaker=speaker,
        room=room,
        text=text,
        started_at=started,
        ended_at=ended,
        origin=TurnOrigin.HUMAN_SPEECH,
    )


def agent_turn(seq: int, text: str, at: int, origin: TurnOrigin = TurnOrigin.REACTIVE, room: RoomId = MAIN) -> Turn:
    return Turn(seq=seq, speaker=AGENT, room=room, text=text, started_at=at, ended_at=at, origin=origin)


def roundtable_state(**overrides):
    state = initial_state(MAIN, policy_for(Mode.ROUNDTABLE, AgentLocation.AT_TABLE))
    if overrides:
        from dataclasses import replace

        state = replace(state, **overrides)
    return state
