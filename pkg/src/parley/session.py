"""Multi-room session core: participants, rooms, routing, and persistence.

Transport-free and clock-free; both the live server and the simulator drive
this object and interpret the resulting actions (timers, backend calls,
broadcasts) in their own scheduling worlds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from .backend import Persona, default_persona
from .context import export_transcript_jsonl
from .model import (
    EngineEvent,
    ParticipantId,
    ParticipantKind,
    Processed,
    ProtocolConfig,
    RoomChange,
    RoomId,
    RoomKind,
    Turn,
    TurnOrigin,
    UserSpeechEnd,
    UserSpeechStart,
    canonical_json,
    decode_log_line,
)
from .modes import AgentLocation, Mode, ModePolicy, policy_for
from .room import RoomRuntime

LOBBY_ID = "lobby"
TRAINING_ID = "training"
MAIN_ID = "main"


class NoSuchRoom(LookupError):
    pass


class NoSuchParticipant(LookupError):
    pass


class NotHost(PermissionError):
    pass


class NotInRoom(LookupError):
    pass


@dataclass
class SessionParticipant:
    pid: ParticipantId
    room: str


_INITIAL_LOCATION = {
    Mode.ROUNDTABLE: AgentLocation.AT_TABLE,
    Mode.PERIPHERAL: AgentLocation.OUTER_CIRCLE,
    Mode.BREAKOUT: AgentLocation.ABSENT,
}


def initial_policy(mode: Mode) -> ModePolicy:
    return policy_for(mode, _INITIAL_LOCATION[mode])


class Session:
    def __init__(
        self,
        session_id: str,
        mode: Mode,
        config: ProtocolConfig,
        persona: Optional[Persona] = None,
        agent_id: str = "A",
        started_at: int = 0,
    ):
        self.session_id = session_id
        self.mode = mode
        self.config = config
        self.persona = persona or default_persona()
        self.agent = ParticipantId(agent_id, ParticipantKind.AGENT)
        self.started_at = started_at
        self.participants: Dict[str, SessionParticipant] = {}
        self.room_ids: Dict[str, RoomId] = {
            LOBBY_ID: RoomId(LOBBY_ID, RoomKind.LOBBY),
            TRAINING_ID: RoomId(TRAINING_ID, RoomKind.TRAINING),
            MAIN_ID: RoomId(MAIN_ID, RoomKind.MAIN),
        }
        self.runtimes: Dict[str, Optional[RoomRuntime]] = {
            LOBBY_ID: None,
            TRAINING_ID: RoomRuntime(
                self.room_ids[TRAINING_ID],
                policy_for(Mode.ROUNDTABLE, AgentLocation.AT_TABLE),
                config,
                self.persona,
                self.agent,
                started_at,
                logged=False,
            ),
            MAIN_ID: RoomRuntime(
                self.room_ids[MAIN_ID], initial_policy(mode), config, self.persona, self.agent, started_at
            ),
        }

    # -- membership ----------------------------------------------------------

    def join(self, participant: ParticipantId) -> None:
        if participant.kind == ParticipantKind.AGENT:
            raise ValueError("the agent is instantiated per room, not joined")
        self.participants[participant.id] = SessionParticipant(participant, LOBBY_ID)

    def participant(self, pid: str) -> SessionParticipant:
        if pid not in self.participants:
            raise NoSuchParticipant(pid)
        return self.participants[pid]

    def room_of(self, pid: str) -> str:
        return self.participant(pid).room

    def occupants(self, room_id: str) -> List[ParticipantId]:
        return [p.pid for p in self.participants.values() if p.room == room_id]

    def runtime(self, room_id: str) -> Optional[RoomRuntime]:
        if room_id not in self.runtimes:
            raise NoSuchRoom(room_id)
        return self.runtimes[room_id]

    # -- movement --------------------------------------------------------------

    def move(self, pid: str, to_room: str, now: int) -> List[Processed]:
        part = self.participant(pid)
        if to_room not in self.room_ids:
            raise NoSuchRoom(to_room)
        from_room = part.room
        if from_room == to_room:
            return []
        part.room = to_room
        event_from = RoomChange(part.pid, self.room_ids[from_room], self.room_ids[to_room], now)
        processed: List[Processed] = []
        for room_id in (from_room, to_room):
            rt = self.runtimes.get(room_id)
            if rt is not None:
                _, actions = rt.handle(event_from, now)
                processed.append(Processed(room_id, event_from, tuple(actions)))
        return processed

    def host_move(self, issuer: ParticipantId, pid: str, to_room: str, now: int) -> List[Processed]:
        if issuer.kind != ParticipantKind.HOST:
            raise NotHost(issuer.id)
        return self.move(pid, to_room, now)

    def ensure_breakout(self, owner: ParticipantId) -> str:
        """Create the owner's private breakout room on first entry; it persists afterwards."""
        room_id = f"breakout-{owner.id}"
        if room_id not in self.room_ids:
            rid = RoomId(room_id, RoomKind.BREAKOUT, owner=owner)
            self.room_ids[room_id] = rid
            self.runtimes[room_id] = RoomRuntime(
                rid,
                policy_for(Mode.BREAKOUT, AgentLocation.IN_BREAKOUT),
                self.config,
                self.persona,
                self.agent,
                self.started_at,
            )
        return room_id

    def set_mode(self, room_id: str, mode: Mode, now: int) -> None:
        """Reset a discussion room to a fresh runtime under a new collaboration mode."""
        if room_id not in self.room_ids or self.room_ids[room_id].kind not in (RoomKind.MAIN, RoomKind.TRAINING):
            raise NoSuchRoom(room_id)
        if room_id == MAIN_ID:
            self.mode = mode
        self.runtimes[room_id] = RoomRuntime(
            self.room_ids[room_id], initial_policy(mode), self.config, self.persona, self.agent, self.started_at
        )

    # -- speech routing ----------------------------------------------------------

    def route_speech_start(self, pid: str, now: int) -> List[Processed]:
        part = self.participant(pid)
        rt = self.runtimes.get(part.room)
        if rt is None or part.pid.kind == ParticipantKind.HOST:
            return []
        event = UserSpeechStart(part.pid, rt.room, now)
        _, actions = rt.handle(event, now)
        return [Processed(part.room, event, tuple(actions))]

    def route_speech_end(self, pid: str, text: str, started_at: int, now: int) -> List[Processed]:
        part = self.participant(pid)
        rt = self.runtimes.get(part.room)
        if rt is None or part.pid.kind == ParticipantKind.HOST:
            return []
        turn = Turn(
            seq=0,  # stamped by the room runtime
            speaker=part.pid,
            room=rt.room,
            text=text,
            started_at=started_at,
            ended_at=now,
            origin=TurnOrigin.HUMAN_SPEECH,
        )
        event = UserSpeechEnd(turn, now)
        final_event, actions = rt.handle(event, now)
        return [Processed(part.room, final_event, tuple(actions))]

    def deliver(self, room_id: str, event: EngineEvent, now: int) -> List[Processed]:
        """Inject a timer fire or backend response into a room's engine loop."""
        rt = self.runtime(room_id)
        if rt is None:
            return []
        _, actions = rt.handle(event, now)
        return [Processed(room_id, event, tuple(actions))]

    # -- persistence ----------------------------------------------------------

    def _header(self, room_id: str) -> str:
        rt = self.runtimes[room_id]
        assert rt is not None
        return canonical_json(
            {
                "cat": "header",
                "session": self.session_id,
                "room": self.room_ids[room_id].to_json(),
                "mode": self.mode.value,
                "agentName": self.persona.name,
                "initialPolicy": initial_runtime_policy_json(self, room_id),
                "config": self.config.to_json(),
            }
        )

    def persist(self, log_dir) -> List[Path]:
        """Flush per-room event logs and transcript files; returns the paths written."""
        out_dir = Path(log_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written: List[Path] = []
        for room_id, rt in sorted(self.runtimes.items()):
            if rt is None or not rt.logged:
                continue
            log_path = out_dir / f"{self.session_id}.{room_id}.jsonl"
            log_path.write_text("\n".join([self._header(room_id)] + rt.log) + "\n")
            written.append(log_path)
            transcript_path = out_dir / f"{self.session_id}.{room_id}.transcript.jsonl"
            transcript_path.write_text(
                "\n".join(export_transcript_jsonl(rt.full_history, rt.transcript.summary)) + "\n"
            )
            written.append(transcript_path)
        return written


def initial_runtime_policy_json(session: Session, room_id: str) -> dict:
    room = session.room_ids[room_id]
    if room.kind == RoomKind.BREAKOUT:
        return policy_for(Mode.BREAKOUT, AgentLocation.IN_BREAKOUT).to_json()
    if room.kind == RoomKind.TRAINING:
        return policy_for(Mode.ROUNDTABLE, AgentLocation.AT_TABLE).to_json()
    return initial_policy(session.mode).to_json()


def replay_room_log(path) -> List[str]:
    """Re-run a persisted room log through a fresh runtime; returns the regenerated lines.

    Every source of nondeterminism (backend replies, timer fires) is an event
    in the log, so replay needs no backend and no timers: persist -> replay ->
    persist is a fixed point.
    """
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    room = RoomId.from_json(header["room"])
    config = ProtocolConfig.from_json(header["config"])
    policy = ModePolicy.from_json(header["initialPolicy"])
    persona = Persona(name=header["agentName"], system_prompt="replay")
    agent = ParticipantId("A", ParticipantKind.AGENT)
    rt = RoomRuntime(room, policy, config, persona, agent)
    for line in lines[1:]:
        if not line.strip():
            continue
        t, cat, item = decode_log_line(line)
        if cat == "event":
            rt.handle(item, t)
    replayed_header = dict(header)
    return [canonical_json_header(replayed_header)] + rt.log


def canonical_json_header(header: dict) -> str:
    return canonical_json(header)
