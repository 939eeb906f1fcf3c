from __future__ import annotations

import pytest

from conftest import AGENT, D1, D2, HOST
from parley.model import Command, CommandName, ProtocolConfig
from parley.modes import (
    AgentLocation,
    IllegalPair,
    Mode,
    NoSuchPartner,
    NotPermitted,
    UserControl,
    apply_command,
    legal_pairs,
    policy_for,
)
from parley.session import MAIN_ID, Session


# The full capability/control table, exhaustively.
EXPECTED = {
    (Mode.ROUNDTABLE, AgentLocation.AT_TABLE): ((True, True, True, True), set()),
    (Mode.PERIPHERAL, AgentLocation.OUTER_CIRCLE): ((False, False, True, False), {UserControl.INVITE_AGENT}),
    (Mode.PERIPHERAL, AgentLocation.AT_TABLE): ((True, True, True, True), {UserControl.REMOVE_AGENT}),
    (Mode.BREAKOUT, AgentLocation.ABSENT): (
        (False, False, False, False),
        {UserControl.ENTER_BREAKOUT, UserControl.CALL_BACK_PARTNER},
    ),
    (Mode.BREAKOUT, AgentLocation.IN_BREAKOUT): ((True, True, True, True), {UserControl.RETURN_MAIN}),
}


def test_policy_table_is_exact():
    assert set(legal_pairs()) == set(EXPECTED)
    for (mode, location), (caps, controls) in EXPECTED.items():
        policy = policy_for(mode, location)
        assert (
            policy.proactive_speech,
            policy.reactive_speech,
            policy.hand_raise,
            policy.hand_raise_ping,
        ) == caps, (mode, location)
        assert set(policy.user_controls) == controls, (mode, location)


@pytest.mark.parametrize(
    "mode,location",
    [
        (Mode.ROUNDTABLE, AgentLocation.OUTER_CIRCLE),
        (Mode.ROUNDTABLE, AgentLocation.ABSENT),
        (Mode.ROUNDTABLE, AgentLocation.IN_BREAKOUT),
        (Mode.PERIPHERAL, AgentLocation.ABSENT),
        (Mode.PERIPHERAL, AgentLocation.IN_BREAKOUT),
        (Mode.BREAKOUT, AgentLocation.AT_TABLE),
        (Mode.BREAKOUT, AgentLocation.OUTER_CIRCLE),
    ],
)
def test_illegal_pairs_raise(mode, location):
    with pytest.raises(IllegalPair):
        policy_for(mode, location)


def make_session(mode: Mode) -> Session:
    session = Session("s", mode, ProtocolConfig())
    session.join(D1)
    session.join(D2)
    session.host_move(HOST, "D1", MAIN_ID, 0)
    session.host_move(HOST, "D2", MAIN_ID, 0)
    return session


def test_invite_moves_agent_to_table_and_preserves_hand():
    session = make_session(Mode.PERIPHERAL)
    rt = session.runtimes[MAIN_ID]
    from dataclasses import replace

    from parley.engine import HandState
    from parley.model import TimerKind

    rt.state = replace(
        rt.state, hand=HandState(raised_at=500, pending_candidate="held thought"), live_timers={TimerKind.HAND_TIMEOUT: 1}
    )
    processed, _ = apply_command(session, Command(CommandName.INVITE_AGENT, D1), 1000)
    assert rt.policy.agent_location == AgentLocation.AT_TABLE
    assert rt.state.hand is not None and rt.state.hand.pending_candidate == "held thought"


def test_remove_clears_hand():
    session = make_session(Mode.PERIPHERAL)
    rt = session.runtimes[MAIN_ID]
    apply_command(session, Command(CommandName.INVITE_AGENT, D1), 1000)
    from dataclasses import replace

    from parley.engine import HandState
    from parley.model import LowerHand, TimerKind

    rt.state = replace(rt.state, hand=HandState(raised_at=2000), live_timers={TimerKind.HAND_TIMEOUT: 9})
    processed, _ = apply_command(session, Command(CommandName.REMOVE_AGENT, D2), 3000)
    assert rt.policy.agent_location == AgentLocation.OUTER_CIRCLE
    assert rt.state.hand is None
    assert any(LowerHand() in p.actions for p in processed)


def test_invite_when_at_table_is_noop_not_error():
    session = make_session(Mode.PERIPHERAL)
    apply_command(session, Command(CommandName.INVITE_AGENT, D1), 1000)
    processed, _ = apply_command(session, Command(CommandName.INVITE_AGENT, D1), 2000)
    assert session.runtimes[MAIN_ID].policy.agent_location == AgentLocation.AT_TABLE


def test_remove_agent_not_permitted_in_roundtable():
    session = make_session(Mode.ROUNDTABLE)
    with pytest.raises(NotPermitted):
        apply_command(session, Command(CommandName.REMOVE_AGENT, D1), 1000)


def test_enter_breakout_creates_isolated_agent_context():
    session = make_session(Mode.BREAKOUT)
    # Main room chatter first; the breakout agent must not see it.
    session.route_speech_start("D1", 1000)
    session.route_speech_end("D1", "main room planning", 1000, 2500)
    apply_command(session, Command(CommandName.ENTER_BREAKOUT, D1), 3000)
    assert session.room_of("D1") == "breakout-D1"
    breakout_rt = session.runtimes["breakout-D1"]
    assert breakout_rt.transcript.turns == ()
    assert breakout_rt.policy.agent_location == AgentLocation.IN_BREAKOUT
    # Context persists across re-entry within the session.
    session.route_speech_start("D1", 4000)
    session.route_speech_end("D1", "private question", 4000, 5000)
    apply_command(session, Command(CommandName.RETURN_MAIN, D1), 6000)
    apply_command(session, Command(CommandName.ENTER_BREAKOUT, D1), 7000)
    assert [t.text for t in session.runtimes["breakout-D1"].transcript.turns] == ["private question"]


def test_call_back_partner_delivers_request():
    session = make_session(Mode.BREAKOUT)
    apply_command(session, Command(CommandName.ENTER_BREAKOUT, D2), 1000)
    processed, deliveries = apply_command(session, Command(CommandName.CALL_BACK_PARTNER, D1), 2000)
    assert deliveries == [("D2", {"type": "call_back_request", "from": D1.to_json()})]
    # It requests, never forces: D2 is still in the breakout.
    assert session.room_of("D2") == "breakout-D2"


def test_call_back_without_partner_errors():
    session = make_session(Mode.BREAKOUT)
    with pytest.raises(NoSuchPartner):
        apply_command(session, Command(CommandName.CALL_BACK_PARTNER, D1), 1000)


def test_agent_cannot_issue_commands():
    session = make_session(Mode.PERIPHERAL)
    with pytest.raises(NotPermitted):
        apply_command(session, Command(CommandName.INVITE_AGENT, AGENT), 1000)


def test_outer_circle_hand_raise_has_no_ping():
    assert policy_for(Mode.PERIPHERAL, AgentLocation.OUTER_CIRCLE).hand_raise_ping is False
    assert policy_for(Mode.ROUNDTABLE, AgentLocation.AT_TABLE).hand_raise_ping is True
