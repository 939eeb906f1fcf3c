"""Collaboration-mode policy layer: agent capability sets and legal user controls per mode."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, FrozenSet, List, Optional, Tuple

from .model import Command, CommandName, ModeCommandEvent, ParticipantKind, Processed, RoomKind

if TYPE_CHECKING:
    from .session import Session


class Mode(str, Enum):
    ROUNDTABLE = "roundtable"
    PERIPHERAL = "peripheral"
    BREAKOUT = "breakout"


class AgentLocation(str, Enum):
    AT_TABLE = "at_table"
    OUTER_CIRCLE = "outer_circle"
    ABSENT = "absent"
    IN_BREAKOUT = "in_breakout"


class UserControl(str, Enum):
    INVITE_AGENT = "invite_agent"
    REMOVE_AGENT = "remove_agent"
    ENTER_BREAKOUT = "enter_breakout"
    RETURN_MAIN = "return_main"
    CALL_BACK_PARTNER = "call_back_partner"


class IllegalPair(ValueError):
    """Raised for (mode, location) combinations that cannot occur."""


class NotPermitted(PermissionError):
    """Raised when a command is outside the issuer's current control set."""


class NoSuchPartner(LookupError):
    """Raised for call-back when no other human is in a breakout room."""


@dataclass(frozen=True)
class ModePolicy:
    mode: Mode
    agent_location: AgentLocation
    proactive_speech: bool
    reactive_speech: bool
    hand_raise: bool
    hand_raise_ping: bool
    user_controls: FrozenSet[UserControl]

    @property
    def agent_present(self) -> bool:
        return self.agent_location != AgentLocation.ABSENT

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "agentLocation": self.agent_location.value,
            "capabilities": {
                "proactiveSpeech": self.proactive_speech,
                "reactiveSpeech": self.reactive_speech,
                "handRaise": self.hand_raise,
                "handRaisePing": self.hand_raise_ping,
            },
            "userControls": sorted(c.value for c in self.user_controls),
        }

    @classmethod
    def from_json(cls, data: dict) -> "ModePolicy":
        caps = data["capabilities"]
        return cls(
            mode=Mode(data["mode"]),
            agent_location=AgentLocation(data["agentLocation"]),
            proactive_speech=caps["proactiveSpeech"],
            reactive_speech=caps["reactiveSpeech"],
            hand_raise=caps["handRaise"],
            hand_raise_ping=caps["handRaisePing"],
            user_controls=frozenset(UserControl(c) for c in data["userControls"]),
        )


# (mode, location) -> (proactive, reactive, handRaise, ping, controls)
_POLICY_TABLE = {
    (Mode.ROUNDTABLE, AgentLocation.AT_TABLE): (True, True, True, True, frozenset()),
    (Mode.PERIPHERAL, AgentLocation.OUTER_CIRCLE): (
        False,
        False,
        True,
        False,
        frozenset({UserControl.INVITE_AGENT}),
    ),
    (Mode.PERIPHERAL, AgentLocation.AT_TABLE): (True, True, True, True, frozenset({UserControl.REMOVE_AGENT})),
    (Mode.BREAKOUT, AgentLocation.ABSENT): (
        False,
        False,
        False,
        False,
        frozenset({UserControl.ENTER_BREAKOUT, UserControl.CALL_BACK_PARTNER}),
    ),
    (Mode.BREAKOUT, AgentLocation.IN_BREAKOUT): (True, True, True, True, frozenset({UserControl.RETURN_MAIN})),
}


def policy_for(mode: Mode, agent_location: AgentLocation) -> ModePolicy:
    """Capability set and user controls for a legal (mode, agent location) pair."""
    key = (mode, agent_location)
    if key not in _POLICY_TABLE:
        raise IllegalPair(f"no policy for mode={mode.value} location={agent_location.value}")
    proactive, reactive, hand, ping, controls = _POLICY_TABLE[key]
    return ModePolicy(
        mode=mode,
        agent_location=agent_location,
        proactive_speech=proactive,
        reactive_speech=reactive,
        hand_raise=hand,
        hand_raise_ping=ping,
        user_controls=controls,
    )


def legal_pairs() -> list[tuple[Mode, AgentLocation]]:
    return list(_POLICY_TABLE.keys())


# Invite/remove toggle the agent's location inside Peripheral mode; repeating a
# toggle that is already in effect is a tolerated no-op, not an error.
_TOGGLE_TARGET = {
    CommandName.INVITE_AGENT: AgentLocation.AT_TABLE,
    CommandName.REMOVE_AGENT: AgentLocation.OUTER_CIRCLE,
}

_CONTROL_FOR_COMMAND = {
    CommandName.INVITE_AGENT: UserControl.INVITE_AGENT,
    CommandName.REMOVE_AGENT: UserControl.REMOVE_AGENT,
    CommandName.ENTER_BREAKOUT: UserControl.ENTER_BREAKOUT,
    CommandName.RETURN_MAIN: UserControl.RETURN_MAIN,
    CommandName.CALL_BACK_PARTNER: UserControl.CALL_BACK_PARTNER,
}


def command_allowed(policy: ModePolicy, cmd: CommandName) -> bool:
    """Whether `cmd` is legal under `policy`, counting idempotent toggle repeats as allowed."""
    control = _CONTROL_FOR_COMMAND[cmd]
    if control in policy.user_controls:
        return True
    if cmd in _TOGGLE_TARGET and policy.mode == Mode.PERIPHERAL:
        # The complementary toggle is always reachable in Peripheral; a repeat is a no-op.
        return policy.agent_location == _TOGGLE_TARGET[cmd]
    return False


def toggled_location(policy: ModePolicy, cmd: CommandName) -> Optional[AgentLocation]:
    """New agent location for invite/remove, or None when the command is a no-op repeat."""
    target = _TOGGLE_TARGET[cmd]
    if policy.agent_location == target:
        return None
    return target


Delivery = Tuple[str, dict]  # (target participant id, wire payload)


def apply_command(session: "Session", command: Command, now: int) -> Tuple[List[Processed], List[Delivery]]:
    """Process a user mode command against the session.

    Invite/remove toggle the agent's location in the issuer's room; breakout
    navigation moves the issuer; call-back delivers a request, never a force.
    """
    issuer = command.issuer
    if issuer.kind != ParticipantKind.HUMAN:
        raise NotPermitted("mode commands are issued by humans")
    part = session.participant(issuer.id)
    rt = session.runtimes.get(part.room)
    if rt is None:
        raise NotPermitted(f"no agent controls in room {part.room}")
    if not command_allowed(rt.policy, command.cmd):
        raise NotPermitted(command.cmd.value)

    processed: List[Processed] = []
    deliveries: List[Delivery] = []
    if command.cmd in (CommandName.INVITE_AGENT, CommandName.REMOVE_AGENT):
        event = ModeCommandEvent(command, now)
        _, actions = rt.handle(event, now)
        processed.append(Processed(part.room, event, tuple(actions)))
    elif command.cmd == CommandName.ENTER_BREAKOUT:
        room_id = session.ensure_breakout(issuer)
        processed.extend(session.move(issuer.id, room_id, now))
    elif command.cmd == CommandName.RETURN_MAIN:
        from .session import MAIN_ID

        processed.extend(session.move(issuer.id, MAIN_ID, now))
    elif command.cmd == CommandName.CALL_BACK_PARTNER:
        partner = None
        for p in sorted(session.participants.values(), key=lambda sp: sp.pid.id):
            if p.pid.kind != ParticipantKind.HUMAN or p.pid.id == issuer.id:
                continue
            if session.room_ids[p.room].kind == RoomKind.BREAKOUT:
                partner = p
                break
        if partner is None:
            raise NoSuchPartner(issuer.id)
        deliveries.append((partner.pid.id, {"type": "call_back_request", "from": issuer.to_json()}))
    return processed, deliveries
