"""Shared domain vocabulary: participants, rooms, turns, events, actions, and protocol constants."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union


class ParticipantKind(str, Enum):
    HUMAN = "human"
    AGENT = "agent"
    HOST = "host"


@dataclass(frozen=True)
class ParticipantId:
    id: str
    kind: ParticipantKind

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind.value}

    @classmethod
    def from_json(cls, data: dict) -> "ParticipantId":
        return cls(id=data["id"], kind=ParticipantKind(data["kind"]))


class RoomKind(str, Enum):
    LOBBY = "lobby"
    TRAINING = "training"
    MAIN = "main"
    BREAKOUT = "breakout"


@dataclass(frozen=True)
class RoomId:
    id: str
    kind: RoomKind
    owner: Optional[ParticipantId] = None  # set iff kind == BREAKOUT

    def __post_init__(self) -> None:
        if self.kind == RoomKind.BREAKOUT and self.owner is None:
            raise ValueError("breakout room requires an owner")
        if self.kind != RoomKind.BREAKOUT and self.owner is not None:
            raise ValueError("only breakout rooms have an owner")

    def to_json(self) -> dict:
        out: Dict[str, Any] = {"id": self.id, "kind": self.kind.value}
        if self.owner is not None:
            out["owner"] = self.owner.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "RoomId":
        owner = ParticipantId.from_json(data["owner"]) if "owner" in data else None
        return cls(id=data["id"], kind=RoomKind(data["kind"]), owner=owner)


class TurnOrigin(str, Enum):
    REACTIVE = "reactive"
    PROACTIVE = "proactive"
    HUMAN_SPEECH = "human_speech"


@dataclass(frozen=True)
class Turn:
    seq: int
    speaker: ParticipantId
    room: RoomId
    text: str
    started_at: int
    ended_at: int
    origin: TurnOrigin

    def __post_init__(self) -> None:
        if self.ended_at < self.started_at:
            raise ValueError("turn endedAt must be >= startedAt")
        if self.speaker.kind == ParticipantKind.AGENT:
            if self.origin not in (TurnOrigin.REACTIVE, TurnOrigin.PROACTIVE):
                raise ValueError("agent turns carry origin reactive or proactive")
        elif self.origin != TurnOrigin.HUMAN_SPEECH:
            raise ValueError("non-agent turns carry origin human_speech")

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "speaker": self.speaker.to_json(),
            "room": self.room.to_json(),
            "text": self.text,
            "startedAt": self.started_at,
            "endedAt": self.ended_at,
            "origin": self.origin.value,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Turn":
        return cls(
            seq=data["seq"],
            speaker=ParticipantId.from_json(data["speaker"]),
            room=RoomId.from_json(data["room"]),
            text=data["text"],
            started_at=data["startedAt"],
            ended_at=data["endedAt"],
            origin=TurnOrigin(data["origin"]),
        )


class TimerKind(str, Enum):
    WINDOW_EXPIRY = "window_expiry"
    HAND_TIMEOUT = "hand_timeout"
    FORCED_RAISE = "forced_raise"
    LULL_CHECK = "lull_check"
    SUGGESTION_TICK = "suggestion_tick"


class WindowReason(str, Enum):
    DIRECT_INVOCATION = "direct_invocation"
    FOLLOW_UP = "follow_up"
    HAND_RAISE_ACCEPTED = "hand_raise_accepted"
    PROACTIVE_LULL = "proactive_lull"


class CommandName(str, Enum):
    INVITE_AGENT = "invite_agent"
    REMOVE_AGENT = "remove_agent"
    ENTER_BREAKOUT = "enter_breakout"
    RETURN_MAIN = "return_main"
    CALL_BACK_PARTNER = "call_back_partner"


@dataclass(frozen=True)
class Command:
    """A user-issued collaboration-mode command, on the wire as {cmd, issuer, target?}."""

    cmd: CommandName
    issuer: ParticipantId
    target: Optional[ParticipantId] = None

    def to_json(self) -> dict:
        out: Dict[str, Any] = {"cmd": self.cmd.value, "issuer": self.issuer.to_json()}
        if self.target is not None:
            out["target"] = self.target.to_json()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Command":
        target = ParticipantId.from_json(data["target"]) if "target" in data else None
        return cls(cmd=CommandName(data["cmd"]), issuer=ParticipantId.from_json(data["issuer"]), target=target)


# ---------------------------------------------------------------------------
# Engine events: the input alphabet of the turn-taking state machine.
# Every event carries `at`, the session-clock time at which it occurred.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UserSpeechStart:
    speaker: ParticipantId
    room: RoomId
    at: int


@dataclass(frozen=True)
class UserSpeechEnd:
    turn: Turn
    at: int


@dataclass(frozen=True)
class AgentCandidateReady:
    request_id: str
    text: str
    at: int


@dataclass(frozen=True)
class RelevanceVerdict:
    request_id: str
    relevant: bool
    at: int


@dataclass(frozen=True)
class FollowUpVerdict:
    request_id: str
    is_follow_up: bool
    at: int


@dataclass(frozen=True)
class TimerFired:
    timer_id: int
    kind: TimerKind
    at: int


@dataclass(frozen=True)
class ModeCommandEvent:
    command: Command
    at: int


@dataclass(frozen=True)
class RoomChange:
    participant: ParticipantId
    from_room: RoomId
    to_room: RoomId
    at: int


@dataclass(frozen=True)
class SuggestionReady:
    request_id: str
    text: str
    at: int


@dataclass(frozen=True)
class SummaryReady:
    request_id: str
    text: str
    at: int


EngineEvent = Union[
    UserSpeechStart,
    UserSpeechEnd,
    AgentCandidateReady,
    RelevanceVerdict,
    FollowUpVerdict,
    TimerFired,
    ModeCommandEvent,
    RoomChange,
    SuggestionReady,
    SummaryReady,
]

# Tie-break order for events sharing a timestamp: external reality first,
# backend verdicts next, timers last, so replay stays deterministic.
EVENT_PRIORITY: Dict[type, int] = {
    UserSpeechStart: 0,
    UserSpeechEnd: 1,
    ModeCommandEvent: 2,
    RoomChange: 3,
    FollowUpVerdict: 4,
    RelevanceVerdict: 5,
    AgentCandidateReady: 6,
    SuggestionReady: 7,
    SummaryReady: 8,
    TimerFired: 9,
}


# ---------------------------------------------------------------------------
# Engine actions: the output alphabet.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OpenWindow:
    reason: WindowReason
    budget_ms: int


@dataclass(frozen=True)
class ExtendWindow:
    pass


@dataclass(frozen=True)
class CloseWindow:
    pass


@dataclass(frozen=True)
class MuteAgent:
    pass


@dataclass(frozen=True)
class EmitAgentSpeech:
    text: str


@dataclass(frozen=True)
class AbortGeneration:
    request_id: str


@dataclass(frozen=True)
class RaiseHand:
    ping: bool


@dataclass(frozen=True)
class LowerHand:
    pass


@dataclass(frozen=True)
class RequestCandidate:
    request_id: str


@dataclass(frozen=True)
class RequestRelevance:
    request_id: str
    candidate: str


@dataclass(frozen=True)
class RequestFollowUpCheck:
    request_id: str
    utterance: str


@dataclass(frozen=True)
class RequestSuggestion:
    request_id: str


@dataclass(frozen=True)
class RequestSummary:
    request_id: str
    turns: Tuple[Turn, ...]


@dataclass(frozen=True)
class StartTimer:
    kind: TimerKind
    after_ms: int
    timer_id: int


@dataclass(frozen=True)
class CancelTimer:
    kind: TimerKind


@dataclass(frozen=True)
class LogEntry:
    entry: str


EngineAction = Union[
    OpenWindow,
    ExtendWindow,
    CloseWindow,
    MuteAgent,
    EmitAgentSpeech,
    AbortGeneration,
    RaiseHand,
    LowerHand,
    RequestCandidate,
    RequestRelevance,
    RequestFollowUpCheck,
    RequestSuggestion,
    RequestSummary,
    StartTimer,
    CancelTimer,
    LogEntry,
]


@dataclass(frozen=True)
class Processed:
    """One engine event handled by one room, with the actions it produced."""

    room_id: str
    event: EngineEvent
    actions: Tuple[EngineAction, ...]


# ---------------------------------------------------------------------------
# Protocol constants.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    window_budget_ms: int = 5000
    follow_up_grace_ms: int = 5000
    lull_threshold_ms: int = 3000
    hand_timeout_ms: int = 15000
    forced_raise_after_ms: int = 120000
    active_context_turns: int = 10
    relevance_context_turns: int = 10
    suggestion_period_ms: int = 60000
    max_consecutive_proactive: int = 2
    min_proactive_gap_ms: int = 20000
    summary_batch_turns: int = 5
    # Hand-raise "sufficient time or turns" gate since the agent's last contribution.
    hand_gate_ms: int = 15000
    hand_gate_turns: int = 4

    _JSON_NAMES = {
        "window_budget_ms": "windowBudgetMs",
        "follow_up_grace_ms": "followUpGraceMs",
        "lull_threshold_ms": "lullThresholdMs",
        "hand_timeout_ms": "handTimeoutMs",
        "forced_raise_after_ms": "forcedRaiseAfterMs",
        "active_context_turns": "activeContextTurns",
        "relevance_context_turns": "relevanceContextTurns",
        "suggestion_period_ms": "suggestionPeriodMs",
        "max_consecutive_proactive": "maxConsecutiveProactive",
        "min_proactive_gap_ms": "minProactiveGapMs",
        "summary_batch_turns": "summaryBatchTurns",
        "hand_gate_ms": "handGateMs",
        "hand_gate_turns": "handGateTurns",
    }

    def to_json(self) -> dict:
        return {self._JSON_NAMES[f.name]: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, data: dict) -> "ProtocolConfig":
        reverse = {v: k for k, v in cls._JSON_NAMES.items()}
        kwargs = {reverse[k]: v for k, v in data.items() if k in reverse}
        return cls(**kwargs)


def validate_config(config: ProtocolConfig) -> List[str]:
    """Return every violated field constraint; an empty list means the config is valid."""
    errors: List[str] = []
    durations = [
        "window_budget_ms",
        "follow_up_grace_ms",
        "lull_threshold_ms",
        "hand_timeout_ms",
        "forced_raise_after_ms",
        "suggestion_period_ms",
        "min_proactive_gap_ms",
        "hand_gate_ms",
    ]
    for name in durations:
        if getattr(config, name) <= 0:
            errors.append(f"{ProtocolConfig._JSON_NAMES[name]} must be > 0")
    for name in ["active_context_turns", "relevance_context_turns", "summary_batch_turns", "hand_gate_turns"]:
        if getattr(config, name) < 1:
            errors.append(f"{ProtocolConfig._JSON_NAMES[name]} must be >= 1")
    if config.max_consecutive_proactive < 0:
        errors.append("maxConsecutiveProactive must be >= 0")
    return errors


# ---------------------------------------------------------------------------
# Canonical JSON codec for events and actions.
# JSONL log lines carry {"t": ms, "cat": "event"|"action", "type": ..., ...}.
# ---------------------------------------------------------------------------

_EVENT_TYPES: Dict[str, type] = {
    "user_speech_start": UserSpeechStart,
    "user_speech_end": UserSpeechEnd,
    "agent_candidate_ready": AgentCandidateReady,
    "relevance_verdict": RelevanceVerdict,
    "follow_up_verdict": FollowUpVerdict,
    "timer_fired": TimerFired,
    "mode_command": ModeCommandEvent,
    "room_change": RoomChange,
    "suggestion_ready": SuggestionReady,
    "summary_ready": SummaryReady,
}

_ACTION_TYPES: Dict[str, type] = {
    "open_window": OpenWindow,
    "extend_window": ExtendWindow,
    "close_window": CloseWindow,
    "mute_agent": MuteAgent,
    "emit_agent_speech": EmitAgentSpeech,
    "abort_generation": AbortGeneration,
    "raise_hand": RaiseHand,
    "lower_hand": LowerHand,
    "request_candidate": RequestCandidate,
    "request_relevance": RequestRelevance,
    "request_follow_up_check": RequestFollowUpCheck,
    "request_suggestion": RequestSuggestion,
    "request_summary": RequestSummary,
    "start_timer": StartTimer,
    "cancel_timer": CancelTimer,
    "log": LogEntry,
}

_TYPE_NAMES: Dict[type, str] = {v: k for k, v in _EVENT_TYPES.items()}
_TYPE_NAMES.update({v: k for k, v in _ACTION_TYPES.items()})


def event_type_name(item: Union[EngineEvent, EngineAction]) -> str:
    return _TYPE_NAMES[type(item)]


def encode_event(event: EngineEvent) -> dict:
    out: Dict[str, Any] = {"type": _TYPE_NAMES[type(event)]}
    if isinstance(event, UserSpeechStart):
        out.update(speaker=event.speaker.to_json(), room=event.room.to_json(), at=event.at)
    elif isinstance(event, UserSpeechEnd):
        out.update(turn=event.turn.to_json(), at=event.at)
    elif isinstance(event, (AgentCandidateReady, SuggestionReady, SummaryReady)):
        out.update(requestId=event.request_id, text=event.text, at=event.at)
    elif isinstance(event, RelevanceVerdict):
        out.update(requestId=event.request_id, relevant=event.relevant, at=event.at)
    elif isinstance(event, FollowUpVerdict):
        out.update(requestId=event.request_id, isFollowUp=event.is_follow_up, at=event.at)
    elif isinstance(event, TimerFired):
        out.update(timerId=event.timer_id, kind=event.kind.value, at=event.at)
    elif isinstance(event, ModeCommandEvent):
        out.update(cmd=event.command.to_json(), at=event.at)
    elif isinstance(event, RoomChange):
        out.update(
            participant=event.participant.to_json(),
            fromRoom=event.from_room.to_json(),
            toRoom=event.to_room.to_json(),
            at=event.at,
        )
    else:  # pragma: no cover - exhaustive above
        raise TypeError(f"unknown event {event!r}")
    return out


def decode_event(data: dict) -> EngineEvent:
    etype = _EVENT_TYPES[data["type"]]
    at = data["at"]
    if etype is UserSpeechStart:
        return UserSpeechStart(ParticipantId.from_json(data["speaker"]), RoomId.from_json(data["room"]), at)
    if etype is UserSpeechEnd:
        return UserSpeechEnd(Turn.from_json(data["turn"]), at)
    if etype is AgentCandidateReady:
        return AgentCandidateReady(data["requestId"], data["text"], at)
    if etype is RelevanceVerdict:
        return RelevanceVerdict(data["requestId"], data["relevant"], at)
    if etype is FollowUpVerdict:
        return FollowUpVerdict(data["requestId"], data["isFollowUp"], at)
    if etype is TimerFired:
        return TimerFired(data["timerId"], TimerKind(data["kind"]), at)
    if etype is ModeCommandEvent:
        return ModeCommandEvent(Command.from_json(data["cmd"]), at)
    if etype is RoomChange:
        return RoomChange(
            ParticipantId.from_json(data["participant"]),
            RoomId.from_json(data["fromRoom"]),
            RoomId.from_json(data["toRoom"]),
            at,
        )
    if etype is SuggestionReady:
        return SuggestionReady(data["requestId"], data["text"], at)
    if etype is SummaryReady:
        return SummaryReady(data["requestId"], data["text"], at)
    raise TypeError(f"unknown event type {data['type']}")  # pragma: no cover


def encode_action(action: EngineAction) -> dict:
    out: Dict[str, Any] = {"type": _TYPE_NAMES[type(action)]}
    if isinstance(action, OpenWindow):
        out.update(reason=action.reason.value, budgetMs=action.budget_ms)
    elif isinstance(action, (ExtendWindow, CloseWindow, MuteAgent, LowerHand)):
        pass
    elif isinstance(action, EmitAgentSpeech):
        out.update(text=action.text)
    elif isinstance(action, AbortGeneration):
        out.update(requestId=action.request_id)
    elif isinstance(action, RaiseHand):
        out.update(ping=action.ping)
    elif isinstance(action, (RequestCandidate, RequestSuggestion)):
        out.update(requestId=action.request_id)
    elif isinstance(action, RequestRelevance):
        out.update(requestId=action.request_id, candidate=action.candidate)
    elif isinstance(action, RequestFollowUpCheck):
        out.update(requestId=action.request_id, utterance=action.utterance)
    elif isinstance(action, RequestSummary):
        out.update(requestId=action.request_id, turns=[t.to_json() for t in action.turns])
    elif isinstance(action, StartTimer):
        out.update(kind=action.kind.value, afterMs=action.after_ms, timerId=action.timer_id)
    elif isinstance(action, CancelTimer):
        out.update(kind=action.kind.value)
    elif isinstance(action, LogEntry):
        out.update(entry=action.entry)
    else:  # pragma: no cover - exhaustive above
        raise TypeError(f"unknown action {action!r}")
    return out


def decode_action(data: dict) -> EngineAction:
    atype = _ACTION_TYPES[data["type"]]
    if atype is OpenWindow:
        return OpenWindow(WindowReason(data["reason"]), data["budgetMs"])
    if atype in (ExtendWindow, CloseWindow, MuteAgent, LowerHand):
        return atype()
    if atype is EmitAgentSpeech:
        return EmitAgentSpeech(data["text"])
    if atype is AbortGeneration:
        return AbortGeneration(data["requestId"])
    if atype is RaiseHand:
        return RaiseHand(data["ping"])
    if atype is RequestCandidate:
        return RequestCandidate(data["requestId"])
    if atype is RequestRelevance:
        return RequestRelevance(data["requestId"], data["candidate"])
    if atype is RequestFollowUpCheck:
        return RequestFollowUpCheck(data["requestId"], data["utterance"])
    if atype is RequestSuggestion:
        return RequestSuggestion(data["requestId"])
    if atype is RequestSummary:
        return RequestSummary(data["requestId"], tuple(Turn.from_json(t) for t in data["turns"]))
    if atype is StartTimer:
        return StartTimer(TimerKind(data["kind"]), data["afterMs"], data["timerId"])
    if atype is CancelTimer:
        return CancelTimer(TimerKind(data["kind"]))
    if atype is LogEntry:
        return LogEntry(data["entry"])
    raise TypeError(f"unknown action type {data['type']}")  # pragma: no cover


def canonical_json(data: dict) -> str:
    """Single canonical text form so identical records are byte-identical."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode_log_line(t: int, item: Union[EngineEvent, EngineAction], cat: str) -> str:
    record = {"t": t, "cat": cat}
    record.update(encode_event(item) if cat == "event" else encode_action(item))
    return canonical_json(record)


def decode_log_line(line: str) -> Tuple[int, str, Union[EngineEvent, EngineAction]]:
    data = json.loads(line)
    t, cat = data["t"], data["cat"]
    item = decode_event(data) if cat == "event" else decode_action(data)
    return t, cat, item
