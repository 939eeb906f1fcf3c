"""Deterministic turn-taking state machine for one discussion room.

Decides when the agent may speak, raise its hand, stay silent, or be muted,
as a pure function over a serialized stream of engine events. All timing uses
the session clock carried by the events; the engine never reads a wall clock.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple

from .model import (
    AbortGeneration,
    AgentCandidateReady,
    CancelTimer,
    CloseWindow,
    Command,
    CommandName,
    EmitAgentSpeech,
    EngineAction,
    EngineEvent,
    ExtendWindow,
    FollowUpVerdict,
    LogEntry,
    LowerHand,
    ModeCommandEvent,
    MuteAgent,
    OpenWindow,
    ParticipantKind,
    ProtocolConfig,
    RaiseHand,
    RelevanceVerdict,
    RequestCandidate,
    RequestFollowUpCheck,
    RequestRelevance,
    RequestSuggestion,
    RoomChange,
    RoomId,
    StartTimer,
    SuggestionReady,
    SummaryReady,
    TimerFired,
    TimerKind,
    Turn,
    TurnOrigin,
    UserSpeechEnd,
    UserSpeechStart,
    WindowReason,
)
from .modes import AgentLocation, Mode, ModePolicy, policy_for

_WORD_RE = re.compile(r"[a-z0-9]+")

# Reactive window reasons are the only ones eligible for the single latency extension.
_EXTENDABLE = (WindowReason.DIRECT_INVOCATION, WindowReason.FOLLOW_UP)


class RequestKind(str, Enum):
    WINDOW_CANDIDATE = "window_candidate"
    PROACTIVE_CANDIDATE = "proactive_candidate"
    HAND_CANDIDATE = "hand_candidate"
    FORCED_HAND_CANDIDATE = "forced_hand_candidate"
    RELEVANCE = "relevance"
    FOLLOW_UP = "follow_up"
    SUGGESTION = "suggestion"
    SUMMARY = "summary"


@dataclass(frozen=True)
class Outstanding:
    kind: RequestKind
    payload: str = ""


@dataclass(frozen=True)
class WindowState:
    reason: WindowReason
    opens_at: int
    budget_ms: int
    extended_once: bool = False
    muted: bool = False
    emitted: bool = False
    emitted_at: Optional[int] = None
    pending_text: Optional[str] = None
    candidate_request_id: Optional[str] = None


@dataclass(frozen=True)
class HandState:
    raised_at: int
    pending_candidate: Optional[str] = None
    forced: bool = False


@dataclass(frozen=True)
class EngineState:
    room: RoomId
    policy: ModePolicy
    agent_name: str = "Lisa"
    session_started_at: int = 0
    window: Optional[WindowState] = None
    hand: Optional[HandState] = None
    last_agent_speech_end_at: Optional[int] = None
    last_user_speech_end_at: Optional[int] = None
    consecutive_proactive: int = 0
    turns_since_agent: int = 0
    # Overlapping segments from one speaker are counted, not just flagged, so a
    # same-instant end/start pair (start ordered first) still reads as speech.
    speaking_counts: Dict[str, int] = field(default_factory=dict)
    humans_present: FrozenSet[str] = frozenset()
    outstanding: Dict[str, Outstanding] = field(default_factory=dict)
    live_timers: Dict[TimerKind, int] = field(default_factory=dict)
    next_request_id: int = 1
    next_timer_id: int = 1

    @property
    def users_speaking(self) -> FrozenSet[str]:
        return frozenset(self.speaking_counts)

    def last_activity_end(self) -> Optional[int]:
        """End of the most recent audible contribution, user or agent."""
        ends = [t for t in (self.last_user_speech_end_at, self.last_agent_speech_end_at) if t is not None]
        return max(ends) if ends else None


class HandRaiseDecision(str, Enum):
    REQUEST_CANDIDATE_THEN_RELEVANCE = "request_candidate_then_relevance"
    FORCED_RAISE = "forced_raise"
    NO_ACTION = "no_action"


class LullDecision(str, Enum):
    PROPOSE_PROACTIVE = "propose_proactive"
    NO_ACTION = "no_action"


def initial_state(
    room: RoomId, policy: ModePolicy, agent_name: str = "Lisa", session_started_at: int = 0
) -> EngineState:
    return EngineState(room=room, policy=policy, agent_name=agent_name, session_started_at=session_started_at)


def detect_direct_invocation(text: str, agent_name: str) -> bool:
    """True iff the agent's name appears as a whole word, case-insensitive, punctuation aside."""
    if not agent_name:
        raise ValueError("agent name must be nonempty")
    tokens = _WORD_RE.findall(text.lower())
    return agent_name.lower() in tokens


def should_check_follow_up(state: EngineState, turn: Turn, config: ProtocolConfig) -> bool:
    """Whether a human turn lands inside the follow-up grace after the agent last spoke."""
    if state.last_agent_speech_end_at is None:
        return False
    return turn.started_at - state.last_agent_speech_end_at <= config.follow_up_grace_ms


def evaluate_hand_raise(state: EngineState, pause_at: int, config: ProtocolConfig) -> HandRaiseDecision:
    """Decide the hand-raise path at a user pause (no window open)."""
    if state.hand is not None or not state.policy.hand_raise:
        return HandRaiseDecision.NO_ACTION
    spoke_ref = state.last_agent_speech_end_at
    since_agent = pause_at - (spoke_ref if spoke_ref is not None else state.session_started_at)
    if since_agent > config.forced_raise_after_ms:
        return HandRaiseDecision.FORCED_RAISE
    gate = (
        spoke_ref is None
        or since_agent >= config.hand_gate_ms
        or state.turns_since_agent >= config.hand_gate_turns
    )
    if gate:
        return HandRaiseDecision.REQUEST_CANDIDATE_THEN_RELEVANCE
    return HandRaiseDecision.NO_ACTION


def evaluate_lull(state: EngineState, now: int, config: ProtocolConfig) -> LullDecision:
    """Decide whether a conversational lull warrants a proactive turn."""
    if state.window is not None or state.users_speaking or not state.humans_present:
        return LullDecision.NO_ACTION
    if not state.policy.proactive_speech:
        return LullDecision.NO_ACTION
    last_activity = state.last_activity_end()
    if last_activity is None or now - last_activity < config.lull_threshold_ms:
        return LullDecision.NO_ACTION
    if state.consecutive_proactive >= config.max_consecutive_proactive:
        return LullDecision.NO_ACTION
    if state.last_agent_speech_end_at is not None:
        if now - state.last_agent_speech_end_at < config.min_proactive_gap_ms:
            return LullDecision.NO_ACTION
    return LullDecision.PROPOSE_PROACTIVE


def reset_consecutive_proactive(state: EngineState, turn: Turn) -> EngineState:
    """Update the consecutive-proactive counter for a freshly appended turn."""
    if turn.origin == TurnOrigin.PROACTIVE:
        return replace(state, consecutive_proactive=state.consecutive_proactive + 1)
    return replace(state, consecutive_proactive=0)


def on_hand_timeout(state: EngineState, now: int) -> Tuple[EngineState, List[EngineAction]]:
    """Lower an ignored hand; no-op when the hand is already down."""
    if state.hand is None:
        return state, []
    ctx = _StepCtx(state)
    ctx.lower_hand()
    return ctx.build(), ctx.actions


class _StepCtx:
    """Mutable scratchpad for one step; collapses back into a frozen EngineState."""

    def __init__(self, state: EngineState):
        self.room = state.room
        self.policy = state.policy
        self.window = state.window
        self.hand = state.hand
        self.last_agent_speech_end_at = state.last_agent_speech_end_at
        self.last_user_speech_end_at = state.last_user_speech_end_at
        self.consecutive_proactive = state.consecutive_proactive
        self.turns_since_agent = state.turns_since_agent
        self.speaking_counts = dict(state.speaking_counts)
        self.humans_present = set(state.humans_present)
        self.outstanding = dict(state.outstanding)
        self.live_timers = dict(state.live_timers)
        self.next_request_id = state.next_request_id
        self.next_timer_id = state.next_timer_id
        self._agent_name = state.agent_name
        self._session_started_at = state.session_started_at
        self.actions: List[EngineAction] = []

    # -- bookkeeping helpers -------------------------------------------------

    @property
    def users_speaking(self) -> set:
        return set(self.speaking_counts)

    def speech_started(self, pid: str) -> None:
        self.speaking_counts[pid] = self.speaking_counts.get(pid, 0) + 1

    def speech_ended(self, pid: str) -> None:
        count = self.speaking_counts.get(pid, 0) - 1
        if count > 0:
            self.speaking_counts[pid] = count
        else:
            self.speaking_counts.pop(pid, None)

    def emit(self, action: EngineAction) -> None:
        self.actions.append(action)

    def new_request(self, kind: RequestKind, payload: str = "") -> str:
        rid = f"r{self.next_request_id}"
        self.next_request_id += 1
        self.outstanding[rid] = Outstanding(kind, payload)
        return rid

    def abort_request(self, rid: str) -> None:
        if rid in self.outstanding:
            del self.outstanding[rid]
            self.emit(AbortGeneration(rid))

    def abort_requests_of_kind(self, *kinds: RequestKind) -> None:
        for rid in [r for r, o in sorted(self.outstanding.items()) if o.kind in kinds]:
            self.abort_request(rid)

    def start_timer(self, kind: TimerKind, after_ms: int) -> None:
        tid = self.next_timer_id
        self.next_timer_id += 1
        self.live_timers[kind] = tid
        self.emit(StartTimer(kind, after_ms, tid))

    def cancel_timer(self, kind: TimerKind) -> None:
        if kind in self.live_timers:
            del self.live_timers[kind]
            self.emit(CancelTimer(kind))

    def arm_lull_check(self, config: ProtocolConfig, delay_ms: Optional[int] = None) -> None:
        if self.policy.proactive_speech and self.humans_present:
            self.start_timer(TimerKind.LULL_CHECK, delay_ms if delay_ms is not None else config.lull_threshold_ms)

    # -- hand and window lifecycle ---------------------------------------------

    def lower_hand(self) -> None:
        if self.hand is None:
            return
        self.hand = None
        self.cancel_timer(TimerKind.HAND_TIMEOUT)
        self.emit(LowerHand())
        self.abort_requests_of_kind(
            RequestKind.FORCED_HAND_CANDIDATE, RequestKind.HAND_CANDIDATE, RequestKind.RELEVANCE
        )

    def close_window(self, now: int, config: ProtocolConfig, arm_lull: bool = True) -> None:
        if self.window is None:
            return
        if self.window.candidate_request_id is not None:
            self.abort_request(self.window.candidate_request_id)
        self.cancel_timer(TimerKind.WINDOW_EXPIRY)
        self.window = None
        self.emit(CloseWindow())
        if arm_lull and not self.users_speaking:
            self.arm_lull_check(config)

    def emit_speech(self, text: str, now: int, reason: WindowReason) -> None:
        assert self.window is not None
        self.window = replace(
            self.window, emitted=True, emitted_at=now, pending_text=None, candidate_request_id=None
        )
        self.emit(EmitAgentSpeech(text))
        self.last_agent_speech_end_at = now
        self.turns_since_agent = 0
        if reason == WindowReason.PROACTIVE_LULL:
            self.consecutive_proactive += 1
        else:
            self.consecutive_proactive = 0

    def open_reactive_window(self, reason: WindowReason, now: int, config: ProtocolConfig) -> None:
        """Open a window for a reactive trigger, superseding any stale window or raised hand."""
        if self.window is not None:
            self.close_window(now, config, arm_lull=False)
        pending: Optional[str] = None
        if reason == WindowReason.HAND_RAISE_ACCEPTED:
            assert self.hand is not None
            pending = self.hand.pending_candidate
            self.hand = None
            self.cancel_timer(TimerKind.HAND_TIMEOUT)
        elif self.hand is not None:
            self.lower_hand()
        self.window = WindowState(reason=reason, opens_at=now, budget_ms=config.window_budget_ms)
        self.emit(OpenWindow(reason, config.window_budget_ms))
        self.start_timer(TimerKind.WINDOW_EXPIRY, config.window_budget_ms)
        if reason == WindowReason.HAND_RAISE_ACCEPTED and pending is not None:
            if self.users_speaking:
                self.window = replace(self.window, pending_text=pending)
            else:
                self.emit_speech(pending, now, reason)
            return
        if reason == WindowReason.HAND_RAISE_ACCEPTED:
            # Forced raise accepted before its candidate arrived: adopt the
            # in-flight request as this window's candidate.
            for rid, out in sorted(self.outstanding.items()):
                if out.kind == RequestKind.FORCED_HAND_CANDIDATE:
                    self.outstanding[rid] = Outstanding(RequestKind.WINDOW_CANDIDATE)
                    self.window = replace(self.window, candidate_request_id=rid)
                    return
        rid = self.new_request(RequestKind.WINDOW_CANDIDATE)
        self.window = replace(self.window, candidate_request_id=rid)
        self.emit(RequestCandidate(rid))

    def build(self) -> EngineState:
        return EngineState(
            room=self.room,
            policy=self.policy,
            agent_name=self._agent_name,
            session_started_at=self._session_started_at,
            window=self.window,
            hand=self.hand,
            last_agent_speech_end_at=self.last_agent_speech_end_at,
            last_user_speech_end_at=self.last_user_speech_end_at,
            consecutive_proactive=self.consecutive_proactive,
            turns_since_agent=self.turns_since_agent,
            speaking_counts=self.speaking_counts,
            humans_present=frozenset(self.humans_present),
            outstanding=self.outstanding,
            live_timers=self.live_timers,
            next_request_id=self.next_request_id,
            next_timer_id=self.next_timer_id,
        )


def step(
    state: EngineState, event: EngineEvent, config: ProtocolConfig, now: int
) -> Tuple[EngineState, List[EngineAction]]:
    """Advance the machine by one event; pure, so identical inputs replay identically."""
    if isinstance(event, UserSpeechStart):
        return _on_user_speech_start(state, event, config, now)
    if isinstance(event, UserSpeechEnd):
        return _on_user_speech_end(state, event, config, now)
    if isinstance(event, AgentCandidateReady):
        return _on_candidate_ready(state, event, config, now)
    if isinstance(event, RelevanceVerdict):
        return _on_relevance_verdict(state, event, config, now)
    if isinstance(event, FollowUpVerdict):
        return _on_follow_up_verdict(state, event, config, now)
    if isinstance(event, TimerFired):
        return _on_timer_fired(state, event, config, now)
    if isinstance(event, ModeCommandEvent):
        return _on_mode_command(state, event.command, config, now)
    if isinstance(event, RoomChange):
        return _on_room_change(state, event, config, now)
    if isinstance(event, SuggestionReady):
        return _on_response_consumed(state, event.request_id, RequestKind.SUGGESTION)
    if isinstance(event, SummaryReady):
        return _on_response_consumed(state, event.request_id, RequestKind.SUMMARY)
    raise TypeError(f"unknown engine event {event!r}")  # pragma: no cover


def _on_response_consumed(
    state: EngineState, rid: str, kind: RequestKind
) -> Tuple[EngineState, List[EngineAction]]:
    out = state.outstanding.get(rid)
    if out is None or out.kind != kind:
        return state, [LogEntry(f"drop unknown requestId {rid}")]
    remaining = dict(state.outstanding)
    del remaining[rid]
    return replace(state, outstanding=remaining), []


def _on_user_speech_start(
    state: EngineState, event: UserSpeechStart, config: ProtocolConfig, now: int
) -> Tuple[EngineState, List[EngineAction]]:
    ctx = _StepCtx(state)
    if ctx.window is not None:
        # Barge-in: the agent's audio channel is cut before anything else happens.
        ctx.emit(MuteAgent())
        ctx.window = replace(ctx.window, muted=True)
    ctx.speech_started(event.speaker.id)
    ctx.abort_requests_of_kind(RequestKind.PROACTIVE_CANDIDATE)
    ctx.cancel_timer(TimerKind.LULL_CHECK)
    return ctx.build(), ctx.actions


def _on_user_speech_end(
    state: EngineState, event: UserSpeechEnd, config: ProtocolConfig, now: int
) -> Tuple[EngineState, List[EngineAction]]:
    turn = event.turn
    ctx = _StepCtx(state)
    ctx.speech_ended(turn.speaker.id)
    ctx.last_user_speech_end_at = turn.ended_at
    ctx.consecutive_proactive = 0
    ctx.turns_since_agent += 1

    invoked = detect_direct_invocation(turn.text, state.agent_name)
    paused = not ctx.users_speaking

    if invoked and ctx.policy.reactive_speech:
        reason = WindowReason.HAND_RAISE_ACCEPTED if ctx.hand is not None else WindowReason.DIRECT_INVOCATION
        ctx.open_reactive_window(reason, now, config)
    elif ctx.policy.reactive_speech and should_check_follow_up(state, turn, config):
        rid = ctx.new_request(RequestKind.FOLLOW_UP, turn.text)
        ctx.emit(RequestFollowUpCheck(rid, turn.text))
    elif paused and ctx.window is None:
        decision = evaluate_hand_raise(ctx.build(), now, config)
        if decision == HandRaiseDecision.FORCED_RAISE:
            ctx.hand = HandState(raised_at=now, forced=True)
            ctx.emit(RaiseHand(ping=ctx.policy.hand_raise_ping))
            ctx.start_timer(TimerKind.HAND_TIMEOUT, config.hand_timeout_ms)
            rid = ctx.new_request(RequestKind.FORCED_HAND_CANDIDATE)
            ctx.emit(RequestCandidate(rid))
        elif decision == HandRaiseDecision.REQUEST_CANDIDATE_THEN_RELEVANCE:
            # Each pause supersedes any hand-raise pipeline still in flight.
            ctx.abort_requests_of_kind(RequestKind.HAND_CANDIDATE, RequestKind.RELEVANCE)
            rid = ctx.new_request(RequestKind.HAND_CANDIDATE)
            ctx.emit(RequestCandidate(rid))

    # A window held open while users were speaking may now deliver its text.
    if (
        paused
        and ctx.window is not None
        and not ctx.window.muted
        and not ctx.window.emitted
        and ctx.window.pending_text is not None
    ):
        ctx.emit_speech(ctx.window.pending_text, now, ctx.window.reason)

    if paused:
        ctx.arm_lull_check(config)
    return ctx.build(), ctx.actions


def _on_candidate_ready(
    state: EngineState, event: AgentCandidateReady, config: ProtocolConfig, now: int
) -> Tuple[EngineState, List[EngineAction]]:
    out = state.outstanding.get(event.request_id)
    if out is None:
        return state, [LogEntry(f"drop unknown requestId {event.request_id}")]
    ctx = _StepCtx(state)
    del ctx.outstanding[event.request_id]

    if out.kind == RequestKind.WINDOW_CANDIDATE:
        win = ctx.window
        if win is None or win.candidate_request_id != event.request_id:
            ctx.emit(LogEntry("discard candidate for closed window"))
        elif win.muted:
            ctx.window = replace(win, pending_text=None, candidate_request_id=None)
            ctx.emit(LogEntry("discard candidate for muted window"))
        elif ctx.users_speaking:
            ctx.window = replace(win, pending_text=event.text, candidate_request_id=None)
        else:
            ctx.emit_speech(event.text, now, win.reason)
    elif out.kind == RequestKind.PROACTIVE_CANDIDATE:
        if ctx.window is None and not ctx.users_speaking and ctx.policy.proactive_speech:
            ctx.window = WindowState(
                reason=WindowReason.PROACTIVE_LULL, opens_at=now, budget_ms=config.window_budget_ms
            )
            ctx.emit(OpenWindow(WindowReason.PROACTIVE_LULL, config.window_budget_ms))
            ctx.start_timer(TimerKind.WINDOW_EXPIRY, config.window_budget_ms)
            ctx.emit_speech(event.text, now, WindowReason.PROACTIVE_LULL)
        else:
            ctx.emit(LogEntry("discard stale proactive candidate"))
    elif out.kind == RequestKind.HAND_CANDIDATE:
        if ctx.window is None and ctx.hand is None and ctx.policy.hand_raise:
            rid = ctx.new_request(RequestKind.RELEVANCE, event.text)
            ctx.emit(RequestRelevance(rid, event.text))
        else:
            ctx.emit(LogEntry("discard stale hand candidate"))
    elif out.kind == RequestKind.FORCED_HAND_CANDIDATE:
        if ctx.hand is not None and ctx.hand.pending_candidate is None:
            ctx.hand = replace(ctx.hand, pending_candidate=event.text)
        else:
            ctx.emit(LogEntry("discard stale forced-hand candidate"))
    else:
        ctx.emit(LogEntry(f"candidate ready for non-candidate request {out.kind.value}"))
    return ctx.build(), ctx.actions


def _on_relevance_verdict(
    state: EngineState, event: RelevanceVerdict, config: ProtocolConfig, now: int
) -> Tuple[EngineState, List[EngineAction]]:
    out = state.outstanding.get(event.request_id)
    if out is None or out.kind != RequestKind.RELEVANCE:
        return state, [LogEntry(f"drop unknown requestId {event.request_id}")]
    ctx = _StepCtx(state)
    del ctx.outstanding[event.request_id]
    if event.relevant and ctx.hand is None and ctx.window is None and ctx.policy.hand_raise:
        ctx.hand = HandState(raised_at=now, pending_candidate=out.payload)
        ctx.emit(RaiseHand(ping=ctx.policy.hand_raise_ping))
        ctx.start_timer(TimerKind.HAND_TIMEOUT, config.hand_timeout_ms)
    return ctx.build(), ctx.actions


def _on_follow_up_verdict(
    state: EngineState, event: FollowUpVerdict, config: ProtocolConfig, now: int
) -> Tuple[EngineState, List[EngineAction]]:
    out = state.outstanding.get(event.request_id)
    if out is None or out.kind != RequestKind.FOLLOW_UP:
        return state, [LogEntry(f"drop unknown requestId {event.request_id}")]
    ctx = _StepCtx(state)
    del ctx.outstanding[event.request_id]
    if event.is_follow_up and ctx.policy.reactive_speech:
        ctx.open_reactive_window(WindowReason.FOLLOW_UP, now, config)
    return ctx.build(), ctx.actions


def _on_timer_fired(
    state: EngineState, event: TimerFired, config: ProtocolConfig, now: int
) -> Tuple[EngineState, List[EngineAction]]:
    if state.live_timers.get(event.kind) != event.timer_id:
        return state, []  # stale timer
    ctx = _StepCtx(state)
    del ctx.live_timers[event.kind]

    if event.kind == TimerKind.WINDOW_EXPIRY:
        win = ctx.window
        if win is None:
            return state, []
        awaiting = (
            win.candidate_request_id is not None
            and win.candidate_request_id in ctx.outstanding
            and win.pending_text is None
        )
        if win.reason in _EXTENDABLE and not win.extended_once and not win.emitted and not win.muted and awaiting:
            ctx.window = replace(win, extended_once=True)
            ctx.emit(ExtendWindow())
            ctx.start_timer(TimerKind.WINDOW_EXPIRY, win.budget_ms)
        else:
            ctx.close_window(now, config)
    elif event.kind == TimerKind.HAND_TIMEOUT:
        if ctx.hand is None:
            return state, []
        ctx.hand = None
        ctx.emit(LowerHand())
        ctx.abort_requests_of_kind(RequestKind.FORCED_HAND_CANDIDATE)
    elif event.kind == TimerKind.LULL_CHECK:
        decision = evaluate_lull(state, now, config)
        if decision == LullDecision.PROPOSE_PROACTIVE:
            ctx.abort_requests_of_kind(RequestKind.PROACTIVE_CANDIDATE)
            rid = ctx.new_request(RequestKind.PROACTIVE_CANDIDATE)
            ctx.emit(RequestCandidate(rid))
        else:
            _maybe_rearm_lull(ctx, state, config, now)
    elif event.kind == TimerKind.SUGGESTION_TICK:
        from .context import suggestion_tick

        if suggestion_tick(state, now):
            rid = ctx.new_request(RequestKind.SUGGESTION)
            ctx.emit(RequestSuggestion(rid))
        if ctx.policy.agent_present and ctx.humans_present:
            ctx.start_timer(TimerKind.SUGGESTION_TICK, config.suggestion_period_ms)
    elif event.kind == TimerKind.FORCED_RAISE:
        return state, []  # eligibility is recomputed at each pause instead
    return ctx.build(), ctx.actions


def _maybe_rearm_lull(ctx: _StepCtx, state: EngineState, config: ProtocolConfig, now: int) -> None:
    """Re-arm the lull check when silence persists but a rate limit is still cooling down."""
    if ctx.window is not None or ctx.users_speaking or not ctx.policy.proactive_speech or not ctx.humans_present:
        return
    last_activity = state.last_activity_end()
    if last_activity is None:
        return
    if state.consecutive_proactive >= config.max_consecutive_proactive:
        return
    waits = [last_activity + config.lull_threshold_ms - now]
    if state.last_agent_speech_end_at is not None:
        waits.append(state.last_agent_speech_end_at + config.min_proactive_gap_ms - now)
    wait = max(waits)
    if wait > 0:
        ctx.start_timer(TimerKind.LULL_CHECK, wait)


def _on_mode_command(
    state: EngineState, command: Command, config: ProtocolConfig, now: int
) -> Tuple[EngineState, List[EngineAction]]:
    ctx = _StepCtx(state)
    if command.cmd == CommandName.INVITE_AGENT:
        if ctx.policy.mode == Mode.PERIPHERAL and ctx.policy.agent_location == AgentLocation.OUTER_CIRCLE:
            ctx.policy = policy_for(Mode.PERIPHERAL, AgentLocation.AT_TABLE)
            if not ctx.users_speaking:
                ctx.arm_lull_check(config)
    elif command.cmd == CommandName.REMOVE_AGENT:
        if ctx.policy.mode == Mode.PERIPHERAL and ctx.policy.agent_location == AgentLocation.AT_TABLE:
            if ctx.window is not None:
                if ctx.window.emitted:
                    ctx.emit(MuteAgent())
                ctx.close_window(now, config, arm_lull=False)
            ctx.lower_hand()
            ctx.abort_requests_of_kind(
                RequestKind.PROACTIVE_CANDIDATE, RequestKind.WINDOW_CANDIDATE, RequestKind.FOLLOW_UP
            )
            ctx.policy = policy_for(Mode.PERIPHERAL, AgentLocation.OUTER_CIRCLE)
            ctx.cancel_timer(TimerKind.LULL_CHECK)
    # Breakout navigation and call-backs act on room membership, not on this engine.
    return ctx.build(), ctx.actions


def _on_room_change(
    state: EngineState, event: RoomChange, config: ProtocolConfig, now: int
) -> Tuple[EngineState, List[EngineAction]]:
    if event.participant.kind != ParticipantKind.HUMAN:
        return state, []
    ctx = _StepCtx(state)
    if event.to_room.id == state.room.id:
        was_empty = not ctx.humans_present
        ctx.humans_present.add(event.participant.id)
        if was_empty and ctx.policy.agent_present:
            ctx.start_timer(TimerKind.SUGGESTION_TICK, config.suggestion_period_ms)
    elif event.from_room.id == state.room.id:
        ctx.humans_present.discard(event.participant.id)
        ctx.speaking_counts.pop(event.participant.id, None)
        if not ctx.humans_present:
            ctx.cancel_timer(TimerKind.LULL_CHECK)
            ctx.cancel_timer(TimerKind.SUGGESTION_TICK)
    return ctx.build(), ctx.actions


def pop_request(state: EngineState, rid: str) -> EngineState:
    """Forget an outstanding request (used when the runtime supersedes a summary)."""
    if rid not in state.outstanding:
        return state
    remaining = dict(state.outstanding)
    del remaining[rid]
    return replace(state, outstanding=remaining)


def allocate_request(state: EngineState, kind: RequestKind, payload: str = "") -> Tuple[EngineState, str]:
    """Allocate a correlation id from the engine's counter for a runtime-issued request."""
    rid = f"r{state.next_request_id}"
    outstanding = dict(state.outstanding)
    outstanding[rid] = Outstanding(kind, payload)
    return replace(state, outstanding=outstanding, next_request_id=state.next_request_id + 1), rid
