"""Room runtime: one engine loop's worth of state, shared by the simulator and the live server.

Feeds events through the engine, keeps the transcript and active context in
step with the actions, assembles backend request payloads, and records the
canonical event/action log that makes runs replayable.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Dict, List, Optional, Tuple

from . import engine as eng
from .backend import BackendRequest, BackendRequestKind, Persona
from .context import (
    Transcript,
    active_context,
    append_turn,
    apply_summary,
    relevance_context,
    set_suggestion,
)
from .model import (
    AbortGeneration,
    EmitAgentSpeech,
    EngineAction,
    EngineEvent,
    ParticipantId,
    ProtocolConfig,
    RequestCandidate,
    RequestFollowUpCheck,
    RequestRelevance,
    RequestSuggestion,
    RequestSummary,
    RoomId,
    SuggestionReady,
    SummaryReady,
    Turn,
    TurnOrigin,
    UserSpeechEnd,
    WindowReason,
    encode_log_line,
)
from .modes import ModePolicy


class RoomRuntime:
    def __init__(
        self,
        room: RoomId,
        policy: ModePolicy,
        config: ProtocolConfig,
        persona: Persona,
        agent: ParticipantId,
        session_started_at: int = 0,
        logged: bool = True,
    ):
        self.room = room
        self.config = config
        self.persona = persona
        self.agent = agent
        self.logged = logged
        self.state = eng.initial_state(room, policy, agent_name=persona.name, session_started_at=session_started_at)
        self.transcript = Transcript(room=room)
        self.full_history: List[Turn] = []
        self.pending_summaries: Dict[str, Tuple[Turn, ...]] = {}
        self.log: List[str] = []

    @property
    def policy(self) -> ModePolicy:
        return self.state.policy

    @property
    def hand_raised(self) -> bool:
        return self.state.hand is not None

    def handle(self, event: EngineEvent, now: int) -> Tuple[EngineEvent, List[EngineAction]]:
        """Process one event; returns the (possibly seq-stamped) event and ordered actions."""
        if isinstance(event, UserSpeechEnd):
            event = self._finalize_turn(event)
        summary_actions: List[EngineAction] = []
        if isinstance(event, UserSpeechEnd):
            summary_actions.extend(self._append(event.turn))
        if isinstance(event, SuggestionReady):
            out = self.state.outstanding.get(event.request_id)
            if out is not None and out.kind == eng.RequestKind.SUGGESTION:
                self.transcript = set_suggestion(self.transcript, event.text)
        if isinstance(event, SummaryReady):
            batch = self.pending_summaries.pop(event.request_id, None)
            if batch is not None and event.request_id in self.state.outstanding:
                self.transcript = apply_summary(self.transcript, batch, event.text)

        self.state, actions = eng.step(self.state, event, self.config, now)

        for action in actions:
            if isinstance(action, EmitAgentSpeech):
                summary_actions.extend(self._append(self._agent_turn(action.text, now)))
        actions = actions + summary_actions
        if self.logged:
            self.log.append(encode_log_line(now, event, "event"))
            self.log.extend(encode_log_line(now, a, "action") for a in actions)
        return event, actions

    def _finalize_turn(self, event: UserSpeechEnd) -> UserSpeechEnd:
        """Stamp the room-scoped sequence number when the producer left it unassigned."""
        turn = event.turn
        if turn.seq == 0:
            turn = replace(turn, seq=self.transcript.next_seq)
        return UserSpeechEnd(turn=turn, at=event.at)

    def _agent_turn(self, text: str, now: int) -> Turn:
        win = self.state.window
        origin = (
            TurnOrigin.PROACTIVE
            if win is not None and win.reason == WindowReason.PROACTIVE_LULL
            else TurnOrigin.REACTIVE
        )
        return Turn(
            seq=self.transcript.next_seq,
            speaker=self.agent,
            room=self.room,
            text=text,
            started_at=now,
            ended_at=now,
            origin=origin,
        )

    def _append(self, turn: Turn) -> List[EngineAction]:
        """Append to the transcript; a full pending batch yields a summary request."""
        self.transcript, batch = append_turn(self.transcript, turn, self.config)
        self.full_history.append(turn)
        if batch is None:
            return []
        actions: List[EngineAction] = []
        # A batch boundary supersedes any summary request still in flight, which
        # is also how a timed-out request gets retried with the grown buffer.
        for rid in sorted(self.pending_summaries):
            if rid in self.state.outstanding:
                self.state = eng.pop_request(self.state, rid)
                actions.append(AbortGeneration(rid))
            del self.pending_summaries[rid]
        self.state, rid = eng.allocate_request(self.state, eng.RequestKind.SUMMARY)
        self.pending_summaries[rid] = batch
        actions.append(RequestSummary(rid, batch))
        return actions

    def make_backend_request(self, action: EngineAction) -> Optional[BackendRequest]:
        """Fill in the payload a Request* action needs the backend to see."""
        if isinstance(action, RequestCandidate):
            return BackendRequest(
                action.request_id,
                BackendRequestKind.CANDIDATE,
                self.persona,
                context=active_context(self.transcript),
            )
        if isinstance(action, RequestRelevance):
            return BackendRequest(
                action.request_id,
                BackendRequestKind.RELEVANCE,
                self.persona,
                candidate=action.candidate,
                recent_turns=relevance_context(self.transcript, self.config),
            )
        if isinstance(action, RequestFollowUpCheck):
            return BackendRequest(
                action.request_id,
                BackendRequestKind.FOLLOW_UP,
                self.persona,
                utterance=action.utterance,
                last_agent_utterance=self.transcript.last_agent_text or "",
            )
        if isinstance(action, RequestSuggestion):
            return BackendRequest(
                action.request_id,
                BackendRequestKind.SUGGESTION,
                self.persona,
                context=active_context(self.transcript),
            )
        if isinstance(action, RequestSummary):
            return BackendRequest(
                action.request_id,
                BackendRequestKind.SUMMARY,
                self.persona,
                batch=action.turns,
                prior_summary=self.transcript.summary,
            )
        return None
