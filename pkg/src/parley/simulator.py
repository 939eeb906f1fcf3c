"""Discrete-event harness: drives the engine/modes/context stack on a virtual clock.

Scripted or randomized human participants produce traces; the invariant
checker is an independent re-reading of the protocol contracts over those
traces, so engine defects surface as violations rather than silent drift.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .backend import BackendReply, BackendRequestKind, Persona, ScriptedBackend, default_persona
from .engine import EngineState
from .model import (
    AgentCandidateReady,
    RoomChange,
    CloseWindow,
    Command,
    CommandName,
    EmitAgentSpeech,
    EngineAction,
    EngineEvent,
    EVENT_PRIORITY,
    ExtendWindow,
    FollowUpVerdict,
    LowerHand,
    ModeCommandEvent,
    MuteAgent,
    OpenWindow,
    ParticipantId,
    ParticipantKind,
    Processed,
    ProtocolConfig,
    RaiseHand,
    RelevanceVerdict,
    RequestCandidate,
    RequestFollowUpCheck,
    RequestRelevance,
    RequestSuggestion,
    RequestSummary,
    StartTimer,
    SuggestionReady,
    SummaryReady,
    TimerFired,
    UserSpeechEnd,
    UserSpeechStart,
    WindowReason,
    canonical_json,
    encode_action,
    encode_event,
    validate_config,
)
from .modes import AgentLocation, Mode, ModePolicy, NoSuchPartner, NotPermitted, apply_command
from .session import MAIN_ID, Session, initial_policy

DEFAULT_HORIZON_MS = 15 * 60 * 1000  # the study's discussions ran 12-15 minutes


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class ScriptEntry:
    """One scripted utterance or command; exactly one of at/after_* is set."""

    speaker: str = ""
    text: str = ""
    duration_ms: int = 0
    at: Optional[int] = None
    after_agent_speech: Optional[int] = None
    after_hand_raise: Optional[int] = None
    command: Optional[str] = None
    issuer: str = ""

    @classmethod
    def from_json(cls, data: dict) -> "ScriptEntry":
        return cls(
            speaker=data.get("speaker", ""),
            text=data.get("text", ""),
            duration_ms=data.get("durationMs", 0),
            at=data.get("at"),
            after_agent_speech=data.get("afterAgentSpeech"),
            after_hand_raise=data.get("afterHandRaise"),
            command=data.get("cmd"),
            issuer=data.get("issuer", ""),
        )


@dataclass
class Scenario:
    mode: Mode
    seed: int = 0
    config: ProtocolConfig = field(default_factory=ProtocolConfig)
    script: List[ScriptEntry] = field(default_factory=list)
    backend_script: dict = field(default_factory=dict)
    participants: List[str] = field(default_factory=lambda: ["D1", "D2"])
    persona: Optional[Persona] = None
    horizon_ms: int = DEFAULT_HORIZON_MS

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        return cls(
            mode=Mode(data["mode"]),
            seed=data.get("seed", 0),
            config=ProtocolConfig.from_json(data.get("config", {})),
            script=[ScriptEntry.from_json(e) for e in data.get("script", [])],
            backend_script=data.get("backend", {}),
            participants=data.get("participants", ["D1", "D2"]),
            persona=Persona.from_json(data["persona"]) if "persona" in data else None,
            horizon_ms=data.get("horizonMs", DEFAULT_HORIZON_MS),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scenario":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TraceEntry:
    t: int
    room_id: str
    cat: str  # "event" | "action"
    item: Union[EngineEvent, EngineAction]

    def to_json(self) -> dict:
        body = encode_event(self.item) if self.cat == "event" else encode_action(self.item)
        return {"t": self.t, "room": self.room_id, "cat": self.cat, **body}


@dataclass(frozen=True)
class Violation:
    invariant_id: str
    t: int
    detail: str


@dataclass
class Trace:
    entries: List[TraceEntry]
    final_states: Dict[str, EngineState]
    config: ProtocolConfig
    initial_policies: Dict[str, ModePolicy]
    horizon_ms: int
    violations: List[Violation] = field(default_factory=list)
    script_errors: List[str] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "\n".join(canonical_json(e.to_json()) for e in self.entries) + "\n"


# -- scheduling --------------------------------------------------------------

_PRI_SPEECH_START = EVENT_PRIORITY[UserSpeechStart]
_PRI_SPEECH_END = EVENT_PRIORITY[UserSpeechEnd]
_PRI_COMMAND = EVENT_PRIORITY[ModeCommandEvent]


class _Sim:
    def __init__(self, scenario: Scenario):
        errors = validate_config(scenario.config)
        if errors:
            raise ScriptError("invalid config: " + "; ".join(errors))
        self.scenario = scenario
        self.config = scenario.config
        self.backend = ScriptedBackend(scenario.backend_script)
        self.session = Session(
            f"sim-{scenario.seed}", scenario.mode, scenario.config, scenario.persona or default_persona()
        )
        self.queue: List[Tuple[int, int, int, int]] = []  # (t, priority, seq, task index)
        self.tasks: List[tuple] = []
        self.seq = 0
        self.entries: List[TraceEntry] = []
        self.speech_pending_agent: List[ScriptEntry] = [
            e for e in scenario.script if e.after_agent_speech is not None
        ]
        self.speech_pending_hand: List[ScriptEntry] = [e for e in scenario.script if e.after_hand_raise is not None]
        self.now = 0

    def push(self, t: int, priority: int, task: tuple) -> None:
        self.tasks.append(task)
        heapq.heappush(self.queue, (t, priority, self.seq, len(self.tasks) - 1))
        self.seq += 1

    def schedule_entry(self, entry: ScriptEntry, start: int) -> None:
        if entry.command is not None:
            cmd = Command(
                CommandName(entry.command),
                ParticipantId(entry.issuer, ParticipantKind.HUMAN),
                ParticipantId(entry.speaker, ParticipantKind.HUMAN) if entry.speaker else None,
            )
            self.push(start, _PRI_COMMAND, ("command", cmd))
        else:
            self.push(start, _PRI_SPEECH_START, ("speech_start", entry.speaker))
            self.push(start + entry.duration_ms, _PRI_SPEECH_END, ("speech_end", entry.speaker, entry.text, start))

    def run(self) -> Trace:
        for pid in self.scenario.participants:
            self.session.join(ParticipantId(pid, ParticipantKind.HUMAN))
        host = ParticipantId("H", ParticipantKind.HOST)
        for pid in self.scenario.participants:
            self.process(self.session.host_move(host, pid, MAIN_ID, 0), 0)
        for entry in self.scenario.script:
            if entry.at is not None:
                self.schedule_entry(entry, entry.at)

        horizon = self.scenario.horizon_ms
        while self.queue:
            t, _, _, task_idx = heapq.heappop(self.queue)
            if t > horizon:
                break
            self.now = t
            task = self.tasks[task_idx]
            kind = task[0]
            try:
                if kind == "speech_start":
                    self.process(self.session.route_speech_start(task[1], t), t)
                elif kind == "speech_end":
                    self.process(self.session.route_speech_end(task[1], task[2], task[3], t), t)
                elif kind == "command":
                    processed, _deliveries = apply_command(self.session, task[1], t)
                    self.process(processed, t)
                elif kind == "engine_event":
                    self.process(self.session.deliver(task[1], task[2], t), t)
            except (NotPermitted, NoSuchPartner):
                pass  # a scripted command that is illegal in the current state is skipped

        script_errors = [
            f"dangling afterAgentSpeech trigger for {e.speaker!r}" for e in self.speech_pending_agent
        ] + [f"dangling afterHandRaise trigger for {e.speaker!r}" for e in self.speech_pending_hand]
        final_states = {
            room_id: rt.state for room_id, rt in self.session.runtimes.items() if rt is not None
        }
        trace = Trace(
            entries=self.entries,
            final_states=final_states,
            config=self.config,
            initial_policies=_initial_policies_for(self.session, self.scenario.mode),
            horizon_ms=horizon,
            script_errors=script_errors,
        )
        trace.violations = check_invariants(trace)
        return trace

    def process(self, processed: List[Processed], now: int) -> None:
        for item in processed:
            self.entries.append(TraceEntry(now, item.room_id, "event", item.event))
            rt = self.session.runtimes[item.room_id]
            for action in item.actions:
                self.entries.append(TraceEntry(now, item.room_id, "action", action))
                self.interpret(item.room_id, rt, action, now)

    def interpret(self, room_id: str, rt, action: EngineAction, now: int) -> None:
        if isinstance(action, StartTimer):
            self.push(
                now + action.after_ms,
                EVENT_PRIORITY[TimerFired],
                ("engine_event", room_id, TimerFired(action.timer_id, action.kind, now + action.after_ms)),
            )
        elif isinstance(
            action, (RequestCandidate, RequestRelevance, RequestFollowUpCheck, RequestSuggestion, RequestSummary)
        ):
            request = rt.make_backend_request(action)
            reply = self.backend.handle(request)
            event = response_event(request.kind, action.request_id, reply, now + reply.delay_ms)
            if event is not None:
                self.push(now + reply.delay_ms, EVENT_PRIORITY[type(event)], ("engine_event", room_id, event))
        elif isinstance(action, EmitAgentSpeech):
            if self.speech_pending_agent:
                entry = self.speech_pending_agent.pop(0)
                self.schedule_entry(entry, now + (entry.after_agent_speech or 0))
        elif isinstance(action, RaiseHand):
            if self.speech_pending_hand:
                entry = self.speech_pending_hand.pop(0)
                self.schedule_entry(entry, now + (entry.after_hand_raise or 0))


def response_event(
    kind: BackendRequestKind, rid: str, reply: BackendReply, at: int
) -> Optional[EngineEvent]:
    """Map a backend reply onto the engine event delivered at `at` (timeouts fail closed)."""
    if reply.timed_out:
        # Fail closed: a silent backend never raises the hand or grants a window.
        if kind == BackendRequestKind.RELEVANCE:
            return RelevanceVerdict(rid, False, at)
        if kind == BackendRequestKind.FOLLOW_UP:
            return FollowUpVerdict(rid, False, at)
        return None
    if kind == BackendRequestKind.CANDIDATE:
        return AgentCandidateReady(rid, str(reply.value), at)
    if kind == BackendRequestKind.RELEVANCE:
        return RelevanceVerdict(rid, bool(reply.value), at)
    if kind == BackendRequestKind.FOLLOW_UP:
        return FollowUpVerdict(rid, bool(reply.value), at)
    if kind == BackendRequestKind.SUGGESTION:
        return SuggestionReady(rid, str(reply.value), at)
    if kind == BackendRequestKind.SUMMARY:
        return SummaryReady(rid, str(reply.value), at)
    return None


def _initial_policies_for(session: Session, mode: Mode) -> Dict[str, ModePolicy]:
    from .modes import policy_for

    policies: Dict[str, ModePolicy] = {}
    for room_id, rt in session.runtimes.items():
        if rt is None:
            continue
        if room_id.startswith("breakout-"):
            policies[room_id] = policy_for(Mode.BREAKOUT, AgentLocation.IN_BREAKOUT)
        elif room_id == "training":
            policies[room_id] = policy_for(Mode.ROUNDTABLE, AgentLocation.AT_TABLE)
        else:
            policies[room_id] = initial_policy(mode)
    return policies


def run_scenario(scenario: Scenario) -> Trace:
    """Run to the horizon on a virtual clock; deterministic given (scenario, seed)."""
    return _Sim(scenario).run()


# -- invariant checking -------------------------------------------------------


def check_invariants(trace: Trace) -> List[Violation]:
    """Independent audit of the protocol contracts over a finished trace."""
    violations: List[Violation] = []
    by_room: Dict[str, List[TraceEntry]] = {}
    for entry in trace.entries:
        by_room.setdefault(entry.room_id, []).append(entry)
    for room_id, entries in sorted(by_room.items()):
        policy = trace.initial_policies.get(room_id)
        if policy is None:
            continue
        violations.extend(_check_room(room_id, entries, trace.config, policy, trace.horizon_ms))
    return violations


def _steps(entries: List[TraceEntry]):
    """Group a room's flat entry list back into (event, actions) steps."""
    current_event: Optional[TraceEntry] = None
    actions: List[TraceEntry] = []
    for entry in entries:
        if entry.cat == "event":
            if current_event is not None:
                yield current_event, actions
            current_event, actions = entry, []
        else:
            actions.append(entry)
    if current_event is not None:
        yield current_event, actions


def _check_room(
    room_id: str,
    entries: List[TraceEntry],
    config: ProtocolConfig,
    policy: ModePolicy,
    horizon_ms: int,
) -> List[Violation]:
    v: List[Violation] = []
    window_open = False
    window_t = 0
    window_budget = 0
    window_extended = False
    window_reason: Optional[WindowReason] = None
    hand_up = False
    hand_t = 0
    speaking_counts: Dict[str, int] = {}
    last_user_end: Optional[int] = None
    last_emit: Optional[int] = None
    proactive_run = 0
    breakout_owner = room_id[len("breakout-"):] if room_id.startswith("breakout-") else None

    for event_entry, action_entries in _steps(entries):
        t = event_entry.t
        event = event_entry.item
        actions = [a.item for a in action_entries]

        if isinstance(event, UserSpeechStart):
            if window_open and (not actions or not isinstance(actions[0], MuteAgent)):
                v.append(Violation("barge-in", t, "UserSpeechStart with open window not muted first"))
            speaking_counts[event.speaker.id] = speaking_counts.get(event.speaker.id, 0) + 1
        elif isinstance(event, UserSpeechEnd):
            pid = event.turn.speaker.id
            if speaking_counts.get(pid, 0) <= 1:
                speaking_counts.pop(pid, None)
            else:
                speaking_counts[pid] -= 1
            if breakout_owner is not None and event.turn.speaker.id != breakout_owner:
                v.append(
                    Violation("breakout-isolation", t, f"turn by {event.turn.speaker.id} in {room_id}")
                )
            # Forced liveness: a long-silent agent must raise at the next pause.
            silent_ref = last_emit if last_emit is not None else 0
            pause = not speaking_counts
            if (
                pause
                and policy.hand_raise
                and not window_open
                and not hand_up
                and t - silent_ref > config.forced_raise_after_ms
                and not any(isinstance(a, OpenWindow) for a in actions)
            ):
                raised = any(isinstance(a, RaiseHand) for a in actions)
                relevance_first = False
                for a in actions:
                    if isinstance(a, RaiseHand):
                        break
                    if isinstance(a, RequestRelevance):
                        relevance_first = True
                if not raised or relevance_first:
                    v.append(Violation("forced-liveness", t, "no unconditional RaiseHand at stale pause"))
            last_user_end = event.turn.ended_at
            proactive_run = 0
        elif isinstance(event, ModeCommandEvent):
            cmd = event.command.cmd
            if policy.mode == Mode.PERIPHERAL:
                if cmd == CommandName.INVITE_AGENT:
                    policy = _peripheral_policy(AgentLocation.AT_TABLE)
                elif cmd == CommandName.REMOVE_AGENT:
                    policy = _peripheral_policy(AgentLocation.OUTER_CIRCLE)
        elif isinstance(event, RoomChange):
            if event.from_room.id == room_id:
                speaking_counts.pop(event.participant.id, None)

        for action in actions:
            if isinstance(action, OpenWindow):
                if window_open:
                    v.append(Violation("single-window", t, "OpenWindow while a window is open"))
                window_open, window_t, window_budget = True, t, action.budget_ms
                window_extended = False
                window_reason = action.reason
                if hand_up and action.reason == WindowReason.HAND_RAISE_ACCEPTED:
                    if t - hand_t > config.hand_timeout_ms:
                        v.append(Violation("hand-lifecycle", t, "hand accepted after timeout budget"))
                    hand_up = False
                if action.reason == WindowReason.PROACTIVE_LULL:
                    starts = [x for x in (last_user_end, last_emit) if x is not None]
                    if not starts or t - max(starts) < config.lull_threshold_ms:
                        v.append(Violation("proactive-lull", t, "proactive window without a full lull"))
                    if speaking_counts:
                        v.append(Violation("proactive-lull", t, "proactive window while users speaking"))
                if policy.agent_location == AgentLocation.OUTER_CIRCLE:
                    v.append(Violation("outer-circle-silence", t, "window opened in outer circle"))
                if action.reason == WindowReason.PROACTIVE_LULL and not policy.proactive_speech:
                    v.append(Violation("capability", t, "proactive window without the capability"))
            elif isinstance(action, ExtendWindow):
                window_extended = True
            elif isinstance(action, CloseWindow):
                if window_open:
                    allowed = window_budget * (2 if window_extended else 1)
                    if t - window_t > allowed:
                        v.append(Violation("window-budget", t, f"window open {t - window_t} ms > {allowed}"))
                window_open = False
            elif isinstance(action, EmitAgentSpeech):
                if not window_open:
                    v.append(Violation("gated-speech", t, "agent speech outside any window"))
                if speaking_counts:
                    v.append(Violation("gated-speech", t, "agent speech while a user is speaking"))
                if policy.agent_location == AgentLocation.OUTER_CIRCLE:
                    v.append(Violation("outer-circle-silence", t, "agent speech from the outer circle"))
                if not (policy.reactive_speech or policy.proactive_speech):
                    v.append(Violation("capability", t, "agent speech with speech capabilities off"))
                last_emit = t
                if window_reason == WindowReason.PROACTIVE_LULL:
                    proactive_run += 1
                    if proactive_run > config.max_consecutive_proactive:
                        v.append(Violation("rate-limit", t, f"{proactive_run} consecutive proactive turns"))
                else:
                    proactive_run = 0
            elif isinstance(action, RaiseHand):
                if hand_up:
                    v.append(Violation("hand-lifecycle", t, "RaiseHand while hand already up"))
                hand_up, hand_t = True, t
                if not policy.hand_raise:
                    v.append(Violation("capability", t, "hand raised without the capability"))
                if action.ping != policy.hand_raise_ping:
                    v.append(Violation("ping-fidelity", t, f"ping={action.ping} under {policy.agent_location.value}"))
            elif isinstance(action, LowerHand):
                if hand_up and t - hand_t > config.hand_timeout_ms:
                    v.append(Violation("hand-lifecycle", t, "hand lowered after its timeout budget"))
                hand_up = False

    if hand_up and horizon_ms - hand_t > config.hand_timeout_ms:
        v.append(Violation("hand-lifecycle", horizon_ms, "hand left up past its timeout at horizon"))
    if window_open and horizon_ms - window_t > window_budget * 2:
        v.append(Violation("window-budget", horizon_ms, "window left open past its budget at horizon"))
    return v


def _peripheral_policy(location: AgentLocation) -> ModePolicy:
    from .modes import policy_for

    return policy_for(Mode.PERIPHERAL, location)


# -- fuzzing -------------------------------------------------------------------

_VOCAB = (
    "budget schedule students program culture science space garden music robotics "
    "lunch proposal survey library mural gymnasium telescope greenhouse workshop "
    "festival language exchange mentor project poster debate recess volunteers"
).split()

_FILLER = "so well maybe right okay sure hmm yes true fine".split()


def generate_scenario(seed: int, mode: Mode, config: Optional[ProtocolConfig] = None) -> Scenario:
    """Random but reproducible dyad script for one mode; the seed fixes everything."""
    rng = random.Random(seed)
    config = config or ProtocolConfig()
    speakers = ["D1", "D2"]
    entries: List[ScriptEntry] = []
    busy_until = {s: 0 for s in speakers}
    in_breakout = {s: False for s in speakers}
    t = rng.randint(500, 4000)
    horizon = DEFAULT_HORIZON_MS
    while t < horizon - 15000:
        speaker = rng.choice(speakers)
        start = max(t, busy_until[speaker]) + rng.randint(0, 800)
        words = rng.choices(_VOCAB, k=rng.randint(2, 8)) + rng.choices(_FILLER, k=rng.randint(0, 3))
        rng.shuffle(words)
        text = " ".join(words)
        roll = rng.random()
        if roll < 0.12:
            text = f"Lisa, {text}"
        elif roll < 0.2:
            text = f"what about {text}"
        duration = rng.randint(400, 6000)
        entries.append(ScriptEntry(speaker=speaker, text=text, duration_ms=duration, at=start))
        busy_until[speaker] = start + duration
        if mode == Mode.PERIPHERAL and rng.random() < 0.1:
            cmd = rng.choice([CommandName.INVITE_AGENT.value, CommandName.REMOVE_AGENT.value])
            entries.append(ScriptEntry(command=cmd, issuer=rng.choice(speakers), at=start + duration + 200))
        if mode == Mode.BREAKOUT and rng.random() < 0.12:
            issuer = rng.choice(speakers)
            if in_breakout[issuer]:
                cmd = CommandName.RETURN_MAIN.value
                in_breakout[issuer] = False
            else:
                cmd = rng.choice(
                    [CommandName.ENTER_BREAKOUT.value, CommandName.CALL_BACK_PARTNER.value]
                )
                if cmd == CommandName.ENTER_BREAKOUT.value:
                    in_breakout[issuer] = True
            entries.append(ScriptEntry(command=cmd, issuer=issuer, at=start + duration + 200))
        # Occasionally overlap the partner to exercise barge-in handling.
        t = start + (duration // 2 if rng.random() < 0.18 else duration + rng.randint(300, 9000))
    backend_script = {
        "fallbacks": {"candidate": " ".join(rng.choices(_VOCAB, k=4))},
        "delays": {
            "candidate": rng.choice([0, 120, 450, 900, 1600, 5200]),
            "relevance": rng.choice([0, 80, 300]),
            "followUp": rng.choice([0, 60, 250]),
            "suggestion": 100,
            "summary": 200,
        },
    }
    return Scenario(mode=mode, seed=seed, config=config, script=entries, backend_script=backend_script)


@dataclass
class FuzzReport:
    mode: Mode
    seeds: List[int]
    violations: Dict[int, List[Violation]]

    @property
    def total_violations(self) -> int:
        return sum(len(vs) for vs in self.violations.values())

    def to_json(self) -> dict:
        return {
            "mode": self.mode.value,
            "seeds": self.seeds,
            "totalViolations": self.total_violations,
            "violations": {
                str(seed): [
                    {"invariantId": x.invariant_id, "t": x.t, "detail": x.detail} for x in vs
                ]
                for seed, vs in self.violations.items()
                if vs
            },
        }


def fuzz(seeds: List[int], mode: Mode, config: Optional[ProtocolConfig] = None) -> FuzzReport:
    violations: Dict[int, List[Violation]] = {}
    for seed in seeds:
        trace = run_scenario(generate_scenario(seed, mode, config))
        violations[seed] = trace.violations
    return FuzzReport(mode=mode, seeds=list(seeds), violations=violations)
