from __future__ import annotations

from dataclasses import replace

from conftest import AGENT, D1, MAIN, human_turn
from parley.backend import BackendRequestKind, ScriptedBackend, default_persona
from parley.context import import_transcript_jsonl, export_transcript_jsonl
from parley.engine import HandState
from parley.model import (
    AbortGeneration,
    ProtocolConfig,
    RequestCandidate,
    RequestSuggestion,
    RequestSummary,
    SuggestionReady,
    SummaryReady,
    TimerFired,
    TimerKind,
    UserSpeechEnd,
    UserSpeechStart,
)
from parley.modes import AgentLocation, Mode, policy_for
from parley.room import RoomRuntime


def make_runtime(config=None) -> RoomRuntime:
    return RoomRuntime(
        MAIN,
        policy_for(Mode.ROUNDTABLE, AgentLocation.AT_TABLE),
        config or ProtocolConfig(),
        default_persona(),
        AGENT,
    )


def feed_turns(rt: RoomRuntime, n: int, start_seq: int = 1, t0: int = 1000):
    collected = []
    for i in range(n):
        seq = start_seq + i
        t = t0 + i * 1000
        _, actions = rt.handle(UserSpeechStart(D1, MAIN, t), t)
        collected.extend(actions)
        turn = human_turn(0, f"turn body {seq}", t, t + 400)
        _, actions = rt.handle(UserSpeechEnd(turn, t + 400), t + 400)
        collected.extend(actions)
    return collected


def test_summary_timeout_retries_with_grown_buffer():
    # 15 turns: first batch request goes unanswered (timeout), the next batch
    # boundary supersedes it with one request covering both batches.
    rt = make_runtime()
    actions = feed_turns(rt, 20)
    requests = [a for a in actions if isinstance(a, RequestSummary)]
    assert len(requests) == 2
    assert [t.seq for t in requests[0].turns] == [1, 2, 3, 4, 5]
    assert [t.seq for t in requests[1].turns] == list(range(1, 11))  # both batches
    aborts = [a for a in actions if isinstance(a, AbortGeneration) and a.request_id == requests[0].request_id]
    assert aborts, "stale summary request should be aborted at the next boundary"
    # Answer the second request; the summary then covers every pruned turn.
    backend = ScriptedBackend({"summaryIncludeSeq": True})
    req = rt.make_backend_request(requests[1])
    reply = backend.handle(req)
    rt.handle(SummaryReady(requests[1].request_id, str(reply.value), 99_000), 99_000)
    for seq in range(1, 11):
        assert f"#{seq}:" in rt.transcript.summary
    assert rt.transcript.pending_summary_buffer == ()


def test_stale_summary_response_is_dropped():
    rt = make_runtime()
    actions = feed_turns(rt, 15)
    (request,) = [a for a in actions if isinstance(a, RequestSummary)]
    rt.handle(SummaryReady("r999", "bogus", 50_000), 50_000)
    assert rt.transcript.summary == ""
    rt.handle(SummaryReady(request.request_id, "the real one", 51_000), 51_000)
    assert rt.transcript.summary == "the real one"


def test_three_suggestion_ticks_with_hand_raised_during_second():
    rt = make_runtime()
    # Bring a human in so the suggestion machinery arms itself.
    from parley.model import RoomChange, RoomId, RoomKind

    lobby = RoomId("lobby", RoomKind.LOBBY)
    _, actions = rt.handle(RoomChange(D1, lobby, MAIN, 0), 0)
    ticks = [a for a in actions if hasattr(a, "kind") and getattr(a, "kind", None) == TimerKind.SUGGESTION_TICK]
    assert ticks, "suggestion tick timer should arm on first human entry"
    requests = []
    tid = rt.state.live_timers[TimerKind.SUGGESTION_TICK]
    _, actions = rt.handle(TimerFired(tid, TimerKind.SUGGESTION_TICK, 60_000), 60_000)
    requests += [a for a in actions if isinstance(a, RequestSuggestion)]
    # hand raised during the second period
    rt.state = replace(rt.state, hand=HandState(raised_at=90_000))
    tid = rt.state.live_timers[TimerKind.SUGGESTION_TICK]
    _, actions = rt.handle(TimerFired(tid, TimerKind.SUGGESTION_TICK, 120_000), 120_000)
    requests += [a for a in actions if isinstance(a, RequestSuggestion)]
    rt.state = replace(rt.state, hand=None)
    tid = rt.state.live_timers[TimerKind.SUGGESTION_TICK]
    _, actions = rt.handle(TimerFired(tid, TimerKind.SUGGESTION_TICK, 180_000), 180_000)
    requests += [a for a in actions if isinstance(a, RequestSuggestion)]
    assert len(requests) == 2


def test_suggestion_flows_into_candidate_payload():
    rt = make_runtime()
    from parley.engine import RequestKind, allocate_request

    rt.state, rid = allocate_request(rt.state, RequestKind.SUGGESTION)
    rt.handle(SuggestionReady(rid, "steer toward the mural idea", 60_000), 60_000)
    assert rt.transcript.current_suggestion == "steer toward the mural idea"
    request = rt.make_backend_request(RequestCandidate("r77"))
    assert request.context.current_suggestion == "steer toward the mural idea"
    backend = ScriptedBackend({"queues": {"candidate": ["building on that"]}})
    reply = backend.handle(request)
    assert "steer toward the mural idea" in str(reply.value)


def test_relevance_payload_uses_relevance_window():
    config = ProtocolConfig(relevance_context_turns=3)
    rt = make_runtime(config)
    feed_turns(rt, 6)
    from parley.model import RequestRelevance

    request = rt.make_backend_request(RequestRelevance("r50", "some candidate"))
    assert request.kind == BackendRequestKind.RELEVANCE
    assert [t.seq for t in request.recent_turns] == [4, 5, 6]


def test_transcript_export_import_round_trip():
    rt = make_runtime()
    feed_turns(rt, 7)
    lines = export_transcript_jsonl(rt.full_history, "running summary text")
    turns, summary = import_transcript_jsonl(lines)
    assert turns == rt.full_history
    assert summary == "running summary text"


def test_full_history_seq_is_bijection_onto_1_to_n():
    rt = make_runtime()
    feed_turns(rt, 12)
    seqs = [t.seq for t in rt.full_history]
    assert seqs == list(range(1, 13))
