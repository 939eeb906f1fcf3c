from __future__ import annotations

import pytest

from conftest import D1, D2, agent_turn, human_turn
from parley.backend import (
    BackendRequest,
    BackendRequestKind,
    BackendTimeout,
    Persona,
    ScriptedBackend,
    content_words,
    default_persona,
    rule_follow_up,
    rule_relevance,
)
from parley.context import ActiveContext


def ctx(suggestion=None, turns=()):
    return ActiveContext(verbatim_turns=tuple(turns), summary="", current_suggestion=suggestion)


def test_scripted_candidate_pops_fifo():
    backend = ScriptedBackend({"queues": {"candidate": ["idea-1"]}})
    assert backend.generate_candidate(ctx(), default_persona()) == "idea-1"


def test_exhausted_candidate_queue_times_out():
    backend = ScriptedBackend({"queues": {"candidate": []}})
    with pytest.raises(BackendTimeout):
        backend.generate_candidate(ctx(), default_persona())


def test_candidate_reflects_current_suggestion():
    backend = ScriptedBackend({"queues": {"candidate": ["idea-1"]}})
    persona = default_persona()
    suggestion = persona.assigned_preference
    out = backend.generate_candidate(ctx(suggestion=suggestion), persona)
    assert suggestion in out


def test_persona_requires_system_prompt():
    with pytest.raises(ValueError):
        Persona(name="Lisa", system_prompt="")


# -- relevance rule ------------------------------------------------------------


def overlap_oracle(candidate, turns):
    words = set()
    for t in turns:
        words |= content_words(t.text)
    return bool(content_words(candidate) & words)


def test_relevance_shares_content_word():
    turns = [human_turn(1, "should pizza be on the menu", 0, 1)]
    assert rule_relevance("pizza toppings matter", turns) is True


def test_relevance_empty_context_is_false():
    assert rule_relevance("anything at all", []) is False


def test_relevance_no_overlap_is_false():
    turns = [human_turn(1, "should pizza be on the menu", 0, 1)]
    assert rule_relevance("rockets launch tomorrow", turns) is False


def test_relevance_matches_overlap_oracle():
    cases = [
        ("the gym needs new equipment", ["we talked about equipment budgets", "also schedules"]),
        ("short tiny", ["all the words here are long enough"]),
        ("греат", ["unrelated talk"]),
        ("budget budget budget", ["what about the budget line"]),
    ]
    for candidate, turn_texts in cases:
        turns = [human_turn(i + 1, text, i, i + 1) for i, text in enumerate(turn_texts)]
        assert rule_relevance(candidate, turns) == overlap_oracle(candidate, turns)


# -- follow-up rule ---------------------------------------------------------------


def test_follow_up_cue_word():
    assert rule_follow_up("what do you mean by that", "anything") is True


def test_follow_up_empty_utterance():
    assert rule_follow_up("", "anything") is False


def test_follow_up_topic_shift_is_false():
    assert rule_follow_up("anyway, about the gym", "I love pizza with pineapple") is False


def test_follow_up_by_content_overlap():
    assert rule_follow_up("that pineapple pizza argument again", "I love pizza with pineapple") is True


# -- summary rule -------------------------------------------------------------------


def test_summary_scripted_format():
    backend = ScriptedBackend({})
    batch = [human_turn(1, "hello", 0, 1, speaker=D1), agent_turn(2, "hi", 2)]
    assert backend.summarize(batch, "", default_persona()) == "D1:hello; A:hi"


def test_summary_preserves_prior_prefix():
    backend = ScriptedBackend({})
    batch = [human_turn(3, "next topic then", 5, 6, speaker=D2)]
    out = backend.summarize(batch, "D1:hello; A:hi", default_persona())
    assert out.startswith("D1:hello; A:hi; ")
    assert "D2:next topic then" in out


def test_summary_first_words_truncation():
    backend = ScriptedBackend({})
    batch = [human_turn(1, "one two three four five", 0, 1)]
    assert backend.summarize(batch, "", default_persona()) == "D1:one two three"


# -- suggestion rule -----------------------------------------------------------------


def test_suggestion_returns_assigned_preference():
    backend = ScriptedBackend({})
    persona = default_persona()
    assert backend.suggest(ctx(), persona) == persona.assigned_preference


def test_scripted_queue_delay_and_timeout_markers():
    backend = ScriptedBackend(
        {"queues": {"candidate": [{"text": "slow idea", "delayMs": 700}, {"timeout": True}]}}
    )
    request = BackendRequest("r1", BackendRequestKind.CANDIDATE, default_persona(), context=ctx())
    reply = backend.handle(request)
    assert (reply.value, reply.delay_ms, reply.timed_out) == ("slow idea", 700, False)
    reply = backend.handle(BackendRequest("r2", BackendRequestKind.CANDIDATE, default_persona(), context=ctx()))
    assert reply.timed_out is True


def test_task_fixture_personas_share_one_system_prompt():
    from pathlib import Path

    fixtures = Path(__file__).resolve().parents[1] / "src" / "parley" / "fixtures"
    personas = [
        Persona.load(fixtures / name)
        for name in (
            "task1_signature_pizzas.json",
            "task2_global_citizenship.json",
            "task3_mars_school.json",
        )
    ]
    prompts = {p.system_prompt for p in personas}
    assert len(prompts) == 1  # meta-prompt constant; only task/preference vary
    assert len({p.task_description for p in personas}) == 3
    assert len({p.assigned_preference for p in personas}) == 3
    assert all(p.name == "Lisa" for p in personas)
