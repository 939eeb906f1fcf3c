from __future__ import annotations

import json
from pathlib import Path

from parley.model import (
    EmitAgentSpeech,
    MuteAgent,
    OpenWindow,
    ProtocolConfig,
    UserSpeechStart,
    WindowReason,
)
from parley.modes import Mode
from parley.simulator import (
    Scenario,
    ScriptEntry,
    Trace,
    check_invariants,
    fuzz,
    generate_scenario,
    run_scenario,
)

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "parley" / "fixtures"


def lull_scenario(gap_after: int = 3200) -> Scenario:
    return Scenario(
        mode=Mode.ROUNDTABLE,
        horizon_ms=60_000,
        backend_script={"fallbacks": {"candidate": "how about the greenhouse"}},
        script=[
            ScriptEntry(speaker="D1", text="thinking about the greenhouse budget", duration_ms=2000, at=1000),
            # silence gap after 3000: proactive lull fires at 3000 of silence
            ScriptEntry(speaker="D2", text="right so where were we", duration_ms=1500, at=3000 + gap_after + 4000),
        ],
    )


def test_lull_gap_produces_proactive_window():
    trace = run_scenario(lull_scenario())
    opens = [e for e in trace.entries if e.cat == "action" and isinstance(e.item, OpenWindow)]
    assert any(o.item.reason == WindowReason.PROACTIVE_LULL for o in opens)
    assert trace.violations == []


def test_same_seed_is_byte_identical():
    scenario = generate_scenario(11, Mode.PERIPHERAL)
    first = run_scenario(scenario).to_jsonl()
    second = run_scenario(generate_scenario(11, Mode.PERIPHERAL)).to_jsonl()
    assert first == second


def test_talking_over_agent_mutes_in_same_instant():
    scenario = Scenario(
        mode=Mode.ROUNDTABLE,
        horizon_ms=30_000,
        backend_script={"fallbacks": {"candidate": "greenhouse plans sound great"}, "delays": {"candidate": 100}},
        script=[
            ScriptEntry(speaker="D1", text="Lisa, what do you think", duration_ms=1200, at=1000),
            # starts while the agent's reactive window is open
            ScriptEntry(speaker="D2", text="hang on one second", duration_ms=900, at=2400),
        ],
    )
    trace = run_scenario(scenario)
    start_ts = [e.t for e in trace.entries if e.cat == "event" and isinstance(e.item, UserSpeechStart) and e.item.speaker.id == "D2"]
    mute_ts = [e.t for e in trace.entries if e.cat == "action" and isinstance(e.item, MuteAgent)]
    assert start_ts and start_ts[0] in mute_ts
    assert trace.violations == []


def test_hand_crafted_double_window_is_flagged():
    base = run_scenario(lull_scenario())
    # Corrupt the trace: duplicate an OpenWindow without a close in between.
    bad_entries = []
    injected = False
    for entry in base.entries:
        bad_entries.append(entry)
        if not injected and entry.cat == "action" and isinstance(entry.item, OpenWindow):
            bad_entries.append(entry)
            injected = True
    bad = Trace(
        entries=bad_entries,
        final_states=base.final_states,
        config=base.config,
        initial_policies=base.initial_policies,
        horizon_ms=base.horizon_ms,
    )
    assert injected
    assert any(v.invariant_id == "single-window" for v in check_invariants(bad))


def test_default_scenarios_are_clean():
    for seed in range(3):
        trace = run_scenario(generate_scenario(seed, Mode.ROUNDTABLE))
        assert trace.violations == []


def test_consecutive_proactive_cap_is_config_parameterized():
    # Three agent monologue turns in a row: legal under a raised cap, flagged under default.
    config3 = ProtocolConfig(max_consecutive_proactive=3, min_proactive_gap_ms=3000)
    scenario = Scenario(
        mode=Mode.ROUNDTABLE,
        config=config3,
        horizon_ms=40_000,
        backend_script={"fallbacks": {"candidate": "more greenhouse thoughts"}},
        script=[ScriptEntry(speaker="D1", text="opening thought about plans", duration_ms=1500, at=1000)],
    )
    trace = run_scenario(scenario)
    proactive_emits = 0
    reason = None
    open_reasons = []
    for e in trace.entries:
        if e.cat == "action" and isinstance(e.item, OpenWindow):
            reason = e.item.reason
        if e.cat == "action" and isinstance(e.item, EmitAgentSpeech) and reason == WindowReason.PROACTIVE_LULL:
            proactive_emits += 1
    assert proactive_emits >= 3
    assert trace.violations == []  # cap of 3 honored under its own config
    # The same trace audited under the default cap of 2 must be flagged.
    downgraded = Trace(
        entries=trace.entries,
        final_states=trace.final_states,
        config=ProtocolConfig(min_proactive_gap_ms=3000),
        initial_policies=trace.initial_policies,
        horizon_ms=trace.horizon_ms,
    )
    assert any(v.invariant_id == "rate-limit" for v in check_invariants(downgraded))


def test_no_speech_means_no_forced_raise():
    scenario = Scenario(mode=Mode.ROUNDTABLE, horizon_ms=300_000, script=[], backend_script={})
    trace = run_scenario(scenario)
    from parley.model import RaiseHand

    assert not any(e.cat == "action" and isinstance(e.item, RaiseHand) for e in trace.entries)
    assert trace.violations == []


def test_forced_raise_at_next_pause_after_two_minutes():
    scenario = Scenario(
        mode=Mode.ROUNDTABLE,
        horizon_ms=200_000,
        backend_script={"fallbacks": {"candidate": "thought"}, "delays": {"candidate": 100}},
        # Proactive speech is never possible (continuous chatter with < 3s gaps is
        # hard to script cheaply), so just disable it via mode? Roundtable allows it;
        # keep gaps short instead.
        script=[
            ScriptEntry(speaker="D1", text="kick off", duration_ms=1000, at=1000),
            ScriptEntry(speaker="D2", text="reply quickly", duration_ms=1000, at=4300),
            ScriptEntry(speaker="D1", text="and again more detail", duration_ms=1000, at=7000),
            ScriptEntry(speaker="D2", text="pause comes after this one", duration_ms=1000, at=130_000),
        ],
        config=ProtocolConfig(min_proactive_gap_ms=20_000, lull_threshold_ms=300_000),
    )
    trace = run_scenario(scenario)
    from parley.model import RaiseHand, RequestRelevance

    raises = [e for e in trace.entries if e.cat == "action" and isinstance(e.item, RaiseHand)]
    assert raises and raises[0].t == 131_000
    # No relevance check before the forced raise in that step.
    assert not any(
        e.cat == "action" and isinstance(e.item, RequestRelevance) and e.t == raises[0].t for e in trace.entries
    )
    assert trace.violations == []


def test_dangling_trigger_reports_script_error():
    scenario = Scenario(
        mode=Mode.BREAKOUT,  # agent absent in main: no hand raises will happen
        horizon_ms=20_000,
        script=[
            ScriptEntry(speaker="D1", text="alone in the main room", duration_ms=1000, at=1000),
            ScriptEntry(speaker="D2", text="never triggered", duration_ms=1000, after_hand_raise=500),
        ],
    )
    trace = run_scenario(scenario)
    assert trace.script_errors and "afterHandRaise" in trace.script_errors[0]


def test_after_agent_speech_trigger_fires():
    scenario = Scenario.load(FIXTURES / "scenario_roundtable_demo.json")
    trace = run_scenario(scenario)
    assert trace.violations == []
    emits = [e for e in trace.entries if e.cat == "action" and isinstance(e.item, EmitAgentSpeech)]
    assert emits, "demo scenario should produce agent speech"
    assert trace.script_errors == []


def test_fuzz_single_seed_clean_per_mode():
    for mode in (Mode.ROUNDTABLE, Mode.PERIPHERAL, Mode.BREAKOUT):
        report = fuzz([5], mode)
        assert report.total_violations == 0


def test_breakout_demo_scenario_is_clean_and_private():
    scenario = Scenario.load(FIXTURES / "scenario_breakout_demo.json")
    trace = run_scenario(scenario)
    assert trace.violations == []
    assert trace.script_errors == []
    breakout_emits = [
        e for e in trace.entries
        if e.room_id == "breakout-D1" and e.cat == "action" and isinstance(e.item, EmitAgentSpeech)
    ]
    assert breakout_emits, "the breakout agent should answer the private question"
    main_emits = [
        e for e in trace.entries
        if e.room_id == "main" and e.cat == "action" and isinstance(e.item, EmitAgentSpeech)
    ]
    assert main_emits == []
