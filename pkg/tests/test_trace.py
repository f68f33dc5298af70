import json

import numpy as np
import pytest
from conftest import C, M, obs, step, traj
from hypothesis import given, settings
from hypothesis import strategies as st

from novicesim.behavior import InterruptKind
from novicesim.errors import TraceSchemaError
from novicesim.trace import (
    BlankLineStyle,
    BreakdownConfig,
    Trajectory,
    breakdown_trace,
    check_trajectory,
    dumps_trace,
    load_trace,
    load_traces,
    loads_trace,
    normalize_states,
    save_trace,
)

PLAIN = dict(blank_line_style=BlankLineStyle.NEVER, header="")


def sample_traj():
    s1 = step(1, C.DEBUGGING, passed=1, errors=["NameError"], utterance="hmm NameError", code="x = 1\n")
    s1.segment_duration = 2
    s1.knowledge_snapshot = {"KC_C1": 0.1}
    s2 = step(2, C.ASSESSING, passed=4, utterance="all good", code="x = 1\n")
    s2.knowledge_snapshot = {"KC_C1": 0.5}
    return traj([s1, s2])


# -- persistence ------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    t = sample_traj()
    path = save_trace(t, tmp_path / "a" / "run.jsonl")
    again = load_trace(path)
    assert again == t
    assert dumps_trace(again) == dumps_trace(t)


def test_header_is_first_record():
    first = json.loads(dumps_trace(sample_traj()).splitlines()[0])
    assert first["kind"] == "header" and first["steps"] == 2 and first["schema_version"] == "1.0"


def test_truncated_file_names_the_line():
    lines = dumps_trace(sample_traj()).splitlines()
    cut = "\n".join(lines[:2] + [lines[2][:40]])
    with pytest.raises(TraceSchemaError, match="line 3"):
        loads_trace(cut)


def test_missing_steps_count_as_truncation():
    lines = dumps_trace(sample_traj()).splitlines()
    with pytest.raises(TraceSchemaError, match="expected 2 steps"):
        loads_trace("\n".join(lines[:2]))


def test_newer_minor_version_keeps_unknown_fields():
    lines = dumps_trace(sample_traj()).splitlines()
    head = json.loads(lines[0])
    head["schema_version"] = "1.3"
    head["generator"] = "future"
    rec = json.loads(lines[1])
    rec["keystrokes"] = 42
    t = loads_trace("\n".join([json.dumps(head), json.dumps(rec), lines[2]]))
    assert t.steps[0].extra == {"keystrokes": 42}
    assert t.extra == {"generator": "future"}
    assert '"keystrokes": 42' in dumps_trace(t)


def test_newer_major_version_is_rejected():
    lines = dumps_trace(sample_traj()).splitlines()
    head = json.loads(lines[0])
    head["schema_version"] = "2.0"
    with pytest.raises(TraceSchemaError, match="unsupported"):
        loads_trace("\n".join([json.dumps(head)] + lines[1:]))


def test_load_traces_walks_directories(tmp_path):
    save_trace(sample_traj(), tmp_path / "low" / "run_000.jsonl")
    save_trace(sample_traj(), tmp_path / "high" / "run_000.jsonl")
    assert len(load_traces(tmp_path)) == 2
    assert len(load_traces(tmp_path / "low" / "run_000.jsonl")) == 1


# -- invariants -------------------------------------------------------------------

def test_valid_fixture_has_no_violations():
    assert check_trajectory(sample_traj()) == []


def test_knowledge_change_outside_monitoring_is_flagged():
    t = sample_traj()
    for s in t.steps:
        s.metacog = M.ENACTING
        s.filtered_obs = s.raw_obs if not s.raw_obs.has_error else s.filtered_obs
    problems = check_trajectory(t)
    assert any("knowledge changed" in p for p in problems)
    assert any("not redacted" in p for p in problems)


def test_interrupt_accounting_is_checked():
    ask = step(1, None, passed=0)
    ask.interrupt, ask.tutor_hint = InterruptKind.ASSISTANCE, "look at line 2"
    nxt = step(2, C.CONSTRUCTING)
    nxt.segment_duration = 5
    assert any("not followed by intervention" in p for p in check_trajectory(traj([ask, nxt])))
    nxt.intervention = "look at line 2"
    assert check_trajectory(traj([ask, nxt])) == []
    stray = step(1, C.CONSTRUCTING)
    stray.segment_duration, stray.intervention = 1, "hint from nowhere"
    assert any("without a preceding Assistance" in p for p in check_trajectory(traj([stray])))


def test_segment_and_solve_consistency_are_checked():
    s1, s2 = step(1), step(2, passed=4)
    s1.segment_duration = 1
    t = traj([s1, s2])
    problems = check_trajectory(t)
    assert any("segment 1: 2 steps" in p for p in problems)
    t.solve_step = 1
    assert any("solve_step" in p for p in check_trajectory(t))
    bad = Trajectory({}, [s1], True, 1, 0)
    assert any("solved flag" in p for p in check_trajectory(bad))


def test_both_or_neither_cognitive_and_interrupt_is_flagged():
    s = step(1)
    s.segment_duration = 1
    s.interrupt = InterruptKind.OFF_TOPIC
    assert any("exactly one" in p for p in check_trajectory(traj([s])))


def test_progress_must_replay_from_observation():
    s = step(1, passed=2)
    s.segment_duration, s.progress = 1, 0.9
    assert any("does not match raw observation" in p for p in check_trajectory(traj([s])))


# -- breakdown ---------------------------------------------------------------------

def test_first_state_is_typed_line_by_line():
    assert breakdown_trace(["a=1\nb=2"], BreakdownConfig(level=1.0, **PLAIN)) == ["a=1", "a=1\nb=2"]


def test_word_granularity():
    out = breakdown_trace(["x = a + b"], BreakdownConfig(level=1.0, word_granularity=True, **PLAIN))
    assert out == ["x", "x =", "x = a", "x = a +", "x = a + b"]


def test_level_zero_keeps_only_transition_endpoints():
    states = ["a = 1\n", "a = 1\nb = 2\n", "a = 10\nb = 2\nc = 3\n"]
    cfg = BreakdownConfig(level=0.0, **PLAIN)
    assert breakdown_trace(states, cfg) == normalize_states(states, cfg)


def test_edit_is_typed_from_common_prefix():
    out = breakdown_trace(["y = 1", "y = 123 + z"], BreakdownConfig(level=1.0, **PLAIN))
    assert out == ["y = 1", "y = 123", "y = 123 +", "y = 123 + z"]


def test_deletions_shrink_the_file():
    out = breakdown_trace(["a\nb\nc", "a\nc"], BreakdownConfig(level=1.0, **PLAIN))
    assert out[-1] == "a\nc"


def test_whitespace_only_changes_collapse():
    cfg = BreakdownConfig(**PLAIN)
    assert normalize_states(["x=1", "x = 1", "x = 2"], cfg) == ["x = 1", "x = 2"]


def test_header_and_blank_line_styles():
    src = "import math\ndef f():\n    pass\ndef g():\n    pass"
    always = normalize_states([src], BreakdownConfig(blank_line_style=BlankLineStyle.ALWAYS, header="# hw\n"))[0]
    never = normalize_states([src], BreakdownConfig(blank_line_style=BlankLineStyle.NEVER))[0]
    assert always.startswith("# hw\n") and "\n\ndef f" in always and "\n\ndef g" in always
    assert "\n\n" not in never


def test_breakdown_is_seeded():
    states = ["a = 1", "a = 1\nb = 2\nc = 3", "a = 2\nb = 2\nc = 4\nd = 5"]
    cfg = BreakdownConfig(level=0.5, seed=3)
    assert breakdown_trace(states, cfg) == breakdown_trace(states, cfg)


def test_breakdown_rejects_empty_input_and_bad_level():
    with pytest.raises(ValueError):
        breakdown_trace([])
    with pytest.raises(ValueError):
        BreakdownConfig(level=1.5)


LINES = ["import math", "x = 1", "y = x + 2", "def f(a):", "    return a * 2", "class P:", "    pass", "print(y)", ""]


@st.composite
def code_sequences(draw):
    n = draw(st.integers(1, 5))
    return ["\n".join(draw(st.lists(st.sampled_from(LINES), min_size=1, max_size=8))) for _ in range(n)]


@settings(max_examples=100, deadline=None)
@given(states=code_sequences(), seed=st.integers(0, 2**16))
def test_full_level_ends_in_normalized_final_state(states, seed):
    cfg = BreakdownConfig(level=1.0, seed=seed)
    assert breakdown_trace(states, cfg)[-1] == normalize_states(states, cfg)[-1]


def test_expected_length_is_monotone_in_level():
    rng = np.random.default_rng(0)
    states = ["\n".join(rng.choice(LINES, size=rng.integers(2, 8))) for _ in range(5)]
    lengths = {lv: np.mean([len(breakdown_trace(states, BreakdownConfig(level=lv, seed=s))) for s in range(40)])
               for lv in (0.0, 0.5, 1.0)}
    assert lengths[0.0] < lengths[0.5] < lengths[1.0]
