from dataclasses import replace

import pytest
from conftest import C, M, obs

from novicesim.environment import (
    NOT_EXECUTED,
    REDACTED,
    ExecutionCache,
    Observation,
    compute_progress,
    execute_code,
    filter_observation,
    gate_execution,
    kc_oracle,
    knowledge_update_allowed,
    load_problem,
    not_executed,
    parse_error_type,
)
from novicesim.errors import ConfigError


def test_gating_plans():
    construct, debug, assess = (gate_execution(c) for c in (C.CONSTRUCTING, C.DEBUGGING, C.ASSESSING))
    assert not construct.execute_before and not construct.execute_after and construct.allow_modify
    assert debug.execute_before and debug.allow_modify and debug.execute_after
    assert not assess.execute_before and assess.execute_after and not assess.allow_modify and assess.cleanup_only


@pytest.mark.parametrize("m,allowed", [
    (M.MONITORING, True), (M.REFLECTING, True), (M.ENACTING, False), (M.PLANNING, False),
])
def test_knowledge_update_gate(m, allowed):
    assert knowledge_update_allowed(m) is allowed


def test_enacting_redacts_errors():
    o = obs(1, 4, ["TypeError"], stderr="Traceback...\nTypeError: bad operand")
    f = filter_observation(o, M.ENACTING)
    assert f.stderr == REDACTED == "[Error]: [output omitted...]"
    assert f.redacted and f.error_types == ()
    assert f.tests_passed == 1 and f.tests_total == 4


def test_monitoring_passes_observation_through():
    o = obs(1, 4, ["TypeError"])
    assert filter_observation(o, M.MONITORING) is o


def test_enacting_with_all_tests_passing_is_unchanged():
    o = obs(4, 4)
    assert filter_observation(o, M.ENACTING) is o


def test_progress_and_carry_forward():
    assert compute_progress(obs(12, 24)) == 0.5
    full = obs(24, 24)
    assert compute_progress(full) == 1.0 and full.solved
    idle = not_executed(obs(6, 24), 24)
    assert compute_progress(idle) == 0.25
    assert idle.stdout == NOT_EXECUTED and not idle.executed and not idle.solved
    assert not_executed(None, 24).tests_passed == 0


def test_progress_needs_tests():
    with pytest.raises(ValueError):
        compute_progress(Observation())


def test_observation_dict_round_trip():
    o = obs(2, 4, ["NameError", "TypeError"])
    assert Observation.from_dict(o.to_dict()) == o


def test_parse_error_type():
    assert parse_error_type("Traceback (most recent call last):\n  ...\nZeroDivisionError: division by zero") == "ZeroDivisionError"
    assert parse_error_type("builtins.NameError: name 'x' is not defined") == "NameError"
    assert parse_error_type("something odd happened") == "Other"
    assert parse_error_type("") == "Other"


def test_syntax_error_fails_every_test(particle, exec_cache):
    o = execute_code("def broken(:\n", particle, cache=exec_cache)
    assert o.tests_passed == 0
    assert "SyntaxError" in o.error_types
    assert o.executed and not o.exit_ok


def test_reference_solution_passes(particle, exec_cache):
    o = execute_code(particle.reference_solution, particle, cache=exec_cache)
    assert o.tests_passed == o.tests_total == len(particle.test_suite) == 24
    assert o.solved and o.error_types == ()


def test_bouncing_ball_reference_passes(exec_cache):
    ball = load_problem("bouncing_ball")
    o = execute_code(ball.reference_solution, ball, cache=exec_cache)
    assert o.solved


def test_empty_source_fails_with_missing_class_errors(particle, exec_cache):
    o = execute_code("", particle, cache=exec_cache)
    assert o.tests_passed == 0
    assert set(o.error_types) <= {"NameError", "AttributeError"} and o.error_types


def test_cache_returns_identical_observation(particle):
    cache = ExecutionCache()
    a = execute_code("x = 1\n", particle, parallelism=1, cache=cache)
    b = execute_code("x = 1\n", particle, parallelism=4, cache=cache)
    assert a is b


def test_timeout_is_reported_as_error_type(particle):
    quick = replace(particle, timeout=0.5, test_suite=particle.test_suite[:1])
    o = execute_code("while True:\n    pass\n", quick)
    assert o.tests_passed == 0 and o.error_types == ("Timeout",)


def test_kc_oracle(particle):
    assert "KC_C2" in kc_oracle("import math\nx = math.sqrt(2)\n", particle)
    assert kc_oracle("", particle) == set()
    found = kc_oracle("class P:\n    def __init__(self):\n        pass\n", particle)
    assert {"KC_C9", "KC_C10"} <= found and "KC_C12" not in found


def test_reference_solution_exercises_every_kc(particle):
    assert kc_oracle(particle.reference_solution, particle) == set(particle.kcs)


def test_unknown_problem_is_a_config_error():
    with pytest.raises(ConfigError):
        load_problem("no_such_problem")
