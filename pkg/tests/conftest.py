"""Shared builders for specs, scripted replies and synthetic trajectories."""

from __future__ import annotations

from typing import Optional, Sequence

import pytest

from novicesim.agent import AgentAction
from novicesim.behavior import (
    COGNITIVE,
    METACOG,
    START,
    CognitiveBehavior,
    MetacognitiveBehavior,
    default_spec,
    spec_from_dict,
    spec_to_dict,
)
from novicesim.environment import ExecutionCache, Observation, filter_observation, load_problem
from novicesim.trace import TraceStep, Trajectory

M = MetacognitiveBehavior
C = CognitiveBehavior


def point(labels, target) -> dict:
    return {lab.value: (1.0 if lab is target else 0.0) for lab in labels}


def fixed_spec(
    metacog: MetacognitiveBehavior = M.MONITORING,
    cognitive: CognitiveBehavior = C.DEBUGGING,
    duration_shape: float = 400.0,
    duration_scale: float = 0.25,
    r_peak: float = 0.0,
    profile: str = "Low",
):
    """A spec that stays in one metacognitive state, always takes one cognitive
    action and (by default) never interrupts. Durations concentrate near 100."""
    d = spec_to_dict(default_spec(profile))
    d["initial_metacog"] = point(METACOG, metacog)
    d["metacog_transitions"] = {m.value: point(METACOG, metacog) for m in METACOG}
    d["durations"] = {m.value: {"shape": duration_shape, "scale": duration_scale} for m in METACOG}
    d["cognitive_transitions"] = {
        m.value: {p: point(COGNITIVE, cognitive) for p in [START] + [c.value for c in COGNITIVE]} for m in METACOG
    }
    for g in d["interrupts"].values():
        g["r_peak"] = r_peak
    return spec_from_dict(d)


def strategy_reply(i: int = 0) -> str:
    return f"GOAL: get test {i} passing\nMINDSET: unsure\nDIRECTIVE: write the next bit"


def action_reply(code: Optional[str], monologue: str = "ok trying this") -> str:
    if code is None:
        return f"MONOLOGUE: {monologue}"
    return f"MONOLOGUE: {monologue}\nCODE:\n```python\n{code}```"


def script_text(codes: Sequence[str], strategist: int = 40, tutor: int = 40) -> str:
    """Reply script: enough strategist and tutor entries plus one executor reply per code."""
    parts = []
    for i in range(strategist):
        parts.append(f"### strategist\n{strategy_reply(i)}")
    for i, code in enumerate(codes):
        parts.append(f"### executor\n{action_reply(code, f'attempt {i}, maybe this works')}")
    for i in range(tutor):
        parts.append(f"### tutor\nLook at line {i + 1} and check each name is defined.")
    return "\n\n".join(parts) + "\n"


def obs(passed: int, total: int = 4, errors: Sequence[str] = (), executed: bool = True, stderr: str = "") -> Observation:
    return Observation(
        stdout="",
        stderr=stderr or ("\n".join(f"{e}: boom" for e in errors)),
        exit_ok=executed and not errors,
        tests_passed=passed,
        tests_total=total,
        error_types=tuple(errors),
        executed=executed,
    )


def step(
    t: int,
    cognitive: Optional[CognitiveBehavior] = C.DEBUGGING,
    passed: int = 0,
    total: int = 4,
    errors: Sequence[str] = (),
    utterance: str = "hmm",
    code: str = "",
    metacog: MetacognitiveBehavior = M.MONITORING,
    n: int = 1,
    executed: bool = True,
    pre_errors: Optional[Sequence[str]] = None,
) -> TraceStep:
    raw = obs(passed, total, errors, executed)
    pre = obs(0, total, pre_errors) if pre_errors is not None else None
    return TraceStep(
        t=t, n=n, metacog=metacog, cognitive=cognitive, action=AgentAction(code, utterance),
        raw_obs=raw, filtered_obs=filter_observation(raw, metacog), progress=passed / total,
        time_progress=min(1.0, t / 10), knowledge_snapshot={}, pre_obs=pre,
    )


def traj(steps: Sequence[TraceStep], max_steps: int = 10, seed: int = 0) -> Trajectory:
    solved = [s.t for s in steps if s.raw_obs.solved]
    return Trajectory({"max_steps": max_steps}, list(steps), bool(solved), solved[0] if solved else None, seed)


def progress_traj(xs: Sequence[float]) -> Trajectory:
    return traj([step(i + 1, passed=round(x * 10), total=10) for i, x in enumerate(xs)])


def cognitive_traj(labels: str) -> Trajectory:
    """Trajectory from a string like "CCDA" (Constructing, Debugging, Assessing)."""
    lookup = {"C": C.CONSTRUCTING, "D": C.DEBUGGING, "A": C.ASSESSING}
    return traj([step(i + 1, cognitive=lookup[ch]) for i, ch in enumerate(labels)], max_steps=max(10, len(labels)))


@pytest.fixture(scope="session")
def particle():
    return load_problem("particle")


@pytest.fixture(scope="session")
def exec_cache():
    return ExecutionCache()


def reference_drafts(reference: str) -> list[str]:
    """Growing prefixes of a reference solution, cut at blank lines."""
    lines = reference.rstrip("\n").split("\n")
    cuts = [i for i, ln in enumerate(lines) if not ln.strip()] + [len(lines)]
    out: list[str] = []
    for c in cuts:
        d = "\n".join(lines[:c]).rstrip() + "\n"
        if d.strip() and d not in out:
            out.append(d)
    return out
