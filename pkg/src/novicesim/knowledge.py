"""Bayesian Knowledge Tracing with explicit flaw injection.

Mastery of each knowledge component (KC) is a probability updated by Bayes'
rule plus a learning step. The continuous mastery is discretized into three
levels, which decide whether a KC is Blocked (the agent is told the concept does
not exist), Correct, or Incorrect in the constraint text handed to the prompts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

UNKNOWN_BELOW = 0.3
MASTERED_FROM = 0.7

EFI_TEMPLATE = (
    "CRITICAL CONSTRAINT - You have NEVER heard of and CANNOT use: {concept}. "
    "This concept does not exist in your knowledge. You must solve the problem WITHOUT using it. "
    "If the code requires '{concept}', you will be stuck and confused."
)


class MasteryLevel(str, Enum):
    UNKNOWN = "Unknown"
    PARTIAL = "Partial"
    MASTERED = "Mastered"


class ComponentStatus(str, Enum):
    BLOCKED = "Blocked"
    CORRECT = "Correct"
    INCORRECT = "Incorrect"


@dataclass(frozen=True)
class KnowledgeComponent:
    id: str
    label: str
    category: str  # Coding | Physics | Math
    constraint_phrase: str


@dataclass(frozen=True)
class BktParams:
    p_init: float = 0.10
    p_transit: float = 0.25
    p_slip: float = 0.05
    p_guess: float = 0.20

    def __post_init__(self):
        for name in ("p_init", "p_transit", "p_slip", "p_guess"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.p_slip + self.p_guess >= 1.0:
            raise ValueError("p_slip + p_guess must be below 1")


@dataclass
class KnowledgeState:
    mastery: dict[str, float]
    params: BktParams = field(default_factory=BktParams)
    blocked_overrides: set[str] = field(default_factory=set)

    @classmethod
    def initial(cls, kc_ids: Iterable[str], params: Optional[BktParams] = None, blocked=()) -> "KnowledgeState":
        params = params or BktParams()
        return cls({k: params.p_init for k in kc_ids}, params, set(blocked))

    def snapshot(self) -> dict[str, float]:
        return dict(sorted(self.mastery.items()))


def predict_correct(p_l: float, params: BktParams) -> float:
    return p_l * (1.0 - params.p_slip) + (1.0 - p_l) * params.p_guess


def bkt_update(p_l: float, observed_correct: bool, params: BktParams, kc: str = "?") -> float:
    """Posterior mastery after one observation, followed by the learning step."""
    if observed_correct:
        num = p_l * (1.0 - params.p_slip)
        den = num + (1.0 - p_l) * params.p_guess
    else:
        num = p_l * params.p_slip
        den = num + (1.0 - p_l) * (1.0 - params.p_guess)
    if den == 0.0:
        raise ArithmeticError(f"BKT update for {kc}: observation has zero likelihood")
    posterior = num / den
    learned = posterior + (1.0 - posterior) * params.p_transit
    return min(1.0, max(0.0, learned))


def sample_observation(p_l: float, params: BktParams, rng: np.random.Generator) -> bool:
    return bool(rng.random() < predict_correct(p_l, params))


def discretize_mastery(p_l: float) -> MasteryLevel:
    if p_l < UNKNOWN_BELOW:
        return MasteryLevel.UNKNOWN
    if p_l < MASTERED_FROM:
        return MasteryLevel.PARTIAL
    return MasteryLevel.MASTERED


def component_status(kc_id: str, state: KnowledgeState, rng: np.random.Generator) -> ComponentStatus:
    """Blocked for overrides and Unknown mastery; Partial mastery is Correct with
    probability equal to the mastery itself."""
    p_l = state.mastery[kc_id]  # KeyError for unknown ids
    if kc_id in state.blocked_overrides:
        return ComponentStatus.BLOCKED
    level = discretize_mastery(p_l)
    if level is MasteryLevel.UNKNOWN:
        return ComponentStatus.BLOCKED
    if level is MasteryLevel.MASTERED:
        return ComponentStatus.CORRECT
    return ComponentStatus.CORRECT if rng.random() < p_l else ComponentStatus.INCORRECT


def all_statuses(state: KnowledgeState, rng: np.random.Generator) -> dict[str, ComponentStatus]:
    return {k: component_status(k, state, rng) for k in sorted(state.mastery)}


def render_constraints(statuses: Mapping[str, ComponentStatus], kcs: Mapping[str, KnowledgeComponent]) -> str:
    """Natural-language constraint text for the prompts, ordered by KC id."""
    if not statuses:
        return ""
    blocked, correct, shaky = [], [], []
    for kc_id in sorted(statuses):
        kc = kcs[kc_id]
        status = statuses[kc_id]
        if status is ComponentStatus.BLOCKED:
            blocked.append(EFI_TEMPLATE.format(concept=kc.constraint_phrase))
        elif status is ComponentStatus.CORRECT:
            correct.append(kc.label)
        else:
            shaky.append(kc.label)
    parts = list(blocked)
    if correct:
        parts.append("You correctly applied: " + ", ".join(correct))
    if shaky:
        parts.append("You have a shaky understanding of (you may apply these incorrectly): " + ", ".join(shaky))
    return "\n".join(parts)


def update_knowledge(
    state: KnowledgeState,
    credited: set[str],
    rng: np.random.Generator,
) -> dict[str, bool]:
    """Apply one round of BKT updates in place.

    KCs the code oracle credits count as correct observations; every other KC
    gets a synthetic observation sampled from its predicted correctness. Forced
    (blocked_overrides) KCs are left untouched. Returns the observations used.
    """
    observed: dict[str, bool] = {}
    for kc_id in sorted(state.mastery):
        if kc_id in state.blocked_overrides:
            continue
        p_l = state.mastery[kc_id]
        ok = True if kc_id in credited else sample_observation(p_l, state.params, rng)
        state.mastery[kc_id] = bkt_update(p_l, ok, state.params, kc_id)
        observed[kc_id] = ok
    return observed


def lowest_mastery(state: KnowledgeState) -> Optional[str]:
    if not state.mastery:
        return None
    return min(sorted(state.mastery), key=lambda k: state.mastery[k])
