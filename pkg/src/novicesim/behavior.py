"""Semi-Markov behavior engine.

Metacognitive segments follow a first-order Markov chain, segment lengths are
Gamma-distributed per behavior, and cognitive steps inside a segment follow a
chain conditioned on the segment's behavior and the previous step (``None``
stands for the start of a segment). Interrupts are Gaussian bumps over session
progress, checked outside the chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import yaml

from .errors import ConfigError

ROW_TOL = 1e-9
START = "START"


class MetacognitiveBehavior(str, Enum):
    PLANNING = "Planning"
    ENACTING = "Enacting"
    MONITORING = "Monitoring"
    REFLECTING = "Reflecting"


class CognitiveBehavior(str, Enum):
    CONSTRUCTING = "Constructing"
    DEBUGGING = "Debugging"
    ASSESSING = "Assessing"


class ProfileLevel(str, Enum):
    HIGH = "High"
    LOW = "Low"

    @classmethod
    def parse(cls, value) -> "ProfileLevel":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        for member in cls:
            if member.value.lower() == text:
                return member
        raise ConfigError(f"unknown profile level {value!r} (expected High or Low)")


class InterruptKind(str, Enum):
    ASSISTANCE = "Assistance"
    OFF_TOPIC = "OffTopic"


METACOG = tuple(MetacognitiveBehavior)
COGNITIVE = tuple(CognitiveBehavior)
# OffTopic is tested first: a distracted student does not think to ask for help.
INTERRUPT_ORDER = (InterruptKind.OFF_TOPIC, InterruptKind.ASSISTANCE)


@dataclass(frozen=True)
class GammaParams:
    shape: float
    scale: float

    @property
    def mean(self) -> float:
        return self.shape * self.scale

    @property
    def cv(self) -> float:
        return 1.0 / math.sqrt(self.shape)


@dataclass(frozen=True)
class InterruptGaussian:
    mu: float
    sigma: float
    r_peak: float

    def probability(self, x: float) -> float:
        return self.r_peak * math.exp(-((x - self.mu) ** 2) / (2.0 * self.sigma**2))


@dataclass(frozen=True)
class SegmentPlan:
    behavior: MetacognitiveBehavior
    duration: int


CogKey = tuple[MetacognitiveBehavior, Optional[CognitiveBehavior]]


@dataclass
class BehaviorSpec:
    """Full parameterization of one profile's semi-Markov process.

    Probability rows are stored as numpy vectors ordered like ``METACOG`` and
    ``COGNITIVE``. ``sources`` records where each configured cell came from
    (``published``, ``figure``, ``derived``, ``completed``, ``decision``).
    """

    profile: ProfileLevel
    metacog_transitions: dict[MetacognitiveBehavior, np.ndarray]
    initial_metacog: np.ndarray
    durations: dict[MetacognitiveBehavior, GammaParams]
    cognitive_transitions: dict[CogKey, np.ndarray]
    interrupts: dict[InterruptKind, InterruptGaussian]
    max_steps: int = 30
    sources: dict[str, str] = field(default_factory=dict)


def _row_label(m: MetacognitiveBehavior, prev: Optional[CognitiveBehavior]) -> str:
    return f"{m.value}|{prev.value if prev is not None else START}"


def validate_spec(spec: BehaviorSpec) -> list[str]:
    """Return every invariant violation in ``spec``; an empty list means valid."""
    problems: list[str] = []

    def check_row(label: str, row) -> None:
        row = np.asarray(row, dtype=float)
        if np.any(row < 0) or np.any(row > 1) or not np.all(np.isfinite(row)):
            problems.append(f"row {label} has entries outside [0, 1]")
        total = float(row.sum())
        if abs(total - 1.0) > ROW_TOL:
            problems.append(f"row {label} sums to {total:.10g}")

    check_row("initial", spec.initial_metacog)
    for m in METACOG:
        if m not in spec.metacog_transitions:
            problems.append(f"row {m.value} missing from metacognitive transitions")
        else:
            check_row(m.value, spec.metacog_transitions[m])
        g = spec.durations.get(m)
        if g is None:
            problems.append(f"duration for {m.value} missing")
            continue
        if not g.shape > 0:
            problems.append(f"Gamma shape must be positive ({m.value}: {g.shape})")
        if not g.scale > 0:
            problems.append(f"Gamma scale must be positive ({m.value}: {g.scale})")
    for key, row in spec.cognitive_transitions.items():
        check_row(_row_label(*key), row)
    for kind in InterruptKind:
        ig = spec.interrupts.get(kind)
        if ig is None:
            problems.append(f"interrupt {kind.value} missing")
            continue
        if not 0.0 <= ig.mu <= 1.0:
            problems.append(f"interrupt {kind.value} mu must lie in [0, 1]")
        if not ig.sigma > 0:
            problems.append(f"interrupt {kind.value} sigma must be positive")
        if not 0.0 <= ig.r_peak <= 1.0:
            problems.append(f"interrupt {kind.value} r_peak must lie in [0, 1]")
    if spec.max_steps < 1:
        problems.append("max_steps must be at least 1")
    return problems


def _draw(row: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(row)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(idx, len(row) - 1)


def duration_from_draw(x: float) -> int:
    """Map a continuous Gamma draw to a step count (nearest integer, at least 1)."""
    return max(1, int(math.floor(x + 0.5)))


def sample_duration(behavior: MetacognitiveBehavior, spec: BehaviorSpec, rng: np.random.Generator) -> int:
    g = spec.durations[behavior]
    return duration_from_draw(rng.gamma(g.shape, g.scale))


def sample_durations(behavior: MetacognitiveBehavior, spec: BehaviorSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorized :func:`sample_duration` with the same rounding rule."""
    g = spec.durations[behavior]
    return np.maximum(1, np.floor(rng.gamma(g.shape, g.scale, size) + 0.5)).astype(np.int64)


def sample_next_segment(
    prev: Optional[MetacognitiveBehavior],
    spec: BehaviorSpec,
    rng: np.random.Generator,
    duration_rng: Optional[np.random.Generator] = None,
) -> SegmentPlan:
    """Draw the next segment's behavior and duration; ``prev=None`` starts a session."""
    row = spec.initial_metacog if prev is None else spec.metacog_transitions[prev]
    behavior = METACOG[_draw(row, rng)]
    return SegmentPlan(behavior, sample_duration(behavior, spec, duration_rng or rng))


def sample_cognitive_step(
    m: MetacognitiveBehavior,
    prev: Optional[CognitiveBehavior],
    spec: BehaviorSpec,
    rng: np.random.Generator,
) -> CognitiveBehavior:
    try:
        row = spec.cognitive_transitions[(m, prev)]
    except KeyError:
        raise ConfigError(f"no cognitive transition row for ({_row_label(m, prev)})") from None
    return COGNITIVE[_draw(row, rng)]


def interrupt_probability(kind: InterruptKind, x: float, spec: BehaviorSpec) -> float:
    return spec.interrupts[kind].probability(x)


def check_interrupt(
    x: float,
    spec: BehaviorSpec,
    rng: np.random.Generator,
    just_received_help: bool = False,
) -> Optional[InterruptKind]:
    """Return the interrupt firing at progress ``x``, if any (at most one per step)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {x}")
    if just_received_help:
        return None
    for kind in INTERRUPT_ORDER:
        if rng.random() < spec.interrupts[kind].probability(x):
            return kind
    return None


def gamma_moments(p: GammaParams) -> tuple[float, float]:
    return p.shape * p.scale, 1.0 / math.sqrt(p.shape)


# -- config files ----------------------------------------------------------

def _cell(value, where: str) -> tuple[float, Optional[str]]:
    if isinstance(value, Mapping):
        if "p" not in value:
            raise ConfigError(f"{where}: cell needs a 'p' entry")
        return float(value["p"]), value.get("source")
    try:
        return float(value), None
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: not a probability: {value!r}") from None


def _enum(cls, name, where):
    try:
        return cls(name)
    except ValueError:
        raise ConfigError(f"{where}: unknown {cls.__name__} {name!r}") from None


def _vector(mapping, labels, cls, where, sources) -> np.ndarray:
    if not isinstance(mapping, Mapping):
        raise ConfigError(f"{where}: expected a mapping of probabilities")
    out = np.zeros(len(labels))
    for name, value in mapping.items():
        member = _enum(cls, name, where)
        p, src = _cell(value, f"{where}.{name}")
        out[labels.index(member)] = p
        if src:
            sources[f"{where}.{name}"] = src
    return out


def spec_from_dict(data: Mapping) -> BehaviorSpec:
    """Build a spec from parsed config data. Raises ConfigError on shape errors only;
    numeric invariants are left to :func:`validate_spec`."""
    sources: dict[str, str] = {}
    try:
        profile = ProfileLevel.parse(data["profile"])
        initial = _vector(data["initial_metacog"], METACOG, MetacognitiveBehavior, "initial_metacog", sources)
        metacog = {
            _enum(MetacognitiveBehavior, m, "metacog_transitions"): _vector(
                row, METACOG, MetacognitiveBehavior, f"metacog_transitions.{m}", sources
            )
            for m, row in data["metacog_transitions"].items()
        }
        durations = {}
        for m, g in data["durations"].items():
            durations[_enum(MetacognitiveBehavior, m, "durations")] = GammaParams(float(g["shape"]), float(g["scale"]))
            if g.get("source"):
                sources[f"durations.{m}"] = g["source"]
        cognitive = {}
        for m, rows in data["cognitive_transitions"].items():
            mm = _enum(MetacognitiveBehavior, m, "cognitive_transitions")
            for prev, row in rows.items():
                pp = None if prev == START else _enum(CognitiveBehavior, prev, f"cognitive_transitions.{m}")
                cognitive[(mm, pp)] = _vector(
                    row, COGNITIVE, CognitiveBehavior, f"cognitive_transitions.{m}.{prev}", sources
                )
        interrupts = {}
        for k, g in data["interrupts"].items():
            interrupts[_enum(InterruptKind, k, "interrupts")] = InterruptGaussian(
                float(g["mu"]), float(g["sigma"]), float(g["r_peak"])
            )
            if g.get("source"):
                sources[f"interrupts.{k}"] = g["source"]
    except KeyError as exc:
        raise ConfigError(f"behavior spec is missing section {exc.args[0]!r}") from None
    return BehaviorSpec(
        profile=profile,
        metacog_transitions=metacog,
        initial_metacog=initial,
        durations=durations,
        cognitive_transitions=cognitive,
        interrupts=interrupts,
        max_steps=int(data.get("max_steps", 30)),
        sources=sources,
    )


def spec_to_dict(spec: BehaviorSpec) -> dict:
    def vec(v, labels, prefix):
        out = {}
        for label, p in zip(labels, v):
            src = spec.sources.get(f"{prefix}.{label.value}")
            out[label.value] = {"p": float(p), "source": src} if src else float(p)
        return out

    def tagged(d, key):
        src = spec.sources.get(key)
        return {**d, "source": src} if src else d

    cog: dict = {}
    for (m, prev), row in spec.cognitive_transitions.items():
        pname = prev.value if prev is not None else START
        cog.setdefault(m.value, {})[pname] = vec(row, COGNITIVE, f"cognitive_transitions.{m.value}.{pname}")
    return {
        "schema": "behavior-spec/1",
        "profile": spec.profile.value,
        "max_steps": spec.max_steps,
        "initial_metacog": vec(spec.initial_metacog, METACOG, "initial_metacog"),
        "metacog_transitions": {
            m.value: vec(row, METACOG, f"metacog_transitions.{m.value}") for m, row in spec.metacog_transitions.items()
        },
        "durations": {
            m.value: tagged({"shape": g.shape, "scale": g.scale}, f"durations.{m.value}")
            for m, g in spec.durations.items()
        },
        "cognitive_transitions": cog,
        "interrupts": {
            k.value: tagged({"mu": g.mu, "sigma": g.sigma, "r_peak": g.r_peak}, f"interrupts.{k.value}")
            for k, g in spec.interrupts.items()
        },
    }


def load_behavior_spec(path) -> BehaviorSpec:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read behavior spec {path}: {exc}") from None
    spec = spec_from_dict(data)
    problems = validate_spec(spec)
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))
    return spec


def default_spec(profile) -> BehaviorSpec:
    """The bundled default spec for ``High`` or ``Low``."""
    from .resources import data_path

    level = ProfileLevel.parse(profile)
    return load_behavior_spec(data_path("configs", "behavior", f"{level.value.lower()}.yaml"))
