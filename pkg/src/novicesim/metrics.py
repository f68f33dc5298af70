"""Fidelity metrics for simulated trajectories.

Behavioral divergences against a reference distribution, progress and error
statistics, episode aggregation and Gamma fitting for event logs, the forensic
fact sheet handed to a realism judge, and signal detection statistics for
human discrimination studies.
"""

from __future__ import annotations

import configparser
import csv
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .behavior import COGNITIVE, METACOG, CognitiveBehavior, GammaParams
from .environment import DEFAULT_ERROR_TOKENS, filter_observation
from .errors import ConfigError
from .resources import data_path, resolve
from .trace import Trajectory

EPS = 1e-6
RATIO_BINS = 10
DEFAULT_LAMBDA = 30.0


# -- divergence ------------------------------------------------------------------

def _as_distribution(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has negative or non-finite entries")
    s = a.sum()
    if s <= 0:
        raise ValueError(f"{name} has no mass")
    return a / s


def kl_divergence(p, q, eps: float = EPS) -> float:
    """KL(p || q) in nats.

    Both inputs are normalized. If q is zero anywhere p has mass, q gets
    ``eps`` added to every cell and is renormalized; terms with p = 0 add
    nothing.
    """
    p = _as_distribution(p, "p")
    q = _as_distribution(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"supports differ: {p.size} vs {q.size}")
    if np.any((q == 0) & (p > 0)):
        q = (q + eps) / (q + eps).sum()
    mask = p > 0
    return max(0.0, float(np.sum(p[mask] * np.log(p[mask] / q[mask]))))


# -- transitions -------------------------------------------------------------------

@dataclass
class TransitionEstimate:
    labels: tuple[str, ...]
    counts: np.ndarray  # counts[i, j] = transitions labels[i] -> labels[j]
    episodes: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def empty_rows(self) -> list[str]:
        return [lab for lab, row in zip(self.labels, self.counts) if row.sum() == 0]

    @property
    def probabilities(self) -> np.ndarray:
        """Row-normalized; empty rows are all zero (see ``empty_rows``)."""
        sums = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, sums, out=np.zeros_like(self.counts, dtype=float), where=sums > 0)

    @property
    def joint(self) -> np.ndarray:
        return self.counts / self.total if self.total else np.zeros_like(self.counts, dtype=float)

    def self_transitions(self) -> np.ndarray:
        return np.diag(self.probabilities).copy()

    def to_dict(self) -> dict:
        probs = self.probabilities
        return {
            "episodes": self.episodes,
            "counts": {f"{a}->{b}": int(self.counts[i, j]) for i, a in enumerate(self.labels) for j, b in enumerate(self.labels)},
            "probabilities": {
                f"{a}->{b}": round(float(probs[i, j]), 6) for i, a in enumerate(self.labels) for j, b in enumerate(self.labels)
            },
            "empty_rows": self.empty_rows,
        }


def transitions_from_sequences(seqs: Iterable[Sequence[str]], labels: Sequence[str]) -> TransitionEstimate:
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    n = 0
    for seq in seqs:
        n += 1
        for a, b in zip(seq, seq[1:]):
            counts[index[a], index[b]] += 1
    return TransitionEstimate(tuple(labels), counts, n)


def cognitive_sequence(traj: Trajectory) -> list[str]:
    """Cognitive labels of the trajectory's non-interrupt steps."""
    return [s.cognitive.value for s in traj.steps if s.cognitive is not None]


def estimate_transitions(trajs: Sequence[Trajectory]) -> TransitionEstimate:
    """Count C_t -> C_t+1 pairs over consecutive cognitive steps (interrupt steps skipped)."""
    return transitions_from_sequences((cognitive_sequence(t) for t in trajs), [c.value for c in COGNITIVE])


def occupancy(trajs: Sequence[Trajectory]) -> np.ndarray:
    counts = Counter(c for t in trajs for c in cognitive_sequence(t))
    v = np.array([counts.get(c.value, 0) for c in COGNITIVE], dtype=float)
    return v / v.sum() if v.sum() else v


# -- reference distributions ---------------------------------------------------

@dataclass
class ReferenceDistribution:
    """Reference behavior: cognitive occupancy, joint transition mass,
    self-transition (sticky) probabilities and a per-run debugging-ratio histogram."""

    cognitive: np.ndarray
    transitions: np.ndarray  # 3 x 3 joint, rows = from
    sticky: np.ndarray
    debug_ratio: np.ndarray
    name: str = ""


def _section(cp, name, keys, path, dist=True) -> np.ndarray:
    if not cp.has_section(name):
        raise ConfigError(f"{path}: missing [{name}] section")
    sec = cp[name]
    extra = set(sec) - set(keys)
    if extra:
        raise ConfigError(f"{path}: [{name}] has unknown labels {sorted(extra)}")
    try:
        v = np.array([float(sec.get(k, "0")) for k in keys])
    except ValueError as e:
        raise ConfigError(f"{path}: [{name}]: {e}") from None
    if np.any(v < 0) or np.any(v > 1):
        raise ConfigError(f"{path}: [{name}] values must lie in [0, 1]")
    if dist and abs(v.sum() - 1.0) > 1e-6:
        raise ConfigError(f"{path}: [{name}] sums to {v.sum():.6g}, expected 1")
    return v


def load_reference(path="reference/combined_test.dist") -> ReferenceDistribution:
    p = resolve(path, "reference", suffixes=(".dist",))
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        with open(p, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read reference {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"{p}: {e}") from None
    labels = [c.value for c in COGNITIVE]
    pairs = [f"{a}->{b}" for a in labels for b in labels]
    return ReferenceDistribution(
        cognitive=_section(cp, "cognitive", labels, p),
        transitions=_section(cp, "transitions", pairs, p).reshape(3, 3),
        sticky=_section(cp, "sticky", labels, p, dist=False),
        debug_ratio=_section(cp, "debug_ratio", [f"bin{i}" for i in range(RATIO_BINS)], p),
        name=p.stem,
    )


def occupancy_kl(trajs: Sequence[Trajectory], ref: ReferenceDistribution) -> float:
    """KL(reference occupancy || simulated occupancy)."""
    return kl_divergence(ref.cognitive, occupancy(trajs))


def transition_kl(trajs: Sequence[Trajectory], ref: ReferenceDistribution) -> float:
    """KL(simulated joint transitions || reference joint transitions), 9 cells."""
    return kl_divergence(estimate_transitions(trajs).joint.ravel(), ref.transitions.ravel())


def debug_ratio_histogram(trajs: Sequence[Trajectory]) -> np.ndarray:
    hist = np.zeros(RATIO_BINS)
    for t in trajs:
        seq = cognitive_sequence(t)
        if seq:
            r = seq.count(CognitiveBehavior.DEBUGGING.value) / len(seq)
            hist[min(int(math.floor(r * RATIO_BINS + 1e-9)), RATIO_BINS - 1)] += 1
    return hist / hist.sum() if hist.sum() else hist


def d_debug(trajs: Sequence[Trajectory], ref: ReferenceDistribution) -> float:
    """Half self-transition divergence, half debugging-ratio histogram divergence."""
    sticky = estimate_transitions(trajs).self_transitions()
    hist = debug_ratio_histogram(trajs)
    if sticky.sum() == 0:
        sticky = np.full_like(sticky, 1.0 / sticky.size)
    return 0.5 * kl_divergence(sticky, ref.sticky) + 0.5 * kl_divergence(hist, ref.debug_ratio)


# -- run-level statistics --------------------------------------------------------

def solve_rate(trajs: Sequence[Trajectory]) -> float:
    if not trajs:
        raise ValueError("no trajectories")
    return sum(t.solved for t in trajs) / len(trajs)


def solve_steps(trajs: Sequence[Trajectory]) -> tuple[Optional[float], Optional[float]]:
    steps = [t.solve_step for t in trajs if t.solved and t.solve_step is not None]
    if not steps:
        return None, None
    return float(np.mean(steps)), float(np.std(steps))


def summary_metrics(groups: Mapping[str, Sequence[Trajectory]]) -> dict:
    """Solve rate and first-solve step per condition, plus High minus Low gap."""
    out: dict = {}
    for name, trajs in groups.items():
        mean, sd = solve_steps(trajs)
        out[name] = {"solve_rate": solve_rate(trajs), "mean_steps": mean, "sd_steps": sd, "runs": len(trajs)}
    keys = {k.lower(): k for k in groups}
    out["performance_gap"] = (
        out[keys["high"]]["solve_rate"] - out[keys["low"]]["solve_rate"] if {"high", "low"} <= set(keys) else None
    )
    return out


def nonlinearity(traj: Trajectory) -> Optional[float]:
    """Share of steps after the first whose test-pass progress fell."""
    x = [s.progress for s in traj.steps]
    if len(x) < 2:
        return None
    return sum(b < a for a, b in zip(x, x[1:])) / (len(x) - 1)


def error_counts(traj: Trajectory) -> Counter:
    """Number of executed steps showing each error type (once per step)."""
    c: Counter = Counter()
    for s in traj.steps:
        if s.raw_obs.executed:
            c.update(set(s.raw_obs.error_types))
    return c


def error_recurrence(trajs: Sequence[Trajectory]) -> Optional[float]:
    return recurrence_from_counts([error_counts(t) for t in trajs])


def recurrence_from_counts(per_run: Sequence[Mapping[str, int]]) -> Optional[float]:
    seen = sum(1 for run in per_run for n in run.values() if n >= 1)
    again = sum(1 for run in per_run for n in run.values() if n >= 2)
    return again / seen if seen else None


# -- keyword assets ----------------------------------------------------------------

KEYWORD_LISTS = ("acknowledgment", "uncertainty", "frustration", "emotional_comment")


def load_keywords(name: str, directory=None) -> tuple[str, ...]:
    base = Path(directory) if directory else data_path("keywords")
    path = base / f"{name}.txt"
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read keyword list {path}: {e}") from None
    return tuple(ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#"))


def _normalize_text(text: str) -> str:
    return text.replace("’", "'").replace("‘", "'")


def _phrase_pattern(phrase: str) -> re.Pattern:
    start = r"(?<!\w)" if phrase[:1].isalnum() else ""
    return re.compile(start + re.escape(phrase), re.IGNORECASE)


def count_phrases(text: str, phrases: Iterable[str]) -> int:
    text = _normalize_text(text)
    return sum(len(_phrase_pattern(p).findall(text)) for p in phrases)


def mentions_any(text: str, phrases: Iterable[str]) -> bool:
    text = _normalize_text(text)
    return any(_phrase_pattern(p).search(text) for p in phrases)


def reaction_lag(traj: Trajectory, keywords: Optional[Sequence[str]] = None, horizon: Optional[int] = None) -> Optional[int]:
    """Steps from the first executed error in a Debugging/Assessing step to its
    first verbal acknowledgment; ``horizon - t*`` when never acknowledged.

    An utterance acknowledges when it contains a keyword at a word start or
    names an error type outright ("NameError").
    """
    keywords = keywords if keywords is not None else load_keywords("acknowledgment")
    tokens = [tok for tok in DEFAULT_ERROR_TOKENS if tok != "Other"]
    horizon = horizon or int(traj.config.get("max_steps", len(traj.steps)))
    first = None
    for s in traj.steps:
        if s.cognitive in (CognitiveBehavior.DEBUGGING, CognitiveBehavior.ASSESSING) and s.raw_obs.executed and s.raw_obs.error_types:
            first = s.t
            break
    if first is None:
        return None
    for s in traj.steps:
        if s.t > first and (mentions_any(s.action.utterance, keywords) or _named_errors(s.action.utterance, tokens)):
            return s.t - first
    return horizon - first


# -- event logs ------------------------------------------------------------------

@dataclass(frozen=True)
class Event:
    time: float
    action: str


@dataclass(frozen=True)
class Episode:
    action: str
    start: float
    end: float
    events: int

    @property
    def duration(self) -> float:
        return self.end - self.start


def aggregate_episodes(events: Sequence[Event], lambda_seconds: float = DEFAULT_LAMBDA) -> list[Episode]:
    """Merge consecutive same-action events separated by at most ``lambda_seconds``."""
    out: list[Episode] = []
    for i, e in enumerate(events):
        if i and e.time < events[i - 1].time:
            raise ValueError(f"events out of time order at index {i}")
        last = out[-1] if out else None
        if last is not None and last.action == e.action and e.time - last.end <= lambda_seconds:
            out[-1] = Episode(last.action, last.start, e.time, last.events + 1)
        else:
            out.append(Episode(e.action, e.time, e.time, 1))
    return out


def fit_gamma(durations) -> GammaParams:
    """Method-of-moments Gamma fit: shape = mean^2 / var, scale = var / mean."""
    x = np.asarray(durations, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two durations")
    if np.any(x <= 0):
        raise ValueError("durations must be positive")
    mean, var = float(x.mean()), float(x.var())
    if var <= 0:
        raise ValueError("degenerate sample: zero variance")
    return GammaParams(mean * mean / var, var / mean)


def read_event_log(path) -> dict[str, list[Event]]:
    """CSV with columns ``session,time,action``; returns events per session in file order."""
    sessions: dict[str, list[Event]] = {}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"session", "time", "action"} - set(reader.fieldnames or ())
            if missing:
                raise ConfigError(f"{path}: event log lacks columns {sorted(missing)}")
            for row in reader:
                sessions.setdefault(row["session"], []).append(Event(float(row["time"]), row["action"].strip()))
    except OSError as e:
        raise ConfigError(f"cannot read event log {path}: {e}") from None
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from None
    return sessions


def fit_event_log(sessions: Mapping[str, Sequence[Event]], lambda_seconds: float = DEFAULT_LAMBDA) -> dict:
    """Gamma fits of metacognitive episode lengths (in logged events) and
    transition estimates over cognitive and metacognitive episodes."""
    meta_labels = [m.value for m in METACOG]
    cog_labels = [c.value for c in COGNITIVE]
    meta_seqs, cog_seqs = [], []
    lengths: dict[str, list[float]] = {m: [] for m in meta_labels}
    known = set(meta_labels) | set(cog_labels)
    for events in sessions.values():
        unknown = {e.action for e in events} - known
        if unknown:
            raise ConfigError(f"unknown action labels in event log: {sorted(unknown)}")
        meta = aggregate_episodes([e for e in events if e.action in meta_labels], lambda_seconds)
        cog = aggregate_episodes([e for e in events if e.action in cog_labels], lambda_seconds)
        for e in meta:
            lengths[e.action].append(float(e.events))
        meta_seqs.append([e.action for e in meta])
        cog_seqs.append([e.action for e in cog])
    gammas = {}
    for m, xs in lengths.items():
        try:
            g = fit_gamma(xs)
            gammas[m] = {"shape": g.shape, "scale": g.scale, "mean": g.mean, "cv": g.cv, "episodes": len(xs)}
        except ValueError as e:
            gammas[m] = {"absent": str(e), "episodes": len(xs)}
    return {
        "lambda_seconds": lambda_seconds,
        "durations": gammas,
        "cognitive_transitions": transitions_from_sequences(cog_seqs, cog_labels).to_dict(),
        "metacognitive_transitions": transitions_from_sequences(meta_seqs, meta_labels).to_dict(),
    }


# -- forensic fact sheet ------------------------------------------------------------

_ASSIGN = re.compile(r"^\s*([A-Za-z_][\w.]*(?:\[[^\]]*\])?)(\s*)=(?!=)(\s*)\S")
_SIMPLE_TARGET = re.compile(r"^\s*([A-Za-z_])\s*=(?!=)")
_FOR_TARGET = re.compile(r"^\s*for\s+([A-Za-z_]\w*)\s+in\b")
_PARAMS = re.compile(r"^\s*def\s+\w+\s*\(([^)]*)\)")
_COMMENT = re.compile(r"#(.*)$")
_WORDS = re.compile(r"[a-z0-9']+")


@dataclass
class FactSheet:
    total_steps: int
    uncertainty_markers: int
    frustration_markers: int
    max_phrase_repetition: int
    cramped_assignment_ratio: Optional[float]
    single_letter_variables: int
    emotional_comments: int
    disconnected_fixes: int

    def to_dict(self) -> dict:
        return asdict(self)


def _code_lines(traj: Trajectory) -> list[str]:
    seen: dict[str, None] = {}
    for s in traj.steps:
        for ln in s.action.code.splitlines():
            if ln.strip():
                seen.setdefault(ln.rstrip(), None)
    return list(seen)


def cramped_ratio(lines: Iterable[str]) -> Optional[float]:
    total = cramped = 0
    for ln in lines:
        code = ln.split("#", 1)[0]
        m = _ASSIGN.match(code)
        if m:
            total += 1
            cramped += not m.group(2) and not m.group(3)
    return cramped / total if total else None


def single_letter_names(lines: Iterable[str]) -> set[str]:
    names: set[str] = set()
    for ln in lines:
        code = ln.split("#", 1)[0]
        for rx in (_SIMPLE_TARGET, _FOR_TARGET):
            m = rx.match(code)
            if m and len(m.group(1)) == 1:
                names.add(m.group(1))
        m = _PARAMS.match(code)
        if m:
            for p in m.group(1).split(","):
                p = p.split("=")[0].split(":")[0].strip()
                if len(p) == 1:
                    names.add(p)
    return names


def max_ngram_repetition(texts: Iterable[str], n: int = 4) -> int:
    counts: Counter = Counter()
    for t in texts:
        words = _WORDS.findall(_normalize_text(t).lower())
        counts.update(tuple(words[i:i + n]) for i in range(len(words) - n + 1))
    return max(counts.values(), default=0)


def _named_errors(text: str, tokens: Sequence[str]) -> set[str]:
    return {tok for tok in tokens if tok != "Other" and re.search(rf"\b{re.escape(tok)}\b", text)}


def disconnected_fixes(traj: Trajectory, tokens: Sequence[str] = DEFAULT_ERROR_TOKENS) -> int:
    """Error types named in an utterance but absent from the output the agent last saw."""
    seen: set[str] = set()
    count = 0
    for s in traj.steps:
        if s.pre_obs is not None:  # a debugging step reacts to its own pre-run
            seen = set(filter_observation(s.pre_obs, s.metacog).error_types)
        count += len(_named_errors(s.action.utterance, tokens) - seen)
        if s.filtered_obs.executed:
            seen = set(s.filtered_obs.error_types)
    return count


def fact_sheet(traj: Trajectory, keywords: Optional[Mapping[str, Sequence[str]]] = None) -> FactSheet:
    kw = dict(keywords) if keywords else {}
    for name in KEYWORD_LISTS:
        kw.setdefault(name, load_keywords(name))
    utterances = [s.action.utterance for s in traj.steps]
    lines = _code_lines(traj)
    comments = {m.group(1).strip() for ln in lines for m in [_COMMENT.search(ln)] if m}
    return FactSheet(
        total_steps=len(traj.steps),
        uncertainty_markers=sum(count_phrases(u, kw["uncertainty"]) for u in utterances),
        frustration_markers=sum(count_phrases(u, kw["frustration"]) for u in utterances),
        max_phrase_repetition=max_ngram_repetition(utterances),
        cramped_assignment_ratio=cramped_ratio(lines),
        single_letter_variables=len(single_letter_names(lines)),
        emotional_comments=sum(1 for c in comments if mentions_any(c, kw["emotional_comment"])),
        disconnected_fixes=disconnected_fixes(traj),
    )


# -- report ------------------------------------------------------------------------

def _mean_sd(xs: Sequence[Optional[float]]) -> tuple[Optional[float], Optional[float]]:
    vals = [x for x in xs if x is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


@dataclass
class FidelityReport:
    runs: int
    solve_rate: float
    mean_steps: Optional[float]
    sd_steps: Optional[float]
    performance_gap: Optional[float]
    d_kl_occupancy: Optional[float]
    d_kl_transition: Optional[float]
    d_debug: Optional[float]
    nonlinearity: Optional[float]
    p_recur: Optional[float]
    mean_reaction_lag: Optional[float]
    sd_reaction_lag: Optional[float]
    fact_sheet: dict = field(default_factory=dict)
    reference: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def render(self) -> str:
        def fmt(v, pct=False):
            if v is None:
                return "absent"
            return f"{100 * v:.1f}%" if pct else f"{v:.4f}"

        rows = [
            ("runs", str(self.runs)),
            ("solve rate", fmt(self.solve_rate, True)),
            ("steps to solve", "absent" if self.mean_steps is None else f"{self.mean_steps:.2f} +/- {self.sd_steps:.2f}"),
            ("performance gap", fmt(self.performance_gap, True)),
            ("D_KL occupancy", fmt(self.d_kl_occupancy)),
            ("D_KL transition", fmt(self.d_kl_transition)),
            ("D_debug", fmt(self.d_debug)),
            ("nonlinearity", fmt(self.nonlinearity, True)),
            ("P_recur", fmt(self.p_recur, True)),
            ("reaction lag", "absent" if self.mean_reaction_lag is None
             else f"{self.mean_reaction_lag:.2f} +/- {self.sd_reaction_lag:.2f}"),
        ]
        rows += [(f"fact sheet: {k}", fmt(v) if isinstance(v, float) else ("absent" if v is None else str(v)))
                 for k, v in self.fact_sheet.items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def evaluate(
    trajs: Sequence[Trajectory],
    reference: Optional[ReferenceDistribution] = None,
    performance_gap: Optional[float] = None,
) -> FidelityReport:
    if not trajs:
        raise ValueError("no trajectories to evaluate")
    mean_steps, sd_steps = solve_steps(trajs)
    has_cog = any(cognitive_sequence(t) for t in trajs)
    has_pairs = estimate_transitions(trajs).total > 0
    ack = load_keywords("acknowledgment")
    lag_mean, lag_sd = _mean_sd([reaction_lag(t, ack) for t in trajs])
    sheets = [fact_sheet(t).to_dict() for t in trajs]
    sheet_means = {k: _mean_sd([s[k] for s in sheets])[0] for k in sheets[0]}
    return FidelityReport(
        runs=len(trajs),
        solve_rate=solve_rate(trajs),
        mean_steps=mean_steps,
        sd_steps=sd_steps,
        performance_gap=performance_gap,
        d_kl_occupancy=occupancy_kl(trajs, reference) if reference is not None and has_cog else None,
        d_kl_transition=transition_kl(trajs, reference) if reference is not None and has_pairs else None,
        d_debug=d_debug(trajs, reference) if reference is not None and has_cog else None,
        nonlinearity=_mean_sd([nonlinearity(t) for t in trajs])[0],
        p_recur=error_recurrence(trajs),
        mean_reaction_lag=lag_mean,
        sd_reaction_lag=lag_sd,
        fact_sheet=sheet_means,
        reference=reference.name if reference is not None else "",
    )


# -- signal detection ------------------------------------------------------------------

# Rational approximation of the inverse normal CDF (P. J. Acklam), relative
# error below 1.2e-9 before refinement; one Halley step polishes it further.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
_P_LOW = 0.02425


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def probit(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probit needs 0 < p < 1, got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    e = normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


@dataclass(frozen=True)
class ConfusionCounts:
    hits: int
    misses: int
    false_alarms: int
    correct_rejections: int

    def __post_init__(self):
        for name in ("hits", "misses", "false_alarms", "correct_rejections"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.hits + self.misses == 0 or self.false_alarms + self.correct_rejections == 0:
            raise ValueError("need at least one signal and one noise trial")


@dataclass(frozen=True)
class SdtResult:
    hit_rate: float
    fa_rate: float
    d_prime: float
    criterion: float
    clamped: bool


def _clamp_rate(rate: float, n: int) -> tuple[float, bool]:
    lo = 1.0 / (2.0 * n)
    r = min(max(rate, lo), 1.0 - lo)
    return r, r != rate


def sdt_from_rates(hit_rate: float, fa_rate: float, n_signal: Optional[int] = None, n_noise: Optional[int] = None) -> SdtResult:
    h, fa, flagged = hit_rate, fa_rate, False
    if n_signal:
        h, c1 = _clamp_rate(h, n_signal)
        flagged |= c1
    if n_noise:
        fa, c2 = _clamp_rate(fa, n_noise)
        flagged |= c2
    zh, zf = probit(h), probit(fa)
    return SdtResult(hit_rate, fa_rate, zh - zf, -0.5 * (zh + zf), flagged)


def sdt_analysis(c: ConfusionCounts) -> SdtResult:
    ns, nn = c.hits + c.misses, c.false_alarms + c.correct_rejections
    return sdt_from_rates(c.hits / ns, c.false_alarms / nn, ns, nn)


@dataclass(frozen=True)
class TostResult:
    z_lower: float
    z_upper: float
    p_lower: float
    p_upper: float
    p_tost: float


def tost_equivalence(d_prime: float, se: float, margin: float) -> TostResult:
    """Two one-sided z tests of |d'| < margin."""
    if se <= 0:
        raise ValueError("standard error must be positive")
    z_lower = (d_prime + margin) / se
    z_upper = (d_prime - margin) / se
    p_lower = 1.0 - normal_cdf(z_lower)
    p_upper = normal_cdf(z_upper)
    return TostResult(z_lower, z_upper, p_lower, p_upper, max(p_lower, p_upper))


def d_prime_se(c: ConfusionCounts) -> float:
    """Large-sample standard error of d' (delta method on both probits)."""
    res = sdt_analysis(c)
    ns, nn = c.hits + c.misses, c.false_alarms + c.correct_rejections
    var = 0.0
    for rate, n in ((res.hit_rate, ns), (res.fa_rate, nn)):
        r, _ = _clamp_rate(rate, n)
        z = probit(r)
        density = math.exp(-z * z / 2.0) / math.sqrt(2.0 * math.pi)
        var += r * (1.0 - r) / (n * density * density)
    return math.sqrt(var)
