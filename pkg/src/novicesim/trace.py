"""Trajectory records, line-delimited persistence, invariant checks, breakdown.

A trace file is JSON Lines: one header record (``"kind": "header"``) followed by
one record per step. Fields this version does not know are kept in ``extra``
and written back unchanged, so newer minor versions load without loss.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .agent import AgentAction
from .behavior import CognitiveBehavior, InterruptKind, MetacognitiveBehavior
from .environment import REDACTED, Observation
from .errors import TraceSchemaError
from .prompts import StrategyPacket

SCHEMA_VERSION = "1.0"
KNOWLEDGE_STATES = (MetacognitiveBehavior.MONITORING, MetacognitiveBehavior.REFLECTING)


@dataclass
class TraceStep:
    t: int
    n: int
    metacog: MetacognitiveBehavior
    cognitive: Optional[CognitiveBehavior]
    action: AgentAction
    raw_obs: Observation
    filtered_obs: Observation
    progress: float  # test-pass fraction after this step
    time_progress: float  # t / max_steps, the interrupt model's x
    knowledge_snapshot: dict[str, float]
    interrupt: Optional[InterruptKind] = None
    intervention: Optional[str] = None
    tutor_hint: Optional[str] = None
    strategy: Optional[StrategyPacket] = None
    segment_duration: Optional[int] = None
    pre_obs: Optional[Observation] = None
    credited_kcs: tuple[str, ...] = ()
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class Trajectory:
    config: dict[str, Any]
    steps: list[TraceStep]
    solved: bool
    solve_step: Optional[int]
    seed: int
    schema_version: str = SCHEMA_VERSION
    truncated: Optional[str] = None
    extra: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.steps)


# -- (de)serialization ---------------------------------------------------------

_STEP_FIELDS = (
    "t", "n", "metacog", "cognitive", "code", "utterance", "raw_obs", "filtered_obs", "progress",
    "time_progress", "knowledge_snapshot", "interrupt", "intervention", "tutor_hint", "strategy",
    "segment_duration", "pre_obs", "credited_kcs",
)
_HEADER_FIELDS = ("kind", "schema_version", "config", "seed", "solved", "solve_step", "truncated", "steps")


def step_to_dict(s: TraceStep) -> dict:
    d = {
        "t": s.t,
        "n": s.n,
        "metacog": s.metacog.value,
        "cognitive": s.cognitive.value if s.cognitive else None,
        "code": s.action.code,
        "utterance": s.action.utterance,
        "raw_obs": s.raw_obs.to_dict(),
        "filtered_obs": s.filtered_obs.to_dict(),
        "progress": s.progress,
        "time_progress": s.time_progress,
        "knowledge_snapshot": dict(s.knowledge_snapshot),
        "interrupt": s.interrupt.value if s.interrupt else None,
        "intervention": s.intervention,
        "tutor_hint": s.tutor_hint,
        "strategy": s.strategy.to_dict() if s.strategy else None,
        "segment_duration": s.segment_duration,
        "pre_obs": s.pre_obs.to_dict() if s.pre_obs else None,
        "credited_kcs": list(s.credited_kcs),
    }
    d.update(s.extra)
    return d


def step_from_dict(d: dict) -> TraceStep:
    return TraceStep(
        t=int(d["t"]),
        n=int(d["n"]),
        metacog=MetacognitiveBehavior(d["metacog"]),
        cognitive=CognitiveBehavior(d["cognitive"]) if d.get("cognitive") else None,
        action=AgentAction(d.get("code", ""), d["utterance"]),
        raw_obs=Observation.from_dict(d["raw_obs"]),
        filtered_obs=Observation.from_dict(d["filtered_obs"]),
        progress=float(d["progress"]),
        time_progress=float(d["time_progress"]),
        knowledge_snapshot={k: float(v) for k, v in d.get("knowledge_snapshot", {}).items()},
        interrupt=InterruptKind(d["interrupt"]) if d.get("interrupt") else None,
        intervention=d.get("intervention"),
        tutor_hint=d.get("tutor_hint"),
        strategy=StrategyPacket.from_dict(d["strategy"]) if d.get("strategy") else None,
        segment_duration=d.get("segment_duration"),
        pre_obs=Observation.from_dict(d["pre_obs"]) if d.get("pre_obs") else None,
        credited_kcs=tuple(d.get("credited_kcs", ())),
        extra={k: v for k, v in d.items() if k not in _STEP_FIELDS},
    )


def header_dict(traj: Trajectory) -> dict:
    d = {
        "kind": "header",
        "schema_version": traj.schema_version,
        "config": traj.config,
        "seed": traj.seed,
        "solved": traj.solved,
        "solve_step": traj.solve_step,
        "truncated": traj.truncated,
        "steps": len(traj.steps),
    }
    d.update(traj.extra)
    return d


def dumps_trace(traj: Trajectory) -> str:
    lines = [json.dumps(header_dict(traj), sort_keys=True, ensure_ascii=False)]
    for s in traj.steps:
        lines.append(json.dumps({"kind": "step", **step_to_dict(s)}, sort_keys=True, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def save_trace(traj: Trajectory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_trace(traj), encoding="utf-8")
    return path


def _check_version(v) -> None:
    major = str(v).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise TraceSchemaError(f"unsupported trace schema version {v} (this reader handles {SCHEMA_VERSION})")


def loads_trace(text: str, source: str = "<string>") -> Trajectory:
    header = None
    steps: list[TraceStep] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise TraceSchemaError(f"{source}: line {lineno}: malformed record ({e.msg})") from None
        if header is None:
            if rec.get("kind") != "header":
                raise TraceSchemaError(f"{source}: line {lineno}: first record must be the header")
            _check_version(rec.get("schema_version"))
            header = rec
            continue
        try:
            rec.pop("kind", None)
            steps.append(step_from_dict(rec))
        except (KeyError, ValueError, TypeError) as e:
            raise TraceSchemaError(f"{source}: line {lineno}: bad step record ({e})") from None
    if header is None:
        raise TraceSchemaError(f"{source}: empty trace file")
    declared = header.get("steps")
    if declared is not None and declared != len(steps):
        raise TraceSchemaError(f"{source}: line {len(text.splitlines()) + 1}: expected {declared} steps, found {len(steps)}")
    return Trajectory(
        config=header.get("config", {}),
        steps=steps,
        solved=bool(header.get("solved", False)),
        solve_step=header.get("solve_step"),
        seed=int(header.get("seed", 0)),
        schema_version=str(header["schema_version"]),
        truncated=header.get("truncated"),
        extra={k: v for k, v in header.items() if k not in _HEADER_FIELDS},
    )


def load_trace(path) -> Trajectory:
    path = Path(path)
    return loads_trace(path.read_text(encoding="utf-8"), str(path))


def load_traces(path) -> list[Trajectory]:
    """A single trace file, or every ``*.jsonl`` under a directory (sorted)."""
    path = Path(path)
    if path.is_dir():
        return [load_trace(p) for p in sorted(path.rglob("*.jsonl"))]
    return [load_trace(path)]


# -- invariants ------------------------------------------------------------------

def check_trajectory(traj: Trajectory) -> list[str]:
    """Schema invariants a generated trajectory must satisfy; returns violations."""
    problems: list[str] = []
    steps = traj.steps
    seg_counts: dict[int, int] = {}
    seg_duration: dict[int, int] = {}
    seg_metacog: dict[int, MetacognitiveBehavior] = {}
    for i, s in enumerate(steps):
        where = f"step {s.t}"
        if i and s.t <= steps[i - 1].t:
            problems.append(f"{where}: t not strictly increasing")
        if i and s.n < steps[i - 1].n:
            problems.append(f"{where}: segment index decreased")
        if not 0.0 <= s.progress <= 1.0 or not 0.0 <= s.time_progress <= 1.0:
            problems.append(f"{where}: progress outside [0, 1]")
        if seg_metacog.setdefault(s.n, s.metacog) is not s.metacog:
            problems.append(f"{where}: metacog differs within segment {s.n}")
        if (s.cognitive is None) == (s.interrupt is None):
            problems.append(f"{where}: exactly one of cognitive/interrupt must be set")
        if s.cognitive is not None:
            seg_counts[s.n] = seg_counts.get(s.n, 0) + 1
        if s.segment_duration is not None:
            seg_duration[s.n] = s.segment_duration
        # redaction
        if s.metacog is MetacognitiveBehavior.ENACTING and s.raw_obs.has_error:
            if not s.filtered_obs.redacted or s.filtered_obs.stderr != REDACTED:
                problems.append(f"{where}: Enacting error not redacted")
        # knowledge gating
        prev_k = steps[i - 1].knowledge_snapshot if i else None
        if prev_k is not None and s.knowledge_snapshot != prev_k:
            if s.metacog not in KNOWLEDGE_STATES or s.cognitive is None:
                problems.append(f"{where}: knowledge changed outside Monitoring/Reflecting")
        # replay
        if s.raw_obs.tests_total and abs(s.progress - s.raw_obs.tests_passed / s.raw_obs.tests_total) > 1e-12:
            problems.append(f"{where}: stored progress does not match raw observation")
        # interrupt two-turn protocol
        if s.interrupt is InterruptKind.ASSISTANCE and s.tutor_hint and i + 1 < len(steps):
            nxt = steps[i + 1]
            if nxt.intervention != s.tutor_hint or nxt.interrupt is not None:
                problems.append(f"{where}: answered help request not followed by intervention step")
        if s.intervention is not None:
            if not i or steps[i - 1].interrupt is not InterruptKind.ASSISTANCE:
                problems.append(f"{where}: intervention without a preceding Assistance step")
    last_n = steps[-1].n if steps else None
    for n, count in seg_counts.items():
        d = seg_duration.get(n)
        if d is None:
            problems.append(f"segment {n}: missing duration")
        elif count > d or (count < d and n != last_n):
            problems.append(f"segment {n}: {count} steps for sampled duration {d}")
    solved_steps = [s.t for s in steps if s.raw_obs.solved]
    if traj.solved != bool(solved_steps):
        problems.append("solved flag disagrees with observations")
    if solved_steps and traj.solve_step != solved_steps[0]:
        problems.append("solve_step is not the first fully passing step")
    return problems


# -- breakdown -------------------------------------------------------------------

class BlankLineStyle(str, Enum):
    ALWAYS = "Always"
    NEVER = "Never"
    PROBABILISTIC = "Probabilistic"


@dataclass(frozen=True)
class BreakdownConfig:
    level: float = 0.4
    word_granularity: bool = False
    blank_line_style: Optional[BlankLineStyle] = None  # None: pick one uniformly per trace
    seed: int = 0
    header: str = ""

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"level must lie in [0, 1], got {self.level}")


_DEF = re.compile(r"^\s*(?:def|class)\s")
_WORD = re.compile(r"\s*\S+")


def _lcs_ops(a: Sequence[str], b: Sequence[str]) -> list[tuple[str, int, int]]:
    """Line alignment by longest common subsequence: ops are ('=', i, j), ('-', i, _), ('+', _, j)."""
    n, m = len(a), len(b)
    L = np.zeros((n + 1, m + 1), dtype=np.int32)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            L[i, j] = L[i + 1, j + 1] + 1 if a[i] == b[j] else max(L[i + 1, j], L[i, j + 1])
    ops, i, j = [], 0, 0
    while i < n and j < m:
        if a[i] == b[j]:
            ops.append(("=", i, j))
            i, j = i + 1, j + 1
        elif L[i + 1, j] >= L[i, j + 1]:
            ops.append(("-", i, j))
            i += 1
        else:
            ops.append(("+", i, j))
            j += 1
    ops += [("-", k, m) for k in range(i, n)] + [("+", n, k) for k in range(j, m)]
    return ops


def _style_blank_lines(text: str, style: BlankLineStyle, seed: int) -> str:
    lines = text.split("\n")
    out: list[str] = []
    for ln in lines:
        if _DEF.match(ln) and out and any(x.strip() for x in out):
            while out and not out[-1].strip():
                out.pop()
            if style is BlankLineStyle.ALWAYS:
                keep = True
            elif style is BlankLineStyle.NEVER:
                keep = False
            else:  # stable per definition line so states do not flicker
                keep = np.random.default_rng([seed, *ln.strip().encode()]).random() < 0.5
            if keep:
                out.append("")
        out.append(ln)
    return "\n".join(out)


def normalize_states(states: Sequence[str], cfg: BreakdownConfig) -> list[str]:
    style = cfg.blank_line_style
    if style is None:
        style = list(BlankLineStyle)[int(np.random.default_rng(cfg.seed).integers(3))]
    collapsed: list[str] = []
    for s in states:
        if collapsed and "".join(collapsed[-1].split()) == "".join(s.split()):
            collapsed[-1] = s
        else:
            collapsed.append(s)
    out = []
    for s in collapsed:
        s = _style_blank_lines(s, BlankLineStyle(style), cfg.seed)
        if cfg.header and not s.startswith(cfg.header):
            s = cfg.header + s
        out.append(s)
    return out


def _word_steps(prefix_line: str, target: str) -> list[str]:
    """Intermediate versions of one line built word by word from ``prefix_line``."""
    steps, cur = [], prefix_line
    for tok in _WORD.findall(target[len(prefix_line):]):
        cur += tok
        steps.append(cur)
    if not steps or steps[-1] != target:
        steps.append(target)
    return steps


def _replace_steps(old: str, new: str) -> list[str]:
    indent = new[: len(new) - len(new.lstrip())]
    old_body, new_body = (old[len(indent):], new[len(indent):]) if old.startswith(indent) else ("", new[len(indent):])
    k = 0
    while k < min(len(old_body), len(new_body)) and old_body[k] == new_body[k]:
        k += 1
    base = indent + new_body[:k]
    return ([base] if base != old else []) + _word_steps(base, new)


def _expand_first(state: str, words: bool) -> list[str]:
    lines, out = state.split("\n"), []
    for i, ln in enumerate(lines):
        done = lines[:i]
        if words and ln.strip():
            indent = ln[: len(ln) - len(ln.lstrip())]
            out += ["\n".join(done + [w]) for w in _word_steps(indent, ln)]
        else:
            out.append("\n".join(done + [ln]))
    return out


def _expand_transition(old: str, new: str) -> list[str]:
    a, b = old.split("\n"), new.split("\n")
    cur = list(a)
    out: list[str] = []
    pos = 0  # index into cur aligned with the op stream
    ops = _lcs_ops(a, b)
    k = 0
    while k < len(ops):
        if ops[k][0] == "=":
            pos += 1
            k += 1
            continue
        dels, ins = [], []
        while k < len(ops) and ops[k][0] != "=":
            (dels if ops[k][0] == "-" else ins).append(ops[k])
            k += 1
        paired = min(len(dels), len(ins))
        for (_, i, _), (_, _, j) in zip(dels[:paired], ins[:paired]):
            for version in _replace_steps(cur[pos], b[j]):
                cur[pos] = version
                out.append("\n".join(cur))
            pos += 1
        for _ in dels[paired:]:
            del cur[pos]
            out.append("\n".join(cur))
        for _, _, j in ins[paired:]:
            cur.insert(pos, b[j])
            pos += 1
            out.append("\n".join(cur))
    if not out or out[-1] != new:
        out.append(new)
    return out


def breakdown_trace(code_states: Sequence[str], cfg: BreakdownConfig = BreakdownConfig()) -> list[str]:
    """Densify sparse code states into a keystroke-scale snapshot sequence."""
    if not code_states:
        raise ValueError("breakdown needs at least one code state")
    states = normalize_states(code_states, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    result: list[str] = []

    def emit(expansion: list[str]) -> None:
        for i, snap in enumerate(expansion):
            last = i == len(expansion) - 1
            if (last or rng.random() < cfg.level) and (not result or result[-1] != snap):
                result.append(snap)

    emit(_expand_first(states[0], cfg.word_granularity))
    for old, new in zip(states, states[1:]):
        emit(_expand_transition(old, new))
    return result
