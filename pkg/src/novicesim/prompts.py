"""Prompt block library and composition.

Blocks are plain text files under ``data/prompts``; a block's key is its path
relative to that directory without the ``.txt`` suffix (``mandate/enacting_debugging``).
Every composer is a pure function of its inputs, so identical inputs give
byte-identical prompts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .behavior import CognitiveBehavior, MetacognitiveBehavior, ProfileLevel
from .environment import NOT_EXECUTED, Observation
from .errors import ConfigError, ParseError
from .resources import data_path

SEP = "\n\n"
RULE_KEYS = ("rules/1_no_psychic_debugging", "rules/2_memory", "rules/3_grounding")
MAX_STDERR_CHARS = 1200
MAX_FAILURES_SHOWN = 5


class BlockLibrary:
    """Text blocks keyed by relative path."""

    def __init__(self, blocks: Mapping[str, str]):
        self.blocks = dict(blocks)

    @classmethod
    def load(cls, directory=None) -> "BlockLibrary":
        root = Path(directory) if directory is not None else data_path("prompts")
        if not root.is_dir():
            raise ConfigError(f"prompt block directory not found: {root}")
        blocks = {}
        for f in sorted(root.rglob("*.txt")):
            key = f.relative_to(root).with_suffix("").as_posix()
            blocks[key] = f.read_text(encoding="utf-8").strip()
        return cls(blocks)

    def get(self, key: str) -> str:
        try:
            return self.blocks[key]
        except KeyError:
            raise ConfigError(f"missing prompt block: {key}") from None

    def __contains__(self, key: str) -> bool:
        return key in self.blocks


_DEFAULT: Optional[BlockLibrary] = None


def default_blocks() -> BlockLibrary:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = BlockLibrary.load()
    return _DEFAULT


def mandate_key(m: MetacognitiveBehavior, c: CognitiveBehavior) -> str:
    return f"mandate/{m.value.lower()}_{c.value.lower()}"


@dataclass(frozen=True)
class StrategyPacket:
    goal: str
    mindset: str
    directive: str

    def __post_init__(self):
        for name in ("goal", "mindset", "directive"):
            if not getattr(self, name).strip():
                raise ValueError(f"strategy {name} must be non-empty")

    def render(self) -> str:
        return f"GOAL: {self.goal}\nMINDSET: {self.mindset}\nDIRECTIVE: {self.directive}"

    def to_dict(self) -> dict:
        return {"goal": self.goal, "mindset": self.mindset, "directive": self.directive}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StrategyPacket":
        return cls(d["goal"], d["mindset"], d["directive"])


@dataclass(frozen=True)
class ErrorEpisode:
    error_pattern: str
    realization: str
    fix_applied: bool


@dataclass
class MemoryBuffer:
    """Sliding window of recent outputs plus episodic error records."""

    capacity: int = 3
    window: list = field(default_factory=list)
    episodic: list[ErrorEpisode] = field(default_factory=list)

    def push(self, item) -> None:
        self.window.append(item)
        while len(self.window) > self.capacity:
            self.window.pop(0)

    def recall(self, error_types: Sequence[str]) -> list[ErrorEpisode]:
        """Latest stored episode for each error type that shows up again."""
        latest: dict[str, ErrorEpisode] = {}
        for ep in self.episodic:
            latest[ep.error_pattern] = ep
        return [latest[e] for e in dict.fromkeys(error_types) if e in latest]


@dataclass(frozen=True)
class SharedContext:
    """What both stages see: previous code, filtered feedback, constraints, hint."""

    prev_code: str
    filtered_obs: Optional[Observation]
    constraints: str
    intervention: Optional[str] = None
    problem: str = ""


# -- rendering ---------------------------------------------------------------

def render_observation(o: Optional[Observation]) -> str:
    if o is None:
        return "(nothing has been run yet)"
    if not o.executed:
        return NOT_EXECUTED
    lines = [f"Tests passed: {o.tests_passed}/{o.tests_total}"]
    if o.redacted:
        lines.append(o.stderr)
        return "\n".join(lines)
    if o.failures:
        shown = list(o.failures[:MAX_FAILURES_SHOWN])
        more = len(o.failures) - len(shown)
        lines.append("Failing: " + ", ".join(shown) + (f" (+{more} more)" if more > 0 else ""))
    if o.error_types:
        counts: dict[str, int] = {}
        for e in o.error_types:
            counts[e] = counts.get(e, 0) + 1
        lines.append("Errors: " + ", ".join(f"{k} x{v}" for k, v in counts.items()))
    if o.stderr.strip():
        err = o.stderr.strip()
        if len(err) > MAX_STDERR_CHARS:
            err = "..." + err[-MAX_STDERR_CHARS:]
        lines.append(err)
    return "\n".join(lines)


def render_context(ctx: SharedContext, mem: Optional[MemoryBuffer] = None) -> str:
    parts = ["## Context"]
    if ctx.problem:
        parts.append("### Problem\n" + ctx.problem.strip())
    code = ctx.prev_code if ctx.prev_code.strip() else "# (no code yet)"
    parts.append("### Current Code\n```python\n" + code.rstrip("\n") + "\n```")
    parts.append("### Last Output\n" + render_observation(ctx.filtered_obs))
    parts.append("### Knowledge\n" + (ctx.constraints.strip() or "(no constraints)"))
    if mem is not None and ctx.filtered_obs is not None:
        recalled = mem.recall(ctx.filtered_obs.error_types)
        if recalled:
            body = "\n".join(f"- {ep.error_pattern}: {ep.realization}" for ep in recalled)
            parts.append("### Repeated Mistake\nYou have seen this error before. What you realized then:\n" + body)
    if ctx.intervention:
        parts.append("### Intervention\n" + ctx.intervention.strip())
    return SEP.join(parts)


def render_memory(mem: MemoryBuffer) -> str:
    if not mem.window:
        return "## Memory\n(empty)"
    items = []
    for i, item in enumerate(mem.window, 1):
        text = item.render() if isinstance(item, StrategyPacket) else str(item)
        items.append(f"[{i}] {text}")
    return "## Memory (oldest first)\n" + "\n".join(items)


# -- composers -----------------------------------------------------------------

def compose_system_prompt(
    persona: ProfileLevel,
    m: MetacognitiveBehavior,
    c: CognitiveBehavior,
    blocks: Optional[BlockLibrary] = None,
) -> str:
    blocks = blocks or default_blocks()
    parts = [blocks.get("base"), blocks.get(f"performer/{persona.value.lower()}")]
    parts += [blocks.get(k) for k in RULE_KEYS]
    parts.append(blocks.get(mandate_key(m, c)))
    return SEP.join(parts)


def compose_strategist_prompt(mem: MemoryBuffer, ctx: SharedContext, blocks: Optional[BlockLibrary] = None) -> str:
    blocks = blocks or default_blocks()
    return SEP.join([blocks.get("task/strategist"), render_memory(mem), render_context(ctx, mem)])


def compose_executor_prompt(
    m: MetacognitiveBehavior,
    packet: StrategyPacket,
    c: CognitiveBehavior,
    mem: MemoryBuffer,
    ctx: SharedContext,
    blocks: Optional[BlockLibrary] = None,
    task_key: Optional[str] = None,
) -> str:
    blocks = blocks or default_blocks()
    return SEP.join([
        blocks.get(f"profile/{m.value.lower()}"),
        "## Strategy\n" + packet.render(),
        blocks.get(task_key or f"task/{c.value.lower()}"),
        render_memory(mem),
        render_context(ctx, mem),
    ])


# -- response parsing ----------------------------------------------------------

_LABEL = re.compile(r"^\s*\**\s*(GOAL|MINDSET|DIRECTIVE)\s*\**\s*:\s*\**\s*(.*)$", re.IGNORECASE)
_FENCE = re.compile(r"```[ \t]*([\w+-]*)[ \t]*\n(.*?)```", re.DOTALL)
_MONO = re.compile(r"^\s*\**\s*(?:MONOLOGUE|REFLECTION)\s*\**\s*:\s*\**", re.IGNORECASE | re.MULTILINE)
_CODE_LABEL = re.compile(r"^\s*\**\s*CODE\b[^\n]*:\s*\**\s*$", re.IGNORECASE | re.MULTILINE)


def parse_strategy(text: str) -> StrategyPacket:
    fields: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = _LABEL.match(line)
        if m:
            current = m.group(1).lower()
            fields[current] = [m.group(2).strip()]
        elif current is not None and line.strip():
            fields[current].append(line.strip())
    try:
        return StrategyPacket(*(" ".join(fields[k]).strip() for k in ("goal", "mindset", "directive")))
    except (KeyError, ValueError):
        raise ParseError("strategist reply lacks GOAL/MINDSET/DIRECTIVE fields", raw=text) from None


def parse_action(text: str) -> tuple[str, Optional[str]]:
    """Split a reply into (utterance, code). Code is None when no fence is present."""
    fence = _FENCE.search(text)
    code = fence.group(2) if fence else None
    prose = _FENCE.sub("", text)
    prose = _CODE_LABEL.sub("", prose)
    m = _MONO.search(prose)
    if m:
        prose = prose[m.end():]
    utterance = " ".join(prose.split()).strip("* ")
    return utterance, code


# -- judge -----------------------------------------------------------------------

JUDGE_FIELDS = ("realism_score", "code_quality_realism", "debugging_pattern_realism", "language_realism")


@dataclass(frozen=True)
class JudgeVerdict:
    justification: str
    realism_score: int
    code_quality_realism: int
    debugging_pattern_realism: int
    language_realism: int


def render_fact_sheet(sheet: Mapping[str, object]) -> str:
    lines = ["FORENSIC FACT SHEET"]
    for k, v in sheet.items():
        if isinstance(v, float):
            v = f"{v:.4f}"
        lines.append(f"- {k}: {v}")
    return "\n".join(lines)


def render_trace_for_judge(steps: Sequence[Mapping]) -> str:
    out = []
    for s in steps:
        head = f"Step {s['t']} [{s.get('metacog')}/{s.get('cognitive') or s.get('interrupt')}]"
        out.append(f"{head}\nSAYS: {s.get('utterance', '')}\nCODE:\n{s.get('code', '')}\nOUTPUT: {s.get('output', '')}")
    return "\n\n".join(out)


def compose_judge_prompt(
    sheet: Mapping[str, object],
    steps: Sequence[Mapping],
    blocks: Optional[BlockLibrary] = None,
) -> tuple[str, str]:
    """System and user prompt for the realism judge."""
    blocks = blocks or default_blocks()
    system = blocks.get("judge/instructions")
    user = SEP.join([render_fact_sheet(sheet), "TRACE\n" + render_trace_for_judge(steps)])
    return system, user


def parse_judge_verdict(text: str) -> JudgeVerdict:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise ParseError("judge reply holds no JSON object", raw=text)
    try:
        data = json.loads(text[start:end + 1])
    except json.JSONDecodeError as e:
        raise ParseError(f"judge reply is not valid JSON: {e}", raw=text) from None
    scores = {}
    for name in JUDGE_FIELDS:
        v = data.get(name)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v or not 1 <= v <= 3:
            raise ParseError(f"judge field {name} must be an integer 1-3, got {v!r}", raw=text)
        scores[name] = int(v)
    return JudgeVerdict(str(data.get("justification", "")), **scores)
