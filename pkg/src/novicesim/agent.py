"""Two-stage agent: a Strategist sets intent per segment, an Executor acts per step.

Also holds the tutor (Simple or ZPD scaffolded hints) used on Assistance turns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .backend import Backend, BackendRequest, Message
from .behavior import CognitiveBehavior, MetacognitiveBehavior, ProfileLevel
from .errors import BackendError, ParseError
from .knowledge import KnowledgeState, lowest_mastery
from .prompts import (
    BlockLibrary,
    ErrorEpisode,
    MemoryBuffer,
    SharedContext,
    StrategyPacket,
    compose_executor_prompt,
    compose_strategist_prompt,
    compose_system_prompt,
    default_blocks,
    parse_action,
    parse_strategy,
)

log = logging.getLogger(__name__)

STRATEGIST_TEMPERATURE = 0.8
EXECUTOR_TEMPERATURE = 0.7


@dataclass(frozen=True)
class AgentAction:
    code: str
    utterance: str

    def __post_init__(self):
        if not self.utterance.strip():
            raise ValueError("utterance must be non-empty")


@dataclass
class StageSettings:
    model: str = ""
    strategist_temperature: float = STRATEGIST_TEMPERATURE
    executor_temperature: float = EXECUTOR_TEMPERATURE


def _ask(backend: Backend, messages: list[Message], temperature: float, settings: StageSettings, stage: str, step):
    req = BackendRequest(tuple(messages), temperature, settings.model, stage, step)
    return backend.chat(req).text


def _with_retry(backend, system: str, user: str, temperature, settings, stage, step, parse, blocks):
    """One call, then a single reprompt with a format reminder on parse failure."""
    messages = [Message("system", system), Message("user", user)]
    raw = _ask(backend, messages, temperature, settings, stage, step)
    try:
        return parse(raw)
    except ParseError:
        log.debug("%s reply unparseable at step %s, reprompting", stage, step)
    messages += [Message("assistant", raw), Message("user", blocks.get("task/format_reminder"))]
    raw = _ask(backend, messages, temperature, settings, stage, step)
    return parse(raw)


def run_strategist(
    m: MetacognitiveBehavior,
    c: CognitiveBehavior,
    mem: MemoryBuffer,
    ctx: SharedContext,
    persona: ProfileLevel,
    backend: Backend,
    blocks: Optional[BlockLibrary] = None,
    settings: Optional[StageSettings] = None,
    step: Optional[int] = None,
) -> StrategyPacket:
    """Produce the segment's goal, mindset and directive; the packet joins ``mem``."""
    blocks = blocks or default_blocks()
    settings = settings or StageSettings()
    system = compose_system_prompt(persona, m, c, blocks)
    user = compose_strategist_prompt(mem, ctx, blocks)
    packet = _with_retry(
        backend, system, user, settings.strategist_temperature, settings, "strategist", step, parse_strategy, blocks
    )
    mem.push(packet)
    return packet


def run_executor(
    m: MetacognitiveBehavior,
    packet: StrategyPacket,
    c: CognitiveBehavior,
    mem: MemoryBuffer,
    ctx: SharedContext,
    persona: ProfileLevel,
    backend: Backend,
    blocks: Optional[BlockLibrary] = None,
    settings: Optional[StageSettings] = None,
    step: Optional[int] = None,
) -> AgentAction:
    """Write code and a monologue for one cognitive step; the utterance joins ``mem``."""
    blocks = blocks or default_blocks()
    settings = settings or StageSettings()
    system = compose_system_prompt(persona, m, c, blocks)
    user = compose_executor_prompt(m, packet, c, mem, ctx, blocks)

    def parse(raw: str) -> AgentAction:
        utterance, code = parse_action(raw)
        if not utterance:
            raise ParseError("executor reply has no monologue", raw=raw)
        if code is None:
            if c is not CognitiveBehavior.ASSESSING:
                raise ParseError(f"executor reply for {c.value} has no code block", raw=raw)
            code = ctx.prev_code
        return AgentAction(code, utterance)

    action = _with_retry(backend, system, user, settings.executor_temperature, settings, "executor", step, parse, blocks)
    mem.push(action.utterance)
    return action


def run_off_topic(
    m: MetacognitiveBehavior,
    mem: MemoryBuffer,
    ctx: SharedContext,
    persona: ProfileLevel,
    backend: Backend,
    blocks: Optional[BlockLibrary] = None,
    settings: Optional[StageSettings] = None,
    step: Optional[int] = None,
) -> AgentAction:
    """A distracted monologue; the code is left as it was."""
    blocks = blocks or default_blocks()
    settings = settings or StageSettings()
    system = compose_system_prompt(persona, m, CognitiveBehavior.CONSTRUCTING, blocks)
    packet = StrategyPacket("(distracted)", "(distracted)", "Think about something else for a moment")
    user = compose_executor_prompt(m, packet, CognitiveBehavior.CONSTRUCTING, mem, ctx, blocks, "task/off_topic")

    def parse(raw: str) -> AgentAction:
        utterance, _ = parse_action(raw)
        if not utterance:
            raise ParseError("off-topic reply is empty", raw=raw)
        return AgentAction(ctx.prev_code, utterance)

    return _with_retry(backend, system, user, settings.executor_temperature, settings, "off_topic", step, parse, blocks)


def record_error_episode(mem: MemoryBuffer, error_pattern: str, realization: str, fixed: bool) -> MemoryBuffer:
    mem.episodic.append(ErrorEpisode(error_pattern, realization, fixed))
    return mem


# -- tutor ---------------------------------------------------------------------

class ScaffoldLevel(int, Enum):
    NONE = 0
    MINIMAL = 1
    GUIDING = 2
    EXPLICIT = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()


class TutorKind(str, Enum):
    NONE = "None"
    SIMPLE = "Simple"
    ZPD = "ZPD"

    @classmethod
    def parse(cls, value) -> "TutorKind":
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        for k in cls:
            if str(value).lower() == k.value.lower():
                return k
        raise ValueError(f"unknown tutor kind {value!r}")


MAX_ESCALATION = 2


def scaffold_level(p_l: float, consecutive_failures: int = 0) -> ScaffoldLevel:
    if not 0.0 <= p_l <= 1.0:
        raise ValueError(f"mastery must lie in [0, 1], got {p_l}")
    if p_l > 0.7:
        base = ScaffoldLevel.NONE
    elif p_l >= 0.5:
        base = ScaffoldLevel.MINIMAL
    elif p_l >= 0.3:
        base = ScaffoldLevel.GUIDING
    else:
        base = ScaffoldLevel.EXPLICIT
    bump = min(max(consecutive_failures, 0), MAX_ESCALATION)
    return ScaffoldLevel(min(base + bump, ScaffoldLevel.EXPLICIT))


@dataclass
class TutorContext:
    problem: str
    code: str
    recent_errors: Sequence[str]
    metacog: MetacognitiveBehavior
    question: str = ""
    consecutive_failures: int = 0
    kc_labels: Optional[dict] = None


def compose_tutor_prompt(kind: TutorKind, knowledge: KnowledgeState, tc: TutorContext, blocks: BlockLibrary):
    if kind is TutorKind.SIMPLE:
        system = blocks.get("tutor/simple")
        user = f"Student question: {tc.question}\n\nStudent code:\n```python\n{tc.code}\n```"
        return system, user, None
    target = lowest_mastery(knowledge)
    p_l = knowledge.mastery[target] if target else 1.0
    level = scaffold_level(p_l, tc.consecutive_failures)
    label = (tc.kc_labels or {}).get(target, "") if target else ""
    errors = ", ".join(dict.fromkeys(tc.recent_errors)) or "none"
    user = "\n".join([
        f"Scaffold level: {level.label}",
        f"Target knowledge component: {target or 'none'}" + (f" ({label})" if label else ""),
        f"Estimated mastery: {p_l:.2f}",
        f"Recent error types: {errors}",
        f"Student state of mind: {tc.metacog.value}",
        f"Student question: {tc.question}",
        "",
        "Student code:",
        f"```python\n{tc.code}\n```",
    ])
    return blocks.get("tutor/zpd"), user, target


def generate_tutor_hint(
    kind: TutorKind,
    knowledge: KnowledgeState,
    tc: TutorContext,
    backend: Optional[Backend],
    blocks: Optional[BlockLibrary] = None,
    settings: Optional[StageSettings] = None,
    step: Optional[int] = None,
) -> tuple[Optional[str], Optional[str]]:
    """Return (hint, targeted KC). A missing tutor or a failing backend yields no hint."""
    kind = TutorKind.parse(kind)
    if kind is TutorKind.NONE or backend is None:
        return None, None
    blocks = blocks or default_blocks()
    settings = settings or StageSettings()
    system, user, target = compose_tutor_prompt(kind, knowledge, tc, blocks)
    try:
        hint = _ask(backend, [Message("system", system), Message("user", user)], 0.7, settings, "tutor", step)
    except BackendError as e:
        log.warning("tutor backend failed at step %s: %s", step, e)
        return None, target
    return (hint.strip() or None), target
