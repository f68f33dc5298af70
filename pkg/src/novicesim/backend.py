"""Text-generation backends: scripted, canned mock, and HTTP chat completions.

Every backend implements ``chat(request) -> BackendResponse``. Requests carry
the pipeline ``stage`` (strategist, executor, off_topic, tutor, judge) and the
session step so scripted replies can be keyed on them.
"""

from __future__ import annotations

import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import httpx
import numpy as np

from .errors import BackendError, ConfigError, ScriptExhausted

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown message role {self.role!r}")


@dataclass(frozen=True)
class BackendRequest:
    messages: tuple[Message, ...]
    temperature: float = 0.7
    model: str = ""
    stage: str = ""
    step: Optional[int] = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a request needs at least one message")


@dataclass(frozen=True)
class BackendResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class Backend(Protocol):
    def chat(self, request: BackendRequest) -> BackendResponse: ...


# -- scripted ------------------------------------------------------------------

@dataclass
class ScriptEntry:
    stage: str  # "*" matches any stage
    step: Optional[int]
    text: str


_HEADER = re.compile(r"^###\s+([\w*-]+)(?:\s+step=(\d+))?\s*$")


class ScriptedBackend:
    """Replays replies in order; each entry is consumed once.

    A request takes the first unused entry whose stage matches and whose step
    is unset or equal to the request's step. Running out raises ScriptExhausted.
    """

    def __init__(self, entries: Sequence[ScriptEntry], model: str = "scripted"):
        self.entries = list(entries)
        self.used = [False] * len(self.entries)
        self.requests: list[BackendRequest] = []
        self.model = model
        self._lock = threading.Lock()

    @classmethod
    def from_replies(cls, replies: Sequence[str]) -> "ScriptedBackend":
        return cls([ScriptEntry("*", None, r) for r in replies])

    @classmethod
    def parse(cls, text: str) -> "ScriptedBackend":
        entries: list[ScriptEntry] = []
        current: Optional[ScriptEntry] = None
        body: list[str] = []
        for line in text.splitlines():
            m = _HEADER.match(line)
            if m:
                if current is not None:
                    current.text = "\n".join(body).strip("\n")
                    entries.append(current)
                current = ScriptEntry(m.group(1), int(m.group(2)) if m.group(2) else None, "")
                body = []
            elif current is not None:
                body.append(line)
            elif line.strip() and not line.lstrip().startswith("#"):
                raise ConfigError("script text before the first '### stage' header")
        if current is not None:
            current.text = "\n".join(body).strip("\n")
            entries.append(current)
        return cls(entries)

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        try:
            return cls.parse(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read script {path}: {e}") from None

    def chat(self, request: BackendRequest) -> BackendResponse:
        with self._lock:
            self.requests.append(request)
            for i, e in enumerate(self.entries):
                if self.used[i]:
                    continue
                if e.stage not in ("*", request.stage):
                    continue
                if e.step is not None and e.step != request.step:
                    continue
                self.used[i] = True
                return BackendResponse(e.text)
        raise ScriptExhausted(f"script exhausted at step {request.step}, stage {request.stage!r}")


# -- canned mock ---------------------------------------------------------------

_STRAT = {
    "goal": [
        "Get the class working so the tests pass",
        "Figure out the update method",
        "Make the numbers come out right",
        "Finish the missing methods",
    ],
    "mindset": [
        "A bit unsure but willing to try",
        "Frustrated that it keeps failing",
        "Hopeful this is close",
        "Confused about the physics part",
    ],
    "directive": [
        "Write the next piece of the class",
        "Change the line that looks wrong and run it",
        "Check what the output says",
        "Think about what the test expects",
    ],
}
_MONOLOGUE = {
    "constructing": ["ok let me write the next part", "I think I need this bit next", "let's just try adding this"],
    "debugging": ["ugh it says {err}, maybe this line", "hmm {err} again, change this", "why {err}? let me try something"],
    "assessing": ["did it pass? looks like {passed} tests", "so {passed} passing now", "ok let me look at the output"],
}
OFF_TOPIC_LINES = [
    "I wonder what's for lunch today.",
    "My phone keeps buzzing, hold on.",
    "I really need a break from this.",
]
_MUTATIONS = [
    (re.compile(r"self\.(\w+) = (\w+)$", re.MULTILINE), r"self.\1 = \2_"),  # NameError
    (re.compile(r"\bdef (get_\w+)\(self\)"), r"def \1()"),  # TypeError
    (re.compile(r"return \(self\.(\w+), "), r"return (self.\1_, "),  # AttributeError
    (re.compile(r"0\.5 \*"), "2 *"),  # wrong formula
    (re.compile(r"9\.8"), "10"),  # wrong constant
]


def _drafts_from_reference(reference: str) -> list[str]:
    """Progressive prefixes of a reference solution, cut at blank lines."""
    lines = reference.rstrip("\n").split("\n")
    cuts = [i for i, ln in enumerate(lines) if not ln.strip()] + [len(lines)]
    drafts = []
    for c in cuts:
        d = "\n".join(lines[:c]).rstrip() + "\n"
        if d.strip() and d not in drafts:
            drafts.append(d)
    return drafts


class CannedBackend:
    """Deterministic offline stand-in for a language model.

    Strategist and tutor replies are drawn from fixed phrase lists. Executor
    code advances through prefixes of the problem's reference solution, with
    seeded bug injections so that drafts fail in realistic ways; a Low persona
    (read from the system prompt) advances more slowly and slips more. The choice
    depends only on the seed, the step and the request's stage, so sessions
    are reproducible.
    """

    def __init__(self, reference_solution: str = "", seed: int = 0, bug_rate: float = 0.35):
        self.drafts = _drafts_from_reference(reference_solution) or ["x = 1\n"]
        self.seed = int(seed)
        self.bug_rate = bug_rate
        self.requests: list[BackendRequest] = []
        self._progress = 0

    def _rng(self, request: BackendRequest) -> np.random.Generator:
        return np.random.default_rng([self.seed, request.step or 0, len(request.stage), len(self.requests)])

    def chat(self, request: BackendRequest) -> BackendResponse:
        self.requests.append(request)
        rng = self._rng(request)
        pick = lambda xs: xs[int(rng.integers(len(xs)))]  # noqa: E731
        if request.stage == "strategist":
            return BackendResponse(
                f"GOAL: {pick(_STRAT['goal'])}\nMINDSET: {pick(_STRAT['mindset'])}\nDIRECTIVE: {pick(_STRAT['directive'])}"
            )
        if request.stage == "off_topic":
            return BackendResponse("MONOLOGUE: " + pick(OFF_TOPIC_LINES))
        if request.stage == "tutor":
            return BackendResponse("Try looking at the line the error points to and check each name is defined.")
        if request.stage == "judge":
            return BackendResponse(
                '{"justification": "canned verdict", "realism_score": 2, "code_quality_realism": 2, '
                '"debugging_pattern_realism": 2, "language_realism": 2}'
            )
        return BackendResponse(self._executor_reply(request, rng, pick))

    def _executor_reply(self, request, rng, pick) -> str:
        prompt = request.messages[-1].content
        mode = "constructing"
        for name in ("debugging", "assessing"):
            if f"Task: {'Fixing' if name == 'debugging' else 'Observing'}" in prompt:
                mode = name
        err = re.search(r"Errors: (\w+)", prompt)
        passed = re.search(r"Tests passed: (\d+/\d+)", prompt)
        text = pick(_MONOLOGUE[mode]).format(
            err=err.group(1) if err else "something", passed=passed.group(1) if passed else "none"
        )
        if mode == "assessing":
            return f"MONOLOGUE: {text}"
        low = "Low Performer" in request.messages[0].content
        advance, bug_rate = (0.4, min(1.0, 1.6 * self.bug_rate)) if low else (0.6, self.bug_rate)
        if mode == "constructing" or rng.random() < advance:
            self._progress = min(self._progress + 1, len(self.drafts) - 1)
        code = self.drafts[self._progress]
        if rng.random() < bug_rate:
            pattern, repl = _MUTATIONS[int(rng.integers(len(_MUTATIONS)))]
            code = pattern.sub(repl, code, count=1)
        return f"MONOLOGUE: {text}\nCODE:\n```python\n{code}```"


# -- HTTP ----------------------------------------------------------------------

@dataclass
class HttpBackendConfig:
    base_url: str
    model: str
    api_key_env: str = "NOVICESIM_API_KEY"
    timeout: float = 60.0
    max_retries: int = 4
    backoff: float = 1.0


@dataclass
class HttpBackend:
    """Chat-completions client with exponential backoff on 429, 5xx and transport errors."""

    config: HttpBackendConfig
    sleep: Callable[[float], None] = time.sleep
    client: Optional[httpx.Client] = None
    requests: list = field(default_factory=list)

    def __post_init__(self):
        if self.client is None:
            self.client = httpx.Client(timeout=self.config.timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, request: BackendRequest) -> BackendResponse:
        self.requests.append(request)
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": request.model or self.config.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
        }
        last = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                r = self.client.post(url, json=payload, headers=self._headers())
            except httpx.HTTPError as e:
                last = f"{type(e).__name__}: {e}"
                continue
            if r.status_code == 429 or r.status_code >= 500:
                last = f"HTTP {r.status_code}"
                continue
            if r.status_code >= 400:
                raise BackendError(f"HTTP {r.status_code}: {r.text[:200]}")
            try:
                data = r.json()
                text = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise BackendError(f"malformed chat-completion response: {r.text[:200]}") from None
            usage = data.get("usage") or {}
            return BackendResponse(text or "", int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))
        raise BackendError(f"backend failed after {self.config.max_retries + 1} attempts: {last}")
