"""Execution environment: problem fixtures, sandboxed test runs, feedback gating.

Each test case runs in its own subprocess: the student source is written to a
temporary file together with the test harness and executed via the problem's
interpreter command. Exit status 0 is a pass; anything else is a failure whose
error type is read from the last line of stderr.
"""

from __future__ import annotations

import hashlib
import os
import re
import subprocess
import sys
import tempfile
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .behavior import CognitiveBehavior, MetacognitiveBehavior
from .errors import ConfigError, ExecutionEnvironmentError
from .knowledge import KnowledgeComponent
from .resources import resolve

REDACTED = "[Error]: [output omitted...]"
NOT_EXECUTED = "(Code drafted but not executed)"

DEFAULT_ERROR_TOKENS = (
    "TypeError",
    "NameError",
    "AttributeError",
    "ValueError",
    "AssertionError",
    "SyntaxError",
    "IndentationError",
    "ZeroDivisionError",
    "IndexError",
    "KeyError",
    "ImportError",
    "ModuleNotFoundError",
    "RecursionError",
    "Timeout",
)
_EXC_LINE = re.compile(r"^([A-Za-z_][\w.]*)(?::|$)")


@dataclass(frozen=True)
class TestCase:
    name: str
    harness_source: str


@dataclass(frozen=True)
class KcDetector:
    all: tuple[re.Pattern, ...] = ()
    any: tuple[re.Pattern, ...] = ()
    none: tuple[re.Pattern, ...] = ()

    def matches(self, source: str) -> bool:
        if not source.strip():
            return False
        if not all(p.search(source) for p in self.all):
            return False
        if self.any and not any(p.search(source) for p in self.any):
            return False
        return not any(p.search(source) for p in self.none)


@dataclass(frozen=True)
class ProblemConfig:
    id: str
    description: str
    kc_set: tuple[KnowledgeComponent, ...]
    test_suite: tuple[TestCase, ...]
    interpreter_command: tuple[str, ...] = ("{python}", "-I", "-S", "{source}")
    timeout: float = 5.0
    title: str = ""
    harness_prelude: str = ""
    detectors: dict = field(default_factory=dict, compare=False, hash=False)
    reference_solution: str = ""
    header: str = ""
    error_tokens: tuple[str, ...] = DEFAULT_ERROR_TOKENS

    @property
    def kcs(self) -> dict[str, KnowledgeComponent]:
        return {kc.id: kc for kc in self.kc_set}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for part in (self.id, self.harness_prelude, *self.interpreter_command, str(self.timeout)):
            h.update(part.encode())
        for t in self.test_suite:
            h.update(t.name.encode())
            h.update(t.harness_source.encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class Observation:
    stdout: str = ""
    stderr: str = ""
    exit_ok: bool = False
    tests_passed: int = 0
    tests_total: int = 0
    error_types: tuple[str, ...] = ()
    executed: bool = False
    failures: tuple[str, ...] = ()
    redacted: bool = False

    @property
    def has_error(self) -> bool:
        return self.executed and (bool(self.error_types) or self.tests_passed < self.tests_total)

    @property
    def solved(self) -> bool:
        return self.executed and self.tests_total > 0 and self.tests_passed == self.tests_total

    def to_dict(self) -> dict:
        return {
            "stdout": self.stdout,
            "stderr": self.stderr,
            "exit_ok": self.exit_ok,
            "tests_passed": self.tests_passed,
            "tests_total": self.tests_total,
            "error_types": list(self.error_types),
            "executed": self.executed,
            "failures": list(self.failures),
            "redacted": self.redacted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls(
            stdout=d.get("stdout", ""),
            stderr=d.get("stderr", ""),
            exit_ok=bool(d.get("exit_ok", False)),
            tests_passed=int(d.get("tests_passed", 0)),
            tests_total=int(d.get("tests_total", 0)),
            error_types=tuple(d.get("error_types", ())),
            executed=bool(d.get("executed", False)),
            failures=tuple(d.get("failures", ())),
            redacted=bool(d.get("redacted", False)),
        )


@dataclass(frozen=True)
class ExecutionPlan:
    execute_before: bool
    allow_modify: bool
    execute_after: bool
    cleanup_only: bool = False


def gate_execution(c: CognitiveBehavior) -> ExecutionPlan:
    """Constructing writes blind; Debugging runs first to expose errors, then
    again after the fix; Assessing runs only to evaluate (minor cleanup allowed)."""
    if c is CognitiveBehavior.CONSTRUCTING:
        return ExecutionPlan(False, True, False)
    if c is CognitiveBehavior.DEBUGGING:
        return ExecutionPlan(True, True, True)
    return ExecutionPlan(False, False, True, cleanup_only=True)


def knowledge_update_allowed(m: MetacognitiveBehavior) -> bool:
    return m in (MetacognitiveBehavior.MONITORING, MetacognitiveBehavior.REFLECTING)


def filter_observation(o: Observation, m: MetacognitiveBehavior) -> Observation:
    """Redact error details while Enacting; pass counts always survive."""
    if m is not MetacognitiveBehavior.ENACTING or not o.has_error or o.redacted:
        return o
    return replace(o, stderr=REDACTED, error_types=(), failures=(), redacted=True)


def not_executed(prev: Optional[Observation], total: int) -> Observation:
    """Observation for a step that did not run the code; counts carry forward."""
    passed = prev.tests_passed if prev is not None else 0
    total = prev.tests_total if prev is not None and prev.tests_total else total
    return Observation(stdout=NOT_EXECUTED, tests_passed=passed, tests_total=total, executed=False)


def compute_progress(o: Observation) -> float:
    if o.tests_total < 1:
        raise ValueError("progress needs at least one test")
    return o.tests_passed / o.tests_total


def parse_error_type(stderr: str, tokens: Sequence[str] = DEFAULT_ERROR_TOKENS) -> str:
    lines = [ln.strip() for ln in stderr.strip().splitlines() if ln.strip()]
    if not lines:
        return "Other"
    m = _EXC_LINE.match(lines[-1])
    if m:
        name = m.group(1).rsplit(".", 1)[-1]
        if name in tokens:
            return name
    return "Other"


# -- running ---------------------------------------------------------------

@dataclass(frozen=True)
class TestResult:
    name: str
    passed: bool
    stdout: str
    stderr: str
    error_type: Optional[str]


def _command(problem: ProblemConfig, source_path: str) -> list[str]:
    out = []
    for part in problem.interpreter_command:
        out.append(part.replace("{python}", sys.executable).replace("{source}", source_path))
    return out


def run_test(source: str, test: TestCase, problem: ProblemConfig) -> TestResult:
    program = source.rstrip("\n") + "\n\n" + problem.harness_prelude + "\n" + test.harness_source + "\n"
    with tempfile.TemporaryDirectory(prefix="novicesim-") as tmp:
        Path(tmp, "student_test.py").write_text(program)
        cmd = _command(problem, "student_test.py")
        try:
            proc = subprocess.run(
                cmd, cwd=tmp, capture_output=True, text=True, timeout=problem.timeout, stdin=subprocess.DEVNULL
            )
        except FileNotFoundError as exc:
            raise ExecutionEnvironmentError(f"interpreter not found: {cmd[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            out = exc.stdout.decode() if isinstance(exc.stdout, bytes) else (exc.stdout or "")
            return TestResult(test.name, False, out, f"Timeout: test exceeded {problem.timeout}s", "Timeout")
    # tracebacks name the random temp directory; strip it so output is reproducible
    out, err = (text.replace(tmp + os.sep, "") for text in (proc.stdout, proc.stderr))
    if proc.returncode == 0:
        return TestResult(test.name, True, out, err, None)
    return TestResult(test.name, False, out, err, parse_error_type(err, problem.error_tokens))


def aggregate(results: Sequence[TestResult]) -> Observation:
    passed = sum(r.passed for r in results)
    stdout = "".join(f"[{r.name}] {'PASS' if r.passed else 'FAIL'}\n{r.stdout}" for r in results)
    stderr = "".join(f"[{r.name}]\n{r.stderr.rstrip()}\n" for r in results if not r.passed)
    errors = tuple(r.error_type for r in results if not r.passed and r.error_type)
    return Observation(
        stdout=stdout,
        stderr=stderr,
        exit_ok=passed == len(results),
        tests_passed=passed,
        tests_total=len(results),
        error_types=errors,
        executed=True,
        failures=tuple(r.name for r in results if not r.passed),
    )


class ExecutionCache:
    """Thread-safe memo of observations keyed by (problem, source).

    Test verdicts depend only on the source and the suite, so repeated drafts
    (common with scripted backends) are not re-run.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict[tuple[str, str], Observation] = {}
        self.hits = 0

    def get(self, key):
        with self._lock:
            obs = self._data.get(key)
            if obs is not None:
                self.hits += 1
            return obs

    def put(self, key, obs: Observation) -> None:
        with self._lock:
            self._data[key] = obs


def execute_code(
    source: str,
    problem: ProblemConfig,
    parallelism: int = 4,
    cache: Optional[ExecutionCache] = None,
) -> Observation:
    key = (problem.fingerprint(), hashlib.sha256(source.encode()).hexdigest())
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    tests = problem.test_suite
    if parallelism > 1 and len(tests) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(lambda t: run_test(source, t, problem), tests))
    else:
        results = [run_test(source, t, problem) for t in tests]
    obs = aggregate(results)
    if cache is not None:
        cache.put(key, obs)
    return obs


def kc_oracle(source: str, problem: ProblemConfig) -> set[str]:
    """KC ids whose declarative detector matches ``source``."""
    return {kc_id for kc_id, det in problem.detectors.items() if det.matches(source)}


# -- fixture loading -------------------------------------------------------

def _compile(rules, where: str) -> tuple[re.Pattern, ...]:
    if rules is None:
        return ()
    if isinstance(rules, str):
        rules = [rules]
    out = []
    for r in rules:
        try:
            out.append(re.compile(r, re.MULTILINE))
        except re.error as exc:
            raise ConfigError(f"{where}: bad detector pattern {r!r}: {exc}") from None
    return tuple(out)


def problem_from_dict(data: dict) -> ProblemConfig:
    try:
        pid = str(data["id"])
        kcs, detectors = [], {}
        for entry in data["kcs"]:
            kc = KnowledgeComponent(
                id=entry["id"],
                label=entry["label"],
                category=entry.get("category", "Coding"),
                constraint_phrase=entry["constraint_phrase"],
            )
            if kc.id in detectors:
                raise ConfigError(f"problem {pid}: duplicate KC id {kc.id}")
            det = entry.get("detector") or {}
            if not isinstance(det, dict) or set(det) - {"all", "any", "none"}:
                raise ConfigError(f"problem {pid}: detector for {kc.id} must use keys all/any/none")
            where = f"problem {pid} KC {kc.id}"
            detectors[kc.id] = KcDetector(
                _compile(det.get("all"), where), _compile(det.get("any"), where), _compile(det.get("none"), where)
            )
            kcs.append(kc)
        tests = tuple(TestCase(t["name"], t["harness"]) for t in data["tests"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"problem fixture is missing field {exc}") from None
    if not tests:
        raise ConfigError(f"problem {pid}: needs at least one test case")
    names = [t.name for t in tests]
    if len(set(names)) != len(names):
        raise ConfigError(f"problem {pid}: test names must be unique")
    cmd = data.get("interpreter_command", ["{python}", "-I", "-S", "{source}"])
    if isinstance(cmd, str):
        cmd = cmd.split()
    if not any("{source}" in part for part in cmd):
        raise ConfigError(f"problem {pid}: interpreter_command needs a {{source}} placeholder")
    return ProblemConfig(
        id=pid,
        title=data.get("title", pid),
        description=data.get("description", ""),
        kc_set=tuple(kcs),
        test_suite=tests,
        interpreter_command=tuple(cmd),
        timeout=float(data.get("timeout", 5.0)),
        harness_prelude=data.get("harness_prelude", ""),
        detectors=detectors,
        reference_solution=data.get("reference_solution", ""),
        header=data.get("header", ""),
        error_tokens=tuple(data.get("error_tokens", DEFAULT_ERROR_TOKENS)),
    )


def load_problem(path_or_name) -> ProblemConfig:
    """Load a problem fixture by path or by bundled name (``particle``, ``bouncing_ball``)."""
    path = resolve(path_or_name, "problems", suffixes=(".yaml",))
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read problem fixture {path_or_name}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"problem fixture {path} is not valid YAML: {exc}") from None
    return problem_from_dict(data)


def error_counter(o: Observation) -> Counter:
    return Counter(o.error_types)
