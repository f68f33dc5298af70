"""One simulated learning session, and batches of them.

Per step: check interrupts, advance the semi-Markov state, ask the agent for an
action, run the tests as the cognitive behavior allows, filter what the agent
sees, update knowledge when the metacognitive state allows, record the step.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np
import yaml

from .agent import (
    AgentAction,
    StageSettings,
    TutorContext,
    TutorKind,
    generate_tutor_hint,
    record_error_episode,
    run_executor,
    run_off_topic,
    run_strategist,
)
from .backend import OFF_TOPIC_LINES, Backend, CannedBackend, HttpBackend, HttpBackendConfig, ScriptedBackend
from .behavior import (
    BehaviorSpec,
    CognitiveBehavior,
    InterruptKind,
    MetacognitiveBehavior,
    ProfileLevel,
    check_interrupt,
    default_spec,
    load_behavior_spec,
    sample_cognitive_step,
    sample_next_segment,
)
from .environment import (
    ExecutionCache,
    Observation,
    ProblemConfig,
    execute_code,
    filter_observation,
    gate_execution,
    kc_oracle,
    knowledge_update_allowed,
    load_problem,
    not_executed,
)
from .errors import BackendError, ConfigError, ParseError
from .knowledge import BktParams, KnowledgeState, all_statuses, render_constraints, update_knowledge
from .prompts import BlockLibrary, MemoryBuffer, SharedContext, default_blocks
from .resources import resolve
from .rng import Streams, derive_seed
from .trace import Trajectory, TraceStep, save_trace

log = logging.getLogger(__name__)

BackendSource = Union[Backend, Callable[["SessionConfig"], Backend], None]


@dataclass
class SessionConfig:
    problem: ProblemConfig
    behav_profile: ProfileLevel
    persona_profile: ProfileLevel
    behavior_spec: BehaviorSpec
    bkt: BktParams = field(default_factory=BktParams)
    tutor_kind: TutorKind = TutorKind.NONE
    backend: BackendSource = None  # instance, factory(cfg), or None for the canned mock
    seed: int = 0
    max_steps: int = 30
    blocked_kcs: tuple[str, ...] = ()
    blocks: Optional[BlockLibrary] = None
    settings: StageSettings = field(default_factory=StageSettings)
    parallelism: int = 4
    backend_label: str = "mock"

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        unknown = set(self.blocked_kcs) - set(self.problem.kcs)
        if unknown:
            raise ConfigError(f"blocked KCs not in problem {self.problem.id}: {sorted(unknown)}")

    def summary(self) -> dict[str, Any]:
        return {
            "problem": self.problem.id,
            "behav_profile": self.behav_profile.value,
            "persona_profile": self.persona_profile.value,
            "tutor": self.tutor_kind.value,
            "max_steps": self.max_steps,
            "backend": self.backend_label,
            "bkt": {k: getattr(self.bkt, k) for k in ("p_init", "p_transit", "p_slip", "p_guess")},
            "blocked_kcs": list(self.blocked_kcs),
        }


def make_backend(cfg: SessionConfig) -> Backend:
    if cfg.backend is None:
        return CannedBackend(cfg.problem.reference_solution, seed=cfg.seed)
    if callable(cfg.backend) and not hasattr(cfg.backend, "chat"):
        return cfg.backend(cfg)
    return cfg.backend


def _is_mock(backend) -> bool:
    return isinstance(backend, (CannedBackend, ScriptedBackend))


def _help_question(obs: Optional[Observation]) -> str:
    if obs is not None and obs.error_types:
        return f"I'm stuck, it keeps saying {obs.error_types[0]}. Can you help me?"
    return "I'm stuck and I don't know what to do next. Can you help me?"


def run_session(cfg: SessionConfig, cache: Optional[ExecutionCache] = None) -> Trajectory:
    """Simulate one session. Backend failures end it early with ``truncated`` set."""
    problem, spec = cfg.problem, cfg.behavior_spec
    backend = make_backend(cfg)
    blocks = cfg.blocks or default_blocks()
    streams = Streams(cfg.seed)
    kcs = problem.kcs
    total = len(problem.test_suite)
    knowledge = KnowledgeState.initial(sorted(kcs), cfg.bkt, cfg.blocked_kcs)
    mem_strat, mem_exec = MemoryBuffer(), MemoryBuffer()

    seg = sample_next_segment(None, spec, streams["segments"], streams["durations"])
    n, remaining, prev_c, seg_started = 1, seg.duration, None, False
    packet = None
    code = ""
    prev_raw: Optional[Observation] = None
    prev_filtered: Optional[Observation] = None
    pending_hint: Optional[str] = None
    tutor_failures, last_target = 0, None
    steps: list[TraceStep] = []
    solve_step = None
    truncated = None

    def execute(source: str) -> Observation:
        return execute_code(source, problem, cfg.parallelism, cache)

    for t in range(1, cfg.max_steps + 1):
        x_time = t / cfg.max_steps
        intervention, pending_hint = pending_hint, None
        kind = check_interrupt(x_time, spec, streams["interrupts"], just_received_help=intervention is not None)
        m = seg.behavior
        statuses = all_statuses(knowledge, streams["knowledge"])
        ctx = SharedContext(code, prev_filtered, render_constraints(statuses, kcs), intervention, problem.description)
        idle_obs = not_executed(prev_raw, total)
        try:
            if kind is not None:
                hint = None
                if kind is InterruptKind.OFF_TOPIC:
                    if _is_mock(backend):
                        line = OFF_TOPIC_LINES[int(streams["off_topic"].integers(len(OFF_TOPIC_LINES)))]
                        action = AgentAction(code, line)
                    else:
                        action = run_off_topic(m, mem_exec, ctx, cfg.persona_profile, backend, blocks, cfg.settings, t)
                else:
                    question = _help_question(prev_filtered)
                    action = AgentAction(code, question)
                    recent = [e for s in steps[-3:] for e in s.filtered_obs.error_types]
                    tc = TutorContext(problem.description, code, recent, m, question, tutor_failures,
                                      {k: v.label for k, v in kcs.items()})
                    hint, target = generate_tutor_hint(cfg.tutor_kind, knowledge, tc, backend, blocks, cfg.settings, t)
                    tutor_failures = tutor_failures + 1 if target is not None and target == last_target else 0
                    last_target = target
                    pending_hint = hint
                steps.append(TraceStep(
                    t=t, n=n, metacog=m, cognitive=None, action=action, raw_obs=idle_obs, filtered_obs=idle_obs,
                    progress=idle_obs.tests_passed / total, time_progress=x_time,
                    knowledge_snapshot=knowledge.snapshot(), interrupt=kind, tutor_hint=hint,
                ))
                continue

            if remaining == 0:
                seg = sample_next_segment(seg.behavior, spec, streams["segments"], streams["durations"])
                n, remaining, prev_c, seg_started = n + 1, seg.duration, None, False
                m = seg.behavior
            c = sample_cognitive_step(m, prev_c, spec, streams["cognitive"])
            strategy = None
            if not seg_started:
                packet = run_strategist(m, c, mem_strat, ctx, cfg.persona_profile, backend, blocks, cfg.settings, t)
                strategy, seg_started = packet, True

            plan = gate_execution(c)
            pre_obs = None
            if plan.execute_before:
                pre_obs = execute(code)
                ctx = replace(ctx, filtered_obs=filter_observation(pre_obs, m))
            action = run_executor(m, packet, c, mem_exec, ctx, cfg.persona_profile, backend, blocks, cfg.settings, t)
            new_code = action.code if plan.allow_modify or plan.cleanup_only else code
            raw = execute(new_code) if plan.execute_after else not_executed(prev_raw, total)
            filtered = filter_observation(raw, m)
            credited = kc_oracle(new_code, problem)
            if knowledge_update_allowed(m):
                update_knowledge(knowledge, credited, streams["knowledge"])
            if pre_obs is not None and ctx.filtered_obs.error_types:
                for err in dict.fromkeys(ctx.filtered_obs.error_types):
                    record_error_episode(mem_exec, err, action.utterance, err not in raw.error_types)
        except (BackendError, ParseError) as e:
            truncated = f"step {t}: {type(e).__name__}: {e}"
            log.warning("session seed=%s truncated at %s", cfg.seed, truncated)
            break

        steps.append(TraceStep(
            t=t, n=n, metacog=m, cognitive=c, action=AgentAction(new_code, action.utterance), raw_obs=raw,
            filtered_obs=filtered, progress=raw.tests_passed / total, time_progress=x_time,
            knowledge_snapshot=knowledge.snapshot(), intervention=intervention, strategy=strategy,
            segment_duration=seg.duration if strategy is not None else None, pre_obs=pre_obs,
            credited_kcs=tuple(sorted(credited)),
        ))
        code, prev_raw, prev_filtered, prev_c = new_code, raw, filtered, c
        remaining -= 1
        if raw.solved:
            solve_step = t
            break

    return Trajectory(cfg.summary(), steps, solve_step is not None, solve_step, cfg.seed, truncated=truncated)


# -- batches ---------------------------------------------------------------------

@dataclass
class BatchFailure:
    index: int
    seed: int
    message: str
    trajectory: Optional[Trajectory] = None


@dataclass
class BatchResult:
    results: list[Optional[Trajectory]]  # input order; None where the session raised
    failures: list[BatchFailure]

    @property
    def trajectories(self) -> list[Trajectory]:
        return [t for t in self.results if t is not None and not t.truncated]

    @property
    def summary(self) -> dict[str, Any]:
        trajs = self.trajectories
        solved = [t for t in trajs if t.solved]
        return {
            "sessions": len(trajs),
            "failures": len(self.failures),
            "solved": len(solved),
            "solve_rate": len(solved) / len(trajs) if trajs else None,
            "mean_steps": float(np.mean([len(t) for t in trajs])) if trajs else None,
        }


def run_batch(
    cfgs: Sequence[SessionConfig],
    parallelism: int = 4,
    cache: Optional[ExecutionCache] = None,
) -> BatchResult:
    """Run sessions with bounded parallelism; results keep the input order."""
    cache = cache if cache is not None else ExecutionCache()

    def one(cfg):
        try:
            return run_session(cfg, cache), None
        except Exception as e:  # noqa: BLE001 - a failing session must not sink the batch
            log.warning("session seed=%s failed: %s", cfg.seed, e)
            return None, f"{type(e).__name__}: {e}"

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        outcomes = list(pool.map(one, cfgs))
    results, failures = [], []
    for i, (traj, err) in enumerate(outcomes):
        results.append(traj)
        if err is not None:
            failures.append(BatchFailure(i, cfgs[i].seed, err))
        elif traj.truncated:
            failures.append(BatchFailure(i, cfgs[i].seed, traj.truncated, traj))
    return BatchResult(results, failures)


# -- config files ----------------------------------------------------------------

def _read_yaml(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return data


def backend_from_dict(data: Any, base_dir: Path = Path(".")) -> tuple[BackendSource, str]:
    """Backend section of a session config: ``mock``, ``{kind: scripted, script}`` or ``{kind: http, ...}``."""
    if data is None or data == "mock":
        return None, "mock"
    if isinstance(data, str):
        data = {"kind": data}
    kind = data.get("kind", "mock")
    if kind == "mock":
        return None, "mock"
    if kind == "scripted":
        if "script" not in data:
            raise ConfigError("scripted backend needs a 'script' path")
        script = resolve(base_dir / data["script"], "fixtures")
        if not script.is_file():
            script = resolve(data["script"], "fixtures")
        return (lambda cfg, p=script: ScriptedBackend.from_file(p)), "scripted"
    if kind == "http":
        missing = [k for k in ("base_url", "model") if k not in data]
        if missing:
            raise ConfigError(f"http backend config missing {missing}")
        hc = HttpBackendConfig(
            base_url=data["base_url"],
            model=data["model"],
            api_key_env=data.get("api_key_env", "NOVICESIM_API_KEY"),
            timeout=float(data.get("timeout", 60.0)),
            max_retries=int(data.get("max_retries", 4)),
            backoff=float(data.get("backoff", 1.0)),
        )
        return (lambda cfg: HttpBackend(hc)), "http"
    raise ConfigError(f"unknown backend kind {kind!r}")


_SESSION_KEYS = {
    "problem", "behav_profile", "persona_profile", "profile", "behavior_spec", "bkt", "tutor", "backend",
    "seed", "max_steps", "blocked_kcs", "prompts", "model", "temperatures", "parallelism",
}


def session_from_dict(data: dict, base_dir: Path = Path("."), **overrides) -> SessionConfig:
    data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = set(data) - _SESSION_KEYS
    if unknown:
        raise ConfigError(f"unknown session keys: {sorted(unknown)}")
    if "problem" not in data:
        raise ConfigError("session config needs a 'problem'")
    try:
        behav = ProfileLevel.parse(data.get("behav_profile", data.get("profile", "Low")))
        persona = ProfileLevel.parse(data.get("persona_profile", behav.value))
        tutor = TutorKind.parse(data.get("tutor"))
        bkt = BktParams(**(data.get("bkt") or {}))
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None
    problem_ref = data["problem"]
    problem = load_problem(base_dir / problem_ref if (base_dir / str(problem_ref)).is_file() else problem_ref)
    spec_ref = data.get("behavior_spec")
    if spec_ref is None:
        spec = default_spec(behav)
    else:
        p = base_dir / str(spec_ref)
        spec = load_behavior_spec(p if p.is_file() else spec_ref)
    backend, label = backend_from_dict(data.get("backend"), base_dir)
    temps = data.get("temperatures") or {}
    settings = StageSettings(
        model=str(data.get("model", "")),
        strategist_temperature=float(temps.get("strategist", 0.8)),
        executor_temperature=float(temps.get("executor", 0.7)),
    )
    blocks = BlockLibrary.load(base_dir / data["prompts"]) if data.get("prompts") else None
    return SessionConfig(
        problem=problem,
        behav_profile=behav,
        persona_profile=persona,
        behavior_spec=spec,
        bkt=bkt,
        tutor_kind=tutor,
        backend=backend,
        seed=int(data.get("seed", 0)),
        max_steps=int(data.get("max_steps", spec.max_steps)),
        blocked_kcs=tuple(data.get("blocked_kcs") or ()),
        blocks=blocks,
        settings=settings,
        parallelism=int(data.get("parallelism", 4)),
        backend_label=label,
    )


def load_session_config(path, **overrides) -> SessionConfig:
    path = resolve(path, "fixtures", suffixes=(".session",))
    return session_from_dict(_read_yaml(path), path.parent, **overrides)


@dataclass
class RunManifest:
    conditions: list[tuple[str, Path]]  # (name, session config path)
    repetitions: int
    root_seed: int
    output: Optional[Path] = None
    backend: Any = None
    tutor: Optional[str] = None
    parallel: int = 4

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not self.conditions:
            raise ConfigError("manifest lists no conditions")


def load_manifest(path) -> RunManifest:
    path = resolve(path, "fixtures", suffixes=(".manifest",))
    data = _read_yaml(path)
    conds = []
    for i, c in enumerate(data.get("conditions") or []):
        if isinstance(c, str):
            c = {"config": c}
        if "config" not in c:
            raise ConfigError(f"condition {i} lacks 'config'")
        p = path.parent / c["config"]
        p = p if p.is_file() else resolve(c["config"], "fixtures", suffixes=(".session",))
        conds.append((str(c.get("name", Path(c["config"]).stem)), p))
    return RunManifest(
        conditions=conds,
        repetitions=int(data.get("repetitions", 1)),
        root_seed=int(data.get("root_seed", data.get("seed", 0))),
        output=Path(data["output"]) if data.get("output") else None,
        backend=data.get("backend"),
        tutor=data.get("tutor"),
        parallel=int(data.get("parallel", 4)),
    )


def expand_manifest(man: RunManifest, root_seed: Optional[int] = None) -> list[tuple[str, int, SessionConfig]]:
    """(condition, repetition, config) triples with seeds derived from the root seed."""
    root = man.root_seed if root_seed is None else root_seed
    out = []
    k = 0
    for name, cpath in man.conditions:
        base = _read_yaml(cpath)
        if man.backend is not None:
            base["backend"] = man.backend
        if man.tutor is not None:
            base["tutor"] = man.tutor
        for r in range(man.repetitions):
            cfg = session_from_dict(base, cpath.parent, seed=derive_seed(root, k))
            out.append((name, r, cfg))
            k += 1
    return out


def write_batch(out_dir, labels: Sequence[tuple[str, int]], result: BatchResult) -> list[Path]:
    """Persist one trace file per session (truncated ones included) plus a YAML summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for (name, rep), traj in zip(labels, result.results):
        if traj is not None:
            written.append(save_trace(traj, out_dir / name / f"run_{rep:03d}.jsonl"))
    summary = dict(result.summary)
    summary["failed_runs"] = [{"index": f.index, "seed": f.seed, "message": f.message} for f in result.failures]
    (out_dir / "summary.yaml").write_text(yaml.safe_dump(summary, sort_keys=True), encoding="utf-8")
    return written
