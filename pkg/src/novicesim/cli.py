"""Command-line entry point.

Exit status: 0 on success, 2 on configuration or usage errors, 3 when the
text-generation backend fails. Backend credentials are read from the
environment variable named in the session config (default NOVICESIM_API_KEY).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import __version__
from .environment import ExecutionCache, load_problem
from .errors import BackendError, ConfigError, ParseError, TraceSchemaError
from .metrics import (
    ConfusionCounts,
    d_prime_se,
    evaluate,
    fact_sheet,
    fit_event_log,
    load_reference,
    read_event_log,
    sdt_analysis,
    solve_rate,
    tost_equivalence,
)
from .prompts import compose_judge_prompt, parse_judge_verdict
from .session import (
    expand_manifest,
    load_manifest,
    load_session_config,
    run_batch,
    run_session,
    write_batch,
)
from .trace import BlankLineStyle, BreakdownConfig, breakdown_trace, load_trace, load_traces, save_trace

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND = 0, 2, 3

log = logging.getLogger("novicesim")


def _backend_override(args) -> Optional[object]:
    if getattr(args, "backend", None) is None:
        return None
    if args.backend == "scripted":
        if not args.script:
            raise ConfigError("--backend scripted needs --script")
        return {"kind": "scripted", "script": str(Path(args.script).resolve())}
    return args.backend if args.backend == "mock" else None


def _dump(data, path: Optional[str]) -> None:
    text = yaml.safe_dump(data, sort_keys=False, allow_unicode=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    overrides = {"seed": args.seed, "tutor": args.tutor, "max_steps": args.max_steps}
    backend = _backend_override(args)
    if backend is not None:
        overrides["backend"] = backend
    cfg = load_session_config(args.config, **overrides)
    traj = run_session(cfg, ExecutionCache())
    out = Path(args.out) if args.out else Path("out") / f"{cfg.problem.id}_{cfg.behav_profile.value.lower()}_{cfg.seed}.jsonl"
    if out.suffix != ".jsonl":
        out = out / f"{cfg.problem.id}_{cfg.behav_profile.value.lower()}_{cfg.seed}.jsonl"
    save_trace(traj, out)
    print(f"wrote {out}: {len(traj)} steps, solved={traj.solved}, solve_step={traj.solve_step}")
    if traj.truncated:
        print(f"session truncated: {traj.truncated}", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_batch(args) -> int:
    man = load_manifest(args.config)
    if args.backend is not None:
        man.backend = _backend_override(args)
    if args.tutor is not None:
        man.tutor = args.tutor
    runs = expand_manifest(man, args.seed)
    out = Path(args.out) if args.out else (man.output or Path("out/batch"))
    parallel = args.parallel or man.parallel
    result = run_batch([cfg for _, _, cfg in runs], parallel, ExecutionCache())
    write_batch(out, [(name, rep) for name, rep, _ in runs], result)
    s = result.summary
    print(f"wrote {out}: {s['sessions']} sessions, {s['failures']} failures, solve rate {s['solve_rate']}")
    if result.failures and any("Backend" in f.message or "Script" in f.message for f in result.failures):
        return EXIT_BACKEND
    return EXIT_OK


def cmd_eval(args) -> int:
    trajs = load_traces(args.traces)
    if not trajs:
        raise ConfigError(f"no traces found under {args.traces}")
    ref = load_reference(args.reference)
    groups: dict[str, list] = {}
    for t in trajs:
        groups.setdefault(str(t.config.get("behav_profile", "all")), []).append(t)
    gap = solve_rate(groups["High"]) - solve_rate(groups["Low"]) if {"High", "Low"} <= set(groups) else None
    report = evaluate(trajs, ref, gap)
    record = {"overall": report.to_dict()}
    print(report.render())
    if len(groups) > 1:
        for name, ts in sorted(groups.items()):
            sub = evaluate(ts, ref)
            record[name] = sub.to_dict()
            print(f"\n[{name}]\n{sub.render()}")
    if args.out:
        _dump(record, args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    result = fit_event_log(read_event_log(args.events), args.lambda_seconds)
    _dump(result, args.out)
    return EXIT_OK


def cmd_breakdown(args) -> int:
    traj = load_trace(args.trace)
    states = [s.action.code for s in traj.steps if s.action.code.strip()]
    if not states:
        raise ConfigError(f"{args.trace} has no code states")
    header = ""
    if not args.no_header:
        try:
            header = load_problem(traj.config.get("problem", "")).header
        except ConfigError:
            header = ""
    cfg = BreakdownConfig(
        level=args.level,
        word_granularity=args.words,
        blank_line_style=BlankLineStyle(args.blank_lines) if args.blank_lines else None,
        seed=args.seed if args.seed is not None else traj.seed,
        header=header,
    )
    snaps = breakdown_trace(states, cfg)
    lines = [json.dumps({"index": i, "code": s}, ensure_ascii=False) for i, s in enumerate(snaps)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}: {len(states)} states -> {len(snaps)} snapshots")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sdt(args) -> int:
    try:
        counts = ConfusionCounts(args.hits, args.misses, args.fa, args.cr)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    res = sdt_analysis(counts)
    se = args.se if args.se is not None else d_prime_se(counts)
    tost = tost_equivalence(res.d_prime, se, args.margin)
    _dump({
        "hit_rate": round(res.hit_rate, 6),
        "fa_rate": round(res.fa_rate, 6),
        "d_prime": round(res.d_prime, 6),
        "criterion": round(res.criterion, 6),
        "clamped": res.clamped,
        "tost": {
            "se": round(se, 6),
            "margin": args.margin,
            "z_lower": round(tost.z_lower, 6),
            "z_upper": round(tost.z_upper, 6),
            "p_tost": round(tost.p_tost, 6),
        },
    }, args.out)
    return EXIT_OK


def judge_steps(traj) -> list[dict]:
    out = []
    for s in traj.steps:
        o = s.filtered_obs
        shown = "(not run)" if not o.executed else f"{o.tests_passed}/{o.tests_total} passed " + (
            o.stderr.strip().splitlines()[-1] if o.stderr.strip() else ""
        )
        out.append({
            "t": s.t,
            "metacog": s.metacog.value,
            "cognitive": s.cognitive.value if s.cognitive else None,
            "interrupt": s.interrupt.value if s.interrupt else None,
            "utterance": s.action.utterance,
            "code": s.action.code,
            "output": shown.strip(),
        })
    return out


def cmd_judge_prompt(args) -> int:
    traj = load_trace(args.trace)
    sheet = fact_sheet(traj).to_dict()
    system, user = compose_judge_prompt(sheet, judge_steps(traj))
    record = {"fact_sheet": sheet, "system": system, "user": user}
    if args.reply:
        v = parse_judge_verdict(Path(args.reply).read_text(encoding="utf-8"))
        record["verdict"] = v.__dict__
    if args.out:
        _dump(record, args.out)
    else:
        print(system + "\n\n" + user)
        if "verdict" in record:
            print("\n" + yaml.safe_dump({"verdict": record["verdict"]}, sort_keys=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="novicesim",
        description="Simulate novice programming sessions and score their fidelity.",
        epilog="Environment: the HTTP backend reads its API key from the variable named by "
        "'api_key_env' in the session config (default NOVICESIM_API_KEY).",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command")

    def common(sp, config_help="configuration file"):
        sp.add_argument("--config", help=config_help)
        sp.add_argument("--seed", type=int, help="root seed (overrides the config)")
        sp.add_argument("--out", help="output path")
        return sp

    def backend_flags(sp):
        sp.add_argument("--backend", choices=("mock", "scripted", "config"), default=None,
                        help="text backend: canned mock, a scripted reply file, or whatever the config says")
        sp.add_argument("--script", help="reply script for --backend scripted")
        sp.add_argument("--tutor", choices=("None", "Simple", "ZPD"), help="tutor on help requests")

    sp = common(sub.add_parser("run", help="simulate one session"), "session config (YAML)")
    backend_flags(sp)
    sp.add_argument("--max-steps", type=int, help="step cap")
    sp.set_defaults(func=cmd_run, needs_config=True)

    sp = common(sub.add_parser("batch", help="simulate every condition of a manifest"), "batch manifest (YAML)")
    backend_flags(sp)
    sp.add_argument("--parallel", type=int, help="concurrent sessions")
    sp.set_defaults(func=cmd_batch, needs_config=True)

    sp = common(sub.add_parser("eval", help="score traces against a reference distribution"))
    sp.add_argument("--traces", required=True, help="trace file or directory of *.jsonl")
    sp.add_argument("--reference", default="reference/combined_test.dist", help="reference distribution file")
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("fit", help="fit durations and transitions from an event log"))
    sp.add_argument("--events", required=True, help="CSV with columns session,time,action")
    sp.add_argument("--lambda", dest="lambda_seconds", type=float, default=30.0, help="episode merge gap in seconds")
    sp.set_defaults(func=cmd_fit)

    sp = common(sub.add_parser("breakdown", help="densify a trace's code states into snapshots"))
    sp.add_argument("--trace", required=True)
    sp.add_argument("--level", type=float, default=0.4, help="retention probability of intermediate states")
    sp.add_argument("--words", action="store_true", help="type the first state word by word")
    sp.add_argument("--blank-lines", choices=[s.value for s in BlankLineStyle], help="blank-line style (default: random)")
    sp.add_argument("--no-header", action="store_true", help="do not prepend the problem header")
    sp.set_defaults(func=cmd_breakdown)

    sp = common(sub.add_parser("sdt", help="d-prime, criterion and TOST from confusion counts"))
    sp.add_argument("--hits", type=int, required=True)
    sp.add_argument("--misses", type=int, required=True)
    sp.add_argument("--fa", type=int, required=True, help="false alarms")
    sp.add_argument("--cr", type=int, required=True, help="correct rejections")
    sp.add_argument("--se", type=float, help="standard error of d' (default: estimated from counts)")
    sp.add_argument("--margin", type=float, default=0.3, help="equivalence margin")
    sp.set_defaults(func=cmd_sdt)

    sp = common(sub.add_parser("judge-prompt", help="assemble the realism-judge prompt for a trace"))
    sp.add_argument("--trace", required=True)
    sp.add_argument("--reply", help="judge reply to parse into verdict fields")
    sp.set_defaults(func=cmd_judge_prompt)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "needs_config", False) and not args.config:
        print(f"novicesim {args.command}: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (BackendError, ParseError) as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, TraceSchemaError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
