"""Command-line entry point: check, run, explore, sweep, emit.

Exit codes are stable: 0 success / all clauses pass, 1 model errors,
2 monitor failure, 3 inconclusive verdicts, 4 unsupported feature in
emission, 64 usage errors, 74 I/O errors. Diagnostics go to stderr, data
to files or stdout.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import erlgen, monitors
from .explorer import ExploreBounds, explore
from .parser import CheckedModel, SourceError, load_model
from .scheduler import (
    CHECK_EFFECTIVE,
    CHECK_LITERAL,
    SchedulePolicy,
    TIE_FIXED,
    TIE_SEEDED,
    run,
)

EXIT_OK = 0
EXIT_MODEL_ERROR = 1
EXIT_FAIL = 2
EXIT_INCONCLUSIVE = 3
EXIT_UNSUPPORTED = 4
EXIT_USAGE = 64
EXIT_IO = 74


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; keep 64 for usage
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Usage(Exception):
    pass


class _Failed(Exception):
    def __init__(self, code: int):
        self.code = code


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        raise _Failed(EXIT_IO) from exc


def _load_checked(path: str) -> CheckedModel:
    text = _read_text(path)
    try:
        checked = load_model(text)
    except SourceError as exc:
        for err in exc.errors:
            print(err.render(path), file=sys.stderr)
        raise _Failed(EXIT_MODEL_ERROR) from exc
    for warning in checked.warnings:
        print(warning.render(path), file=sys.stderr)
    return checked


def _parse_env_value(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    try:
        return int(text)
    except ValueError:
        raise _Usage(f"env values must be integers or true/false, got {text!r}")


def _collect_env(args) -> dict:
    bindings: dict = {}
    if getattr(args, "env_file", None):
        for lineno, raw in enumerate(_read_text(args.env_file).splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise _Usage(f"{args.env_file}:{lineno}: expected name=value")
            name, _, value = line.partition("=")
            bindings[name.strip()] = _parse_env_value(value.strip())
    for item in getattr(args, "env", None) or []:
        if "=" not in item:
            raise _Usage(f"--env expects name=value, got {item!r}")
        name, _, value = item.partition("=")
        bindings[name.strip()] = _parse_env_value(value.strip())
    return bindings


def _load_monitor(path: Optional[str], checked: CheckedModel) -> Optional[monitors.MonitorSpec]:
    if not path:
        return None
    text = _read_text(path)
    try:
        spec = monitors.parse_monitor(text)
    except SourceError as exc:
        for err in exc.errors:
            print(err.render(path), file=sys.stderr)
        raise _Failed(EXIT_MODEL_ERROR) from exc
    for warning in monitors.validate_monitor(spec, checked):
        print(warning.render(path), file=sys.stderr)
    return spec


def _write_file(path: str, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        print(f"cannot write {path}: {exc}", file=sys.stderr)
        raise _Failed(EXIT_IO) from exc


def _witness_text(ev) -> str:
    if ev is None:
        return ""
    if ev.kind == "run_ended":
        return f"run_ended({ev.reason})@{ev.time}"
    return f"{ev.kind}@{ev.time} {ev.rebec}.{ev.method}"


def _verdict_exit(statuses: list[str]) -> int:
    if any(s == monitors.FAIL for s in statuses):
        return EXIT_FAIL
    if all(s == monitors.PASS for s in statuses):
        return EXIT_OK
    return EXIT_INCONCLUSIVE


# ---------------------------------------------------------------------------
# Commands


def cmd_check(args) -> int:
    _load_checked(args.model)
    print("ok", file=sys.stderr)
    return EXIT_OK


def cmd_run(args) -> int:
    checked = _load_checked(args.model)
    if args.horizon is None and args.max_steps is None:
        raise _Usage("run needs --horizon or --max-steps")
    policy = SchedulePolicy(
        tie_break=args.tie_break, deadline_check=args.deadline_check,
        horizon=args.horizon, max_steps=args.max_steps,
    )
    spec = _load_monitor(args.monitor, checked)
    try:
        trace = run(checked, _collect_env(args), args.seed, policy)
    except ValueError as exc:
        raise _Usage(str(exc))
    if args.trace:
        _write_file(args.trace, trace.to_jsonl())
    print(f"run ended: reason={trace.end_reason} events={len(trace.events)}",
          file=sys.stderr)
    if spec is None:
        return EXIT_OK
    verdict = monitors.check_trace(trace, spec)
    if args.json:
        doc = {"clauses": [
            {"clause": str(c.clause), "status": c.status, "witness": _witness_text(c.witness)}
            for c in verdict.clauses
        ]}
        print(json.dumps(doc, indent=2))
    else:
        for c in verdict.clauses:
            print(f"{c.status.upper():12s} {c.clause}    [{_witness_text(c.witness)}]")
    return _verdict_exit([c.status for c in verdict.clauses])


def cmd_explore(args) -> int:
    checked = _load_checked(args.model)
    if args.horizon is None and args.max_steps is None and args.max_states is None:
        raise _Usage("explore needs --horizon, --max-steps or --max-states")
    bounds = ExploreBounds(horizon=args.horizon, max_steps=args.max_steps,
                           max_states=args.max_states)
    spec = _load_monitor(args.monitor, checked)
    try:
        result = explore(checked, _collect_env(args), bounds,
                         deadline_check=args.deadline_check, workers=args.workers)
    except ValueError as exc:
        raise _Usage(str(exc))
    terminals = result.terminals()
    print(f"explored states={len(result.nodes)} edges={len(result.edges)}"
          f" terminals={len(terminals)} truncated={result.truncated}",
          file=sys.stderr)
    if args.graph:
        _write_file(args.graph, result.to_json())
    if args.dot:
        _write_file(args.dot, result.to_dot())
    if spec is None:
        return EXIT_OK
    verdict = monitors.check_graph(result, spec)
    if args.json:
        doc = {"clauses": [
            {"clause": str(c.clause), "exists": c.exists_status, "forall": c.forall_status}
            for c in verdict.clauses
        ]}
        print(json.dumps(doc, indent=2))
    else:
        for c in verdict.clauses:
            print(str(c))
    if args.exit_on == "exists":
        return _verdict_exit([c.exists_status for c in verdict.clauses])
    return _verdict_exit([c.forall_status for c in verdict.clauses])


@dataclass
class SweepSpec:
    """A grid of env-variable candidate lists, the seeds to run per point,
    and the per-point schedule settings."""

    env_lists: list  # (name, [values]) in file order
    seeds: list
    horizon: Optional[int] = None
    max_steps: Optional[int] = None
    deadline_check: str = CHECK_LITERAL

    @property
    def names(self) -> list:
        return [name for name, _ in self.env_lists]

    def points(self) -> list:
        return list(itertools.product(*[values for _, values in self.env_lists]))


def parse_sweep_spec(text: str, path: str) -> SweepSpec:
    spec = SweepSpec(env_lists=[], seeds=[0])
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise _Usage(f"{path}:{lineno}: expected 'name: value'")
        name, _, value = line.partition(":")
        name, value = name.strip(), value.strip()
        if value.startswith("[") and value.endswith("]"):
            items = [v.strip() for v in value[1:-1].split(",") if v.strip()]
            values = [_parse_env_value(v) for v in items]
            if not values:
                raise _Usage(f"{path}:{lineno}: empty value list for {name!r}")
            if name == "seeds":
                spec.seeds = values
            else:
                spec.env_lists.append((name, values))
        elif name in ("horizon", "max_steps"):
            setattr(spec, name, int(value))
        elif name == "deadline_check":
            if value not in (CHECK_LITERAL, CHECK_EFFECTIVE):
                raise _Usage(f"{path}:{lineno}: unknown deadline_check {value!r}")
            spec.deadline_check = value
        elif name == "seeds":
            spec.seeds = list(range(int(value)))
        else:
            raise _Usage(f"{path}:{lineno}: scalar env values must be written as [v]")
    if not spec.env_lists:
        raise _Usage(f"{path}: sweep file declares no env variable lists")
    return spec


def cmd_sweep(args) -> int:
    checked = _load_checked(args.model)
    sweep = parse_sweep_spec(_read_text(args.sweep), args.sweep)
    horizon = sweep.horizon if sweep.horizon is not None else args.horizon
    max_steps = sweep.max_steps if sweep.max_steps is not None else args.max_steps
    if horizon is None and max_steps is None:
        raise _Usage("sweep needs horizon/max_steps in the spec file or flags")
    spec = _load_monitor(args.monitor, checked)

    names = sweep.names
    points = sweep.points()
    seeds = sweep.seeds
    total = len(points) * len(seeds)
    print(f"sweep: {len(points)} parameter point(s) x {len(seeds)} seed(s)"
          f" = {total} run(s)", file=sys.stderr)
    if total > args.cap and not args.force:
        print(f"refusing to run {total} > cap {args.cap} runs (use --force)",
              file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out)
    policy_proto = dict(deadline_check=sweep.deadline_check,
                        horizon=horizon, max_steps=max_steps)

    def one(job):
        index, point, seed = job
        bindings = dict(zip(names, point))
        policy = SchedulePolicy(tie_break=TIE_SEEDED, **policy_proto)
        trace = run(checked, bindings, seed, policy)
        verdict = monitors.check_trace(trace, spec) if spec else None
        rel = f"traces/point{index:04d}_seed{seed:04d}.jsonl"
        return index, point, seed, rel, trace, verdict

    jobs = [(i, point, seed) for i, point in enumerate(points) for seed in seeds]
    try:
        if args.workers > 1:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                rows = list(pool.map(one, jobs))
        else:
            rows = [one(job) for job in jobs]
    except ValueError as exc:
        raise _Usage(str(exc))
    rows.sort(key=lambda r: (r[0], r[2]))

    # One collector writes everything.
    try:
        (out_dir / "traces").mkdir(parents=True, exist_ok=True)
        for index, point, seed, rel, trace, verdict in rows:
            (out_dir / rel).write_text(trace.to_jsonl(), encoding="utf-8")
        clause_names = [str(c) for c in spec.clauses] if spec else []
        with (out_dir / "results.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["point", *names, "seed", "end_reason",
                             *clause_names, "trace"])
            for index, point, seed, rel, trace, verdict in rows:
                statuses = [c.status for c in verdict.clauses] if verdict else []
                writer.writerow([index, *point, seed, trace.end_reason, *statuses, rel])
        with (out_dir / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["point", *names, "seeds",
                             *[f"{c} [pass/fail/inconclusive]" for c in clause_names]])
            for index, point in enumerate(points):
                of_point = [r for r in rows if r[0] == index]
                cells = []
                for ci in range(len(clause_names)):
                    statuses = [r[5].clauses[ci].status for r in of_point]
                    cells.append(f"{statuses.count('pass')}/{statuses.count('fail')}"
                                 f"/{statuses.count('inconclusive')}")
                writer.writerow([index, *point, len(of_point), *cells])
    except OSError as exc:
        print(f"cannot write sweep output: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(rows)} run(s) under {out_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_emit(args) -> int:
    checked = _load_checked(args.model)
    try:
        program = erlgen.emit(checked)
    except erlgen.UnsupportedFeatureError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_UNSUPPORTED
    try:
        written = program.write_to(args.out)
    except OSError as exc:
        print(f"cannot write emitted sources: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument wiring


def _add_env_opts(p) -> None:
    p.add_argument("--env", action="append", metavar="NAME=VALUE",
                   help="bind an env variable (repeatable)")
    p.add_argument("--env-file", metavar="FILE",
                   help="file of NAME=VALUE lines binding env variables")


def build_parser() -> _Parser:
    parser = _Parser(prog="trebeca", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="parse and validate a model")
    p.add_argument("model")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("run", help="seeded simulation of a model")
    p.add_argument("model")
    _add_env_opts(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--deadline-check", choices=[CHECK_LITERAL, CHECK_EFFECTIVE],
                   default=CHECK_LITERAL)
    p.add_argument("--tie-break", choices=[TIE_SEEDED, TIE_FIXED], default=TIE_SEEDED)
    p.add_argument("--monitor", metavar="FILE")
    p.add_argument("--trace", metavar="FILE", help="write the JSONL trace here")
    p.add_argument("--json", action="store_true", help="print verdicts as JSON")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("explore", help="bounded exhaustive exploration")
    p.add_argument("model")
    _add_env_opts(p)
    p.add_argument("--horizon", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--max-states", type=int)
    p.add_argument("--deadline-check", choices=[CHECK_LITERAL, CHECK_EFFECTIVE],
                   default=CHECK_LITERAL)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--monitor", metavar="FILE")
    p.add_argument("--graph", metavar="FILE", help="write the graph as JSON")
    p.add_argument("--dot", metavar="FILE", help="write the graph as DOT")
    p.add_argument("--json", action="store_true", help="print verdicts as JSON")
    p.add_argument("--exit-on", choices=["forall", "exists"], default="forall",
                   help="which verdict drives the exit code")
    p.set_defaults(fn=cmd_explore)

    p = sub.add_parser("sweep", help="run a grid of env points and seeds")
    p.add_argument("model")
    p.add_argument("sweep", help="sweep spec file: 'name: [v1, v2]' lines")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--monitor", metavar="FILE")
    p.add_argument("--horizon", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--cap", type=int, default=1000,
                   help="refuse sweeps larger than this without --force")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("emit", help="translate a model to Erlang sources")
    p.add_argument("model")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(fn=cmd_emit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _Usage as exc:
        print(f"trebeca: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _Failed as exc:
        return exc.code


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
