"""Command-line front end: solve, simulate, refine, export and oracle."""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .driver import (
    ModelValidationError,
    load_envelopes,
    load_report,
    load_sections,
    refine_by_importance,
    save_stage,
    simulate_policy,
    solve_horizon,
)
from .envelope import MalformedEnvelopeFile, atomic_write_text
from .model import load_model
from .oracle import GridSpec, OracleInfeasible, OracleTooLarge, compare, grid_error_estimate, write_oracle_csv
from .partition import DEFAULT_BUDGET, InitVertexInfeasible

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_INIT_VERTEX = 4
EXIT_BUDGET = 5
EXIT_MISSING = 6

log = logging.getLogger("ace")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    command: str
    model: str
    tol: float
    budget: int
    out: Path
    seed: int
    paths: int
    grid_step: float | None
    action_step: float | None
    dump_paths: str | None
    x1: list | None
    stage: int | None
    lattice_lower: list | None
    lattice_upper: list | None

    def validate(self):
        if not self.tol > 0:
            raise CliError(EXIT_USAGE, "--tol must be positive")
        if self.budget < 1:
            raise CliError(EXIT_USAGE, "--budget must be at least 1")
        if self.paths < 1:
            raise CliError(EXIT_USAGE, "--paths must be at least 1")
        for name in ("grid_step", "action_step"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise CliError(EXIT_USAGE, f"--{name.replace('_', '-')} must be positive")


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ace", description="Adaptive convex envelopes for stochastic control.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tol=0.1):
        p.add_argument("--model", required=True, help="model JSON file or bundled model name")
        p.add_argument("--out", required=True, type=Path, help="run directory")
        p.add_argument("--tol", type=float, default=tol)
        p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--paths", type=int, default=1000)
        p.add_argument("--x1", type=_floats, default=None, help="initial state, comma-separated")

    p = sub.add_parser("solve", help="build envelopes for every stage")
    common(p)
    p = sub.add_parser("simulate", help="simulate the greedy policy")
    common(p)
    p.add_argument("--dump-paths", metavar="CSV", default=None)
    p = sub.add_parser("refine", help="refine envelopes along simulated paths")
    common(p)
    p = sub.add_parser("export", help="write envelope values on a grid as CSV")
    common(p)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--stage", type=int, default=None)
    p = sub.add_parser("oracle", help="grid dynamic programming and comparison")
    common(p)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--action-step", type=float, default=0.05)
    p.add_argument("--lattice-lower", type=_floats, default=None)
    p.add_argument("--lattice-upper", type=_floats, default=None)
    return parser


def parse_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(
        command=args.command,
        model=args.model,
        tol=args.tol,
        budget=args.budget,
        out=args.out,
        seed=args.seed,
        paths=args.paths,
        grid_step=getattr(args, "grid_step", None),
        action_step=getattr(args, "action_step", None),
        dump_paths=getattr(args, "dump_paths", None),
        x1=args.x1,
        stage=getattr(args, "stage", None),
        lattice_lower=getattr(args, "lattice_lower", None),
        lattice_upper=getattr(args, "lattice_upper", None),
    )
    cfg.validate()
    return cfg, args.verbose


def _load(cfg):
    try:
        return load_model(cfg.model)
    except FileNotFoundError as exc:
        raise CliError(EXIT_USAGE, f"model not found: {cfg.model}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_VALIDATION, f"invalid model file {cfg.model}: {exc}") from exc


def _artifacts(cfg, h, sections=False):
    try:
        envs = load_envelopes(cfg.out, h)
        secs = load_sections(cfg.out, h) if sections else None
    except FileNotFoundError as exc:
        raise CliError(EXIT_MISSING, f"missing run artifact: {exc.filename}") from exc
    except MalformedEnvelopeFile as exc:
        raise CliError(EXIT_MISSING, f"unreadable envelope: {exc}") from exc
    return envs, secs


def _x1(cfg, h):
    sm = h.stage(1)
    x1 = np.asarray(cfg.x1, dtype=float) if cfg.x1 is not None else sm.domain.lower.copy()
    if x1.size != sm.p:
        raise CliError(EXIT_USAGE, f"--x1 has {x1.size} entries, the model state has {sm.p}")
    return x1


def _fmt(v):
    return format(float(v), ".17g")


def cmd_solve(cfg, out=None) -> int:
    out = out or sys.stdout
    h = _load(cfg)
    try:
        sol = solve_horizon(h, cfg.tol, cfg.budget, out_dir=cfg.out)
    except ModelValidationError as exc:
        print("model validation failed:", file=out)
        for v in exc.report.violations:
            print(f"  [{v.code}] {v.message}", file=out)
        return EXIT_VALIDATION
    except InitVertexInfeasible as exc:
        print(str(exc), file=out)
        return EXIT_INIT_VERTEX
    rep = sol.report
    print(f"{'t':>4} {'planes':>7} {'sections':>9} {'rel_error':>12} {'abs_bound':>12}", file=out)
    for row, bound in zip(rep.per_stage, rep.absolute_bounds):
        print(
            f"{row['t']:>4} {row['planes']:>7} {row['sections']:>9} {row['relative_error']:>12.6g} {bound:>12.6g}",
            file=out,
        )
    print(f"wall time {rep.wall_time:.3f} s", file=out)
    if rep.budget_exceeded:
        print("Budget exceeded.", file=out)
        return EXIT_BUDGET
    return EXIT_OK


def paths_csv(sim) -> str:
    n, T, p = sim.paths.shape
    m, q = sim.actions.shape[2], sim.noises.shape[2]
    head = (
        ["path", "t"]
        + [f"x_{k + 1}" for k in range(p)]
        + [f"u_{k + 1}" for k in range(m)]
        + [f"w_{k + 1}" for k in range(q)]
        + ["stage_cost"]
    )
    buf = io.StringIO()
    buf.write(",".join(head) + "\n")
    for i in range(n):
        for t in range(T):
            if t < T - 1:
                rest = list(sim.actions[i, t]) + list(sim.noises[i, t]) + [sim.stage_costs[i, t]]
            else:
                rest = [np.nan] * (m + q + 1)
            row = [str(i), str(t + 1)] + [_fmt(v) for v in list(sim.paths[i, t]) + rest]
            buf.write(",".join(row) + "\n")
    return buf.getvalue()


def cmd_simulate(cfg, out=None) -> int:
    out = out or sys.stdout
    h = _load(cfg)
    envs, _ = _artifacts(cfg, h)
    sim = simulate_policy(h, envs, _x1(cfg, h), cfg.paths, cfg.seed)
    s = sim.summary()
    se = s["std"] / np.sqrt(max(s["n_paths"] - s["failed"], 1))
    print(f"paths {s['n_paths']} failed {s['failed']}", file=out)
    print(f"mean cost {s['mean']:.6f} std {s['std']:.6f} stderr {se:.6f}", file=out)
    print(f"envelope value at x1 {envs[1].eval(sim.paths[0, 0]):.6f}", file=out)
    if cfg.dump_paths:
        atomic_write_text(cfg.dump_paths, paths_csv(sim))
        print(f"paths written to {cfg.dump_paths}", file=out)
    return EXIT_OK


def cmd_refine(cfg, out=None) -> int:
    out = out or sys.stdout
    h = _load(cfg)
    envs, secs = _artifacts(cfg, h, sections=True)
    envs, rlog = refine_by_importance(h, envs, secs, _x1(cfg, h), cfg.paths, cfg.tol, cfg.seed)
    for t in range(1, h.T):
        save_stage(cfg.out, envs[t], secs[t])
        print(f"stage {t}: {rlog.planes_added[t]} planes added, {len(envs[t])} total", file=out)
    print(f"{rlog.total_added} planes added", file=out)
    return EXIT_OK


def export_csv(env, grid: GridSpec) -> str:
    X = grid.points()
    vals = env.eval_many(X)
    buf = io.StringIO()
    head = [f"x_{k + 1}" for k in range(X.shape[1])] + ["J"]
    buf.write(",".join(head) + "\n")
    for x, v in zip(X, vals):
        buf.write(",".join([_fmt(c) for c in x] + [_fmt(v)]) + "\n")
    return buf.getvalue()


def cmd_export(cfg, out=None) -> int:
    out = out or sys.stdout
    h = _load(cfg)
    if h.stage(1).p > 2:
        raise CliError(EXIT_USAGE, f"export supports at most 2 state dimensions, model has {h.stage(1).p}")
    envs, _ = _artifacts(cfg, h)
    stages = [cfg.stage] if cfg.stage is not None else list(range(1, h.T))
    for t in stages:
        if t not in envs or t == h.T:
            raise CliError(EXIT_USAGE, f"no stage {t} in this model")
        dom = h.stage(t).domain
        grid = GridSpec(tuple(dom.lower), tuple(dom.upper), (cfg.grid_step,) * dom.lower.size)
        path = cfg.out / f"export_J_{t}.csv"
        atomic_write_text(path, export_csv(envs[t], grid))
        print(f"stage {t}: {grid.size} rows to {path}", file=out)
    return EXIT_OK


def _bounded(v, name):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise CliError(EXIT_USAGE, f"{name} must be finite; pass an explicit lattice")
    return tuple(v)


def cmd_oracle(cfg, out=None) -> int:
    out = out or sys.stdout
    h = _load(cfg)
    sm = h.stage(1)
    if sm.p > 2:
        raise CliError(EXIT_USAGE, f"the grid oracle supports at most 2 state dimensions, model has {sm.p}")
    lo = cfg.lattice_lower if cfg.lattice_lower is not None else sm.domain.lower
    hi = cfg.lattice_upper if cfg.lattice_upper is not None else sm.domain.upper
    grid = GridSpec(_bounded(lo, "lattice lower"), _bounded(hi, "lattice upper"), (cfg.grid_step,) * sm.p)
    agrid = GridSpec(
        _bounded(sm.action_lower, "action lower bound"),
        _bounded(sm.action_upper, "action upper bound"),
        (cfg.action_step,) * sm.m,
    )
    box = (sm.domain.lower, sm.domain.upper)
    try:
        oracle, est = grid_error_estimate(h, grid, agrid, within=box)
    except OracleTooLarge as exc:
        raise CliError(EXIT_USAGE, f"oracle refused: {exc}") from exc
    except OracleInfeasible as exc:
        raise CliError(EXIT_VALIDATION, str(exc)) from exc
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_oracle_csv(cfg.out / "oracle.csv", oracle)
    doc = {"grid": grid.to_dict(), "action_grid": agrid.to_dict(), "grid_error": {str(t): e for t, e in est.items()}}
    try:
        envs, _ = _artifacts(cfg, h)
        report = load_report(cfg.out)
    except (CliError, FileNotFoundError):
        envs = None
    if envs is None:
        print(f"{'t':>4} {'grid_error':>12}", file=out)
        for t in range(1, h.T):
            print(f"{t:>4} {est[t]:>12.6g}", file=out)
        print("no envelopes found; oracle table written without comparison", file=out)
    else:
        cmp = compare(envs, oracle, stages=range(1, h.T), within=box)
        doc["comparison"] = cmp.table()
        print(f"{'t':>4} {'max_dev':>12} {'min_dev':>12} {'abs_bound':>12} {'grid_error':>12}", file=out)
        for t in range(1, h.T):
            c = cmp.per_stage[t]
            print(
                f"{t:>4} {c.max_deviation:>12.6g} {c.min_deviation:>12.6g} {report.bound(t):>12.6g} {est[t]:>12.6g}",
                file=out,
            )
    atomic_write_text(cfg.out / "oracle.json", json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "refine": cmd_refine,
    "export": cmd_export,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    try:
        cfg, verbose = parse_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[cfg.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def main_exit():
    sys.exit(main())
