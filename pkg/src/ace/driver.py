"""Backward sweep over stages, error accounting, simulation and importance refinement."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .envelope import Envelope, Hyperplane, atomic_write_text, envelope_path, terminal_envelope
from .model import Horizon, default_initial_simplex, validate_model
from .partition import (
    ALPHA_THRESHOLD,
    DEFAULT_BUDGET,
    InitVertexInfeasible,
    NoProgress,
    Section,
    SectionIndex,
    SectionOutsideDomain,
    ErrorSeekResult,
    max_potential_error,
    refine_stage,
    split_section,
)
from .stage import InfeasibleState, StageSolver

log = logging.getLogger(__name__)


class ModelValidationError(ValueError):
    def __init__(self, report):
        super().__init__(f"model failed validation:\n{report}")
        self.report = report


def accumulated_error_bound(relative_errors) -> list:
    """Suffix sums: ``out[t] = sum(rel[t:])``."""
    rel = np.asarray(relative_errors, dtype=float)
    if np.any(rel < 0) or np.any(np.isnan(rel)):
        raise ValueError("relative errors must be nonnegative")
    return np.cumsum(rel[::-1])[::-1].tolist()


@dataclass
class SolveReport:
    per_stage: list
    absolute_bounds: list
    wall_time: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["per_stage"], doc["absolute_bounds"], doc["wall_time"])

    def stage(self, t):
        return next(row for row in self.per_stage if row["t"] == t)

    def bound(self, t):
        """Absolute error bound of the stage-``t`` envelope (0 at the terminal stage)."""
        if t > len(self.absolute_bounds):
            return 0.0
        return self.absolute_bounds[t - 1]

    @property
    def budget_exceeded(self):
        return any(row["budget_exceeded"] for row in self.per_stage)


@dataclass
class HorizonSolution:
    envelopes: dict
    report: SolveReport
    sections: dict

    def __iter__(self):
        return iter((self.envelopes, self.report))


def solve_horizon(
    h: Horizon,
    tol: float,
    budget: int = DEFAULT_BUDGET,
    init_vertices: dict | None = None,
    out_dir=None,
) -> HorizonSolution:
    """Run the stage-by-stage partitioning from ``T-1`` down to 1.

    ``init_vertices`` optionally maps a stage to its own initial simplex.
    With ``out_dir`` set, envelopes, sections and ``report.json`` are written
    as stages complete.
    """
    rep = validate_model(h)
    if not rep.ok:
        raise ModelValidationError(rep)
    start = time.perf_counter()
    envelopes = {h.T: terminal_envelope(h)}
    sections = {}
    rows = {}
    for t in range(h.T - 1, 0, -1):
        sm = h.stage(t)
        if init_vertices and t in init_vertices:
            init = np.atleast_2d(np.asarray(init_vertices[t], dtype=float))
        else:
            init = default_initial_simplex(sm.domain).vertices
        try:
            env, srep, secs = refine_stage(sm, envelopes[t + 1], sm.domain, init, tol, budget)
        except InitVertexInfeasible:
            log.error("stage %d: initial vertex infeasible", t)
            raise
        envelopes[t] = env
        sections[t] = secs
        rows[t] = {
            "t": t,
            "relative_error": srep.max_error,
            "planes": srep.planes_added,
            "sections": srep.sections_kept,
            "budget_exceeded": srep.budget_exceeded,
        }
        log.info("stage %d: %d planes, %d sections, error %.4g", t, len(env), len(secs), srep.max_error)
        if out_dir is not None:
            save_stage(out_dir, env, secs)
    per_stage = [rows[t] for t in range(1, h.T)]
    report = SolveReport(
        per_stage=per_stage,
        absolute_bounds=accumulated_error_bound([r["relative_error"] for r in per_stage]),
        wall_time=time.perf_counter() - start,
    )
    if out_dir is not None:
        save_report(out_dir, report)
    return HorizonSolution(envelopes, report, sections)


# --- persistence -------------------------------------------------------------


def sections_path(directory, t) -> Path:
    return Path(directory) / f"sections_{t}.jsonl"


def save_stage(out_dir, env: Envelope, sections):
    env.save(envelope_path(out_dir, env.t))
    text = "".join(json.dumps(sec.to_dict()) + "\n" for sec in sorted(sections, key=lambda s: s.id))
    atomic_write_text(sections_path(out_dir, env.t), text)


def save_report(out_dir, report: SolveReport):
    atomic_write_text(Path(out_dir) / "report.json", json.dumps(report.to_dict(), indent=2) + "\n")


def load_envelopes(out_dir, h: Horizon) -> dict:
    envs = {h.T: terminal_envelope(h)}
    for t in range(1, h.T):
        envs[t] = Envelope.load(envelope_path(out_dir, t))
    return envs


def load_sections(out_dir, h: Horizon) -> dict:
    out = {}
    for t in range(1, h.T):
        with open(sections_path(out_dir, t)) as fh:
            out[t] = [Section.from_dict(json.loads(line)) for line in fh if line.strip()]
    return out


def load_report(out_dir) -> SolveReport:
    with open(Path(out_dir) / "report.json") as fh:
        return SolveReport.from_dict(json.load(fh))


# --- policy and simulation ---------------------------------------------------


class Policy:
    """Greedy policy read off the envelopes.

    Stage solvers are rebuilt automatically when the next-stage envelope
    gains planes.
    """

    def __init__(self, h: Horizon, envelopes: dict):
        self.h = h
        self.envelopes = envelopes
        self._solvers = {}

    def solver(self, t) -> StageSolver:
        s = self._solvers.get(t)
        env_next = self.envelopes[t + 1]
        if s is None or s.stale or s.env_next is not env_next:
            s = StageSolver(self.h.stage(t), env_next)
            self._solvers[t] = s
        return s

    def action(self, t, x):
        return self.solver(t).action(x) + 0.0

    def solve(self, t, x, check_domain=False):
        return self.solver(t).solve(x, check_domain=check_domain)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the whole simulation stream derives from ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def draw_scenario(rng: np.random.Generator, cumprobs: np.ndarray) -> int:
    """Inverse-CDF draw over scenario probabilities."""
    k = int(np.searchsorted(cumprobs, rng.random(), side="right"))
    return min(k, cumprobs.size - 1)


@dataclass
class SimulationResult:
    paths: np.ndarray
    actions: np.ndarray
    noises: np.ndarray
    stage_costs: np.ndarray
    costs: np.ndarray
    seed: int
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return ~np.isnan(self.costs)

    def summary(self):
        c = self.costs[self.ok]
        return {
            "n_paths": int(self.costs.size),
            "failed": int((~self.ok).sum()),
            "mean": float(c.mean()) if c.size else float("nan"),
            "std": float(c.std(ddof=1)) if c.size > 1 else 0.0,
        }


def _simulate_path(h, policy, x1, rng, cumprobs):
    T = h.T
    x = np.asarray(x1, dtype=float)
    xs, us, ws, cs = [x], [], [], []
    for t in range(1, T):
        sm = h.stage(t)
        k = draw_scenario(rng, cumprobs[t])
        w = sm.scenarios[k].w
        try:
            u = policy.action(t, x)
        except InfeasibleState as exc:
            return xs, us, ws, cs, (t, str(exc))
        cs.append(sm.stage_cost(x, u, w))
        x = sm.transition(x, u, w)
        us.append(u)
        ws.append(w)
        xs.append(x)
    return xs, us, ws, cs, None


def simulate_policy(h: Horizon, envelopes: dict, x1, n_paths: int, seed: int, policy: Policy | None = None):
    """Roll the greedy policy forward from ``x1`` along ``n_paths`` sampled paths.

    Noise for path ``i`` at stage ``t`` is the ``(i * (T - 1) + t)``-th draw of
    the seeded stream. Paths that hit an infeasible state are recorded in
    ``failures`` and carry NaN from that point.
    """
    policy = policy or Policy(h, envelopes)
    rng = make_rng(seed)
    T = h.T
    p = h.stage(1).p
    m = max(sm.m for sm in h.stages)
    q = max(sm.q for sm in h.stages)
    cumprobs = {t: np.cumsum(h.stage(t).probs) for t in range(1, T)}
    paths = np.full((n_paths, T, p), np.nan)
    actions = np.full((n_paths, T - 1, m), np.nan)
    noises = np.full((n_paths, T - 1, q), np.nan)
    stage_costs = np.full((n_paths, T - 1), np.nan)
    costs = np.full(n_paths, np.nan)
    failures = []
    term = envelopes[T]
    for i in range(n_paths):
        xs, us, ws, cs, fail = _simulate_path(h, policy, x1, rng, cumprobs)
        paths[i, : len(xs)] = xs
        if us:
            actions[i, : len(us)] = us
            noises[i, : len(ws)] = ws
            stage_costs[i, : len(cs)] = cs
        if fail is not None:
            failures.append((i, *fail))
            # keep the stream aligned with the path index
            for _ in range(T - len(xs) - 1):
                rng.random()
            continue
        costs[i] = float(np.sum(cs)) + term.eval(xs[-1])
    return SimulationResult(paths, actions, noises, stage_costs, costs, seed, failures)


# --- importance refinement ---------------------------------------------------


@dataclass
class RefinementLog:
    planes_added: dict
    events: list = field(default_factory=list)

    @property
    def total_added(self):
        return sum(self.planes_added.values())


def refine_by_importance(
    h: Horizon,
    envelopes: dict,
    sections: dict,
    x1,
    n_paths: int,
    tol: float,
    seed: int,
    policy: Policy | None = None,
):
    """Tighten envelopes where the current policy actually goes.

    For each simulated path, stages are visited from ``T-1`` down to 1. The
    section holding the visited state is checked and, when its maximum
    potential error exceeds ``tol``, a plane is added at the visited state
    and the section is split there. ``envelopes`` and ``sections`` are
    updated in place. A plane identical to one already stored is dropped,
    since the envelope would not change; the section is still split. Section
    errors are recomputed only after the stage's envelope has grown.
    """
    policy = policy or Policy(h, envelopes)
    rng = make_rng(seed)
    cumprobs = {t: np.cumsum(h.stage(t).probs) for t in range(1, h.T)}
    index = {t: SectionIndex(sections[t]) for t in range(1, h.T)}
    next_id = {t: max((s.id for s in sections[t]), default=-1) + 1 for t in range(1, h.T)}
    rlog = RefinementLog({t: 0 for t in range(1, h.T)})
    stamp = {}

    def ids(t):
        while True:
            next_id[t] += 1
            yield next_id[t] - 1

    for i in range(n_paths):
        xs, _, _, _, fail = _simulate_path(h, policy, x1, rng, cumprobs)
        if fail is not None:
            rlog.events.append((i, fail[0], "infeasible"))
            for _ in range(h.T - len(xs) - 1):
                rng.random()
        for t in range(min(len(xs), h.T - 1), 0, -1):
            x = xs[t - 1]
            sm = h.stage(t)
            env = envelopes[t]
            sec, alpha = index[t].locate(x)
            if sec is None:
                rlog.events.append((i, t, "outside"))
                continue
            if np.any(np.abs(alpha - 1.0) <= ALPHA_THRESHOLD):
                continue
            if stamp.get((t, sec.id)) != len(env):
                try:
                    sec.error = max_potential_error(sec, env, sm.domain).max_error
                except SectionOutsideDomain:
                    rlog.events.append((i, t, "outside"))
                    continue
                stamp[(t, sec.id)] = len(env)
            if sec.error <= tol:
                continue
            try:
                res = policy.solve(t, x)
                r = ErrorSeekResult(np.asarray(x, dtype=float), alpha, sec.error)
                children = split_section(sec, r, res.value, ids(t))
            except (NoProgress, InfeasibleState):
                rlog.events.append((i, t, "no-progress"))
                continue
            plane = Hyperplane(x, res.value, res.subgrad)
            if env.has_plane(plane):
                rlog.events.append((i, t, "duplicate"))
            else:
                env.add_plane(plane)
                rlog.planes_added[t] += 1
                rlog.events.append((i, t, "added"))
            sections[t][:] = [s for s in sections[t] if s is not sec] + children
            index[t].replace(sec, children)
    return envelopes, rlog
