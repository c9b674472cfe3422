"""Brute-force grid dynamic programming for one- and two-dimensional models."""

from __future__ import annotations

import io
import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .envelope import atomic_write_text, terminal_envelope
from .model import Horizon

log = logging.getLogger(__name__)

MAX_CELLS = 10_000_000
_CHUNK = 4_000_000


class OracleTooLarge(ValueError):
    pass


class OracleInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned lattice given by per-axis ``lower``, ``upper`` and ``step``."""

    lower: tuple
    upper: tuple
    step: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        st = tuple(float(v) for v in np.atleast_1d(self.step))
        if len(st) == 1 and len(lo) > 1:
            st = st * len(lo)
        if not (len(lo) == len(hi) == len(st)):
            raise ValueError("lower, upper and step must have the same length")
        if any(s <= 0 or not np.isfinite(s) for s in st):
            raise ValueError("grid steps must be positive")
        if any(h < l for l, h in zip(lo, hi)):
            raise ValueError("grid upper bound below lower bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "step", st)

    @classmethod
    def uniform(cls, lower, upper, step):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), lower.shape)
        return cls(tuple(lower), tuple(upper), (float(step),) * lower.size)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def shape(self):
        return tuple(int(np.floor((h - l) / s + 1e-9)) + 1 for l, h, s in zip(self.lower, self.upper, self.step))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axes(self):
        return [l + s * np.arange(n) for l, s, n in zip(self.lower, self.step, self.shape)]

    def points(self):
        """Lattice points in C order, first axis slowest."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def coarsen(self):
        return GridSpec(self.lower, self.upper, tuple(2 * s for s in self.step))

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper), "step": list(self.step)}


def interpolate(grid: GridSpec, values: np.ndarray, X, extrapolate: str = "linear") -> np.ndarray:
    """Multilinear interpolation of lattice ``values`` at the rows of ``X``.

    Outside the box, ``"linear"`` extends the boundary cell and ``"clamp"``
    projects onto the box first.
    """
    X = np.asarray(X, dtype=float).reshape(-1, grid.dim)
    shape = grid.shape
    idx, frac = [], []
    for k in range(grid.dim):
        xk = X[:, k]
        if extrapolate == "clamp":
            xk = np.clip(xk, grid.lower[k], grid.lower[k] + grid.step[k] * (shape[k] - 1))
        pos = (xk - grid.lower[k]) / grid.step[k]
        if shape[k] == 1:
            idx.append(np.zeros(xk.shape, dtype=np.intp))
            frac.append(np.zeros_like(xk))
            continue
        i = np.clip(np.floor(pos).astype(np.intp), 0, shape[k] - 2)
        idx.append(i)
        frac.append(pos - i)
    out = np.zeros(X.shape[0])
    for corner in itertools.product((0, 1), repeat=grid.dim):
        w = np.ones(X.shape[0])
        ii = []
        for k, c in enumerate(corner):
            if shape[k] == 1:
                if c:
                    w = w * 0.0
                ii.append(idx[k])
                continue
            w = w * (frac[k] if c else 1.0 - frac[k])
            ii.append(idx[k] + c)
        out += w * values[tuple(ii)]
    return out


@dataclass
class GridValueFunction:
    t: int
    grid: GridSpec
    values: np.ndarray
    extrapolate: str = "linear"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def __call__(self, X):
        return interpolate(self.grid, self.values, X, self.extrapolate)

    def at(self, x) -> float:
        return float(self(np.atleast_2d(x))[0])

    def flat(self):
        return self.values.reshape(-1)


def _action_lattice(sm, action_grid: GridSpec):
    if action_grid.dim != sm.m:
        raise ValueError(f"action grid has dimension {action_grid.dim}, stage {sm.t} has {sm.m} actions")
    U = action_grid.points()
    lo, hi = sm.action_lower, sm.action_upper
    keep = np.all((U >= lo - 1e-9) & (U <= hi + 1e-9), axis=1)
    if not keep.any():
        raise OracleInfeasible(f"stage {sm.t}: action grid misses the action bounds")
    U = U[keep]
    if np.any(np.isfinite(lo) & (U.min(axis=0) > lo + 1e-9)) or np.any(np.isfinite(hi) & (U.max(axis=0) < hi - 1e-9)):
        log.warning("stage %d: action grid does not cover the action bounds", sm.t)
    return U


def _term_values(term, X, U, W):
    """``max_pieces a.x + b.u + d.w + e`` as an (nX, nU, K) array."""
    out = None
    for pc in term.pieces:
        v = (X @ pc.a)[:, None, None] + (U @ np.atleast_1d(pc.b))[None, :, None] + (W @ pc.d)[None, None, :] + pc.e
        out = v if out is None else np.maximum(out, v)
    return out


def _stage_table(sm, X, U, next_value, chunk=_CHUNK):
    """Best expected value over the action lattice for each state row of ``X``."""
    W, P = sm.noise, sm.probs
    K = W.shape[0]
    nU = U.shape[0]
    best = np.empty(X.shape[0])
    argbest = np.empty(X.shape[0], dtype=np.intp)
    Gx = np.array([c.gx for c in sm.constraints]).reshape(-1, sm.p)
    Gu = np.array([c.gu for c in sm.constraints]).reshape(-1, sm.m)
    rhs = np.array([c.rhs for c in sm.constraints])
    UB = U @ sm.B.T
    step = max(1, chunk // max(nU * K, 1))
    for s in range(0, X.shape[0], step):
        Xc = X[s : s + step]
        total = np.zeros((Xc.shape[0], nU, K))
        for term in sm.cost_terms:
            total += _term_values(term, Xc, U, W)
        nxt = (Xc @ sm.A.T)[:, None, None, :] + UB[None, :, None, :] + W[None, None, :, :]
        total += next_value(nxt.reshape(-1, sm.p)).reshape(total.shape)
        exp = total @ P
        if rhs.size:
            ok = np.all((Xc @ Gx.T)[:, None, :] + (U @ Gu.T)[None, :, :] <= rhs + 1e-9, axis=2)
            exp = np.where(ok, exp, np.inf)
        j = np.argmin(exp, axis=1)
        best[s : s + step] = exp[np.arange(Xc.shape[0]), j]
        argbest[s : s + step] = j
    return best, argbest


@dataclass
class OracleResult:
    """Value tables for stages ``1..T`` (stage ``T`` is the terminal on the lattice)."""

    functions: dict
    grid: GridSpec
    action_grid: GridSpec
    policies: dict

    def __getitem__(self, t):
        return self.functions[t]

    def action(self, t, x):
        """Lattice minimizer at the lattice point nearest ``x``."""
        g = self.grid
        pos = np.rint((np.asarray(x, dtype=float) - np.array(g.lower)) / np.array(g.step)).astype(int)
        pos = np.clip(pos, 0, np.array(g.shape) - 1)
        return self.policies[t][tuple(pos)]


def grid_dp(
    h: Horizon,
    grid: GridSpec,
    action_grid: GridSpec,
    extrapolate: str = "linear",
    max_cells: int = MAX_CELLS,
) -> OracleResult:
    """Exhaustive lattice DP.

    Each lattice state minimizes the exact scenario-weighted stage cost plus
    the next-stage table, read by multilinear interpolation. The terminal
    stage is evaluated exactly rather than from the lattice.
    """
    if extrapolate not in ("linear", "clamp"):
        raise ValueError("extrapolate must be 'linear' or 'clamp'")
    p = h.stage(1).p
    if p > 2:
        raise OracleTooLarge(f"grid oracle supports at most 2 state dimensions, model has {p}")
    if grid.dim != p:
        raise ValueError(f"state grid has dimension {grid.dim}, model has {p}")
    cells = grid.size * action_grid.size
    if cells > max_cells:
        raise OracleTooLarge(
            f"lattice has {grid.size} states x {action_grid.size} actions = {cells} cells (limit {max_cells})"
        )
    X = grid.points()
    term = terminal_envelope(h)
    functions = {h.T: GridValueFunction(h.T, grid, term.eval_many(X), extrapolate)}
    policies = {}
    next_value = term.eval_many
    for t in range(h.T - 1, 0, -1):
        sm = h.stage(t)
        U = _action_lattice(sm, action_grid)
        best, arg = _stage_table(sm, X, U, next_value)
        if not np.all(np.isfinite(best)):
            bad = X[~np.isfinite(best)][0]
            raise OracleInfeasible(f"stage {t}: no feasible lattice action at x={bad.tolist()}")
        functions[t] = GridValueFunction(t, grid, best, extrapolate)
        policies[t] = U[arg].reshape(grid.shape + (sm.m,))
        next_value = functions[t]
    return OracleResult(functions, grid, action_grid, policies)


def _box_mask(X, within):
    if within is None:
        return np.ones(X.shape[0], dtype=bool)
    lo, hi = (np.asarray(v, dtype=float) for v in within)
    return np.all((X >= lo - 1e-9) & (X <= hi + 1e-9), axis=1)


def grid_error_estimate(
    h: Horizon,
    grid: GridSpec,
    action_grid: GridSpec,
    fine: OracleResult | None = None,
    within=None,
    **kw,
):
    """Per-stage step-doubling estimate ``max |J_h - J_2h|`` on the coarse lattice.

    The doubled-step table is the coarser of the two, so the estimate is
    conservative for the fine one. Returns ``(fine_result, {t: estimate})``.
    """
    fine = fine or grid_dp(h, grid, action_grid, **kw)
    coarse = grid_dp(h, grid.coarsen(), action_grid.coarsen(), **kw)
    Xc = grid.coarsen().points()
    mask = _box_mask(Xc, within)
    est = {}
    for t in range(1, h.T):
        diff = np.abs(fine[t](Xc[mask]) - coarse[t].flat()[mask])
        est[t] = float(diff.max()) if diff.size else 0.0
    return fine, est


@dataclass
class StageComparison:
    t: int
    max_deviation: float
    min_deviation: float
    argmax: np.ndarray
    argmin: np.ndarray


@dataclass
class Comparison:
    per_stage: dict
    max_deviation: float
    argmax: tuple

    def table(self):
        return [
            {
                "t": c.t,
                "max_deviation": c.max_deviation,
                "min_deviation": c.min_deviation,
                "argmax": c.argmax.tolist(),
                "argmin": c.argmin.tolist(),
            }
            for c in sorted(self.per_stage.values(), key=lambda c: c.t)
        ]


def compare(envelopes: dict, oracle: OracleResult, stages=None, within=None) -> Comparison:
    """Signed deviation ``oracle - envelope`` over the lattice.

    Negative values mean the envelope sits above the oracle. ``within``
    optionally restricts the comparison to a ``(lower, upper)`` box.
    """
    X = oracle.grid.points()
    mask = _box_mask(X, within)
    X = X[mask]
    stages = sorted(stages if stages is not None else [t for t in envelopes if t in oracle.policies])
    per = {}
    for t in stages:
        dev = oracle[t].flat()[mask] - envelopes[t].eval_many(X)
        i, j = int(np.argmax(dev)), int(np.argmin(dev))
        per[t] = StageComparison(t, float(dev[i]), float(dev[j]), X[i].copy(), X[j].copy())
    if not per:
        return Comparison({}, 0.0, (None, None))
    worst = max(per.values(), key=lambda c: c.max_deviation)
    return Comparison(per, worst.max_deviation, (worst.t, worst.argmax))


def _fmt(v):
    return format(float(v), ".17g")


def oracle_csv(oracle: OracleResult, stages=None) -> str:
    """Columns ``x_1..x_p`` then ``J_<t>`` for each stage."""
    stages = sorted(stages if stages is not None else oracle.functions)
    X = oracle.grid.points()
    buf = io.StringIO()
    head = [f"x_{k + 1}" for k in range(X.shape[1])] + [f"J_{t}" for t in stages]
    buf.write(",".join(head) + "\n")
    cols = [oracle[t].flat() for t in stages]
    for r, x in enumerate(X):
        buf.write(",".join([_fmt(v) for v in x] + [_fmt(c[r]) for c in cols]) + "\n")
    return buf.getvalue()


def write_oracle_csv(path, oracle: OracleResult, stages=None):
    atomic_write_text(path, oracle_csv(oracle, stages))
