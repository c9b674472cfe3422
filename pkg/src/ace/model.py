"""Problem class: finite-horizon convex stochastic DPs with linear dynamics.

Stage costs are sums of max-of-affine terms, constraints are linear, and the
transition is ``x' = A x + B u + w``. Every stage problem built from these
pieces is an LP, so value functions are convex by construction.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PROB_TOL = 1e-9


def _vec(v, length=None):
    arr = np.asarray([] if v is None else v, dtype=float).reshape(-1)
    if length is not None and arr.size == 0 and length > 0:
        arr = np.zeros(length)
    return arr


@dataclass(frozen=True, eq=False)
class AffinePiece:
    a: np.ndarray
    b: np.ndarray
    d: np.ndarray
    e: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", _vec(self.a))
        object.__setattr__(self, "b", _vec(self.b))
        object.__setattr__(self, "d", _vec(self.d))
        object.__setattr__(self, "e", float(self.e))

    def __call__(self, x, u, w):
        return float(self.a @ x + self.b @ u + self.d @ w + self.e)


@dataclass(frozen=True, eq=False)
class PwlTerm:
    """Max over affine pieces in ``(x, u, w)``."""

    pieces: tuple

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))

    def __call__(self, x, u, w):
        return max(piece(x, u, w) for piece in self.pieces)

    @property
    def noise_free(self):
        return all(not np.any(pc.d) for pc in self.pieces)


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """``gx @ x + gu @ u <= rhs``."""

    gx: np.ndarray
    gu: np.ndarray
    rhs: float

    def __post_init__(self):
        object.__setattr__(self, "gx", _vec(self.gx))
        object.__setattr__(self, "gu", _vec(self.gu))
        object.__setattr__(self, "rhs", float(self.rhs))


@dataclass(frozen=True, eq=False)
class Scenario:
    w: np.ndarray
    prob: float

    def __post_init__(self):
        object.__setattr__(self, "w", _vec(self.w))
        object.__setattr__(self, "prob", float(self.prob))


@dataclass(frozen=True, eq=False)
class StateDomain:
    """A box, optionally cut down by linear inequalities in ``x`` alone."""

    lower: np.ndarray
    upper: np.ndarray
    extra: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lower", _vec(self.lower))
        object.__setattr__(self, "upper", _vec(self.upper))
        object.__setattr__(self, "extra", tuple(self.extra))

    @property
    def p(self):
        return self.lower.size

    def contains(self, x, tol=1e-9):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        return all(c.gx @ x <= c.rhs + tol for c in self.extra)

    def box_corners(self):
        p = self.p
        grid = np.array(np.meshgrid(*[[0, 1]] * p, indexing="ij")).reshape(p, -1).T
        return self.lower + grid * (self.upper - self.lower)

    def extra_rows(self):
        """Extra constraints as ``(G, h)`` with ``G @ x <= h``."""
        if not self.extra:
            return np.zeros((0, self.p)), np.zeros(0)
        return (np.array([c.gx for c in self.extra]), np.array([c.rhs for c in self.extra]))


@dataclass(frozen=True, eq=False)
class StageModel:
    t: int
    p: int
    m: int
    q: int
    A: np.ndarray
    B: np.ndarray
    scenarios: tuple
    cost_terms: tuple
    domain: StateDomain
    constraints: tuple = ()
    action_lower: np.ndarray | None = None
    action_upper: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        B = np.asarray(self.B, dtype=float)
        if B.ndim < 2:
            B = B.reshape(self.p, -1) if B.size else np.zeros((self.p, self.m))
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "cost_terms", tuple(self.cost_terms))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        lo = np.full(self.m, -np.inf) if self.action_lower is None else _vec(self.action_lower)
        hi = np.full(self.m, np.inf) if self.action_upper is None else _vec(self.action_upper)
        object.__setattr__(self, "action_lower", lo)
        object.__setattr__(self, "action_upper", hi)

    @property
    def noise(self):
        """Scenario noise vectors as a ``(K, q)`` array."""
        return np.array([s.w for s in self.scenarios]).reshape(len(self.scenarios), self.q)

    @property
    def probs(self):
        return np.array([s.prob for s in self.scenarios])

    def transition(self, x, u, w):
        return self.A @ x + self.B @ u + w

    def stage_cost(self, x, u, w):
        return sum(term(x, u, w) for term in self.cost_terms)

    def action_feasible(self, x, u, tol=1e-9):
        if np.any(u < self.action_lower - tol) or np.any(u > self.action_upper + tol):
            return False
        return all(c.gx @ x + c.gu @ u <= c.rhs + tol for c in self.constraints)


@dataclass(frozen=True, eq=False)
class Horizon:
    """Stages ``t = 1 .. T-1`` plus a terminal cost.

    ``terminal`` is ``"zero"`` or a sequence of ``(base, value, grad)`` planes
    whose maximum is ``J_T``.
    """

    T: int
    stages: tuple
    terminal: object = "zero"

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    def stage(self, t):
        return self.stages[t - 1]

    @property
    def terminal_dim(self):
        return self.stages[-1].p if self.stages else 0


@dataclass
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, code, message):
        self.violations.append(Violation(code, message))

    def codes(self):
        return {v.code for v in self.violations}

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "\n".join(str(v) for v in self.violations) or "valid"


def _domain_feasible(dom: StateDomain) -> bool:
    from .lp import LpProblem, LpStatus, solve_lp

    G, h = dom.extra_rows()
    if G.shape[0] == 0:
        return True
    sol = solve_lp(LpProblem(np.zeros(dom.p), A_ub=G, b_ub=h, lower=dom.lower, upper=dom.upper))
    return sol.status is LpStatus.OPTIMAL


def _finite(*arrays):
    return all(np.all(np.isfinite(np.asarray(a, dtype=float))) for a in arrays)


def _validate_stage(sm: StageModel, rep: ValidationReport):
    tag = f"stage {sm.t}"
    p, m, q = sm.p, sm.m, sm.q
    if p < 1 or m < 0 or q < 0:
        rep.add("dimension", f"{tag}: need p >= 1, m >= 0, q >= 0")
        return
    if sm.A.shape != (p, p):
        rep.add("dimension", f"{tag}: A has shape {sm.A.shape}, expected {(p, p)}")
    if sm.B.shape != (p, m):
        rep.add("dimension", f"{tag}: B has shape {sm.B.shape}, expected {(p, m)}")
    if q != p:
        rep.add("dimension", f"{tag}: noise dimension q={q} must equal p={p} for x' = Ax + Bu + w")
    if not _finite(sm.A, sm.B):
        rep.add("non-finite", f"{tag}: A or B has non-finite entries")

    if not sm.scenarios:
        rep.add("scenarios", f"{tag}: no scenarios")
    for k, sc in enumerate(sm.scenarios):
        if sc.w.size != q:
            rep.add("dimension", f"{tag}: scenario {k} has w of length {sc.w.size}, expected {q}")
        if not _finite(sc.w, sc.prob):
            rep.add("non-finite", f"{tag}: scenario {k} not finite")
        if sc.prob < 0 or sc.prob > 1:
            rep.add("probability", f"{tag}: scenario {k} probability {sc.prob} outside [0, 1]")
    total = sum(sc.prob for sc in sm.scenarios)
    if sm.scenarios and abs(total - 1.0) > PROB_TOL:
        rep.add("probability-sum", f"{tag}: scenario probabilities sum to {total!r}")

    for i, term in enumerate(sm.cost_terms):
        if not term.pieces:
            rep.add("empty-term", f"{tag}: cost term {i} has no pieces")
        for j, pc in enumerate(term.pieces):
            if (pc.a.size, pc.b.size, pc.d.size) != (p, m, q):
                rep.add(
                    "dimension",
                    f"{tag}: cost term {i} piece {j} has sizes "
                    f"{(pc.a.size, pc.b.size, pc.d.size)}, expected {(p, m, q)}",
                )
            if not _finite(pc.a, pc.b, pc.d, pc.e):
                rep.add("non-finite", f"{tag}: cost term {i} piece {j} not finite")

    for i, c in enumerate(sm.constraints):
        if c.gx.size != p or c.gu.size != m:
            rep.add("dimension", f"{tag}: constraint {i} has sizes {(c.gx.size, c.gu.size)}")
        if not _finite(c.gx, c.gu, c.rhs):
            rep.add("non-finite", f"{tag}: constraint {i} not finite")

    lo, hi = sm.action_lower, sm.action_upper
    if lo.size != m or hi.size != m:
        rep.add("dimension", f"{tag}: action bounds must have length m={m}")
    else:
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            rep.add("non-finite", f"{tag}: action bounds contain NaN")
        if np.any(lo > hi):
            rep.add("action-bounds", f"{tag}: action_lower exceeds action_upper")
        for j in range(m):
            constrained = any(c.gu.size == m and c.gu[j] != 0 for c in sm.constraints)
            if np.isinf(lo[j]) and np.isinf(hi[j]) and not constrained:
                rep.add("unbounded-action", f"{tag}: action {j} has no bounds and no constraints")

    dom = sm.domain
    if dom.lower.size != p or dom.upper.size != p:
        rep.add("dimension", f"{tag}: domain bounds must have length p={p}")
        return
    if not _finite(dom.lower, dom.upper):
        rep.add("non-finite", f"{tag}: domain must be a bounded box")
        return
    if np.any(dom.lower > dom.upper):
        rep.add("empty-domain", f"{tag}: domain lower exceeds upper")
        return
    for i, c in enumerate(dom.extra):
        if c.gx.size != p or not _finite(c.gx, c.rhs):
            rep.add("dimension", f"{tag}: domain constraint {i} malformed")
            return
    if not _domain_feasible(dom):
        rep.add("empty-domain", f"{tag}: domain constraints are infeasible")


def validate_model(h: Horizon) -> ValidationReport:
    """Collect every structural violation. An empty report means valid."""
    rep = ValidationReport()
    if h.T < 2:
        rep.add("horizon", f"T={h.T}; need at least two stages")
    if len(h.stages) != h.T - 1:
        rep.add("horizon", f"expected {h.T - 1} stage models, got {len(h.stages)}")
    for i, sm in enumerate(h.stages, start=1):
        if sm.t != i:
            rep.add("horizon", f"stage at position {i} declares t={sm.t}")
        _validate_stage(sm, rep)
    for prev, nxt in zip(h.stages, h.stages[1:]):
        if nxt.p != prev.p:
            rep.add("chain", f"stage {nxt.t} has p={nxt.p} but stage {prev.t} transitions to p={prev.p}")
    if h.terminal != "zero":
        pT = h.terminal_dim
        try:
            planes = list(h.terminal)
        except TypeError:
            planes = None
        if not planes:
            rep.add("terminal", "terminal must be 'zero' or a nonempty list of planes")
        else:
            for j, (base, value, grad) in enumerate(planes):
                if np.size(base) != pT or np.size(grad) != pT:
                    rep.add("dimension", f"terminal plane {j} does not have dimension {pT}")
                elif not _finite(base, value, grad):
                    rep.add("non-finite", f"terminal plane {j} not finite")
    return rep


@dataclass
class InitialSimplex:
    """Vertices as rows. ``fixed`` lists coordinates flattened out of a degenerate box."""

    vertices: np.ndarray
    fixed: tuple = ()

    @property
    def dim(self):
        return self.vertices.shape[0] - 1


def default_initial_simplex(dom: StateDomain) -> InitialSimplex:
    """Corner simplex ``lower, lower + k (upper_i - lower_i) e_i`` covering the box.

    ``k`` is the number of non-degenerate coordinates. Coordinates with
    ``lower == upper`` are held fixed and reported in ``fixed``.
    """
    lo, hi = dom.lower, dom.upper
    if np.any(lo > hi):
        raise ValueError("empty domain box")
    free = np.flatnonzero(hi > lo)
    fixed = tuple(int(i) for i in np.flatnonzero(hi == lo))
    if fixed:
        warnings.warn(f"degenerate domain box; coordinates {fixed} fixed", stacklevel=2)
    k = free.size
    verts = np.tile(lo, (k + 1, 1))
    for row, i in enumerate(free, start=1):
        verts[row, i] = lo[i] + k * (hi[i] - lo[i])
    return InitialSimplex(verts, fixed)


def barycentric(vertices, x):
    """Barycentric coordinates of ``x`` in the simplex with the given rows.

    Works for k-simplices embedded in R^p (least squares on the affine hull).
    """
    V = np.asarray(vertices, dtype=float)
    x = np.asarray(x, dtype=float)
    E = (V[1:] - V[0]).T
    lam, *_ = np.linalg.lstsq(E, x - V[0], rcond=None)
    return np.concatenate([[1.0 - lam.sum()], lam])


# --- JSON model format -----------------------------------------------------


def _piece_from_dict(d):
    return AffinePiece(d["a"], d["b"], d.get("d", []), d.get("e", 0.0))


def _constraint_from_dict(d, m=0):
    return LinearConstraint(d["gx"], d.get("gu", np.zeros(m)), d["rhs"])


def _bound(v, m, fill):
    if v is None:
        return np.full(m, fill)
    return np.array([fill if b is None else b for b in v], dtype=float)


def stage_from_dict(d, t=None) -> StageModel:
    p, m = int(d["p"]), int(d["m"])
    q = int(d.get("q", p))
    scen = d["scenarios"]
    if scen and all("prob" not in s for s in scen):
        scen = [dict(s, prob=1.0 / len(scen)) for s in scen]
    dom = d["domain"]
    return StageModel(
        t=int(d["t"] if t is None else t),
        p=p,
        m=m,
        q=q,
        A=d["A"],
        B=d["B"],
        scenarios=[Scenario(s["w"], s["prob"]) for s in scen],
        cost_terms=[PwlTerm([_piece_from_dict(pc) for pc in term]) for term in d.get("cost_terms", [])],
        constraints=[_constraint_from_dict(c, m) for c in d.get("constraints", [])],
        action_lower=_bound(d.get("action_lower"), m, -np.inf),
        action_upper=_bound(d.get("action_upper"), m, np.inf),
        domain=StateDomain(
            dom["lower"],
            dom["upper"],
            [_constraint_from_dict(c) for c in dom.get("extra", [])],
        ),
    )


def model_from_dict(doc: dict) -> Horizon:
    T = int(doc["T"])
    if "stages" in doc:
        stages = [stage_from_dict(s) for s in doc["stages"]]
    elif "stationary" in doc:
        stages = [stage_from_dict(doc["stationary"], t=t) for t in range(1, T)]
    else:
        raise ValueError("model needs 'stages' or 'stationary'")
    term = doc.get("terminal", "zero")
    if term != "zero":
        term = tuple((pl["x"], pl["value"], pl["grad"]) for pl in term["planes"])
    return Horizon(T, stages, term)


def _num(v):
    v = float(v)
    return None if np.isinf(v) else v


def stage_to_dict(sm: StageModel) -> dict:
    return {
        "t": sm.t,
        "p": sm.p,
        "m": sm.m,
        "q": sm.q,
        "A": sm.A.tolist(),
        "B": sm.B.tolist(),
        "scenarios": [{"w": s.w.tolist(), "prob": s.prob} for s in sm.scenarios],
        "cost_terms": [
            [{"a": pc.a.tolist(), "b": pc.b.tolist(), "d": pc.d.tolist(), "e": pc.e} for pc in term.pieces]
            for term in sm.cost_terms
        ],
        "constraints": [{"gx": c.gx.tolist(), "gu": c.gu.tolist(), "rhs": c.rhs} for c in sm.constraints],
        "action_lower": [_num(v) for v in sm.action_lower],
        "action_upper": [_num(v) for v in sm.action_upper],
        "domain": {
            "lower": sm.domain.lower.tolist(),
            "upper": sm.domain.upper.tolist(),
            "extra": [{"gx": c.gx.tolist(), "rhs": c.rhs} for c in sm.domain.extra],
        },
    }


def model_to_dict(h: Horizon) -> dict:
    if h.terminal == "zero":
        term = "zero"
    else:
        term = {
            "planes": [
                {"x": list(np.atleast_1d(np.asarray(b, float))), "value": float(v), "grad": list(np.atleast_1d(np.asarray(g, float)))}
                for b, v, g in h.terminal
            ]
        }
    return {"T": h.T, "terminal": term, "stages": [stage_to_dict(s) for s in h.stages]}


BUNDLED_DIR = Path(__file__).parent / "models"


def bundled_models():
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.json"))


def load_model(path) -> Horizon:
    """Load a model JSON file. A bare bundled name (e.g. ``"inventory"``) also works."""
    path = Path(path)
    if not path.exists() and (BUNDLED_DIR / f"{path.name}.json").exists():
        path = BUNDLED_DIR / f"{path.name}.json"
    with open(path) as fh:
        return model_from_dict(json.load(fh))
