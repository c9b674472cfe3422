"""Error control and recursive simplex partitioning for one stage."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .envelope import Envelope, Hyperplane
from .lp import LpProblem, LpStatus, solve_lp
from .model import StageModel, StateDomain, barycentric
from .stage import InfeasibleState, StageSolver

log = logging.getLogger(__name__)

ALPHA_THRESHOLD = 1e-9
MIN_VOLUME = 1e-12
DEFAULT_BUDGET = 100_000


class SectionOutsideDomain(RuntimeError):
    pass


class NoProgress(RuntimeError):
    """The worst point coincides with a vertex of the section."""


class InitVertexInfeasible(RuntimeError):
    def __init__(self, t, vertex):
        super().__init__(f"stage {t}: initial vertex {np.asarray(vertex).tolist()} has no feasible action")
        self.t = t
        self.vertex = np.asarray(vertex, dtype=float)


@dataclass
class Section:
    """A simplex of states with the stage values at its vertices.

    ``error`` is the last computed maximum potential error. It can only go
    down as planes are added, so a stale value is still an upper bound.
    """

    vertices: np.ndarray
    values: np.ndarray
    id: int
    error: float | None = None
    stalled: bool = False

    def __post_init__(self):
        self.vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.vertices.shape[0]:
            raise ValueError("one value per vertex required")

    @property
    def dim(self):
        return self.vertices.shape[0] - 1

    def volume_factor(self):
        """``sqrt(det(E^T E))`` of the edge matrix; ``|det E|`` when full-dimensional."""
        E = (self.vertices[1:] - self.vertices[0]).T
        if E.shape[1] == 0:
            return 1.0
        return float(np.sqrt(max(np.linalg.det(E.T @ E), 0.0)))

    def barycentric(self, x):
        return barycentric(self.vertices, x)

    def contains(self, x, tol=1e-7):
        alpha = self.barycentric(x)
        recon = alpha @ self.vertices
        return bool(np.all(alpha >= -tol) and np.allclose(recon, x, atol=tol))

    def upper_bound(self, x):
        """Convexity upper bound: the chord through the vertex values."""
        return float(self.barycentric(x) @ self.values)

    def to_dict(self):
        return {
            "id": self.id,
            "vertices": self.vertices.tolist(),
            "values": self.values.tolist(),
            "error": self.error,
            "stalled": self.stalled,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["vertices"], doc["values"], int(doc["id"]), doc.get("error"), bool(doc.get("stalled", False)))


@dataclass
class ErrorSeekResult:
    worst_point: np.ndarray
    barycentric: np.ndarray
    max_error: float


def max_potential_error(sec: Section, env: Envelope, dom: StateDomain) -> ErrorSeekResult:
    """Largest gap between the vertex chord and the envelope over ``sec`` within ``dom``.

    Every plane of ``env`` bounds the envelope variable, not only the
    section's own, so planes from neighbouring sections tighten the bound.
    """
    V = sec.vertices
    nv, p = V.shape
    n = p + nv + 1
    xs, al, J = slice(0, p), slice(p, p + nv), p + nv

    c = np.zeros(n)
    c[al] = -sec.values
    c[J] = 1.0

    A_eq = np.zeros((p + 1, n))
    A_eq[:p, xs] = np.eye(p)
    A_eq[:p, al] = -V.T
    A_eq[p, al] = 1.0
    b_eq = np.zeros(p + 1)
    b_eq[p] = 1.0

    G, h = dom.extra_rows()
    N = len(env)
    A_ub = np.zeros((N + G.shape[0], n))
    A_ub[:N, xs] = env.grads
    A_ub[:N, J] = -1.0
    A_ub[N:, xs] = G
    b_ub = np.concatenate([-env.intercepts, h])

    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    lower[xs], upper[xs] = dom.lower, dom.upper
    lower[al] = 0.0

    sol = solve_lp(LpProblem(c, A_eq, b_eq, A_ub, b_ub, lower, upper))
    if sol.status is LpStatus.INFEASIBLE:
        raise SectionOutsideDomain(f"section {sec.id} does not meet the domain")
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"error seeker returned {sol.status} for section {sec.id}")
    return ErrorSeekResult(sol.x[xs].copy(), sol.x[al].copy(), -sol.objective)


def split_section(
    sec: Section,
    r: ErrorSeekResult,
    value_at_worst: float,
    ids=None,
    alpha_threshold: float = ALPHA_THRESHOLD,
) -> list[Section]:
    """Replace each vertex with positive weight by the worst point.

    Children whose weight is at or below ``alpha_threshold`` are degenerate
    and dropped; the others cover the parent.
    """
    alpha = np.asarray(r.barycentric, dtype=float)
    if np.any(np.abs(alpha - 1.0) <= alpha_threshold):
        raise NoProgress(f"worst point of section {sec.id} is one of its vertices")
    ids = ids if ids is not None else itertools.count()
    children = []
    for j in np.flatnonzero(alpha > alpha_threshold):
        verts = sec.vertices.copy()
        vals = sec.values.copy()
        verts[j] = r.worst_point
        vals[j] = value_at_worst
        child = Section(verts, vals, next(ids))
        if child.volume_factor() <= MIN_VOLUME:
            continue
        children.append(child)
    return children


@dataclass
class StageReport:
    t: int
    max_error: float
    sections_kept: int
    planes_added: int
    budget_exceeded: bool
    stalled_sections: int = 0
    passes: int = 0
    notes: list = field(default_factory=list)


def _covers_box(init, dom, tol=1e-9):
    return all(np.all(barycentric(init, c) >= -tol) for c in dom.box_corners())


def refine_stage(
    sm: StageModel,
    env_next: Envelope,
    dom: StateDomain,
    init,
    tol: float,
    budget: int = DEFAULT_BUDGET,
    solver: StageSolver | None = None,
):
    """Place supporting hyperplanes until every section is within ``tol``.

    Returns ``(env_t, report, sections)``. Sections are swept front to back;
    a split section is replaced in place by its children, which are first
    measured on the next sweep. Exceeding ``budget`` sections stops the stage
    with ``report.budget_exceeded`` set.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    init = np.atleast_2d(np.asarray(init, dtype=float))
    solver = solver or StageSolver(sm, env_next)
    env = Envelope(sm.t, sm.p)
    notes = []

    if not _covers_box(init, dom):
        msg = f"stage {sm.t}: initial simplex does not contain the whole domain box"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)

    values = []
    for v in init:
        try:
            res = solver.solve(v, check_domain=False)
        except InfeasibleState as exc:
            raise InitVertexInfeasible(sm.t, v) from exc
        env.add_plane(Hyperplane(v, res.value, res.subgrad))
        values.append(res.value)

    ids = itertools.count()
    sections = [Section(init, values, next(ids))]
    if sections[0].volume_factor() <= MIN_VOLUME:
        raise ValueError(f"stage {sm.t}: initial simplex is degenerate")

    budget_exceeded = False
    passes = 0
    current = np.inf
    while current > tol and not budget_exceeded:
        current = 0.0
        passes += 1
        i = 0
        while i < len(sections):
            sec = sections[i]
            if sec.stalled or (sec.error is not None and sec.error <= tol):
                i += 1
                continue
            try:
                r = max_potential_error(sec, env, dom)
            except SectionOutsideDomain:
                del sections[i]
                continue
            sec.error = r.max_error
            if r.max_error <= tol:
                i += 1
                continue
            current = max(current, r.max_error)
            nonzero = int(np.sum(r.barycentric > ALPHA_THRESHOLD))
            if len(sections) - 1 + nonzero > budget:
                budget_exceeded = True
                log.warning("Budget exceeded.")
                notes.append("Budget exceeded.")
                break
            try:
                res = solver.solve(r.worst_point, check_domain=False)
                children = split_section(sec, r, res.value, ids)
            except (NoProgress, InfeasibleState) as exc:
                msg = f"stage {sm.t}: section {sec.id} kept with error {r.max_error:.3g} ({exc})"
                warnings.warn(msg, stacklevel=2)
                notes.append(msg)
                sec.stalled = True
                i += 1
                continue
            env.add_plane(Hyperplane(r.worst_point, res.value, res.subgrad))
            sections[i : i + 1] = children
            i += len(children)

    for sec in sections:
        if sec.error is None:
            try:
                sec.error = max_potential_error(sec, env, dom).max_error
            except SectionOutsideDomain:
                sec.error = 0.0
    max_error = max((sec.error for sec in sections), default=0.0)
    report = StageReport(
        t=sm.t,
        max_error=max(float(max_error), 0.0),
        sections_kept=len(sections),
        planes_added=len(env),
        budget_exceeded=budget_exceeded,
        stalled_sections=sum(sec.stalled for sec in sections),
        passes=passes,
        notes=notes,
    )
    return env, report, sections


class SectionIndex:
    """Point location over a stage's sections (lowest id wins ties)."""

    def __init__(self, sections):
        self.sections = sorted(sections, key=lambda s: s.id)
        self._maps = None

    def _build(self):
        maps = []
        for sec in self.sections:
            V = sec.vertices
            M = np.vstack([V.T, np.ones(V.shape[0])])
            maps.append(np.linalg.pinv(M))
        self._maps = maps

    def locate(self, x, tol=1e-7):
        if self._maps is None:
            self._build()
        xh = np.append(np.asarray(x, dtype=float), 1.0)
        for sec, Minv in zip(self.sections, self._maps):
            alpha = Minv @ xh
            if np.all(alpha >= -tol) and np.allclose(alpha @ sec.vertices, xh[:-1], atol=tol):
                return sec, alpha
        return None, None

    def replace(self, old, children):
        self.sections = sorted([s for s in self.sections if s is not old] + list(children), key=lambda s: s.id)
        self._maps = None
