"""Dense linear programming with exact multipliers.

Problems are stated as::

    minimize    c @ x
    subject to  A_eq @ x == b_eq
                A_ub @ x <= b_ub
                lower <= x <= upper

and the multipliers follow the Lagrangian

    L = c @ x - duals_eq @ (A_eq @ x - b_eq) + duals_ineq @ (A_ub @ x - b_ub)
        + duals_upper @ (x - upper) + duals_lower @ (lower - x)

so that the sensitivity of the optimal value to ``b_eq`` is ``duals_eq`` and
to ``b_ub`` is ``-duals_ineq``.

The solver works on the dual in standard form. Finite bounds and inequality
rows become nonnegative dual columns, equality multipliers are split into
positive parts, and a two-phase revised simplex runs on a basis whose size is
the number of primal variables. Row-heavy problems (many cuts, few variables)
therefore stay cheap. The primal point is read off the simplex multipliers of
the final basis.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg.blas import dger

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
GAP_TOL = 1e-6
_OPT_TOL = 1e-9
_REFACTOR_EVERY = 100


class LpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SolverStalled(RuntimeError):
    """Raised when the simplex exceeds its iteration cap.

    ``best`` holds the last primal iterate (possibly infeasible).
    """

    def __init__(self, message, best=None, iterations=0):
        super().__init__(message)
        self.best = best
        self.iterations = iterations


def _as_matrix(a, n):
    if a is None:
        return np.zeros((0, n))
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros((0, n))
    return np.atleast_2d(a)


def _as_vector(b, size, fill=0.0):
    if b is None:
        return np.full(size, fill, dtype=float)
    return np.asarray(b, dtype=float).reshape(-1)


@dataclass
class LpProblem:
    """A dense LP. Missing pieces default to empty constraint sets and free
    variables; ``offset`` is a constant added to the objective."""

    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_eq = _as_matrix(self.A_eq, n)
        self.b_eq = _as_vector(self.b_eq, self.A_eq.shape[0])
        self.A_ub = _as_matrix(self.A_ub, n)
        self.b_ub = _as_vector(self.b_ub, self.A_ub.shape[0])
        self.lower = _as_vector(self.lower, n, -np.inf)
        self.upper = _as_vector(self.upper, n, np.inf)
        self.validate()

    @property
    def n(self):
        return self.c.size

    def validate(self):
        n = self.n
        for name in ("A_eq", "A_ub"):
            a = getattr(self, name)
            if a.shape[1] != n:
                raise ValueError(f"{name} has {a.shape[1]} columns, expected {n}")
        if self.b_eq.size != self.A_eq.shape[0] or self.b_ub.size != self.A_ub.shape[0]:
            raise ValueError("right-hand side length does not match constraint rows")
        if self.lower.size != n or self.upper.size != n:
            raise ValueError("bound vectors must have length n")
        finite = [self.c, self.A_eq, self.b_eq, self.A_ub, self.b_ub]
        if not all(np.all(np.isfinite(a)) for a in finite):
            raise ValueError("LP data must be finite")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ValueError("bounds must not be NaN")
        if np.any(self.lower == np.inf) or np.any(self.upper == -np.inf):
            raise ValueError("lower bound +inf or upper bound -inf")


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None = None
    objective: float = np.nan
    duals_eq: np.ndarray | None = None
    duals_ineq: np.ndarray | None = None
    duals_lower: np.ndarray | None = None
    duals_upper: np.ndarray | None = None
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status is LpStatus.OPTIMAL


def dual_objective(prob: LpProblem, sol: LpSolution) -> float:
    """Lagrangian dual value of the multipliers in ``sol``."""
    val = prob.offset + prob.b_eq @ sol.duals_eq - prob.b_ub @ sol.duals_ineq
    fu = np.isfinite(prob.upper)
    fl = np.isfinite(prob.lower)
    val -= prob.upper[fu] @ sol.duals_upper[fu]
    val += prob.lower[fl] @ sol.duals_lower[fl]
    return float(val)


class _Simplex:
    """Revised primal simplex on ``min cost @ v, W @ v == r, v >= 0``.

    ``W`` is stored with an identity block appended for the artificial
    variables of phase one.
    """

    def __init__(self, data, r, max_iter, degenerate_limit):
        self.data = data
        self.nrow, self.ncol = data.nrow, data.ncol
        self.W, self.WT = data.W, data.WT
        self.r = r
        self.basis = np.arange(self.ncol, self.ncol + self.nrow)
        self.Binv = np.asfortranarray(np.eye(self.nrow))
        self.xB = self.r.copy()
        self.max_iter = max_iter
        self.degenerate_limit = degenerate_limit
        self.iterations = 0

    def column(self, j):
        W = self.W
        lo, hi = W.indptr[j], W.indptr[j + 1]
        return self.Binv[:, W.indices[lo:hi]] @ W.data[lo:hi]

    def basis_matrix(self):
        return self.W[:, self.basis].toarray()

    def _pivot_inverse(self, col, p):
        prow = self.Binv[p] / col[p]
        self.Binv = dger(-1.0, col, prow, a=self.Binv, overwrite_a=True)
        self.Binv[p] = prow

    def _refactor(self):
        B = self.basis_matrix()
        self.Binv = np.asfortranarray(np.linalg.inv(B))
        self.xB = self.Binv @ self.r

    def run(self, cost, allowed):
        """Iterate to optimality. Returns "optimal" or "unbounded"."""
        basis = self.basis
        bland = False
        degenerate = 0
        since_refactor = 0
        while True:
            if self.iterations >= self.max_iter:
                raise SolverStalled(
                    f"simplex exceeded {self.max_iter} iterations",
                    iterations=self.iterations,
                )
            pi = cost[basis] @ self.Binv
            d = cost - self.WT @ pi
            d[~allowed] = 0.0
            d[basis] = 0.0
            if bland:
                cand = np.flatnonzero(d < -_OPT_TOL)
                if cand.size == 0:
                    return "optimal"
                q = cand[0]
            else:
                q = int(np.argmin(d))
                if d[q] >= -_OPT_TOL:
                    return "optimal"
            col = self.column(q)
            rows = np.flatnonzero(col > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded"
            xb = np.maximum(self.xB[rows], 0.0)
            ratios = xb / col[rows]
            theta = ratios.min()
            ties = rows[ratios <= theta + 1e-12]
            if bland:
                p = ties[np.argmin(basis[ties])]
            else:
                p = ties[np.argmax(col[ties])]
            theta = max(self.xB[p], 0.0) / col[p]
            if theta <= 1e-12:
                degenerate += 1
                if degenerate > self.degenerate_limit:
                    bland = True
            else:
                degenerate = 0
            self.xB -= theta * col
            self.xB[p] = theta
            self._pivot_inverse(col, p)
            basis[p] = q
            self.iterations += 1
            since_refactor += 1
            if since_refactor >= _REFACTOR_EVERY:
                self._refactor()
                since_refactor = 0

    def drive_out_artificials(self):
        """Pivot zero-level artificials out of the basis where possible."""
        ncol = self.ncol
        for p in range(self.nrow):
            if self.basis[p] < ncol:
                continue
            row = self.WT[:ncol] @ self.Binv[p]
            row[self.basis[self.basis < ncol]] = 0.0
            if not row.size:
                continue
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) <= PIVOT_TOL:
                continue  # redundant row; artificial stays basic at zero
            col = self.column(j)
            theta = self.xB[p] / col[p]
            self.xB -= theta * col
            self.xB[p] = theta
            self._pivot_inverse(col, p)
            self.basis[p] = j
        self._refactor()


class _DualForm:
    """Standard-form dual of ``prob``.

    Columns in order: inequality rows, finite upper bounds, finite lower
    bounds, equality rows (+), equality rows (-).
    """

    def __init__(self, prob: LpProblem):
        n = prob.n
        self.n = n
        self.m_eq, self.m_ub = prob.A_eq.shape[0], prob.A_ub.shape[0]
        self.iu = np.flatnonzero(np.isfinite(prob.upper))
        self.il = np.flatnonzero(np.isfinite(prob.lower))
        eye = sparse.identity(n, format="csc")
        ET = sparse.csc_matrix(prob.A_eq.T)
        self.M = sparse.hstack(
            [sparse.csc_matrix(prob.A_ub.T), eye[:, self.iu], -eye[:, self.il], ET, -ET],
            format="csc",
        )
        self.ncol = self.M.shape[1]

    def cost(self, prob: LpProblem):
        return np.concatenate(
            [prob.b_ub, prob.upper[self.iu], -prob.lower[self.il], prob.b_eq, -prob.b_eq, np.zeros(self.n)]
        )


class BasisCache:
    """Optimal bases for a family of LPs that share their constraint matrices.

    Between calls only ``c``, ``b_eq``, ``b_ub`` and the values of finite
    bounds may change; ``A_eq`` and ``A_ub`` must be the same array objects.
    A cached basis is used only when it is both primal and dual feasible for
    the new data, so answers are exact optima, never approximations.
    """

    def __init__(self, maxsize=64):
        self.maxsize = maxsize
        self.entries = OrderedDict()
        self.hits = 0
        self.misses = 0
        self._key = None
        self._form = None
        self._simplex = None

    def _bind(self, prob, sign):
        key = (
            id(prob.A_eq),
            id(prob.A_ub),
            prob.n,
            tuple(np.isfinite(prob.lower)),
            tuple(np.isfinite(prob.upper)),
        )
        if key != self._key:
            self._key = key
            self._form = _DualForm(prob)
            self._simplex = None
            self.entries.clear()
        if self._simplex is None or not np.array_equal(self._simplex.sign, sign):
            self._simplex = _SimplexData(self._form.M, sign)
            self.entries.clear()
        return self._form, self._simplex

    def lookup(self, r, cost):
        data = self._simplex
        for basis, Binv in reversed(self.entries.items()):
            vB = Binv @ r
            if np.any(vB < -PIVOT_TOL):
                continue
            idx = np.asarray(basis)
            pi = cost[idx] @ Binv
            d = cost[: data.ncol] - data.WT[: data.ncol] @ pi
            if np.all(d >= -_OPT_TOL):
                self.entries.move_to_end(basis)
                self.hits += 1
                return idx, Binv
        self.misses += 1
        return None

    def store(self, basis, Binv):
        self.entries[tuple(int(b) for b in basis)] = Binv
        while len(self.entries) > self.maxsize:
            self.entries.popitem(last=False)


class _SimplexData:
    def __init__(self, M, sign):
        nrow, ncol = M.shape
        self.nrow, self.ncol = nrow, ncol
        self.sign = sign
        W = sparse.hstack([sparse.diags(sign) @ M, sparse.identity(nrow)])
        self.W = sparse.csc_matrix(W)
        self.WT = self.W.T.tocsr()


def solve_lp(prob: LpProblem, max_iter: int | None = None, cache: BasisCache | None = None) -> LpSolution:
    """Solve ``prob`` with the two-phase dual-form simplex.

    Raises SolverStalled when the iteration cap ``50 * (n + rows + 1)`` is hit.
    With ``cache`` set, previously optimal bases are tried first.
    """
    n = prob.n
    r = -prob.c
    sign = np.where(r < 0, -1.0, 1.0)
    if cache is not None:
        form, data = cache._bind(prob, sign)
    else:
        form = _DualForm(prob)
        data = _SimplexData(form.M, sign)
    cost = form.cost(prob)
    r = r * sign

    if cache is not None and cache.entries:
        found = cache.lookup(r, cost)
        if found is not None:
            return _extract(prob, form, data, found[0], found[1], r, cost, 0)

    rows = form.m_eq + form.m_ub
    if max_iter is None:
        max_iter = 50 * (n + rows + 1)
    spx = _Simplex(data, r, max_iter, 10 * (n + rows))
    ncol = form.ncol
    try:
        cost1 = np.concatenate([np.zeros(ncol), np.ones(n)])
        allowed = np.ones(ncol + n, dtype=bool)
        spx.run(cost1, allowed)
        infeas = float(np.sum(spx.xB[spx.basis >= ncol]))
        if infeas > FEAS_TOL * (1.0 + np.abs(prob.c).sum()):
            return _infeasible_dual(form, data, cost, max_iter, spx.degenerate_limit, spx.iterations)
        spx.drive_out_artificials()
        allowed[ncol:] = False
        outcome = spx.run(cost, allowed)
    except SolverStalled as exc:
        exc.best = _primal_from_basis(spx, cost)
        raise
    if outcome == "unbounded":
        # dual unbounded -> primal infeasible
        return LpSolution(LpStatus.INFEASIBLE, iterations=spx.iterations)
    spx._refactor()
    if cache is not None:
        cache.store(spx.basis, spx.Binv)
    return _extract(prob, form, data, spx.basis, spx.Binv, r, cost, spx.iterations)


def _primal_from_basis(spx, cost):
    try:
        pi = np.linalg.solve(spx.basis_matrix().T, cost[spx.basis])
    except np.linalg.LinAlgError:
        return None
    return pi * spx.data.sign


def _infeasible_dual(form, data, cost, max_iter, degenerate_limit, iterations):
    # Dual infeasible: primal is unbounded if feasible, else infeasible.
    # Primal feasibility <=> the homogeneous dual is bounded below.
    n, ncol = form.n, form.ncol
    spx = _Simplex(data, np.zeros(n), max_iter, degenerate_limit)
    spx.iterations = iterations
    spx.drive_out_artificials()
    allowed = np.ones(ncol + n, dtype=bool)
    allowed[ncol:] = False
    outcome = spx.run(cost, allowed)
    status = LpStatus.INFEASIBLE if outcome == "unbounded" else LpStatus.UNBOUNDED
    return LpSolution(status, iterations=spx.iterations)


def _extract(prob, form, data, basis, Binv, r, cost, iterations):
    n = form.n
    v = np.zeros(form.ncol + n)
    v[basis] = np.maximum(Binv @ r, 0.0)
    x = (cost[basis] @ Binv) * data.sign

    k = form.m_ub
    mu = v[:k]
    nu_u = np.zeros(n)
    nu_u[form.iu] = v[k : k + form.iu.size]
    k += form.iu.size
    nu_l = np.zeros(n)
    nu_l[form.il] = v[k : k + form.il.size]
    k += form.il.size
    m_eq = form.m_eq
    y = v[k + m_eq : k + 2 * m_eq] - v[k : k + m_eq]
    return LpSolution(
        LpStatus.OPTIMAL,
        x=x,
        objective=float(prob.c @ x) + prob.offset,
        duals_eq=y,
        duals_ineq=mu,
        duals_lower=nu_l,
        duals_upper=nu_u,
        iterations=iterations,
    )
