"""Stage Bellman LP with a dummy copy of the state.

At state ``x`` the stage problem is::

    min   sum_k P_k [ sum_tau z_{k,tau} + J_k ]
    s.t.  z_{k,tau} >= a.s + b.u + d.w_k + e      every piece of every term
          gx.s + gu.u <= rhs                      stage constraints
          J_k >= v_j + g_j.(A s + B u + w_k - x_j) every plane j, scenario k
          s == x
          action bounds on u

The value is the optimum and ``duals_eq`` of ``s == x`` is a subgradient of
the value in ``x``. Single-piece cost terms are affine and go straight into
the objective; multi-piece terms that ignore the noise share one epigraph
variable across scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envelope import EmptyEnvelope, Envelope
from .lp import BasisCache, LpProblem, LpStatus, solve_lp
from .model import StageModel


class InfeasibleState(RuntimeError):
    """No action is feasible at the requested state."""

    def __init__(self, t, x):
        super().__init__(f"stage {t}: no feasible action at x={np.asarray(x).tolist()}")
        self.t = t
        self.x = np.asarray(x, dtype=float)


class UnboundedStage(RuntimeError):
    """The stage LP is unbounded: the model is missing bounds or costs."""


class OutsideDomain(ValueError):
    pass


@dataclass
class StageSolveResult:
    value: float
    subgrad: np.ndarray
    action: np.ndarray


@dataclass(frozen=True)
class StageLayout:
    p: int
    m: int
    K: int
    n_z: int

    @property
    def n(self):
        return self.p + self.m + self.K + self.n_z

    @property
    def s(self):
        return slice(0, self.p)

    @property
    def u(self):
        return slice(self.p, self.p + self.m)

    @property
    def J(self):
        return slice(self.p + self.m, self.p + self.m + self.K)

    @property
    def z(self):
        return slice(self.p + self.m + self.K, self.n)


class StageSolver:
    """The stage LP for one ``(stage model, next envelope)`` pair.

    The constraint matrices are built once; only the right-hand side of
    ``s == x`` changes between solves, which lets a :class:`BasisCache`
    answer repeated solves in the same linearity region.
    """

    def __init__(self, sm: StageModel, env_next: Envelope, cache: bool = True):
        if not len(env_next):
            raise EmptyEnvelope(f"next-stage envelope for stage {sm.t} has no planes")
        if env_next.p != sm.p:
            raise ValueError(f"envelope dimension {env_next.p} does not match stage dimension {sm.p}")
        self.sm = sm
        self.env_next = env_next
        self.n_planes = len(env_next)
        self.cache = BasisCache() if cache else None
        self._build()

    @property
    def stale(self):
        return len(self.env_next) != self.n_planes

    def _build(self):
        sm, env = self.sm, self.env_next
        p, m = sm.p, sm.m
        W = sm.noise
        P = sm.probs
        K = W.shape[0]

        affine = [t for t in sm.cost_terms if len(t.pieces) == 1]
        epi = [t for t in sm.cost_terms if len(t.pieces) > 1]
        n_z = sum(1 if t.noise_free else K for t in epi)
        lay = StageLayout(p, m, K, n_z)
        n = lay.n

        c = np.zeros(n)
        offset = 0.0
        wbar = P @ W
        for term in affine:
            pc = term.pieces[0]
            c[lay.s] += pc.a
            c[lay.u] += pc.b
            offset += float(pc.d @ wbar + pc.e)
        c[lay.J] = P

        blocks, rhs = [], []
        zi = lay.z.start
        for term in epi:
            a = np.array([pc.a for pc in term.pieces])
            b = np.array([pc.b for pc in term.pieces]).reshape(len(term.pieces), m)
            d = np.array([pc.d for pc in term.pieces])
            e = np.array([pc.e for pc in term.pieces])
            npc = len(term.pieces)
            if term.noise_free:
                rows = np.zeros((npc, n))
                rows[:, lay.s] = a
                rows[:, lay.u] = b
                rows[:, zi] = -1.0
                blocks.append(rows)
                rhs.append(-e)
                c[zi] = 1.0
                zi += 1
            else:
                rows = np.zeros((K, npc, n))
                rows[:, :, lay.s] = a
                rows[:, :, lay.u] = b
                rows[np.arange(K), :, zi + np.arange(K)] = -1.0
                blocks.append(rows.reshape(K * npc, n))
                rhs.append((-(W @ d.T) - e).reshape(-1))
                c[zi : zi + K] = P
                zi += K

        if sm.constraints:
            G = np.zeros((len(sm.constraints), n))
            G[:, lay.s] = [con.gx for con in sm.constraints]
            G[:, lay.u] = np.array([con.gu for con in sm.constraints]).reshape(-1, m)
            blocks.append(G)
            rhs.append(np.array([con.rhs for con in sm.constraints]))

        grads, icpt = env.grads, env.intercepts
        N = grads.shape[0]
        rows = np.zeros((K, N, n))
        rows[:, :, lay.s] = grads @ sm.A
        rows[:, :, lay.u] = grads @ sm.B
        rows[np.arange(K), :, lay.J.start + np.arange(K)] = -1.0
        blocks.append(rows.reshape(K * N, n))
        rhs.append((-(icpt[None, :] + W @ grads.T)).reshape(-1))

        lower = np.full(n, -np.inf)
        upper = np.full(n, np.inf)
        lower[lay.u] = sm.action_lower
        upper[lay.u] = sm.action_upper

        A_eq = np.zeros((p, n))
        A_eq[:, lay.s] = np.eye(p)

        self.layout = lay
        self._c = c
        self._offset = offset
        self._A_ub = np.vstack(blocks)
        self._b_ub = np.concatenate(rhs)
        self._A_eq = A_eq
        self._lower = lower
        self._upper = upper

    def problem(self, x) -> LpProblem:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.sm.p:
            raise ValueError(f"state of length {x.size} for stage of dimension {self.sm.p}")
        return LpProblem(
            self._c, self._A_eq, x, self._A_ub, self._b_ub, self._lower, self._upper, offset=self._offset
        )

    def solve(self, x, check_domain: bool = True) -> StageSolveResult:
        x = np.asarray(x, dtype=float).reshape(-1)
        if check_domain:
            _check_in_box(self.sm, x)
        sol = solve_lp(self.problem(x), cache=self.cache)
        if sol.status is LpStatus.INFEASIBLE:
            raise InfeasibleState(self.sm.t, x)
        if sol.status is LpStatus.UNBOUNDED:
            raise UnboundedStage(f"stage {self.sm.t}: LP unbounded at x={x.tolist()}")
        lay = self.layout
        return StageSolveResult(
            value=sol.objective,
            subgrad=sol.duals_eq[: lay.p],
            action=sol.x[lay.u].copy(),
        )

    def action(self, x, check_domain: bool = False) -> np.ndarray:
        return self.solve(x, check_domain=check_domain).action


def _check_in_box(sm, x, tol=1e-9):
    dom = sm.domain
    if np.any(x < dom.lower - tol) or np.any(x > dom.upper + tol):
        raise OutsideDomain(f"stage {sm.t}: x={x.tolist()} outside the domain box")


def stage_layout(sm: StageModel) -> StageLayout:
    K = len(sm.scenarios)
    epi = [t for t in sm.cost_terms if len(t.pieces) > 1]
    return StageLayout(sm.p, sm.m, K, sum(1 if t.noise_free else K for t in epi))


def build_stage_lp(sm: StageModel, env_next: Envelope, x) -> LpProblem:
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_in_box(sm, x)
    return StageSolver(sm, env_next, cache=False).problem(x)


def solve_stage(sm: StageModel, env_next: Envelope, x) -> StageSolveResult:
    return StageSolver(sm, env_next, cache=False).solve(x)


def greedy_action(sm: StageModel, env_next: Envelope, x) -> np.ndarray:
    return StageSolver(sm, env_next, cache=False).solve(x).action
