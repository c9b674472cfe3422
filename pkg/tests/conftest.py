import numpy as np
import pytest

from ace.model import (
    AffinePiece,
    Horizon,
    LinearConstraint,
    PwlTerm,
    Scenario,
    StageModel,
    StateDomain,
    load_model,
)

# acceptance criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def tangent_piece(a0, p=1, m=1, q=1):
    """Tangent of x**2 at ``a0`` in the first state coordinate."""
    a = np.zeros(p)
    a[0] = 2 * a0
    return AffinePiece(a, np.zeros(m), np.zeros(q), -a0 * a0)


def quadratic_toy(T=2, n_tangents=41, lo=-1.0, hi=1.0):
    """``J_1(x)`` is a fine max-of-tangents approximation of ``x**2``; the action does nothing."""
    pieces = [tangent_piece(a) for a in np.linspace(lo, hi, n_tangents)]
    stages = [
        StageModel(
            t=t,
            p=1,
            m=1,
            q=1,
            A=[[1.0]],
            B=[[0.0]],
            scenarios=[Scenario([0.0], 1.0)],
            cost_terms=[PwlTerm(pieces)] if t == 1 else [],
            domain=StateDomain([lo], [hi]),
            action_lower=[0.0],
            action_upper=[0.0],
        )
        for t in range(1, T)
    ]
    return Horizon(T, stages, "zero")


def zero_model(T=3, p=1):
    stages = [
        StageModel(
            t=t,
            p=p,
            m=1,
            q=p,
            A=np.eye(p),
            B=np.zeros((p, 1)),
            scenarios=[Scenario(np.zeros(p), 1.0)],
            cost_terms=[],
            domain=StateDomain(np.zeros(p), np.ones(p)),
            action_lower=[0.0],
            action_upper=[1.0],
        )
        for t in range(1, T)
    ]
    return Horizon(T, stages, "zero")


def affine_model(T=2):
    """Single affine cost, one scenario: the cost-to-go is affine."""
    stages = [
        StageModel(
            t=t,
            p=1,
            m=1,
            q=1,
            A=[[1.0]],
            B=[[1.0]],
            scenarios=[Scenario([0.0], 1.0)],
            cost_terms=[PwlTerm([AffinePiece([0.5], [1.0], [0.0], 2.0)])],
            domain=StateDomain([0.0], [4.0]),
            action_lower=[0.0],
            action_upper=[1.0],
        )
        for t in range(1, T)
    ]
    return Horizon(T, stages, "zero")


def random_model(rng, p=None, m=None, K=None, T=3):
    """A random valid model: box domain, bounded actions, max-of-affine costs, convex terminal."""
    p = p or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 4))
    K = K or int(rng.integers(1, 11))
    stages = []
    for t in range(1, T):
        A = np.eye(p) + 0.3 * rng.standard_normal((p, p))
        B = rng.standard_normal((p, m))
        probs = rng.dirichlet(np.ones(K))
        probs /= probs.sum()
        scen = [Scenario(0.3 * rng.standard_normal(p), pr) for pr in probs]
        terms = []
        for _ in range(int(rng.integers(1, 4))):
            n_pc = int(rng.integers(1, 5))
            terms.append(
                PwlTerm(
                    [
                        AffinePiece(
                            rng.standard_normal(p), rng.standard_normal(m), rng.standard_normal(p), rng.standard_normal()
                        )
                        for _ in range(n_pc)
                    ]
                )
            )
        cons = []
        if rng.random() < 0.5:
            cons.append(LinearConstraint(np.zeros(p), np.ones(m), 0.5 * m))
        stages.append(
            StageModel(
                t=t,
                p=p,
                m=m,
                q=p,
                A=A,
                B=B,
                scenarios=scen,
                cost_terms=terms,
                constraints=cons,
                domain=StateDomain(-np.ones(p), np.ones(p)),
                action_lower=-np.ones(m),
                action_upper=np.ones(m),
            )
        )
    term = tuple((np.zeros(p), abs(rng.standard_normal()), rng.standard_normal(p)) for _ in range(3))
    return Horizon(T, stages, term)


@pytest.fixture(scope="session")
def inventory():
    return load_model("inventory")


@pytest.fixture(scope="session")
def battery():
    return load_model("battery")


@pytest.fixture(scope="session")
def inventory_solution(inventory):
    from ace.driver import solve_horizon

    return solve_horizon(inventory, 0.1)


@pytest.fixture(scope="session")
def inventory_oracle(inventory):
    """Oracle on [0, 15] at step 0.05 with its step-doubling error estimate."""
    from ace.oracle import GridSpec, grid_error_estimate

    g = GridSpec.uniform([0.0], [15.0], 0.05)
    return grid_error_estimate(inventory, g, g)


def random_lp(rng, n=None, n_eq=None, n_ub=None):
    """A random LP that is feasible (a known interior-ish point) and bounded (a dual feasible point)."""
    from ace.lp import LpProblem

    n = n or int(rng.integers(1, 13))
    n_eq = int(rng.integers(0, max(1, n // 2) + 1)) if n_eq is None else n_eq
    n_ub = int(rng.integers(0, 2 * n + 1)) if n_ub is None else n_ub
    x0 = rng.uniform(-2, 2, n)
    lower = np.where(rng.random(n) < 0.7, x0 - rng.uniform(0, 3, n), -np.inf)
    upper = np.where(rng.random(n) < 0.7, x0 + rng.uniform(0, 3, n), np.inf)
    A_eq = rng.standard_normal((n_eq, n))
    if n_eq and rng.random() < 0.2:
        A_eq = np.vstack([A_eq, A_eq[:1] * 2.0])  # redundant row
    b_eq = A_eq @ x0
    A_ub = rng.standard_normal((n_ub, n))
    b_ub = A_ub @ x0 + rng.uniform(0, 1, n_ub) * (rng.random(n_ub) < 0.7)
    y = rng.uniform(0, 1, n_ub) * (rng.random(n_ub) < 0.6)
    lam = rng.standard_normal(A_eq.shape[0])
    nu_l = np.where(np.isfinite(lower), rng.uniform(0, 1, n), 0.0)
    nu_u = np.where(np.isfinite(upper), rng.uniform(0, 1, n), 0.0)
    c = -A_ub.T @ y - A_eq.T @ lam - nu_u + nu_l
    return LpProblem(c, A_eq, b_eq, A_ub, b_ub, lower, upper)


def lp_checks(prob, sol):
    """Return (gap, primal infeasibility, min inequality dual, max complementarity product)."""
    from ace.lp import dual_objective

    x = sol.x
    infeas = 0.0
    if prob.A_eq.shape[0]:
        infeas = max(infeas, float(np.max(np.abs(prob.A_eq @ x - prob.b_eq))))
    slack = np.zeros(0)
    if prob.A_ub.shape[0]:
        slack = prob.b_ub - prob.A_ub @ x
        infeas = max(infeas, float(np.max(-slack)))
    infeas = max(infeas, float(np.max(np.maximum(prob.lower - x, 0.0), initial=0.0)))
    infeas = max(infeas, float(np.max(np.maximum(x - prob.upper, 0.0), initial=0.0)))
    gap = abs(sol.objective - dual_objective(prob, sol))
    min_dual = float(np.min(sol.duals_ineq, initial=0.0))
    comp = float(np.max(np.abs(sol.duals_ineq * slack), initial=0.0))
    return gap, infeas, min_dual, comp


def random_integer_lp(rng):
    """Feasible bounded LP with integer data in [-9, 9], up to 20 variables and 40 constraints."""
    from ace.lp import LpProblem

    n = int(rng.integers(1, 21))
    n_eq = int(rng.integers(0, min(n, 10) + 1))
    n_ub = int(rng.integers(0, 40 - n_eq + 1))
    x0 = rng.integers(-3, 4, n).astype(float)
    lower = np.where(rng.random(n) < 0.7, x0 - rng.integers(0, 4, n), -np.inf)
    upper = np.where(rng.random(n) < 0.7, x0 + rng.integers(0, 4, n), np.inf)
    A_eq = rng.integers(-9, 10, (n_eq, n)).astype(float)
    A_ub = rng.integers(-9, 10, (n_ub, n)).astype(float)
    b_eq = A_eq @ x0
    b_ub = A_ub @ x0 + rng.integers(0, 4, n_ub)
    # an integer dual feasible point keeps the LP bounded
    y = rng.integers(0, 3, n_ub) * (rng.random(n_ub) < 0.6)
    lam = rng.integers(-3, 4, n_eq)
    nu_l = np.where(np.isfinite(lower), rng.integers(0, 3, n), 0)
    nu_u = np.where(np.isfinite(upper), rng.integers(0, 3, n), 0)
    c = np.clip(-A_ub.T @ y - A_eq.T @ lam - nu_u + nu_l, -9, 9)
    # clipping can break dual feasibility, so close the box on the affected variables
    fix = c != (-A_ub.T @ y - A_eq.T @ lam - nu_u + nu_l)
    lower = np.where(fix & ~np.isfinite(lower), x0 - 5, lower)
    upper = np.where(fix & ~np.isfinite(upper), x0 + 5, upper)
    return LpProblem(c, A_eq, b_eq, A_ub, b_ub, lower, upper)
