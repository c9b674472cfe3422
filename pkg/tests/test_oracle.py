import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ace.envelope import Envelope, Hyperplane
from ace.model import Horizon
from ace.oracle import (
    GridSpec,
    OracleTooLarge,
    compare,
    grid_dp,
    interpolate,
    oracle_csv,
)

from conftest import affine_model, random_model, zero_model


def test_grid_spec_shape_and_points():
    g = GridSpec.uniform([0.0, -1.0], [1.0, 1.0], 0.5)
    assert g.shape == (3, 5)
    P = g.points()
    assert P.shape == (15, 2)
    np.testing.assert_array_equal(P[0], [0.0, -1.0])
    np.testing.assert_array_equal(P[1], [0.0, -0.5])
    with pytest.raises(ValueError):
        GridSpec((0.0,), (1.0,), (0.0,))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 2))
def test_interpolation_exact_on_affine(seed, p):
    rng = np.random.default_rng(seed)
    g = GridSpec.uniform(-np.ones(p), np.ones(p), 0.25)
    a, b = rng.standard_normal(p), rng.standard_normal()
    vals = (g.points() @ a + b).reshape(g.shape)
    X = rng.uniform(-3, 3, (20, p))
    np.testing.assert_allclose(interpolate(g, vals, X, "linear"), X @ a + b, atol=1e-10)
    clamped = interpolate(g, vals, X, "clamp")
    np.testing.assert_allclose(clamped, np.clip(X, -1, 1) @ a + b, atol=1e-10)


def test_zero_model_all_zero():
    h = zero_model(T=3)
    g = GridSpec.uniform([0.0], [1.0], 0.1)
    res = grid_dp(h, g, GridSpec.uniform([0.0], [1.0], 0.5))
    for t in (1, 2, 3):
        assert np.all(res[t].flat() == 0.0)


def last_stage_only(h):
    """Two-stage horizon holding only the final decision stage of ``h``."""
    sm = h.stage(h.T - 1)
    return Horizon(2, [sm.__class__(**{**sm.__dict__, "t": 1})], h.terminal)


def test_inventory_last_stage_values(inventory):
    g = GridSpec.uniform([0.0], [15.0], 0.05)
    res = grid_dp(last_stage_only(inventory), g, g)
    # E[0.2 (12 - D)] with the sample mean 4.95
    assert res[1].at([12.0]) == pytest.approx(1.41, abs=1e-9)
    assert res.action(1, [0.0])[0] == pytest.approx(4.7, abs=1e-9)


def test_refuses_large_and_high_dimensional():
    h = zero_model(T=2)
    with pytest.raises(OracleTooLarge):
        grid_dp(h, GridSpec.uniform([0.0], [1.0], 1e-4), GridSpec.uniform([0.0], [1.0], 1e-3))
    h3 = random_model(np.random.default_rng(0), p=3, T=2)
    with pytest.raises(OracleTooLarge):
        grid_dp(h3, GridSpec.uniform(-np.ones(3), np.ones(3), 0.5), GridSpec.uniform(-np.ones(h3.stage(1).m), np.ones(h3.stage(1).m), 0.5))


def test_compare_affine_is_zero():
    h = affine_model(T=2)
    g = GridSpec.uniform([0.0], [4.0], 0.5)
    res = grid_dp(h, g, GridSpec.uniform([0.0], [1.0], 0.5))
    # J_1(x) = 0.5 x + 2 with u = 0 optimal
    env = Envelope(1, 1, [Hyperplane([0.0], 2.0, [0.5])])
    cmp = compare({1: env}, res, stages=[1])
    assert abs(cmp.max_deviation) <= 1e-12
    assert abs(cmp.per_stage[1].min_deviation) <= 1e-12


def test_inventory_last_stage_deviation(inventory_solution, inventory_oracle):
    oracle, est = inventory_oracle
    c = compare(inventory_solution.envelopes, oracle, stages=[10]).per_stage[10]
    assert -est[10] - 1e-6 <= c.min_deviation
    assert c.max_deviation <= 0.1 + est[10]


def test_dropping_last_plane_loosens(inventory_solution, inventory_oracle):
    oracle, _ = inventory_oracle
    env = inventory_solution.envelopes[10]
    cut = Envelope(env.t, env.p, env.planes[:-1])
    full = compare({10: env}, oracle, stages=[10]).max_deviation
    loose = compare({10: cut}, oracle, stages=[10]).max_deviation
    assert loose > full


def test_grid_refinement_converges(battery):
    """Halving the steps changes values by less than twice the previous change."""
    h = last_stage_only(battery)
    box = ([0.0, 0.0], [4.0, 4.0])
    diffs = []
    prev = None
    for step in (0.4, 0.2, 0.1):
        g = GridSpec.uniform([-2.0, -2.0], [6.0, 6.0], step)
        a = GridSpec.uniform([0.0, 0.0], [2.4, 2.4], step)
        res = grid_dp(h, g, a)
        X = GridSpec.uniform(*box, 0.4).points()
        cur = res[1](X)
        if prev is not None:
            diffs.append(np.max(np.abs(cur - prev)))
        prev = cur
    assert diffs[1] <= 2 * diffs[0] + 1e-12


def test_csv_format():
    h = zero_model(T=3)
    res = grid_dp(h, GridSpec.uniform([0.0], [1.0], 0.5), GridSpec.uniform([0.0], [1.0], 0.5))
    text = oracle_csv(res)
    lines = text.splitlines()
    assert lines[0] == "x_1,J_1,J_2,J_3"
    assert lines[2] == "0.5,0,0,0"
    assert len(lines) == 4


def test_error_estimate_inventory(inventory_oracle):
    _, est = inventory_oracle
    assert set(est) == set(range(1, 11))
    # kinks sit on the 0.1 lattice, so both lattices resolve them
    assert max(est.values()) < 1e-6
