import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ace.envelope import (
    EmptyEnvelope,
    Envelope,
    Hyperplane,
    MalformedEnvelopeFile,
    envelope_path,
    eval_envelope,
    terminal_envelope,
)
from ace.model import load_model


def tangent(a):
    return Hyperplane([a], a * a, [2 * a])


def test_single_plane():
    env = Envelope(1, 1, [Hyperplane([0.0], 1.0, [2.0])])
    assert env.eval([3.0]) == 7.0
    assert eval_envelope(env, [3.0]) == 7.0


def test_abs_value():
    env = Envelope(1, 1, [Hyperplane([0.0], 0.0, [-1.0]), Hyperplane([0.0], 0.0, [1.0])])
    assert env.eval([-2.0]) == 2.0


def test_tangents_of_square():
    env = Envelope(1, 1, [tangent(-0.3), tangent(0.1)])
    assert env.eval([-0.1]) == pytest.approx(-0.03)


def test_add_plane_raises_value():
    env = Envelope(1, 1, [tangent(-1.0), tangent(1.0)])
    assert env.eval([0.0]) == pytest.approx(-1.0)
    env.add_plane(tangent(0.0))
    assert env.eval([0.0]) == pytest.approx(0.0)


def test_add_duplicate_plane_changes_nothing():
    rng = np.random.default_rng(0)
    env = Envelope(1, 2, [Hyperplane(rng.standard_normal(2), 1.0, rng.standard_normal(2)) for _ in range(4)])
    X = rng.standard_normal((50, 2))
    before = env.eval_many(X)
    env.add_plane(env.planes[2])
    np.testing.assert_array_equal(env.eval_many(X), before)
    assert env.has_plane(env.planes[0])
    assert not env.has_plane(Hyperplane([0.0, 0.0], 123.0, [0.0, 0.0]))


def test_empty_envelope():
    with pytest.raises(EmptyEnvelope):
        Envelope(1, 1).eval([0.0])


def test_first_plane_defines_envelope():
    env = Envelope(1, 1)
    env.add_plane(Hyperplane([1.0], 2.0, [3.0]))
    for x in (-5.0, 0.0, 4.0):
        assert env.eval([x]) == pytest.approx(2.0 + 3.0 * (x - 1.0))


def test_dimension_checks():
    env = Envelope(1, 2)
    with pytest.raises(ValueError):
        env.add_plane(Hyperplane([0.0], 0.0, [1.0]))
    with pytest.raises(ValueError):
        Hyperplane([0.0, 1.0], 0.0, [1.0])
    with pytest.raises(ValueError):
        Hyperplane([0.0], np.inf, [1.0])


def test_round_trip_one_plane(tmp_path):
    env = Envelope(3, 1, [Hyperplane([0.1], 1 / 3, [np.pi])])
    path = env.save(envelope_path(tmp_path, 3))
    assert path.name == "J_3.jsonl"
    back = Envelope.load(path)
    assert back.t == 3 and back.p == 1
    np.testing.assert_array_equal(back.bases, env.bases)
    np.testing.assert_array_equal(back.values, env.values)
    np.testing.assert_array_equal(back.grads, env.grads)


def test_round_trip_500_planes_3d(tmp_path):
    rng = np.random.default_rng(1)
    env = Envelope(2, 3)
    for _ in range(500):
        env.add_plane(Hyperplane(rng.standard_normal(3), rng.standard_normal(), rng.standard_normal(3)))
    back = Envelope.load(env.save(tmp_path / "e.jsonl"))
    X = rng.standard_normal((100, 3))
    np.testing.assert_array_equal(back.eval_many(X), env.eval_many(X))


def test_malformed_files(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"t": 1, "p": 2, "planes": [{"x": [0.0, 0.0], "value": 0.0, "grad": [1.0]}]}) + "\n")
    with pytest.raises(MalformedEnvelopeFile):
        Envelope.load(bad)
    bad.write_text("{not json\n")
    with pytest.raises(MalformedEnvelopeFile):
        Envelope.load(bad)
    bad.write_text('{"t": 1}\n{"t": 2}\n')
    with pytest.raises(MalformedEnvelopeFile):
        Envelope.load(bad)


def test_terminal_envelopes(inventory, battery):
    z = terminal_envelope(inventory)
    assert len(z) == 1 and z.eval([7.0]) == 0.0
    b = terminal_envelope(battery)
    assert len(b) == 4
    assert b.eval([0.0, 0.0]) == 4.0
    assert b.eval([3.0, 0.0]) == pytest.approx(2.0 - 0.0)
    assert b.eval([3.0, 3.0]) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(1, 12))
def test_eval_is_max_and_monotone_in_planes(seed, p, n):
    rng = np.random.default_rng(seed)
    planes = [Hyperplane(rng.standard_normal(p), rng.standard_normal(), rng.standard_normal(p)) for _ in range(n)]
    env = Envelope(1, p)
    X = rng.standard_normal((20, p))
    prev = np.full(20, -np.inf)
    for h in planes:
        env.add_plane(h)
        cur = env.eval_many(X)
        assert np.all(cur >= prev)
        prev = cur
    direct = np.array([max(h(x) for h in planes) for x in X])
    np.testing.assert_allclose(prev, direct, rtol=0, atol=1e-12)
    for x in X[:5]:
        assert env.eval(x) == pytest.approx(direct[list(map(tuple, X)).index(tuple(x))], abs=1e-12)
        j = env.active_plane(x)
        assert planes[j](x) == pytest.approx(env.eval(x), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_midpoint_convexity(seed):
    rng = np.random.default_rng(seed)
    env = Envelope(1, 2, [Hyperplane(rng.standard_normal(2), rng.standard_normal(), rng.standard_normal(2)) for _ in range(6)])
    a, b = rng.standard_normal((2, 2))
    assert env.eval((a + b) / 2) <= (env.eval(a) + env.eval(b)) / 2 + 1e-12


def test_copy_is_independent():
    env = Envelope(1, 1, [tangent(0.0)])
    c = env.copy()
    c.add_plane(tangent(1.0))
    assert len(env) == 1 and len(c) == 2
