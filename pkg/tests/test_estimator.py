import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ace.estimator import AdaptiveConvexEnvelope
from ace.model import model_to_dict

from conftest import affine_model, quadratic_toy


def test_params_round_trip():
    est = AdaptiveConvexEnvelope(tol=0.3, seed=4)
    assert est.get_params() == {"tol": 0.3, "budget": est.budget, "seed": 4, "n_paths": 1000}
    est.set_params(tol=0.2)
    assert est.tol == 0.2
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert c is not est


@pytest.mark.parametrize("kw", [{"tol": 0.0}, {"tol": -1}, {"budget": 0}, {"budget": 1.5}, {"n_paths": 0}])
def test_invalid_params_raise_on_fit(kw):
    with pytest.raises(ValueError):
        AdaptiveConvexEnvelope(**kw).fit(affine_model())


def test_not_fitted():
    est = AdaptiveConvexEnvelope()
    with pytest.raises(NotFittedError):
        est.predict([[0.0]])
    with pytest.raises(NotFittedError):
        est.absolute_bound()


@pytest.mark.parametrize("source", ["horizon", "dict", "path"])
def test_fit_sources(source, tmp_path):
    import json

    h = affine_model(T=3)
    if source == "dict":
        X = model_to_dict(h)
    elif source == "path":
        X = tmp_path / "m.json"
        X.write_text(json.dumps(model_to_dict(h)))
    else:
        X = h
    est = AdaptiveConvexEnvelope().fit(X)
    assert est.n_stages_ == 3
    assert est.n_features_in_ == 1
    np.testing.assert_allclose(est.predict([[0.0], [2.0]], stage=2), [2.0, 3.0])


def test_predict_and_act_shapes():
    est = AdaptiveConvexEnvelope(tol=0.01).fit(quadratic_toy(n_tangents=21))
    X = np.linspace(-1, 1, 7)
    assert est.predict(X).shape == (7,)
    assert est.act(X).shape == (7, 1)
    assert np.all(est.predict(X) <= X**2 + 1e-9)
    with pytest.raises(ValueError):
        est.predict(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        est.predict(X, stage=5)
    with pytest.raises(ValueError):
        est.act(X, stage=2)


def test_bound_simulate_refine(inventory):
    est = AdaptiveConvexEnvelope(tol=1.0, n_paths=40, seed=7).fit("inventory")
    assert 0.0 <= est.absolute_bound(1) <= 10.0
    sim = est.simulate([0.0])
    assert sim.costs.shape == (40,)
    n0 = sum(len(e) for e in est.envelopes_.values())
    assert est.refine([0.0], tol=0.1) is est
    n1 = sum(len(e) for e in est.envelopes_.values())
    assert n1 - n0 == est.refinement_log_.total_added > 0
