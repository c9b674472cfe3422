"""Estimator-style facade over the solver."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .driver import Policy, refine_by_importance, simulate_policy, solve_horizon
from .model import Horizon, load_model, model_from_dict
from .partition import DEFAULT_BUDGET


def _as_horizon(model) -> Horizon:
    if isinstance(model, Horizon):
        return model
    if isinstance(model, dict):
        return model_from_dict(model)
    return load_model(model)


class AdaptiveConvexEnvelope(BaseEstimator):
    """Convex lower envelopes of the cost-to-go of a linear stochastic control model.

    ``fit`` takes the model (a :class:`Horizon`, its dict form, a JSON path
    or a bundled model name) in place of training data. After fitting,
    ``predict`` evaluates the stage envelope at states and ``act`` returns
    the greedy actions.

    Parameters
    ----------
    tol : float
        Per-stage error tolerance certified on every section.
    budget : int
        Maximum number of sections per stage.
    seed : int
        Seed for simulation and importance refinement.
    n_paths : int
        Default number of simulated paths.
    """

    def __init__(self, tol=0.1, budget=DEFAULT_BUDGET, seed=0, n_paths=1000):
        self.tol = tol
        self.budget = budget
        self.seed = seed
        self.n_paths = n_paths

    def _check_params(self):
        if not (np.isscalar(self.tol) and self.tol > 0):
            raise ValueError(f"tol must be a positive number, got {self.tol!r}")
        if int(self.budget) != self.budget or self.budget < 1:
            raise ValueError(f"budget must be a positive integer, got {self.budget!r}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError(f"n_paths must be a positive integer, got {self.n_paths!r}")

    def fit(self, X, y=None):
        self._check_params()
        h = _as_horizon(X)
        sol = solve_horizon(h, float(self.tol), int(self.budget))
        self.model_ = h
        self.envelopes_ = sol.envelopes
        self.sections_ = sol.sections
        self.report_ = sol.report
        self.n_stages_ = h.T
        self.n_features_in_ = h.stage(1).p
        self._policy = Policy(h, self.envelopes_)
        return self

    def _states(self, X, stage):
        check_is_fitted(self, "envelopes_")
        if not 1 <= stage <= self.n_stages_:
            raise ValueError(f"stage must be in 1..{self.n_stages_}, got {stage}")
        X = check_array(X, ensure_2d=False, dtype=float)
        X = X.reshape(-1, self.n_features_in_) if X.ndim == 1 else X
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the model state has {self.n_features_in_}")
        return X

    def predict(self, X, stage=1):
        """Envelope values ``J_stage`` at the rows of ``X``."""
        X = self._states(X, stage)
        return self.envelopes_[stage].eval_many(X)

    def act(self, X, stage=1):
        """Greedy actions at the rows of ``X``, shape ``(n, m)``."""
        X = self._states(X, stage)
        if stage == self.n_stages_:
            raise ValueError("no action is taken at the terminal stage")
        return np.array([self._policy.action(stage, x) for x in X])

    def absolute_bound(self, stage=1):
        check_is_fitted(self, "report_")
        return self.report_.bound(stage)

    def simulate(self, x1, n_paths=None, seed=None):
        check_is_fitted(self, "envelopes_")
        x1 = self._states(x1, 1)[0]
        return simulate_policy(
            self.model_,
            self.envelopes_,
            x1,
            int(n_paths or self.n_paths),
            self.seed if seed is None else seed,
            policy=self._policy,
        )

    def refine(self, x1, n_paths=None, tol=None, seed=None):
        """Importance refinement along simulated paths from ``x1``; updates in place."""
        check_is_fitted(self, "envelopes_")
        x1 = self._states(x1, 1)[0]
        _, self.refinement_log_ = refine_by_importance(
            self.model_,
            self.envelopes_,
            self.sections_,
            x1,
            int(n_paths or self.n_paths),
            float(self.tol if tol is None else tol),
            self.seed if seed is None else seed,
            policy=self._policy,
        )
        return self
