"""scikit-learn style front end: fit on Brownian increments, predict optimal strategies.

``X`` passed to :meth:`fit` holds Brownian increments of shape
``(n_paths, steps, m)`` on the uniform grid of ``horizon``; ``y`` optionally
holds the terminal liability per path (exponential utility only).
:meth:`predict` takes rows ``(t, w_1, ..., w_m)`` and returns the optimal
strategy in noise coordinates at those states.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .constraints import FullSpace, contains, project
from .drivers import EXPONENTIAL, LOGARITHMIC, UtilitySpec
from .errors import InvalidArgument
from .lsmc import RegressionBasis, solve_bsde_lsmc
from .market import MarketModel, PathEnsemble, induced_sets, market_price_of_risk, theta_path, uniform_grid
from .pipeline import LIABILITY_RULE
from .portfolio import expected_utility, optimal_strategy, value


class _UtilityMaximizer(BaseEstimator):
    """Shared fit/predict logic; subclasses supply the utility."""

    def _utility(self) -> UtilitySpec:
        raise NotImplementedError

    def _model(self, m):
        if self.market is not None:
            if self.market.m != m:
                raise InvalidArgument(f"market has m = {self.market.m} but X has {m} noise components")
            return self.market
        theta = np.broadcast_to(np.asarray(self.theta, dtype=float), (m,)).copy()
        # sigma = I, b = theta gives market price of risk theta
        return MarketModel(m, m, theta, np.eye(m), epsilon=0.5, K=2.0)

    def _ensemble(self, X):
        if isinstance(X, PathEnsemble):
            return X
        X = check_array(X, allow_nd=True, ensure_2d=False, dtype=float)
        if X.ndim == 2:
            X = X[:, :, None]
        if X.ndim != 3:
            raise InvalidArgument("X must hold increments of shape (n_paths, steps, m)")
        return PathEnsemble.from_increments(uniform_grid(self.horizon, X.shape[1]), X)

    def fit(self, X, y=None):
        ens = self._ensemble(X)
        utility = self._utility()
        if y is not None:
            y = check_array(y, ensure_2d=False, dtype=float)
            if y.shape != (ens.n_paths,):
                raise InvalidArgument("y must hold one terminal value per path")
            if utility.kind != EXPONENTIAL and np.any(y != 0):
                raise InvalidArgument(LIABILITY_RULE)
        model = self._model(ens.m)
        constraint = self.constraint if self.constraint is not None else FullSpace(model.d)
        sets = induced_sets(constraint, model, ens.grid)
        theta = theta_path(model, ens)
        basis = self.basis if isinstance(self.basis, RegressionBasis) else RegressionBasis.default_for(ens.m)
        sol = solve_bsde_lsmc(ens, y, utility, sets, theta, basis, getattr(self, "z_cap", None))
        self.utility_ = utility
        self.model_ = model
        self.sets_ = sets
        self.grid_ = ens.grid
        self.solution_ = sol
        self.strategy_ = optimal_strategy(utility, sol, theta, sets)
        self.y0_ = sol.y0
        self.n_features_in_ = ens.m
        return self

    def _set_at(self, i):
        return self.sets_ if not isinstance(self.sets_, list) else self.sets_[i]

    def predict(self, X):
        """Optimal strategy at states given as rows ``(t, w_1, ..., w_m)``."""
        check_is_fitted(self, "solution_")
        X = check_array(X, dtype=float)
        m = self.n_features_in_
        if X.shape[1] != m + 1:
            raise InvalidArgument(f"rows must be (t, w_1, ..., w_{m})")
        t, w = X[:, 0], X[:, 1:]
        if np.any(t < 0) or np.any(t >= self.grid_[-1]):
            raise InvalidArgument("t must lie in [0, T)")
        steps = np.searchsorted(self.grid_, t, side="right") - 1
        out = np.empty((len(X), m))
        util = self.utility_
        for i in np.unique(steps):
            rows = steps == i
            ti = self.grid_[i]
            theta = market_price_of_risk(self.model_, ti)
            if util.kind == LOGARITHMIC:
                z = np.zeros((rows.sum(), m))
            else:
                _, z = self.solution_.predict(int(i), w[rows], theta)
            out[rows] = project(util.strategy_target(z, theta), self._set_at(int(i)))
        return out

    def value(self, x):
        """Value function at initial wealth ``x``."""
        check_is_fitted(self, "solution_")
        return value(self.utility_, x, self.y0_)

    def score(self, X, y=None):
        """Mean realised utility of the fitted strategy on new increments (higher is better)."""
        check_is_fitted(self, "solution_")
        ens = self._ensemble(X)
        if ens.n_steps != len(self.grid_) - 1 or not np.allclose(ens.grid, self.grid_):
            raise InvalidArgument("score needs increments on the training grid")
        n, N, m = ens.dW.shape
        p = np.empty((n, N, m))
        for i in range(N):
            rows = np.column_stack([np.full(n, ens.grid[i]), ens.W[:, i]])
            p[:, i] = self.predict(rows)
        mean, _ = expected_utility(self.utility_, self.x0, p, ens, theta_path(self.model_, ens), y)
        return mean

    def feasible(self):
        """True when every fitted strategy value lies in its constraint set."""
        check_is_fitted(self, "strategy_")
        vals = self.strategy_.values
        return all(np.all(contains(vals[:, i], self._set_at(i))) for i in range(vals.shape[1]))


class ExponentialUtilityMaximizer(_UtilityMaximizer):
    def __init__(self, alpha=1.0, theta=0.0, market=None, constraint=None, horizon=1.0, basis=None, z_cap=None,
                 x0=0.0):
        self.alpha = alpha
        self.theta = theta
        self.market = market
        self.constraint = constraint
        self.horizon = horizon
        self.basis = basis
        self.z_cap = z_cap
        self.x0 = x0

    def _utility(self):
        return UtilitySpec.exponential(self.alpha)


class PowerUtilityMaximizer(_UtilityMaximizer):
    def __init__(self, gamma=0.5, theta=0.0, market=None, constraint=None, horizon=1.0, basis=None, z_cap=None,
                 x0=1.0):
        self.gamma = gamma
        self.theta = theta
        self.market = market
        self.constraint = constraint
        self.horizon = horizon
        self.basis = basis
        self.z_cap = z_cap
        self.x0 = x0

    def _utility(self):
        return UtilitySpec.power(self.gamma)


class LogUtilityMaximizer(_UtilityMaximizer):
    def __init__(self, theta=0.0, market=None, constraint=None, horizon=1.0, basis=None, x0=1.0):
        self.theta = theta
        self.market = market
        self.constraint = constraint
        self.horizon = horizon
        self.basis = basis
        self.x0 = x0

    def _utility(self):
        return UtilitySpec.log()
