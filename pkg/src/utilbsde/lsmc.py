"""Backward regression Monte Carlo for the utility BSDEs and BMO estimates."""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from .constraints import InducedSet
from .drivers import LOGARITHMIC, Liability, UtilitySpec, clamp_z, default_z_cap, driver_log, growth_constants
from .errors import BasisDegeneracy, InvalidArgument
from .market import PathEnsemble

CLAMP_WARN_FRACTION = 0.01
SPARSE_CELL = 10


@dataclass(frozen=True)
class RegressionBasis:
    """Regressors for conditional expectations given ``W_t``.

    ``polynomial``: monomials of total degree <= ``degree`` in ``W_t / sqrt(t)``.
    ``bins``: indicator functions of ``bins`` equal cells per axis on
    ``W_t / sqrt(t)`` clipped to [-4, 4].
    """

    kind: str = "polynomial"
    degree: int = 2
    bins: int = 16

    def __post_init__(self):
        if self.kind not in ("polynomial", "bins"):
            raise InvalidArgument(f"unknown basis kind {self.kind!r}")
        if self.degree < 0 or self.bins < 1:
            raise InvalidArgument("basis degree must be >= 0 and bins >= 1")

    @classmethod
    def default_for(cls, m):
        # Global polynomials extrapolate Z badly in the tails, which the
        # quadratic driver amplifies; local bins stay bounded.
        return cls("bins", bins={1: 60, 2: 12}.get(m, 6))

    def fitter(self, w, t):
        u = _scaled(w, t)
        if self.kind == "polynomial":
            return _PolyFitter(u, self.degree)
        return _BinFitter(u, self.bins)


def _scaled(w, t):
    w = np.asarray(w, dtype=float)
    w = w.reshape(-1, 1) if w.ndim == 1 else w
    return w / np.sqrt(t) if t > 0 else w


def _exponents(m, degree):
    return [e for total in range(degree + 1)
            for e in itertools.product(range(total + 1), repeat=m) if sum(e) == total]


def _poly_features(u, exps):
    cols = [np.prod(u ** np.asarray(e)[None, :], axis=1) for e in exps]
    return np.stack(cols, axis=1)


class _PolyFitter:
    """Least squares on a fixed design; drops degree until the design has full column rank."""

    def __init__(self, u, degree):
        n, m = u.shape
        for deg in range(degree, -1, -1):
            exps = _exponents(m, deg)
            X = _poly_features(u, exps)
            U, S, Vt = np.linalg.svd(X, full_matrices=False)
            if S[0] > 0 and S[-1] > S[0] * max(n, len(exps)) * np.finfo(float).eps * 1e3:
                break
        else:
            raise BasisDegeneracy("design matrix has no full-rank sub-basis")
        if n < len(exps):
            raise BasisDegeneracy(f"{n} samples cannot identify {len(exps)} basis functions")
        self.degree, self.exps = deg, exps
        self.U, self.S, self.Vt = U, S, Vt
        self.condition = float(S[0] / S[-1])
        self.n = n

    def fit(self, targets):
        """Return (fitted values, coefficients); targets is (n,) or (n, k)."""
        y = np.asarray(targets, dtype=float)
        coef = self.Vt.T @ ((self.U.T @ y) / (self.S if y.ndim == 1 else self.S[:, None]))
        return self.U @ (self.U.T @ y), coef

    def std_errors(self, targets, fitted):
        resid = np.asarray(targets) - fitted
        dof = max(1, self.n - len(self.exps))
        s = np.sqrt(np.sum(resid**2) / dof)
        # x (X^T X)^{-1} x^T on the sample rows equals |U row|^2
        return s * np.linalg.norm(self.U, axis=1)

    def predict(self, coef, w, t):
        return _poly_features(_scaled(w, t), self.exps) @ coef


class _BinFitter:
    def __init__(self, u, bins):
        n, m = u.shape
        self.bins = bins
        self.cells = self._cell(u)
        self.ids, self.inverse, self.counts = np.unique(self.cells, return_inverse=True, return_counts=True)
        self.degree = -1
        self.condition = float(self.counts.max() / self.counts.min())
        self.n = n

    def _cell(self, u):
        edges = np.clip(((np.clip(u, -4, 4) + 4) / 8 * self.bins).astype(np.int64), 0, self.bins - 1)
        return np.ravel_multi_index(tuple(edges.T), (self.bins,) * u.shape[1])

    def fit(self, targets):
        y = np.asarray(targets, dtype=float)
        y2 = y.reshape(self.n, -1)
        means = np.stack([np.bincount(self.inverse, weights=y2[:, k]) / self.counts for k in range(y2.shape[1])], axis=1)
        fitted = means[self.inverse]
        if y.ndim == 1:
            return fitted[:, 0], means[:, 0]
        return fitted, means

    def std_errors(self, targets, fitted):
        """Per-sample standard error of its cell mean.

        Cells with fewer than ``SPARSE_CELL`` samples cannot estimate their own
        spread; they use at least the pooled residual variance.
        """
        resid2 = (np.asarray(targets) - fitted) ** 2
        var = np.bincount(self.inverse, weights=resid2) / np.maximum(self.counts - 1, 1)
        pooled = resid2.sum() / max(self.n - len(self.counts), 1)
        var = np.where(self.counts < SPARSE_CELL, np.maximum(var, pooled), var)
        return np.sqrt(var / self.counts)[self.inverse]

    def predict(self, coef, w, t):
        cells = self._cell(_scaled(w, t))
        pos = np.searchsorted(self.ids, cells)
        pos = np.clip(pos, 0, len(self.ids) - 1)
        found = self.ids[pos] == cells
        fallback = np.average(coef, axis=0, weights=self.counts)
        return np.where(found.reshape((-1,) + (1,) * (np.ndim(coef) - 1)), coef[pos], fallback)


@dataclass
class BsdeSolution:
    grid: np.ndarray
    Y: np.ndarray  # (n, N+1)
    Z: np.ndarray  # (n, N, m)
    y0: float
    diagnostics: dict = field(default_factory=dict)
    fits: list = field(default_factory=list, repr=False)

    def predict(self, step, w, theta=None):
        return predict_solution(self, step, w, theta)


def sets_at(sets, i):
    if isinstance(sets, InducedSet):
        return sets
    return sets[i]


def _terminal_values(terminal, ens):
    if terminal is None:
        return np.zeros(ens.n_paths)
    if isinstance(terminal, Liability):
        return terminal(ens.W[:, -1])
    vals = np.asarray(terminal, dtype=float)
    if vals.ndim == 0:
        return np.full(ens.n_paths, float(vals))
    if vals.shape != (ens.n_paths,):
        raise InvalidArgument("terminal values must have one entry per path")
    return vals


def _theta_array(theta, ens):
    try:
        return np.broadcast_to(np.asarray(theta, dtype=float), ens.dW.shape)
    except ValueError:
        raise InvalidArgument("theta must broadcast to the ensemble shape (n, N, m)") from None


def solve_bsde_lsmc(ens: PathEnsemble, terminal, utility: UtilitySpec, sets, theta,
                    basis: RegressionBasis | None = None, z_cap: float | None = None) -> BsdeSolution:
    """Explicit backward scheme with regression conditional expectations.

    Per step ``Y_i = E_i[Y_{i+1}] - f(t_i, Z_i) dt`` and
    ``Z_i = E_i[(Y_{i+1} - E_i Y_{i+1}) dW_i] / dt``.

    The continuation value regresses the pathwise value
    ``F - sum_{j>i} (f(t_j, Z_j) dt + Z_j dW_j)``, which has the conditional
    mean of ``Y_{i+1}`` (the stochastic integral of the adapted Z has zero
    conditional mean) but far less variance than ``F`` itself.  Regression
    error therefore does not compound through the quadratic driver.  The
    Z regression uses the one-step increment of the fitted values, which keeps
    its variance at O(dt); subtracting the continuation leaves its conditional
    mean unchanged.  The driver sees Z clamped to ``|Z| <= z_cap``.
    """
    n, N, m = ens.dW.shape
    basis = basis or RegressionBasis.default_for(m)
    theta = _theta_array(theta, ens)
    theta_max = float(np.max(np.linalg.norm(theta, axis=-1)))
    z_cap = default_z_cap(theta_max) if z_cap is None else float(z_cap)
    dt = ens.dt

    Y = np.empty((n, N + 1))
    Z = np.zeros((n, N, m))
    Y[:, N] = _terminal_values(terminal, ens)
    pathwise = Y[:, N].copy()
    f_vals = np.empty((n, N))
    fits = [None] * N
    clamp_counts = np.zeros(N, dtype=np.int64)
    degrees, conditions = np.empty(N, dtype=int), np.empty(N)

    for i in range(N - 1, -1, -1):
        t = ens.grid[i]
        s = sets_at(sets, i)
        fitter = basis.fitter(ens.W[:, i], t)
        cont, y_coef = fitter.fit(pathwise)
        if utility.kind == LOGARITHMIC:
            Zi = np.zeros((n, m))
            z_coef = np.zeros(np.shape(y_coef) + (m,))
        else:
            one_step, _ = fitter.fit(Y[:, i + 1])
            Zi, z_coef = fitter.fit((Y[:, i + 1] - one_step)[:, None] * ens.dW[:, i] / dt[i])
        Z[:, i] = Zi
        Zc, hit = clamp_z(Zi, z_cap)
        clamp_counts[i] = int(hit.sum())
        f = np.atleast_1d(utility.driver(t, Zc, theta[:, i], s))
        f_vals[:, i] = f
        Y[:, i] = cont - f * dt[i]
        pathwise -= f * dt[i] + np.sum(Zi * ens.dW[:, i], axis=1)
        degrees[i], conditions[i] = fitter.degree, fitter.condition
        fits[i] = _StepFit(fitter, y_coef, z_coef, utility, s, theta[0, i], dt[i], z_cap)

    zdw = np.einsum("nim,nim->ni", Z, ens.dW)
    incr = Y[:, 1:] - Y[:, :-1] - f_vals * dt[None, :] - zdw
    mart_mean = incr.mean(axis=0)
    # The bases contain constants, so in-sample means are preserved and the
    # residual mean equals mean(Z_{i+1} dW_{i+1} - Z_i dW_i) exactly.  Its
    # sampling error is that of the two stochastic integrals, which the
    # (regression-shrunk) spread of the residual itself does not show.
    integ = -zdw
    integ[:, :-1] += zdw[:, 1:]
    if n > 1:
        mart_se = np.maximum(incr.std(axis=0, ddof=1), integ.std(axis=0, ddof=1)) / np.sqrt(n)
    else:
        mart_se = np.zeros(N)
    clamp_fraction = float(clamp_counts.sum() / (n * N))
    diag = {
        "martingale_residual_mean": mart_mean,
        "martingale_residual_se": mart_se,
        "clamp_counts": clamp_counts,
        "clamp_fraction": clamp_fraction,
        "z_cap": z_cap,
        "basis_degree": degrees,
        "condition_number": conditions,
        "warnings": [],
    }
    if clamp_fraction > CLAMP_WARN_FRACTION:
        msg = f"driver clamp active on {100 * clamp_fraction:.2f}% of evaluations"
        diag["warnings"].append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    k1 = max(sets_at(sets, i).k1_bound for i in range(N)) if not isinstance(sets, InducedSet) else sets.k1_bound
    c0, c1 = growth_constants(utility, theta_max, k1)
    F_bound = float(np.max(np.abs(Y[:, N])))
    envelope = F_bound + (c0 + c1 * z_cap**2) * ens.T
    diag["envelope"] = envelope
    diag["envelope_ok"] = bool(np.max(np.abs(Y)) <= envelope)
    return BsdeSolution(ens.grid, Y, Z, float(Y[:, 0].mean()), diag, fits)


class _StepFit:
    """Evaluates the fitted (Y_i, Z_i) at new Brownian states.

    ``theta`` defaults to the first path's value, which is exact only for
    state-independent coefficients; pass it explicitly otherwise.
    """

    def __init__(self, fitter, y_coef, z_coef, utility, s, theta, dt, z_cap):
        self.fitter, self.y_coef, self.z_coef = fitter, y_coef, z_coef
        self.utility, self.s, self.theta, self.dt, self.z_cap = utility, s, theta, dt, z_cap

    def __call__(self, w, t, theta=None):
        w = np.asarray(w, dtype=float).reshape(-1, self.s.m)
        theta = self.theta if theta is None else theta
        z = self.fitter.predict(self.z_coef, w, t).reshape(-1, self.s.m)
        cont = self.fitter.predict(self.y_coef, w, t)
        zc, _ = clamp_z(z, self.z_cap)
        f = np.atleast_1d(self.utility.driver(t, zc, np.broadcast_to(theta, z.shape), self.s))
        return cont - f * self.dt, z


def predict_solution(sol: BsdeSolution, step: int, w, theta=None):
    """(Y, Z) at grid index ``step`` for Brownian states ``w`` of shape (k, m)."""
    if not 0 <= step < len(sol.grid) - 1:
        raise InvalidArgument("step must index a non-terminal grid time")
    return sol.fits[step](w, sol.grid[step], theta)


def solve_log_quadrature(grid, theta, sets) -> float:
    """``-E[sum_i f(t_i) dt_i]`` for the log driver; exact when theta is deterministic."""
    grid = np.asarray(grid, dtype=float)
    dt = np.diff(grid)
    th = np.asarray(theta, dtype=float)
    if th.ndim == 2:
        th = th[None]
    total = np.zeros(th.shape[0])
    for i in range(len(dt)):
        total += np.atleast_1d(driver_log(grid[i], th[:, i], sets_at(sets, i))) * dt[i]
    return float(-total.mean())


def bmo_envelope(c0: float, c1: float, y_bound: float, T: float) -> float:
    """Upper bound on the BMO norm of Z when ``|f| <= c0 + c1 |z|^2`` and ``|Y| <= y_bound``.

    Ito's formula for ``exp(4 c1 Y)`` turns the quadratic term into a positive
    multiple of ``|Z|^2``, giving
    ``E[int_t^T |Z|^2 | F_t] <= exp(8 c1 B) (1 + 4 c1 c0 T) / (4 c1^2)``.
    """
    if c1 <= 0:
        # linear growth: the same argument with any c1 > 0, take c1 = 1/2
        c1 = 0.5
    return float(np.sqrt(np.exp(8 * c1 * y_bound) * (1 + 4 * c1 * c0 * T) / (4 * c1**2)))


def bmo_norm_estimate(xi, ens: PathEnsemble, basis: RegressionBasis | None = None) -> float:
    """Grid-time estimate of ``sup_t E[int_t^T |xi|^2 ds | F_t]^{1/2}``.

    Only deterministic grid times stand in for stopping times, so this
    under-estimates the supremum.  Regressed conditional means are clipped to the
    sample range of the regressand, where the true conditional mean must lie.
    """
    xi = np.asarray(xi, dtype=float)
    n, N = ens.n_paths, ens.n_steps
    if xi.ndim == 2:
        xi = xi[:, :, None]
    xi = np.broadcast_to(xi, (n, N, xi.shape[-1]))
    basis = basis or RegressionBasis.default_for(ens.m)
    sq = np.sum(xi**2, axis=2) * ens.dt[None, :]
    remaining = np.cumsum(sq[:, ::-1], axis=1)[:, ::-1]
    best = 0.0
    for i in range(N):
        q = remaining[:, i]
        fitted, _ = basis.fitter(ens.W[:, i], ens.grid[i]).fit(q)
        best = max(best, float(np.max(np.clip(fitted, q.min(), q.max()))))
    return float(np.sqrt(best))
