"""Optimal strategies, value functions and Monte Carlo optimality checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import InducedSet, contains, project_with_pullback
from .drivers import EXPONENTIAL, LOGARITHMIC, POWER, UtilitySpec, clamp_z
from .errors import ConvergenceFailure, InvalidArgument
from .lsmc import BsdeSolution, RegressionBasis, _terminal_values, _theta_array, bmo_norm_estimate, sets_at
from .market import PathEnsemble, log_wealth_fraction, wealth_amount

AMOUNT, FRACTION = "amount", "fraction"
MARTINGALE, SUPERMARTINGALE, NOT_SUPERMARTINGALE = "MARTINGALE", "SUPERMARTINGALE", "NOT_SUPERMARTINGALE"
ADMISSIBILITY_NOTE = (
    "BMO estimate is a sufficient-condition proxy over grid times; the uniform-integrability "
    "clause of admissibility has no finite-sample test")


@dataclass
class Strategy:
    values: np.ndarray  # (n, N, m), in noise coordinates
    pullback: np.ndarray  # (n, N, d), strategy-space point with pullback @ sigma = values
    kind: str

    def __post_init__(self):
        if self.kind not in (AMOUNT, FRACTION):
            raise InvalidArgument(f"unknown strategy kind {self.kind!r}")


@dataclass
class PolicyReport:
    y0: float
    value_at_x: float
    x: float
    utility: UtilitySpec
    strategy: Strategy | None = None
    verification: dict = field(default_factory=dict)
    solution: BsdeSolution | None = field(default=None, repr=False)
    pde_solution: object = field(default=None, repr=False)


def _project_steps(target, sets, kind):
    n, N, m = target.shape
    s0 = sets_at(sets, 0)
    values = np.empty((n, N, m))
    pull = np.empty((n, N, s0.d))
    for i in range(N):
        s = sets_at(sets, i)
        try:
            values[:, i], pull[:, i] = project_with_pullback(target[:, i], s)
        except ConvergenceFailure as exc:
            for k in range(n):
                try:
                    project_with_pullback(target[k, i], s)
                except ConvergenceFailure:
                    raise ConvergenceFailure(f"projection failed at path {k}, step {i}: {exc}",
                                             exc.best, exc.best_distance) from exc
            raise
    return Strategy(values, pull, kind)


def optimal_strategy_exp(sol: BsdeSolution, theta, sets, alpha: float) -> Strategy:
    """Amounts ``p* = Pi(Z + theta/alpha)`` per path and step."""
    if not alpha > 0:
        raise InvalidArgument("alpha must be positive")
    th = np.broadcast_to(np.asarray(theta, dtype=float), sol.Z.shape)
    return _project_steps(sol.Z + th / alpha, sets, AMOUNT)


def optimal_strategy_pow(sol: BsdeSolution, theta, sets, gamma: float) -> Strategy:
    """Fractions ``rho* = Pi((Z + theta)/(1 - gamma))`` per path and step."""
    if not 0 < gamma < 1:
        raise InvalidArgument("gamma must lie in (0, 1)")
    th = np.broadcast_to(np.asarray(theta, dtype=float), sol.Z.shape)
    return _project_steps((sol.Z + th) / (1 - gamma), sets, FRACTION)


def optimal_strategy_log(theta, sets) -> Strategy:
    """Fractions ``rho* = Pi(theta)``; theta of shape (N, m) or (n, N, m)."""
    th = np.asarray(theta, dtype=float)
    if th.ndim == 2:
        th = th[None]
    if th.ndim != 3:
        raise InvalidArgument("theta must have shape (N, m) or (n, N, m)")
    return _project_steps(th, sets, FRACTION)


def optimal_strategy(utility: UtilitySpec, sol: BsdeSolution, theta, sets) -> Strategy:
    if utility.kind == EXPONENTIAL:
        return optimal_strategy_exp(sol, theta, sets, utility.alpha)
    if utility.kind == POWER:
        return optimal_strategy_pow(sol, theta, sets, utility.gamma)
    return optimal_strategy_log(np.broadcast_to(np.asarray(theta, dtype=float), sol.Z.shape), sets)


def value_exp(x, y0, alpha):
    if not alpha > 0:
        raise InvalidArgument("alpha must be positive")
    return -np.exp(-alpha * (np.asarray(x, dtype=float) - y0))


def value_pow(x, y0, gamma):
    x = np.asarray(x, dtype=float)
    if not 0 < gamma < 1:
        raise InvalidArgument("gamma must lie in (0, 1)")
    if np.any(x <= 0):
        raise InvalidArgument("power utility needs x > 0")
    return x**gamma * np.exp(y0)


def value_log(x, y0):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise InvalidArgument("log utility needs x > 0")
    return np.log(x) + y0


def value(utility: UtilitySpec, x, y0):
    if utility.kind == EXPONENTIAL:
        return value_exp(x, y0, utility.alpha)
    if utility.kind == POWER:
        return value_pow(x, y0, utility.gamma)
    return value_log(x, y0)


def _check_grid(sol, ens, strategy=None):
    if len(sol.grid) != len(ens.grid) or not np.allclose(sol.grid, ens.grid, rtol=0, atol=1e-14):
        raise InvalidArgument("solution and ensemble live on different grids")
    if sol.Y.shape[0] != ens.n_paths:
        raise InvalidArgument("solution and ensemble have different path counts")
    if strategy is not None and (strategy.values.shape[1] != ens.n_steps
                                 or strategy.values.shape[0] not in (1, ens.n_paths)):
        raise InvalidArgument("strategy does not match the ensemble grid")


def wealth_paths(utility: UtilitySpec, x, strategy, ens: PathEnsemble, theta):
    """Amount wealth for exponential utility, log of fraction wealth otherwise."""
    values = strategy.values if isinstance(strategy, Strategy) else strategy
    if utility.kind == EXPONENTIAL:
        return wealth_amount(x, values, ens, theta)
    return log_wealth_fraction(x, values, ens, theta)


def forward_y(sol: BsdeSolution, ens: PathEnsemble, utility: UtilitySpec, theta, sets, terminal=None):
    """Euler path of ``dY = Z dW + f(t, Z) dt`` started at ``y0`` with the solved Z.

    The last node is set to the terminal value, so the regression mismatch of
    the whole backward sweep shows up in the final increment only.
    """
    theta = _theta_array(theta, ens)
    cap = sol.diagnostics.get("z_cap", np.inf)
    n, N, m = ens.dW.shape
    Y = np.empty((n, N + 1))
    Y[:, 0] = sol.y0
    for i in range(N):
        zc, _ = clamp_z(sol.Z[:, i], cap)
        f = np.atleast_1d(utility.driver(ens.grid[i], zc, theta[:, i], sets_at(sets, i)))
        Y[:, i + 1] = Y[:, i] + np.sum(sol.Z[:, i] * ens.dW[:, i], axis=1) + f * ens.dt[i]
    Y[:, N] = _terminal_values(terminal, ens) if utility.kind == EXPONENTIAL else 0.0
    return Y


def r_process(utility: UtilitySpec, x, strategy, sol: BsdeSolution, ens: PathEnsemble, theta, sets,
              terminal=None, y_mode: str = "forward"):
    """The process that is a supermartingale for every strategy and a martingale at the optimum.

    exponential: ``-exp(-alpha (X - Y))``; power: ``X^gamma exp(Y)``;
    log: ``log X + Y``.  Terminal values are ``U(X_T - F)`` and ``U(X_T)``.

    ``y_mode="forward"`` uses :func:`forward_y`; ``"regression"`` uses the
    regressed ``Y`` of the solution.  Regressed levels
    carry independent sampling noise at every step, which dominates the tiny
    increments of ``R`` near the optimum; the forward path does not.
    """
    _check_grid(sol, ens, strategy if isinstance(strategy, Strategy) else None)
    if y_mode == "regression":
        Y = sol.Y.copy()
        if terminal is not None:
            Y[:, -1] = _terminal_values(terminal, ens)
    elif y_mode == "forward":
        Y = forward_y(sol, ens, utility, theta, sets, terminal)
    else:
        raise InvalidArgument(f"unknown y_mode {y_mode!r}")
    theta = _theta_array(theta, ens)
    X = wealth_paths(utility, x, strategy, ens, theta)
    if utility.kind == EXPONENTIAL:
        return -np.exp(-utility.alpha * (X - Y))
    if utility.kind == POWER:
        return np.exp(utility.gamma * X + Y)
    return X + Y


@dataclass
class MartingaleTest:
    verdict: str
    mean_increment: np.ndarray  # (N,)
    se_increment: np.ndarray
    mean_R: np.ndarray  # (N+1,)
    se_R: np.ndarray  # SE of mean(R_t - R_0)
    flat: bool
    mean_drift: np.ndarray | None = None

    @property
    def max_increment_z(self):
        return float(np.max(np.abs(self.mean_increment) / np.maximum(self.se_increment, 1e-300)))


def supermartingale_test(R, n_se: float = 3.0, drift=None) -> MartingaleTest:
    """Cross-path mean increments of ``R`` against ``n_se`` standard errors.

    SUPERMARTINGALE when every mean increment is at most ``+n_se`` SE;
    MARTINGALE when additionally every increment is within ``n_se`` SE of zero.
    ``flat`` reports whether ``mean(R_t - R_0)`` stays within ``n_se`` SE at every t.
    ``drift`` (per path/step) is summarised as its cross-path mean.
    """
    R = np.asarray(R, dtype=float)
    n = R.shape[0]
    inc = np.diff(R, axis=1)
    mean_inc = inc.mean(axis=0)
    floor = 1e-15 * (1.0 + np.abs(R).max())
    se_inc = np.maximum(inc.std(axis=0, ddof=1) / np.sqrt(n), floor)
    cum = R - R[:, :1]
    mean_cum = cum.mean(axis=0)
    se_cum = np.maximum(cum.std(axis=0, ddof=1) / np.sqrt(n), floor)
    flat = bool(np.all(np.abs(mean_cum) <= n_se * se_cum))
    if np.all(mean_inc <= n_se * se_inc):
        verdict = MARTINGALE if np.all(np.abs(mean_inc) <= n_se * se_inc) else SUPERMARTINGALE
    else:
        verdict = NOT_SUPERMARTINGALE
    mean_drift = None if drift is None else np.asarray(drift, dtype=float).mean(axis=0)
    return MartingaleTest(verdict, mean_inc, se_inc, R.mean(axis=0), se_cum, flat, mean_drift)


def exp_drift(p, z, theta, sets, alpha, driver):
    """``v = -alpha p.theta + alpha f(z) + alpha^2 |p - z|^2 / 2`` per path/step (>= 0)."""
    p, z = np.asarray(p, dtype=float), np.asarray(z, dtype=float)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), z.shape)
    v = np.empty(z.shape[:2])
    for i in range(z.shape[1]):
        f = np.atleast_1d(driver(0.0, z[:, i], theta[:, i], sets_at(sets, i)))
        v[:, i] = (-alpha * np.sum(p[:, i] * theta[:, i], axis=1) + alpha * f
                   + 0.5 * alpha**2 * np.sum((p[:, i] - z[:, i]) ** 2, axis=1))
    return v


def expected_utility(utility: UtilitySpec, x, strategy, ens: PathEnsemble, theta, terminal=None):
    """Monte Carlo ``E[U(X_T - F)]`` (exponential) or ``E[U(X_T)]`` with its standard error."""
    theta = _theta_array(theta, ens)
    X = wealth_paths(utility, x, strategy, ens, theta)[:, -1]
    if utility.kind == EXPONENTIAL:
        F = _terminal_values(terminal, ens)
        reward = -np.exp(-utility.alpha * (X - F))
    elif utility.kind == POWER:
        reward = np.exp(utility.gamma * X)
    else:
        reward = X
    return float(reward.mean()), float(reward.std(ddof=1) / np.sqrt(len(reward)))


@dataclass
class DynamicCheck:
    tau_index: int
    residual: float  # max absolute residual over basis cells
    tolerance: float  # tolerance at the worst cell
    max_excess: float  # max of |residual| - tolerance over cells; <= 0 passes
    passed: bool


def dynamic_principle_check(sol: BsdeSolution, strategy: Strategy, ens: PathEnsemble, x, utility: UtilitySpec,
                            tau_index: int, theta, terminal=None, basis: RegressionBasis | None = None,
                            bias_allowance: float | None = None, n_se: float = 5.0) -> DynamicCheck:
    """Regression check of the value identity at grid time ``tau``.

    exponential: ``E[exp(-alpha (X_T - X_tau - F)) | W_tau]`` against ``exp(alpha Y_tau)``;
    power: ``E[(X_T / X_tau)^gamma | W_tau]`` against ``exp(Y_tau)``.  Both are the
    value identity ``E[U | F_tau] = V(tau, X_tau)`` divided by the known
    ``X_tau`` factor.  ``tau = N`` compares the terminal identity path by path.
    The default bias allowance is the solver accuracy 2e-3 mapped through the
    exponential.
    """
    if utility.kind == LOGARITHMIC:
        raise InvalidArgument("the dynamic principle check covers exponential and power utility")
    _check_grid(sol, ens, strategy)
    N = ens.n_steps
    if not 0 <= tau_index <= N:
        raise InvalidArgument(f"tau_index must lie in [0, {N}]")
    theta = _theta_array(theta, ens)
    X = wealth_paths(utility, x, strategy, ens, theta)
    F = _terminal_values(terminal, ens) if utility.kind == EXPONENTIAL else np.zeros(ens.n_paths)
    if utility.kind == EXPONENTIAL:
        a = utility.alpha
        G = np.exp(-a * (X[:, -1] - X[:, tau_index] - F))
        target = np.exp(a * sol.Y[:, tau_index])
        scale = a
    else:
        G = np.exp(utility.gamma * (X[:, -1] - X[:, tau_index]))
        target = np.exp(sol.Y[:, tau_index])
        scale = 1.0
    if tau_index == N:
        target = np.exp(scale * F)
        res = np.abs(G - target)
        tol = 1e-12 * np.maximum(1.0, np.abs(target))
        excess = res - tol
        k = int(np.argmax(excess))
        return DynamicCheck(N, float(res.max()), float(tol[k]), float(excess[k]), bool(excess[k] <= 0))
    basis = basis or RegressionBasis.default_for(ens.m)
    fitter = basis.fitter(ens.W[:, tau_index], ens.grid[tau_index])
    fitted, _ = fitter.fit(G)
    se = fitter.std_errors(G, fitted)
    allowance = 2e-3 * scale * target if bias_allowance is None else bias_allowance
    res = np.abs(fitted - target)
    tol = n_se * se + allowance
    excess = res - tol
    k = int(np.argmax(excess))
    return DynamicCheck(tau_index, float(res.max()), float(np.broadcast_to(tol, res.shape)[k]),
                        float(excess[k]), bool(excess[k] <= 0))


@dataclass
class AdmissibilityReport:
    membership: bool
    violation: tuple | None  # (path, step) of the first violation
    l2_norm: float  # E[int |p|^2 dt]
    l2_finite: bool
    bmo_estimate: float
    bmo_finite: bool
    note: str = ADMISSIBILITY_NOTE

    @property
    def passed(self):
        return self.membership and self.l2_finite and self.bmo_finite


def admissibility_proxy(strategy, ens: PathEnsemble, sets, basis: RegressionBasis | None = None,
                        tol=None) -> AdmissibilityReport:
    """Membership at every path/step, ``E[int |p|^2 dt]`` and the BMO proxy of ``int p dW``."""
    values = strategy.values if isinstance(strategy, Strategy) else np.asarray(strategy, dtype=float)
    values = np.broadcast_to(values, ens.dW.shape[:2] + (values.shape[-1],))
    violation = None
    for i in range(values.shape[1]):
        inside = np.atleast_1d(contains(values[:, i], sets_at(sets, i), tol))
        if not inside.all():
            violation = (int(np.flatnonzero(~inside)[0]), i)
            break
    l2 = float(np.mean(np.sum(np.sum(values**2, axis=2) * ens.dt[None, :], axis=1)))
    bmo = bmo_norm_estimate(values, ens, basis)
    return AdmissibilityReport(violation is None, violation, l2, bool(np.isfinite(l2)), bmo, bool(np.isfinite(bmo)))


def adversarial_family(utility: UtilitySpec, optimal: Strategy, theta, sets, ens: PathEnsemble, seed: int = 0,
                       n_constant: int = 3, jitter: float = 0.1) -> dict:
    """Feasible comparison strategies: zero (when feasible), the projected
    unconstrained Merton strategy, constant random feasible points and the
    optimum perturbed by jitter and projected back."""
    rng = np.random.default_rng(seed)
    theta = _theta_array(theta, ens)
    n, N, m = ens.dW.shape
    kind = optimal.kind
    out = {}
    s0 = sets_at(sets, 0)
    zero = np.zeros((1, N, m))
    if all(contains(np.zeros(m), sets_at(sets, i)) for i in range(N)):
        out["zero"] = Strategy(zero, np.zeros((1, N, s0.d)), kind)
    if utility.kind == EXPONENTIAL:
        merton = theta / utility.alpha
    elif utility.kind == POWER:
        merton = theta / (1 - utility.gamma)
    else:
        merton = theta
    merton_proj = _project_steps(np.array(merton[:1]), sets, kind)
    if not np.allclose(merton_proj.values[0], optimal.values[0], atol=1e-12):
        out["merton_projected"] = merton_proj
    for k in range(n_constant):
        pts = s0.base.sample(rng, 1, scale=1.0)
        vals = np.stack([pts @ sets_at(sets, i).sigma for i in range(N)], axis=1)
        out[f"constant_{k}"] = _project_steps(vals, sets, kind)
    noisy = optimal.values + jitter * rng.standard_normal(optimal.values.shape)
    out["jittered_optimum"] = _project_steps(noisy, sets, kind)
    return out


def dominance_check(utility: UtilitySpec, x, y0, optimal: Strategy, family: dict, ens: PathEnsemble, theta,
                    terminal=None, n_se: float = 3.0) -> dict:
    """Every family member's MC expected utility must not exceed the value by more than
    ``n_se`` SE; the optimum must reach it within ``n_se`` SE."""
    v = float(value(utility, x, y0))
    opt_mean, opt_se = expected_utility(utility, x, optimal, ens, theta, terminal)
    rows = {}
    for name, strat in family.items():
        mean, se = expected_utility(utility, x, strat, ens, theta, terminal)
        rows[name] = {"expected_utility": mean, "se": se, "passed": bool(mean <= v + n_se * se)}
    return {
        "value": v,
        "optimal": {"expected_utility": opt_mean, "se": opt_se, "passed": bool(abs(opt_mean - v) <= n_se * opt_se)},
        "family": rows,
        "passed": bool(abs(opt_mean - v) <= n_se * opt_se and all(r["passed"] for r in rows.values())),
    }
