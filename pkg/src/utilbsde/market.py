"""Market model, market price of risk, seeded Brownian ensembles and wealth paths."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .constraints import TAU_PROJ, ConstraintSpec, InducedSet
from .errors import EllipticityViolation, InvalidArgument

Coefficient = Union[float, np.ndarray, Callable]

# Paths are drawn in blocks; each block has its own Philox key (seed, block),
# so a block's draws do not depend on which other blocks are filled or when.
PATH_BLOCK = 4096


@dataclass
class MarketModel:
    """Drift ``b`` (R^d) and volatility ``sigma`` (d x m) with ellipticity constants.

    Coefficients are constants or callables ``f(t, w)``; ``w`` is the Brownian
    state of shape (n, m).  A callable may ignore ``w`` and return an unbatched
    value; set ``state_dependent=True`` when it does not.
    """

    d: int
    m: int
    b: Coefficient
    sigma: Coefficient
    epsilon: float
    K: float
    b_max: float | None = None
    state_dependent: bool = False

    def __post_init__(self):
        if not (1 <= self.d <= self.m):
            raise InvalidArgument(f"need 1 <= d <= m, got d={self.d}, m={self.m}")
        if not (self.K > self.epsilon > 0):
            raise InvalidArgument("need K > epsilon > 0")

    def drift(self, t, w=None):
        n = 1 if w is None else np.shape(w)[0]
        val = self.b(t, w) if callable(self.b) else self.b
        return np.broadcast_to(np.asarray(val, dtype=float).reshape(-1, self.d), (n, self.d))

    def vol(self, t, w=None):
        n = 1 if w is None else np.shape(w)[0]
        val = self.sigma(t, w) if callable(self.sigma) else self.sigma
        return np.broadcast_to(np.asarray(val, dtype=float).reshape(-1, self.d, self.m), (n, self.d, self.m))

    @property
    def theta_max(self) -> float:
        """Bound on |theta| implied by |b| <= b_max and sigma sigma^T >= epsilon I."""
        if self.b_max is None:
            if callable(self.b):
                raise InvalidArgument("b_max is required for callable drift")
            b_max = float(np.linalg.norm(np.asarray(self.b, dtype=float)))
        else:
            b_max = float(self.b_max)
        return b_max / np.sqrt(self.epsilon)

    @classmethod
    def from_dict(cls, cfg: dict) -> "MarketModel":
        d, m = int(cfg["d"]), int(cfg["m"])
        return cls(d=d, m=m, b=np.asarray(cfg["b"], dtype=float).reshape(d),
                   sigma=np.asarray(cfg["sigma"], dtype=float).reshape(d, m),
                   epsilon=float(cfg["epsilon"]), K=float(cfg["K"]))


def _theta_from(b, sigma, epsilon, K):
    gram = sigma @ np.swapaxes(sigma, -1, -2)
    cond = np.linalg.cond(gram)
    if np.any(~np.isfinite(cond)) or np.any(cond > (K / epsilon) * (1 + 1e-9)):
        raise EllipticityViolation(
            f"sigma sigma^T condition number {np.max(cond):.3g} exceeds K/epsilon = {K / epsilon:.3g}")
    y = np.linalg.solve(gram, b[..., None])
    return (np.swapaxes(sigma, -1, -2) @ y)[..., 0]


def market_price_of_risk(model: MarketModel, t, w=None):
    """``sigma^T (sigma sigma^T)^{-1} b`` at time t, shape (m,) or (n, m) for batched w."""
    theta = _theta_from(model.drift(t, w), model.vol(t, w), model.epsilon, model.K)
    return theta[0] if w is None else theta


@dataclass
class ValidationReport:
    passed: bool
    min_eigenvalue: float
    max_eigenvalue: float
    max_drift: float
    failures: list = field(default_factory=list)


def validate_model(model: MarketModel, sample_points) -> ValidationReport:
    """Check ``epsilon I <= sigma sigma^T <= K I`` and drift boundedness at sample points.

    ``sample_points`` is an iterable of ``(t, w)`` pairs, w of length m.
    """
    lo, hi, bmax = np.inf, -np.inf, 0.0
    failures = []
    for t, w in sample_points:
        w = np.asarray(w, dtype=float).reshape(1, model.m)
        sig = model.vol(t, w)[0]
        eig = np.linalg.eigvalsh(sig @ sig.T)
        b = model.drift(t, w)[0]
        lo, hi = min(lo, eig[0]), max(hi, eig[-1])
        bmax = max(bmax, float(np.linalg.norm(b)))
        if eig[0] < model.epsilon:
            failures.append(f"t={t}: eigenvalue {eig[0]:.3g} below epsilon {model.epsilon}")
        if eig[-1] > model.K:
            failures.append(f"t={t}: eigenvalue {eig[-1]:.3g} above K {model.K}")
        if model.b_max is not None and np.linalg.norm(b) > model.b_max:
            failures.append(f"t={t}: |b| = {np.linalg.norm(b):.3g} above b_max {model.b_max}")
        if not np.all(np.isfinite(sig)) or not np.all(np.isfinite(b)):
            failures.append(f"t={t}: non-finite coefficient")
    return ValidationReport(not failures, float(lo), float(hi), bmax, failures)


@dataclass
class PathEnsemble:
    grid: np.ndarray  # (N+1,)
    dW: np.ndarray  # (n_paths, N, m)
    W: np.ndarray  # (n_paths, N+1, m)
    seed: int

    @property
    def n_paths(self):
        return self.dW.shape[0]

    @property
    def n_steps(self):
        return self.dW.shape[1]

    @property
    def m(self):
        return self.dW.shape[2]

    @property
    def dt(self):
        return np.diff(self.grid)

    @property
    def T(self):
        return float(self.grid[-1])

    @classmethod
    def from_increments(cls, grid, dW, seed=-1):
        grid = check_grid(grid)
        dW = np.asarray(dW, dtype=float)
        if dW.ndim == 2:
            dW = dW[:, :, None]
        if dW.ndim != 3 or dW.shape[1] != len(grid) - 1:
            raise InvalidArgument("increments must have shape (n_paths, N, m) matching the grid")
        W = np.zeros((dW.shape[0], dW.shape[1] + 1, dW.shape[2]))
        np.cumsum(dW, axis=1, out=W[:, 1:])
        return cls(grid, dW, W, seed)


def uniform_grid(T: float, steps: int) -> np.ndarray:
    if T <= 0 or steps < 1:
        raise InvalidArgument("need T > 0 and steps >= 1")
    return np.linspace(0.0, T, steps + 1)


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise InvalidArgument("grid must be increasing and start at 0")
    return grid


def simulate_brownian(model_or_m, grid, n_paths: int, seed: int) -> PathEnsemble:
    """Brownian increments on ``grid``; bit-reproducible for a given seed."""
    m = model_or_m.m if isinstance(model_or_m, MarketModel) else int(model_or_m)
    grid = check_grid(grid)
    if n_paths < 1:
        raise InvalidArgument("n_paths must be >= 1")
    N = len(grid) - 1
    sqdt = np.sqrt(np.diff(grid))
    dW = np.empty((n_paths, N, m))
    for block, start in enumerate(range(0, n_paths, PATH_BLOCK)):
        stop = min(start + PATH_BLOCK, n_paths)
        gen = np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), block]))
        z = gen.standard_normal((PATH_BLOCK, N, m))[: stop - start]
        dW[start:stop] = z * sqdt[None, :, None]
    W = np.zeros((n_paths, N + 1, m))
    np.cumsum(dW, axis=1, out=W[:, 1:])
    return PathEnsemble(grid, dW, W, int(seed))


def theta_path(model: MarketModel, ens: PathEnsemble) -> np.ndarray:
    """Market price of risk at every (path, step) left endpoint, shape (n, N, m)."""
    n, N, m = ens.dW.shape
    if not model.state_dependent and not callable(model.b) and not callable(model.sigma):
        th = market_price_of_risk(model, 0.0)
        return np.broadcast_to(th, (n, N, m))
    out = np.empty((n, N, m))
    for i in range(N):
        if model.state_dependent:
            out[:, i] = market_price_of_risk(model, ens.grid[i], ens.W[:, i])
        else:
            out[:, i] = market_price_of_risk(model, ens.grid[i])
    return out


def induced_sets(constraint: ConstraintSpec, model: MarketModel, grid, tau_proj: float = TAU_PROJ):
    """Image set ``C sigma_t`` at every left grid time.

    Returns one shared set when sigma is constant, else a per-step list.
    State-dependent sigma is rejected: the image set would vary by path.
    """
    if model.state_dependent and callable(model.sigma):
        raise InvalidArgument("solvers need sigma to be a function of t only")
    grid = check_grid(grid)
    if not callable(model.sigma):
        return InducedSet(constraint, model.vol(0.0)[0], tau_proj)
    return [InducedSet(constraint, model.vol(t)[0], tau_proj) for t in grid[:-1]]


def _check_strategy(p, ens):
    p = np.asarray(p, dtype=float)
    n, N, m = ens.dW.shape
    try:
        return np.broadcast_to(p, (n, N, m))
    except ValueError:
        raise InvalidArgument(f"strategy of shape {p.shape} does not fit ensemble shape {(n, N, m)}") from None


def wealth_amount(x0: float, p, ens: PathEnsemble, theta) -> np.ndarray:
    """Euler wealth for money amounts: ``X_{i+1} = X_i + p_i . (dW_i + theta_i dt_i)``."""
    p = _check_strategy(p, ens)
    theta = _check_strategy(theta, ens)
    gains = np.einsum("nim,nim->ni", p, ens.dW + theta * ens.dt[None, :, None])
    X = np.empty((ens.n_paths, ens.n_steps + 1))
    X[:, 0] = x0
    np.cumsum(gains, axis=1, out=X[:, 1:])
    X[:, 1:] += x0
    return X


def log_wealth_fraction(x0: float, rho, ens: PathEnsemble, theta) -> np.ndarray:
    if x0 <= 0:
        raise InvalidArgument("initial wealth must be positive for fraction strategies")
    rho = _check_strategy(rho, ens)
    theta = _check_strategy(theta, ens)
    dt = ens.dt[None, :]
    incr = (np.einsum("nim,nim->ni", rho, ens.dW) + np.einsum("nim,nim->ni", rho, theta) * dt
            - 0.5 * np.einsum("nim,nim->ni", rho, rho) * dt)
    logX = np.empty((ens.n_paths, ens.n_steps + 1))
    logX[:, 0] = np.log(x0)
    np.cumsum(incr, axis=1, out=logX[:, 1:])
    logX[:, 1:] += np.log(x0)
    return logX


def wealth_fraction(x0: float, rho, ens: PathEnsemble, theta) -> np.ndarray:
    """Positive wealth for fraction strategies, log-Euler stepping of the stochastic exponential."""
    return np.exp(log_wealth_fraction(x0, rho, ens, theta))
