"""Finite-difference oracle for one-dimensional Markovian problems.

With ``Y_t = u(t, W_t)`` and ``Z_t = u_w(t, W_t)``, Ito's formula turns the
BSDE ``dY = Z dW + f(t, Z) dt`` into

    u_t + u_ww / 2 - f(t, u_w) = 0,    u(T, w) = F(w),

which is stepped backward with an explicit scheme.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .constraints import InducedSet
from .drivers import Liability, UtilitySpec
from .errors import DivergenceError, InvalidArgument
from .market import MarketModel, market_price_of_risk

DOMAIN_SIGMAS = 6.0
# Explicit stepping of u_t + u_ww/2 is stable for dt <= dw^2; the automatic
# step keeps a margin below that.
AUTO_CFL = 0.9


@dataclass
class PdeGrid:
    """Space-time mesh: ``M`` nodes on [w_min, w_max] and ``N`` uniform steps on [0, T].

    Leave ``N`` unset to pick the smallest count meeting ``dt <= 0.9 dw^2``.
    """

    T: float = 1.0
    M: int = 401
    N: int | None = None
    w_min: float | None = None
    w_max: float | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise InvalidArgument("T must be positive")
        if self.M < 5:
            raise InvalidArgument("need at least 5 spatial nodes")
        half = DOMAIN_SIGMAS * np.sqrt(self.T)
        self.w_min = -half if self.w_min is None else float(self.w_min)
        self.w_max = half if self.w_max is None else float(self.w_max)
        if self.w_min > -half * (1 - 1e-12) or self.w_max < half * (1 - 1e-12):
            raise InvalidArgument(f"w-range must cover [-{half:.4g}, {half:.4g}] (6 sqrt(T) around 0)")
        if self.N is None:
            self.N = int(np.ceil(self.T / (AUTO_CFL * self.dw**2)))
        if self.N < 1:
            raise InvalidArgument("N must be >= 1")
        if self.dt > self.dw**2 * (1 + 1e-12):
            raise InvalidArgument(
                f"explicit scheme unstable: dt = {self.dt:.3g} exceeds dw^2 = {self.dw**2:.3g}")

    @property
    def dw(self):
        return (self.w_max - self.w_min) / (self.M - 1)

    @property
    def dt(self):
        return self.T / self.N

    @property
    def w(self):
        return np.linspace(self.w_min, self.w_max, self.M)

    @property
    def t(self):
        return np.linspace(0.0, self.T, self.N + 1)


@dataclass
class PdeSolution:
    grid: PdeGrid
    u: np.ndarray  # (N+1, M)
    u_w: np.ndarray  # (N+1, M)
    y0: float

    def evaluate(self, t, w):
        return evaluate_solution(self, t, w)


def gradient(u, dw):
    """Central differences inside, second-order one-sided differences at both ends."""
    g = np.empty_like(u)
    g[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * dw)
    g[..., 0] = (-3 * u[..., 0] + 4 * u[..., 1] - u[..., 2]) / (2 * dw)
    g[..., -1] = (3 * u[..., -1] - 4 * u[..., -2] + u[..., -3]) / (2 * dw)
    return g


def _theta_fn(model):
    if isinstance(model, MarketModel):
        if model.m != 1:
            raise InvalidArgument("the PDE solver needs m = 1")
        if model.state_dependent:
            raise InvalidArgument("the PDE solver needs theta to depend on t only")
        return lambda t: float(market_price_of_risk(model, t)[0])
    if callable(model):
        return lambda t: float(model(t))
    theta = float(model)
    return lambda t: theta


def _set_fn(sets):
    if isinstance(sets, InducedSet):
        s = sets
        get = lambda t: s  # noqa: E731
    elif callable(sets):
        get = sets
    else:
        raise InvalidArgument("sets must be an InducedSet or a function of t")
    return get


def solve_bsde_pde(model, terminal, utility: UtilitySpec, sets, grid: PdeGrid | None = None) -> PdeSolution:
    """Backward explicit sweep; ``y0 = u(0, 0)``.

    ``model`` is a one-dimensional MarketModel, a constant theta or a function
    ``theta(t)``; ``sets`` is the image set or a function ``t -> InducedSet``.
    At the two boundary nodes ``u_ww = 0`` and only the driver acts.
    """
    grid = grid or PdeGrid()
    theta_at = _theta_fn(model)
    set_at = _set_fn(sets)
    if set_at(0.0).m != 1:
        raise InvalidArgument("the PDE solver needs m = 1")
    w, t, dw, dt = grid.w, grid.t, grid.dw, grid.dt
    N, M = grid.N, grid.M

    u = np.empty((N + 1, M))
    if terminal is None:
        u[N] = 0.0
    elif isinstance(terminal, Liability):
        u[N] = terminal(w)
    elif callable(terminal):
        u[N] = np.asarray(terminal(w), dtype=float)
    else:
        u[N] = float(terminal)
    ones = np.ones((M, 1))
    for n in range(N - 1, -1, -1):
        nxt = u[n + 1]
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            z = gradient(nxt, dw)
            tn = t[n + 1]
            f = np.atleast_1d(utility.driver(tn, z[:, None], theta_at(tn) * ones, set_at(tn)))
            lap = np.zeros(M)
            lap[1:-1] = (nxt[2:] - 2 * nxt[1:-1] + nxt[:-2]) / dw**2
            u[n] = nxt + dt * (0.5 * lap - f)
        if not np.all(np.isfinite(u[n])):
            raise DivergenceError(f"non-finite values at time step {n} (t = {t[n]:.6g})", step=n)
    sol = PdeSolution(grid, u, gradient(u, dw), 0.0)
    sol.y0 = float(np.interp(0.0, w, u[0]))
    return sol


def evaluate_solution(sol: PdeSolution, t, w):
    """Bilinear interpolation of ``(u, u_w)`` at points inside the mesh."""
    t = np.asarray(t, dtype=float)
    w = np.asarray(w, dtype=float)
    t, w = np.broadcast_arrays(t, w)
    g = sol.grid
    if np.any(t < 0) or np.any(t > g.T) or np.any(w < g.w_min) or np.any(w > g.w_max):
        raise InvalidArgument("(t, w) outside the solution mesh")
    x = (t / g.dt).clip(0, g.N)
    y = ((w - g.w_min) / g.dw).clip(0, g.M - 1)
    i = np.minimum(np.floor(x).astype(int), g.N - 1)
    j = np.minimum(np.floor(y).astype(int), g.M - 2)
    a, b = x - i, y - j

    def interp(field):
        return ((1 - a) * (1 - b) * field[i, j] + (1 - a) * b * field[i, j + 1]
                + a * (1 - b) * field[i + 1, j] + a * b * field[i + 1, j + 1])

    Y, Z = interp(sol.u), interp(sol.u_w)
    if Y.ndim == 0:
        return float(Y), float(Z)
    return Y, Z


def dump_field_csv(sol: PdeSolution, path, time_stride: int = 1, space_stride: int = 1):
    """Write rows ``t, w, u, u_w`` for every retained mesh node."""
    g = sol.grid
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "w", "u", "u_w"])
        for n in range(0, g.N + 1, time_stride):
            for j in range(0, g.M, space_stride):
                out.writerow([f"{g.t[n]:.12g}", f"{g.w[j]:.12g}", f"{sol.u[n, j]:.12g}", f"{sol.u_w[n, j]:.12g}"])
