"""Generators of the utility BSDEs, growth constants and cone comparison residuals.

Every driver takes ``z`` and ``theta`` as (n, m) batches (or single m-vectors)
and the image constraint set explicitly, and returns one value per row.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .constraints import InducedSet, distance, project
from .errors import InvalidArgument

EXPONENTIAL, POWER, LOGARITHMIC = "exponential", "power", "log"


@dataclass(frozen=True)
class UtilitySpec:
    kind: str
    alpha: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.kind == EXPONENTIAL:
            if self.alpha is None or not self.alpha > 0:
                raise InvalidArgument("exponential utility needs alpha > 0")
            if self.gamma is not None:
                raise InvalidArgument("gamma is not used by exponential utility")
        elif self.kind == POWER:
            if self.gamma is None or not 0 < self.gamma < 1:
                raise InvalidArgument("power utility needs 0 < gamma < 1")
            if self.alpha is not None:
                raise InvalidArgument("alpha is not used by power utility")
        elif self.kind == LOGARITHMIC:
            if self.alpha is not None or self.gamma is not None:
                raise InvalidArgument("log utility takes no parameter")
        else:
            raise InvalidArgument(f"unknown utility kind {self.kind!r}")

    @classmethod
    def exponential(cls, alpha):
        return cls(EXPONENTIAL, alpha=float(alpha))

    @classmethod
    def power(cls, gamma):
        return cls(POWER, gamma=float(gamma))

    @classmethod
    def log(cls):
        return cls(LOGARITHMIC)

    def driver(self, t, z, theta, s):
        if self.kind == EXPONENTIAL:
            return driver_exp(t, z, theta, s, self.alpha)
        if self.kind == POWER:
            return driver_pow(t, z, theta, s, self.gamma)
        return driver_log(t, theta, s) * np.ones(np.shape(np.atleast_2d(z))[0])

    def strategy_target(self, z, theta):
        """Point whose projection onto the constraint set is the optimal strategy."""
        if self.kind == EXPONENTIAL:
            return z + theta / self.alpha
        if self.kind == POWER:
            return (z + theta) / (1.0 - self.gamma)
        return theta + 0.0 * z

    def utility(self, x):
        """Terminal reward in the normalisation of the value formulas.

        Power utility is returned as ``x^gamma`` (gamma times ``x^gamma/gamma``),
        matching ``V(x) = x^gamma exp(Y_0)``.
        """
        x = np.asarray(x, dtype=float)
        if self.kind == EXPONENTIAL:
            return -np.exp(-self.alpha * x)
        if self.kind == POWER:
            return x**self.gamma
        return np.log(x)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.gamma is not None:
            out["gamma"] = self.gamma
        return out


@dataclass
class Liability:
    """Bounded terminal liability ``F = payoff(W_T)``; payoff maps (n, m) -> (n,)."""

    payoff: Callable
    bound: float
    name: str = "custom"

    def __post_init__(self):
        if not np.isfinite(self.bound) or self.bound < 0:
            raise InvalidArgument("liability bound must be finite and nonnegative")

    def __call__(self, w_terminal):
        w = np.asarray(w_terminal, dtype=float)
        w = w.reshape(-1, 1) if w.ndim == 1 else w
        vals = np.asarray(self.payoff(w), dtype=float).reshape(-1)
        if vals.shape[0] == 1 and w.shape[0] > 1:
            vals = np.full(w.shape[0], vals[0])
        if np.any(np.abs(vals) > self.bound * (1 + 1e-12)):
            raise InvalidArgument(f"liability exceeds its declared bound {self.bound}")
        return vals

    @classmethod
    def zero(cls):
        return cls(lambda w: np.zeros(w.shape[0]), 0.0, "zero")

    @classmethod
    def constant(cls, value):
        return cls(lambda w: np.full(w.shape[0], float(value)), abs(float(value)), "constant")

    @classmethod
    def clipped(cls, lower=-1.0, upper=1.0, scale=1.0, component=0, shift=0.0):
        """``clip(scale * W_T[component] + shift, lower, upper)``."""
        if lower > upper:
            raise InvalidArgument("clipped payoff needs lower <= upper")

        def payoff(w):
            return np.clip(scale * w[:, component] + shift, lower, upper)

        return cls(payoff, max(abs(lower), abs(upper)), "clipped")


def _rows(x, m):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, m) if x.ndim <= 1 else x


def _out(vals, z, m):
    single = np.ndim(z) == 0 or (np.ndim(z) == 1 and np.shape(z)[0] == m)
    return float(vals[0]) if single and len(vals) == 1 else vals


def driver_exp(t, z, theta, s: InducedSet, alpha: float):
    """``-(alpha/2) dist^2(z + theta/alpha, C) + z.theta + |theta|^2/(2 alpha)``."""
    if not alpha > 0:
        raise InvalidArgument("alpha must be positive")
    Z, TH = np.broadcast_arrays(_rows(z, s.m), _rows(theta, s.m))
    dist = np.atleast_1d(distance(Z + TH / alpha, s))
    vals = -0.5 * alpha * dist**2 + np.sum(Z * TH, axis=1) + np.sum(TH * TH, axis=1) / (2 * alpha)
    return _out(vals, z, s.m)


def driver_pow(t, z, theta, s: InducedSet, gamma: float):
    """``(g(1-g)/2) dist^2((z+theta)/(1-g), C) - g|z+theta|^2/(2(1-g)) - |z|^2/2``."""
    if not 0 < gamma < 1:
        raise InvalidArgument("gamma must lie in (0, 1)")
    Z, TH = np.broadcast_arrays(_rows(z, s.m), _rows(theta, s.m))
    a = Z + TH
    dist = np.atleast_1d(distance(a / (1 - gamma), s))
    vals = (0.5 * gamma * (1 - gamma) * dist**2 - gamma * np.sum(a * a, axis=1) / (2 * (1 - gamma))
            - 0.5 * np.sum(Z * Z, axis=1))
    return _out(vals, z, s.m)


def driver_log(t, theta, s: InducedSet):
    """``dist^2(theta, C)/2 - |theta|^2/2``; independent of z."""
    TH = _rows(theta, s.m)
    dist = np.atleast_1d(distance(TH, s))
    vals = 0.5 * dist**2 - 0.5 * np.sum(TH * TH, axis=1)
    return _out(vals, theta, s.m)


def clamp_z(z, z_cap):
    """Radially shrink rows with ``|z| > z_cap``; returns (clamped, mask of clamped rows)."""
    Z = np.asarray(z, dtype=float)
    norms = np.linalg.norm(Z, axis=-1, keepdims=True)
    hit = norms[..., 0] > z_cap
    scale = np.where(norms > z_cap, z_cap / np.where(norms > 0, norms, 1.0), 1.0)
    return Z * scale, hit


def default_z_cap(theta_max: float) -> float:
    return 50.0 * theta_max + 10.0


def growth_constants(utility: UtilitySpec, theta_max: float, k1: float):
    """Constants (c0, c1) with ``|f(t, z)| <= c0 + c1 |z|^2``.

    Built from ``dist(y, C) <= |y| + k1`` and ``|z||theta| <= (|z|^2 + |theta|^2)/2``.
    """
    th, k1 = float(theta_max), float(k1)
    if utility.kind == EXPONENTIAL:
        a = utility.alpha
        # dist^2(z + theta/a) <= 2|z|^2 + 2(theta/a + k1)^2
        c1 = a + 0.5
        c0 = a * (th / a + k1) ** 2 + 0.5 * th**2 + th**2 / (2 * a)
        return c0, c1
    if utility.kind == POWER:
        g = utility.gamma
        # dist^2((z+theta)/(1-g)) <= 2|z+theta|^2/(1-g)^2 + 2 k1^2, |z+theta|^2 <= 2|z|^2 + 2|theta|^2
        c1 = 0.5 + 3 * g / (1 - g)
        c0 = 3 * g / (1 - g) * th**2 + g * (1 - g) * k1**2
        return c0, c1
    return 0.5 * (th + k1) ** 2 + 0.5 * th**2, 0.0


def _require_cone(s):
    if not s.base.is_convex_cone:
        raise InvalidArgument(f"{s.base.kind} set is not a convex cone")


def sekine_exp_residual(t, z, theta, cone: InducedSet, alpha: float):
    """``alpha f(z/alpha)`` minus the cone-form exponential generator ``theta.P - |z - P|^2/2``,
    with ``P`` the projection of ``z + theta``."""
    _require_cone(cone)
    Z, TH = np.broadcast_arrays(_rows(z, cone.m), _rows(theta, cone.m))
    P = np.atleast_2d(project(Z + TH, cone))
    fbar = np.sum(TH * P, axis=1) - 0.5 * np.sum((Z - P) ** 2, axis=1)
    lhs = alpha * np.atleast_1d(driver_exp(t, Z / alpha, TH, cone, alpha))
    return _out(lhs - fbar, z, cone.m)


def sekine_pow_residual(t, z, theta, cone: InducedSet, gamma: float):
    """``(1-g) g(z/(1-g))`` minus the power driver, with ``g`` the cone-form generator

    ``g(y) = |theta|^2/2 - |theta - P|^2/2 - (1-g)|y - P|^2/2``, ``P`` projecting
    ``y + theta/(1-g)``.
    """
    _require_cone(cone)
    Z, TH = np.broadcast_arrays(_rows(z, cone.m), _rows(theta, cone.m))
    Y = Z / (1 - gamma)
    P = np.atleast_2d(project(Y + TH / (1 - gamma), cone))
    g = (0.5 * np.sum(TH * TH, axis=1) - 0.5 * np.sum((TH - P) ** 2, axis=1)
         - 0.5 * (1 - gamma) * np.sum((Y - P) ** 2, axis=1))
    f = np.atleast_1d(driver_pow(t, Z, TH, cone, gamma))
    return _out((1 - gamma) * g - f, z, cone.m)
