"""Named verification suites run by ``utilbsde verify``.

Each suite returns rows ``{"check", "value", "tolerance", "passed"}``.
"""
from __future__ import annotations

import numpy as np

from .constraints import (Box, FiniteSet, FullSpace, GeneratedCone, InducedSet, NonnegativeOrthantCone,
                          cone_identity_residual)
from .drivers import Liability, UtilitySpec, sekine_exp_residual, sekine_pow_residual
from .errors import InvalidArgument
from .market import MarketModel
from .pde import PdeGrid, solve_bsde_pde
from .pipeline import Problem, solve_policy
from .lsmc import solve_log_quadrature
from .portfolio import MARTINGALE, optimal_strategy_log, value_log, value_pow


def _row(check, val, tol, passed=None):
    val = float(val)
    return {"check": check, "value": val, "tolerance": float(tol),
            "passed": bool(abs(val) <= tol) if passed is None else bool(passed)}


def merton_market(theta, m=1):
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (m,)).copy()
    return MarketModel(m, m, theta, np.eye(m), epsilon=0.5, K=2.0)


def suite_merton(seed=1, paths=100_000):
    rows = []
    exp = Problem(merton_market(0.2), FullSpace(1), UtilitySpec.exponential(1.0))
    rep = solve_policy(exp, paths, seed)
    rows.append(_row("exp lsmc y0 + 0.02", rep.y0 + 0.02, 2e-3))
    pde = solve_bsde_pde(0.2, None, UtilitySpec.exponential(1.0), InducedSet(FullSpace(1), [[1.0]]),
                         PdeGrid(M=400, N=1600))
    rows.append(_row("exp pde y0 + 0.02", pde.y0 + 0.02, 5e-4))
    pw = Problem(merton_market(0.2), FullSpace(1), UtilitySpec.power(0.5))
    rep = solve_policy(pw, paths, seed)
    rows.append(_row("power lsmc y0 - 0.02", rep.y0 - 0.02, 2e-3))
    rows.append(_row("power V(1) - exp(0.02)", value_pow(1.0, rep.y0, 0.5) - np.exp(0.02), 3e-3))
    rows.append(_row("power max |rho* - 0.4|", np.max(np.abs(rep.strategy.values - 0.4)), 5e-3))
    box = InducedSet(Box([0.0], [0.1]), [[1.0]])
    grid = np.linspace(0.0, 1.0, 65)
    y0 = solve_log_quadrature(grid, np.full((64, 1), 0.3), box)
    rows.append(_row("log V(1) - 0.025", value_log(1.0, y0) - 0.025, 1e-10))
    rho = optimal_strategy_log(np.full((64, 1), 0.3), box).values
    rows.append(_row("log max |rho* - 0.1|", np.max(np.abs(rho - 0.1)), 1e-12))
    return rows


def random_cones(rng, count):
    """Random convex cones in noise coordinates: full space, orthant and generated cones."""
    cones = []
    for k in range(count):
        m = int(rng.integers(1, 4))
        d = int(rng.integers(1, m + 1))
        sigma = rng.standard_normal((d, m))
        while np.linalg.cond(sigma @ sigma.T) > 50:
            sigma = rng.standard_normal((d, m))
        kind = k % 3
        if kind == 0:
            base = FullSpace(d)
        elif kind == 1:
            base = NonnegativeOrthantCone(d)
        else:
            base = GeneratedCone(rng.standard_normal((int(rng.integers(1, 4)), d)))
        cones.append(InducedSet(base, sigma))
    return cones


def suite_cones(seed=1, n_cones=50, per_cone=200):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for cone in random_cones(rng, n_cones):
        a = 2.0 * rng.standard_normal((per_cone, cone.m))
        worst = max(worst, float(np.max(np.abs(cone_identity_residual(a, cone)))))
    return [_row(f"cone identity residual ({n_cones * per_cone} points)", worst, 1e-10)]


def suite_sekine(seed=1, n_cones=50, per_cone=200):
    rng = np.random.default_rng(seed)
    worst_exp = worst_pow = 0.0
    for cone in random_cones(rng, n_cones):
        z = rng.standard_normal((per_cone, cone.m))
        theta = rng.standard_normal((per_cone, cone.m))
        alpha = float(rng.uniform(0.2, 3.0))
        gamma = float(rng.uniform(0.05, 0.95))
        worst_exp = max(worst_exp, float(np.max(np.abs(sekine_exp_residual(0.0, z, theta, cone, alpha)))))
        worst_pow = max(worst_pow, float(np.max(np.abs(sekine_pow_residual(0.0, z, theta, cone, gamma)))))
    n = n_cones * per_cone
    return [_row(f"exponential cone-form driver residual ({n} triples)", worst_exp, 1e-10),
            _row(f"power cone-form driver residual ({n} triples)", worst_pow, 1e-10)]


def constrained_benchmarks():
    """Name -> Problem for the box, finite-set and orthant benchmarks."""
    clipped = Liability.clipped()
    return {
        "box exponential": Problem(merton_market(0.2), Box([0.0], [0.1]), UtilitySpec.exponential(1.0), clipped),
        "finite exponential": Problem(merton_market(0.2), FiniteSet([-0.5, 0.0, 0.5]),
                                      UtilitySpec.exponential(1.0), clipped),
        "orthant exponential": Problem(merton_market([0.2, -0.1], 2), NonnegativeOrthantCone(2),
                                       UtilitySpec.exponential(1.0), clipped),
        "box power": Problem(merton_market(0.2), Box([0.0], [0.1]), UtilitySpec.power(0.5)),
        "box log": Problem(merton_market(0.3), Box([0.0], [0.1]), UtilitySpec.log()),
    }


def suite_supermartingale(seed=1, paths=100_000):
    rows = []
    for name, problem in constrained_benchmarks().items():
        rep = solve_policy(problem, paths, seed, verify={"supermartingale": True, "dominance": True})
        v = rep.verification
        sm = v["supermartingale"]
        rows.append(_row(f"{name}: optimum martingale verdict and flat mean R", sm["max_increment_z"], 3.0,
                         sm["verdict"] == MARTINGALE and sm["flat"]))
        dom = v["dominance"]
        worst = max((r["expected_utility"] - dom["value"]) / r["se"] if r["se"] > 0 else -np.inf
                    for r in dom["family"].values())
        rows.append(_row(f"{name}: adversarial family below value (max z)", worst, 3.0,
                         all(r["passed"] for r in dom["family"].values())))
        opt = dom["optimal"]
        rows.append(_row(f"{name}: optimum attains value (z)", (opt["expected_utility"] - dom["value"]) / opt["se"],
                         3.0))
    return rows


def suite_dynamic(seed=1, paths=100_000, steps=64):
    rows = []
    taus = [0, steps // 4, steps // 2, 3 * steps // 4, steps]
    for name, util in (("exponential", UtilitySpec.exponential(1.0)), ("power", UtilitySpec.power(0.5))):
        problem = Problem(merton_market(0.2), FullSpace(1), util, steps=steps)
        rep = solve_policy(problem, paths, seed, verify={"dynamic": taus})
        for chk in rep.verification["dynamic"]:
            rows.append(_row(f"{name} dynamic principle tau={chk['tau_index']} (excess)",
                             chk["max_excess"], 0.0, chk["passed"]))
    return rows


SUITES = {
    "merton": suite_merton,
    "cones": suite_cones,
    "sekine": suite_sekine,
    "supermartingale": suite_supermartingale,
    "dynamic": suite_dynamic,
}


def run_suite(name, seed=1):
    if name not in SUITES:
        raise InvalidArgument(f"unknown suite {name!r}; choose from {', '.join(sorted(SUITES))}")
    return SUITES[name](seed=seed)
