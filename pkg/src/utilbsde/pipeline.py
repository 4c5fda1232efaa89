"""End-to-end solve and verification of one utility maximisation problem."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import TAU_PROJ, ConstraintSpec
from .drivers import EXPONENTIAL, LOGARITHMIC, POWER, Liability, UtilitySpec
from .errors import InvalidArgument
from .lsmc import RegressionBasis, bmo_norm_estimate, solve_bsde_lsmc, solve_log_quadrature
from .market import MarketModel, induced_sets, simulate_brownian, theta_path, uniform_grid
from .pde import PdeGrid, solve_bsde_pde
from .portfolio import (PolicyReport, adversarial_family, admissibility_proxy, dominance_check,
                        dynamic_principle_check, optimal_strategy, r_process, supermartingale_test, value)

LIABILITY_RULE = ("power and log utility value terminal wealth alone; "
                  "a liability is only defined for exponential utility")


def liability_from_dict(cfg: dict | None) -> Liability | None:
    if not cfg or cfg.get("payoff", "zero") == "zero":
        return None
    params = dict(cfg.get("params", {}))
    kind = cfg["payoff"]
    if kind == "constant":
        liab = Liability.constant(params.get("value", 0.0))
    elif kind == "clipped":
        liab = Liability.clipped(**params)
    else:
        raise InvalidArgument(f"unknown payoff {kind!r}")
    if "bound" in cfg:
        liab.bound = float(cfg["bound"])
    return liab


def utility_from_dict(cfg: dict) -> UtilitySpec:
    kind = cfg["kind"]
    if kind == EXPONENTIAL:
        return UtilitySpec.exponential(cfg["alpha"])
    if kind == POWER:
        return UtilitySpec.power(cfg["gamma"])
    if kind == LOGARITHMIC:
        return UtilitySpec.log()
    raise InvalidArgument(f"unknown utility kind {kind!r}")


def basis_from_dict(cfg: dict | None, m: int) -> RegressionBasis:
    if not cfg:
        return RegressionBasis.default_for(m)
    return RegressionBasis(cfg.get("kind", "bins"), int(cfg.get("degree", 2)),
                           int(cfg.get("bins", RegressionBasis.default_for(m).bins)))


@dataclass
class Problem:
    model: MarketModel
    constraint: ConstraintSpec
    utility: UtilitySpec
    liability: Liability | None = None
    x: float = 1.0
    T: float = 1.0
    steps: int = 64

    def __post_init__(self):
        if self.liability is not None and self.utility.kind != EXPONENTIAL:
            raise InvalidArgument(LIABILITY_RULE)
        if self.constraint.dim != self.model.d:
            raise InvalidArgument(f"constraint lives in R^{self.constraint.dim} but there are {self.model.d} stocks")
        if self.utility.kind != EXPONENTIAL and not self.x > 0:
            raise InvalidArgument("power and log utility need initial wealth x > 0")

    @property
    def grid(self):
        return uniform_grid(self.T, self.steps)


def solve_policy(problem: Problem, n_paths: int, seed: int, method: str = "lsmc",
                 basis: RegressionBasis | None = None, z_cap: float | None = None,
                 pde_grid: PdeGrid | None = None, verify: dict | None = None,
                 tau_proj: float = TAU_PROJ) -> PolicyReport:
    """Solve with LSMC, the PDE or both and run the requested verifications.

    ``verify`` keys: ``supermartingale``, ``dominance``, ``admissibility``
    (booleans) and ``dynamic`` (list of grid indices).  With ``method="pde"``
    only the value is produced; strategies need the simulated solution.
    """
    if method not in ("lsmc", "pde", "both"):
        raise InvalidArgument(f"unknown solver method {method!r}")
    verify = verify or {}
    model, util = problem.model, problem.utility
    grid = problem.grid
    sets = induced_sets(problem.constraint, model, grid, tau_proj)
    out = {"method": method}

    pde_y0 = pde = None
    if method in ("pde", "both"):
        if model.m != 1:
            raise InvalidArgument("the PDE solver needs m = 1")
        set_fn = sets if not isinstance(sets, list) else (
            lambda t: sets[min(int(np.searchsorted(grid, t, side="right")) - 1, len(sets) - 1)])
        pde = solve_bsde_pde(model, problem.liability, util, set_fn, pde_grid or PdeGrid(T=problem.T))
        pde_y0 = pde.y0
        out["pde"] = {"y0": pde.y0, "M": pde.grid.M, "N": pde.grid.N}
    if method == "pde":
        return PolicyReport(pde_y0, float(value(util, problem.x, pde_y0)), problem.x, util, None, out, None, pde)

    ens = simulate_brownian(model, grid, n_paths, seed)
    theta = theta_path(model, ens)
    basis = basis or RegressionBasis.default_for(model.m)
    sol = solve_bsde_lsmc(ens, problem.liability, util, sets, theta, basis, z_cap)
    d = sol.diagnostics
    out["lsmc"] = {
        "y0": sol.y0,
        "clamp_fraction": d["clamp_fraction"],
        "warnings": list(d["warnings"]),
        "envelope_ok": d["envelope_ok"],
        "max_martingale_residual": float(np.max(np.abs(d["martingale_residual_mean"]))),
        # SE floored at round-off so deterministic solutions do not report huge z
        "max_martingale_residual_z": float(np.max(np.abs(d["martingale_residual_mean"])
                                                  / np.maximum(d["martingale_residual_se"], 1e-12))),
        "basis": {"kind": basis.kind, "degree": basis.degree, "bins": basis.bins},
    }
    if util.kind == LOGARITHMIC and not model.state_dependent:
        out["log_quadrature_y0"] = solve_log_quadrature(grid, theta[0], sets)
    if pde_y0 is not None:
        out["cross_solver_delta"] = abs(pde_y0 - sol.y0)

    strategy = optimal_strategy(util, sol, theta, sets)
    out["series"] = {"t": grid, "mean_Y": sol.Y.mean(axis=0),
                     "mean_strategy": strategy.values.mean(axis=0)}
    out["bmo"] = {"Z": bmo_norm_estimate(sol.Z, ens, basis), "strategy": bmo_norm_estimate(strategy.values, ens, basis)}

    if verify.get("supermartingale"):
        R = r_process(util, problem.x, strategy, sol, ens, theta, sets, problem.liability)
        mt = supermartingale_test(R)
        out["supermartingale"] = {"verdict": mt.verdict, "flat": mt.flat, "max_increment_z": mt.max_increment_z}
        out["series"]["mean_R"] = mt.mean_R
        out["series"]["se_R"] = mt.se_R
    if verify.get("dominance"):
        family = adversarial_family(util, strategy, theta, sets, ens, seed=seed)
        out["dominance"] = dominance_check(util, problem.x, sol.y0, strategy, family, ens, theta, problem.liability)
    if verify.get("dynamic") and util.kind != LOGARITHMIC:
        checks = [dynamic_principle_check(sol, strategy, ens, problem.x, util, int(k), theta, problem.liability, basis)
                  for k in verify["dynamic"]]
        out["dynamic"] = [c.__dict__ for c in checks]
    if verify.get("admissibility"):
        adm = admissibility_proxy(strategy, ens, sets, basis)
        out["admissibility"] = {**adm.__dict__, "passed": adm.passed}
    return PolicyReport(sol.y0, float(value(util, problem.x, sol.y0)), problem.x, util, strategy, out, sol, pde)
