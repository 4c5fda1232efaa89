"""Utility maximisation under closed constraint sets via quadratic BSDEs."""
from .constraints import (Box, CustomGrid, FiniteSet, FullSpace, GeneratedCone, InducedSet,
                          NonnegativeOrthantCone, constraint_from_dict, contains, distance, grid_select,
                          project, project_with_pullback)
from .drivers import Liability, UtilitySpec, driver_exp, driver_log, driver_pow
from .estimators import ExponentialUtilityMaximizer, LogUtilityMaximizer, PowerUtilityMaximizer
from .errors import (BasisDegeneracy, ConvergenceFailure, DivergenceError, EllipticityViolation,
                     InvalidArgument)
from .lsmc import BsdeSolution, RegressionBasis, bmo_norm_estimate, solve_bsde_lsmc, solve_log_quadrature
from .market import (MarketModel, PathEnsemble, induced_sets, market_price_of_risk, simulate_brownian,
                     uniform_grid, validate_model, wealth_amount, wealth_fraction)
from .pde import PdeGrid, evaluate_solution, solve_bsde_pde
from .portfolio import (Strategy, admissibility_proxy, dynamic_principle_check, optimal_strategy_exp,
                        optimal_strategy_log, optimal_strategy_pow, r_process, supermartingale_test,
                        value_exp, value_log, value_pow)

__version__ = "0.1.0"
