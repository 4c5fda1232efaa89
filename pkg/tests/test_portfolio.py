import numpy as np
import pytest

from utilbsde import (Box, FiniteSet, FullSpace, InducedSet, InvalidArgument, Liability, UtilitySpec,
                      admissibility_proxy, dynamic_principle_check, optimal_strategy_exp, optimal_strategy_log,
                      optimal_strategy_pow, r_process, solve_bsde_lsmc, supermartingale_test, value_exp,
                      value_log, value_pow)
from utilbsde.portfolio import (MARTINGALE, NOT_SUPERMARTINGALE, SUPERMARTINGALE, AMOUNT, Strategy,
                                adversarial_family, dominance_check, exp_drift, expected_utility)

FULL = InducedSet(FullSpace(1), [[1.0]])
ZERO = InducedSet(FiniteSet([0.0]), [[1.0]])
EXP = UtilitySpec.exponential(1.0)
POW = UtilitySpec.power(0.5)


@pytest.fixture(scope="module")
def exp_solution(small_ens):
    return solve_bsde_lsmc(small_ens, None, EXP, FULL, 0.2)


def test_strategy_examples(exp_solution, small_ens):
    p = optimal_strategy_exp(exp_solution, 0.2, FULL, 1.0)
    np.testing.assert_allclose(p.values, 0.2, atol=1e-8)
    assert np.all(optimal_strategy_exp(exp_solution, 0.2, ZERO, 1.0).values == 0.0)
    tie = InducedSet(FiniteSet([-1.0, 1.0]), [[1.0]])
    assert np.all(optimal_strategy_exp(exp_solution, 0.0, tie, 1.0).values == -1.0)

    pw = solve_bsde_lsmc(small_ens, None, POW, FULL, 0.2)
    np.testing.assert_allclose(optimal_strategy_pow(pw, 0.2, FULL, 0.5).values, 0.4, atol=1e-8)
    box = InducedSet(Box([0.0], [0.1]), [[1.0]])
    np.testing.assert_allclose(optimal_strategy_pow(pw, 0.2, box, 0.5).values, 0.1)


def test_log_strategy_examples():
    th = np.full((4, 1), 0.3)
    np.testing.assert_allclose(optimal_strategy_log(th, FULL).values, 0.3)
    np.testing.assert_allclose(optimal_strategy_log(th, InducedSet(Box([0.0], [0.1]), [[1.0]])).values, 0.1)
    assert np.all(optimal_strategy_log(th, InducedSet(FiniteSet([-1.0, 1.0]), [[1.0]])).values == 1.0)


def test_values():
    assert value_exp(1.0, -0.0225, 2.0) == pytest.approx(-np.exp(-2.045))
    assert value_pow(1.0, 0.02, 0.5) == pytest.approx(np.exp(0.02))
    assert value_log(1.0, 0.025) == pytest.approx(0.025)
    with pytest.raises(InvalidArgument):
        value_pow(0.0, 0.02, 0.5)
    with pytest.raises(InvalidArgument):
        value_log(-1.0, 0.0)


def test_r_process_starts_constant(exp_solution, small_ens):
    p = optimal_strategy_exp(exp_solution, 0.2, FULL, 1.0)
    R = r_process(EXP, 0.5, p, exp_solution, small_ens, 0.2, FULL)
    assert np.ptp(R[:, 0]) == 0.0
    assert R[0, 0] == pytest.approx(-np.exp(-(0.5 + 0.02)))


def test_optimum_martingale_and_zero_supermartingale(exp_solution, small_ens):
    p = optimal_strategy_exp(exp_solution, 0.2, FULL, 1.0)
    opt = supermartingale_test(r_process(EXP, 0.0, p, exp_solution, small_ens, 0.2, FULL))
    assert opt.verdict == MARTINGALE and opt.flat
    zero = Strategy(np.zeros((1, small_ens.n_steps, 1)), np.zeros((1, small_ens.n_steps, 1)), AMOUNT)
    drift = exp_drift(np.zeros_like(exp_solution.Z), exp_solution.Z, 0.2, FULL, 1.0, EXP.driver)
    test = supermartingale_test(r_process(EXP, 0.0, zero, exp_solution, small_ens, 0.2, FULL), drift=drift)
    assert test.verdict == SUPERMARTINGALE
    assert np.all(test.mean_drift > 0)


def test_flat_when_theta_zero(small_ens):
    sol = solve_bsde_lsmc(small_ens, None, EXP, FULL, 0.0)
    zero = np.zeros((1, small_ens.n_steps, 1))
    R = r_process(EXP, 0.0, Strategy(zero, zero, AMOUNT), sol, small_ens, 0.0, FULL)
    assert supermartingale_test(R).flat


def test_verdict_rules():
    rng = np.random.default_rng(0)
    noise = rng.normal(size=(5000, 5)).cumsum(axis=1)
    R = np.hstack([np.zeros((5000, 1)), noise])
    assert supermartingale_test(R).verdict == MARTINGALE
    assert supermartingale_test(R - np.arange(6)).verdict == SUPERMARTINGALE
    assert supermartingale_test(R + np.arange(6)).verdict == NOT_SUPERMARTINGALE


def test_r_process_grid_mismatch(exp_solution, small_ens):
    bad = Strategy(np.zeros((1, 3, 1)), np.zeros((1, 3, 1)), AMOUNT)
    with pytest.raises(InvalidArgument):
        r_process(EXP, 0.0, bad, exp_solution, small_ens, 0.2, FULL)


def test_dynamic_checks(exp_solution, small_ens):
    p = optimal_strategy_exp(exp_solution, 0.2, FULL, 1.0)
    N = small_ens.n_steps
    for tau in (0, N // 2):
        assert dynamic_principle_check(exp_solution, p, small_ens, 0.0, EXP, tau, 0.2).passed
    end = dynamic_principle_check(exp_solution, p, small_ens, 0.0, EXP, N, 0.2)
    assert end.passed and end.residual <= 1e-12
    with pytest.raises(InvalidArgument):
        dynamic_principle_check(exp_solution, p, small_ens, 0.0, EXP, N + 1, 0.2)


def test_dominance_and_family(small_ens):
    F = Liability.clipped()
    box = InducedSet(Box([0.0], [0.1]), [[1.0]])
    sol = solve_bsde_lsmc(small_ens, F, EXP, box, 0.2)
    p = optimal_strategy_exp(sol, 0.2, box, 1.0)
    fam = adversarial_family(EXP, p, 0.2, box, small_ens, seed=1)
    assert {"zero", "jittered_optimum"} <= set(fam)
    for strat in fam.values():
        assert admissibility_proxy(strat, small_ens, box).membership
    res = dominance_check(EXP, 0.0, sol.y0, p, fam, small_ens, 0.2, F)
    assert res["passed"], res


def test_admissibility_reports_violation(small_ens):
    box = InducedSet(Box([0.0], [0.1]), [[1.0]])
    vals = np.full((1, small_ens.n_steps, 1), 0.05)
    vals[0, 7] = 0.5
    rep = admissibility_proxy(vals, small_ens, box)
    assert not rep.membership and rep.violation == (0, 7)


def test_expected_utility_zero_strategy(small_ens):
    zero = Strategy(np.zeros((1, small_ens.n_steps, 1)), np.zeros((1, small_ens.n_steps, 1)), AMOUNT)
    mean, se = expected_utility(EXP, 0.0, zero, small_ens, 0.0)
    assert mean == -1.0 and se == 0.0


def test_value_laws():
    for x, lam, y0 in ((1.0, 2.0, 0.02), (0.3, 5.0, -0.1)):
        assert value_pow(lam * x, y0, 0.4) == pytest.approx(lam**0.4 * value_pow(x, y0, 0.4), rel=1e-14)
        assert value_exp(x + lam, y0, 1.5) == pytest.approx(np.exp(-1.5 * lam) * value_exp(x, y0, 1.5), rel=1e-14)


def test_set_monotonicity_of_values(small_ens):
    F = Liability.clipped()
    small = InducedSet(Box([0.0], [0.1]), [[1.0]])
    large = InducedSet(Box([-0.5], [0.5]), [[1.0]])
    for util in (EXP,):
        v_small = value_exp(0.0, solve_bsde_lsmc(small_ens, F, util, small, 0.2).y0, 1.0)
        v_large = value_exp(0.0, solve_bsde_lsmc(small_ens, F, util, large, 0.2).y0, 1.0)
        assert v_small <= v_large + 2e-3
    v_small = value_pow(1.0, solve_bsde_lsmc(small_ens, None, POW, small, 0.2).y0, 0.5)
    v_large = value_pow(1.0, solve_bsde_lsmc(small_ens, None, POW, large, 0.2).y0, 0.5)
    assert v_small <= v_large + 2e-3
    from utilbsde import solve_log_quadrature
    grid = small_ens.grid
    th = np.full((small_ens.n_steps, 1), 0.3)
    assert solve_log_quadrature(grid, th, small) <= solve_log_quadrature(grid, th, large)
