import numpy as np
import pytest
from sklearn.base import clone

from utilbsde import (Box, ExponentialUtilityMaximizer, FiniteSet, InvalidArgument, LogUtilityMaximizer,
                      PowerUtilityMaximizer)


@pytest.fixture(scope="module")
def increments(small_ens):
    return small_ens.dW


def test_exponential_fit_predict(increments):
    est = ExponentialUtilityMaximizer(alpha=1.0, theta=0.2).fit(increments)
    assert est.y0_ == pytest.approx(-0.02, abs=2e-3)
    assert est.value(0.0) == pytest.approx(-np.exp(-0.02), abs=3e-3)
    out = est.predict([[0.0, 0.0], [0.5, 1.2], [0.9, -2.0]])
    np.testing.assert_allclose(out, 0.2, atol=1e-6)
    assert est.feasible()


def test_power_and_log(increments):
    est = PowerUtilityMaximizer(gamma=0.5, theta=0.2, constraint=Box([0.0], [0.1])).fit(increments)
    np.testing.assert_allclose(est.predict([[0.3, 0.1]]), 0.1)
    log = LogUtilityMaximizer(theta=0.3, constraint=Box([0.0], [0.1])).fit(increments)
    assert log.y0_ == pytest.approx(0.025, abs=1e-12)
    np.testing.assert_allclose(log.predict([[0.1, 0.0]]), 0.1)


def test_liability_rule(increments):
    y = np.ones(increments.shape[0])
    with pytest.raises(InvalidArgument):
        PowerUtilityMaximizer(theta=0.2).fit(increments, y)
    est = ExponentialUtilityMaximizer(theta=0.2, constraint=FiniteSet([0.0])).fit(increments, 0.5 * y)
    assert est.y0_ == pytest.approx(0.5, abs=1e-9)


def test_sklearn_conventions(increments):
    est = ExponentialUtilityMaximizer(alpha=2.0, theta=0.1)
    params = est.get_params()
    assert params["alpha"] == 2.0 and "theta" in params
    twin = clone(est).set_params(alpha=3.0)
    assert twin.alpha == 3.0 and est.alpha == 2.0
    with pytest.raises(Exception):
        est.predict([[0.0, 0.0]])


def test_score_prefers_optimum(increments, small_ens):
    train, test = increments[:10_000], increments[10_000:]
    opt = ExponentialUtilityMaximizer(theta=0.2).fit(train)
    capped = ExponentialUtilityMaximizer(theta=0.2, constraint=Box([0.0], [0.05])).fit(train)
    assert opt.score(test) > capped.score(test)


def test_predict_validates(increments):
    est = ExponentialUtilityMaximizer(theta=0.2).fit(increments)
    with pytest.raises(InvalidArgument):
        est.predict([[1.0, 0.0]])
    with pytest.raises(InvalidArgument):
        est.predict([[0.1, 0.0, 0.0]])
