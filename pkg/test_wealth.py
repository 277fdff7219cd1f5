"""Tests for portfolio weights, wealth simulation and the expected-utility objectives"""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from app.chain import occupation_expectation
from app.config import build_market
from app.errors import AdmissibilityError, DomainError, SpecError
from app.market import simulate_assets
from app.wealth import (ObjectiveRow, PortfolioWeights, UtilitySpec, deterministic_expected_log,
                        deterministic_expected_power, exact_expected_power, expected_utility_mc, objective_frame,
                        power_generator, regime_exposures, regime_rate, regime_weights, simulate_wealth,
                        weight_labels)
from conftest import SINGLE_REGIME_MARKET

LOG = UtilitySpec.log()
POWER = UtilitySpec.power(0.5)


def _random_portfolio(spec, rng, K, L, scale=0.3):
    """Small random weights, redrawn until admissible in every regime"""
    n = spec.n_regimes
    while True:
        pi = PortfolioWeights.from_vector(rng.uniform(-scale, scale, n + K + n * L), n, K, L)
        try:
            pi.check_admissible(spec)
            return pi
        except AdmissibilityError:
            continue


class TestUtilitySpec:

    def test_log_and_power(self):
        assert LOG(math.e) == pytest.approx(1.0)
        assert POWER(4.0) == pytest.approx(2.0)
        assert POWER.label == "power(0.5)"

    def test_invalid_exponent(self):
        with pytest.raises(SpecError) as info:
            UtilitySpec.power(1.5)
        assert info.value.field == "alpha"
        with pytest.raises(SpecError):
            UtilitySpec("power")
        with pytest.raises(SpecError) as info:
            UtilitySpec("exponential")
        assert info.value.field == "utility"


class TestPortfolioWeights:

    def test_labels_follow_asset_order(self):
        assert weight_labels(2, 2, 1) == ["pi0", "pi_{0}", "pi_{1}", "pi^{(2)}", "pi_{0}^{(1)}", "pi_{1}^{(1)}"]

    def test_vector_layout(self):
        pi = PortfolioWeights(pi0=0.5, pij=[0.1, 0.2], pik=[0.3], pil=[[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(pi.to_vector(), [0.5, 0.1, 0.2, 0.3, 1.0, 3.0, 2.0, 4.0])
        back = PortfolioWeights.from_vector(pi.to_vector(), 2, 2, 2)
        np.testing.assert_array_equal(back.pil, pi.pil)

    def test_padding_keeps_weights(self):
        pi = PortfolioWeights(pi0=0.5, pij=[0.1, 0.2])
        padded = pi.padded(3, 1)
        assert (padded.K, padded.L) == (3, 1)
        np.testing.assert_array_equal(padded.to_vector(), [0.5, 0.1, 0.2, 0.0, 0.0, 0.0, 0.0])
        with pytest.raises(DomainError):
            padded.padded(2, 1)

    def test_non_finite_weights(self):
        with pytest.raises(DomainError):
            PortfolioWeights(pi0=math.nan, pij=[0.0])

    def test_stock_weight_admissibility(self, jumpy_spec):
        with pytest.raises(AdmissibilityError) as info:
            PortfolioWeights(pi0=17.0, pij=[0.0, 0.0]).check_admissible(jumpy_spec)
        assert info.value.factor.startswith("Levy mark")

    def test_jump_security_admissibility(self, jumpy_spec):
        # sigma of security 1 in regime 0 is 0.3
        pi = PortfolioWeights(pi0=0.0, pij=[0.0, -1.0 / 0.3 - 0.1])
        with pytest.raises(AdmissibilityError) as info:
            pi.check_admissible(jumpy_spec)
        assert info.value.factor == "jump security 1 at switch 0->1"

    def test_regime_strategy_length(self, jumpy_spec):
        pi = PortfolioWeights.zeros(2)
        assert len(regime_weights(pi, 2)) == 2
        with pytest.raises(DomainError):
            regime_weights([pi], 2)


def test_single_regime_rate_is_quadratic(single_regime_spec):
    x = 0.7
    pi = PortfolioWeights(pi0=x, pij=[0.0])
    expected = 0.03 + 0.05 * x - 0.5 * 0.04 * x ** 2
    assert regime_rate(single_regime_spec, pi, 0, LOG) == pytest.approx(expected, rel=1e-14)


def test_rate_is_minus_infinity_outside_admissible_set(jumpy_spec):
    exposures = regime_exposures(jumpy_spec, 1, 1, 0)
    X = np.array([[0.5, 0.0, 0.0], [-20.0, 0.0, 0.0]])
    rates = exposures.rate(X, LOG)
    assert np.isfinite(rates[0])
    assert rates[1] == -np.inf


def test_jump_free_wealth_is_exact(single_regime_spec):
    x = 0.7
    path = simulate_assets(single_regime_spec, 2.0, 0.01, 1, 0, seed=4)
    wealth = simulate_wealth(single_regime_spec, PortfolioWeights(pi0=x, pij=[0.0]), path, z0=3.0)
    drift = 0.03 + 0.05 * x - 0.5 * 0.04 * x ** 2
    expected = math.log(3.0) + drift * path.times + x * 0.2 * path.brownian
    np.testing.assert_allclose(wealth.log_values, expected, atol=1e-12)


def test_zero_portfolio_wealth_is_the_bond(jumpy_spec):
    for seed in range(5):
        path = simulate_assets(jumpy_spec, 5.0, 0.01, 2, 1, seed=seed)
        wealth = simulate_wealth(jumpy_spec, PortfolioWeights.zeros(2, 2, 1), path, z0=2.5)
        np.testing.assert_allclose(wealth.values, 2.5 * path.bond, rtol=1e-12)


def test_all_in_stock_wealth_follows_the_stock():
    spec = build_market(dict(SINGLE_REGIME_MARKET, s0=2.0))
    path = simulate_assets(spec, 2.0, 0.01, 1, 0, seed=11)
    wealth = simulate_wealth(spec, PortfolioWeights(pi0=1.0, pij=[0.0]), path, z0=3.0)
    np.testing.assert_allclose(wealth.values, 3.0 * path.prices[:, 0] / 2.0, rtol=1e-12)


@pytest.mark.parametrize("utility, expected", [
    (LOG, math.log(2.0) + 0.03),
    (POWER, 2.0 ** 0.5 * math.exp(0.5 * 0.03)),
])
def test_zero_portfolio_utility_has_no_sampling_error(single_regime_spec, utility, expected):
    mean, stderr = expected_utility_mc(single_regime_spec, PortfolioWeights.zeros(1), utility, 2.0, 1.0, 200,
                                       seed=0)
    assert mean == pytest.approx(expected, rel=1e-12)
    assert stderr == 0.0


def test_wealth_orders_must_match_path(jumpy_spec):
    path = simulate_assets(jumpy_spec, 1.0, None, 2, 1, seed=0)
    with pytest.raises(DomainError):
        simulate_wealth(jumpy_spec, PortfolioWeights.zeros(2, 1, 0), path)


def test_wealth_jump_at_switch_is_product_of_factors(jumpy_spec):
    pi = PortfolioWeights(pi0=0.4, pij=[0.2, 0.3], pil=[[0.5], [0.7]])
    path = simulate_assets(jumpy_spec, 20.0, None, 1, 1, seed=13)
    assert path.events.n_switches > 0
    wealth = simulate_wealth(jumpy_spec, pi, path)
    step = path.switch_steps[0]
    c, j, u = path.regimes[step], path.events.switch_targets[0], path.events.switch_marks[0]
    sigma_j = jumpy_spec.jump_securities.sigma[j, c]
    sigma_l = jumpy_spec.impulse_securities.sigma[j, 0, c]
    factor = (1.0 + pi.pij[j] * sigma_j) * (1.0 + pi.pi0 * u + pi.pil[j, 0] * sigma_l * u)
    exposures = regime_exposures(jumpy_spec, c, 1, 1)
    continuous = exposures.log_drift(pi.to_vector()) * path.dt[step] + 0.4 * jumpy_spec.sigma0[c] * path.dW[step]
    increment = wealth.log_values[step + 1] - wealth.log_values[step]
    assert increment == pytest.approx(continuous + math.log(factor), abs=1e-12)


def test_deterministic_log_matches_monte_carlo(jumpy_spec):
    rng = np.random.default_rng(2024)
    for trial in range(4):
        pi = _random_portfolio(jumpy_spec, rng, 2, 1)
        exact = deterministic_expected_log(jumpy_spec, pi, 0, 1.0, 1.0)
        mean, stderr = expected_utility_mc(jumpy_spec, pi, LOG, 1.0, 1.0, 1500, seed=trial)
        assert abs(mean - exact) < 3 * stderr, (trial, mean, exact, stderr)


def test_deterministic_log_rejects_power_utility(jumpy_spec):
    with pytest.raises(DomainError):
        deterministic_expected_log(jumpy_spec, PortfolioWeights.zeros(2), 0, 1.0, 1.0, utility=POWER)


def test_zero_portfolio_earns_the_short_rate(jumpy_spec):
    value = deterministic_expected_log(jumpy_spec, PortfolioWeights.zeros(2), 0, 2.0, 1.0)
    assert value == pytest.approx(math.log(2.0) + occupation_expectation(jumpy_spec.chain, 1.0, 0) @ jumpy_spec.r)


class TestPowerUtility:

    def test_generator_rows_sum_to_rate(self, jumpy_spec):
        pi = _random_portfolio(jumpy_spec, np.random.default_rng(1), 2, 1)
        gen = power_generator(jumpy_spec, pi, POWER)
        rates = [regime_rate(jumpy_spec, pi, c, POWER) for c in range(2)]
        np.testing.assert_allclose(gen.sum(axis=1), rates, rtol=1e-12, atol=1e-15)

    def test_exact_value_matches_expm(self, jumpy_spec):
        pi = _random_portfolio(jumpy_spec, np.random.default_rng(2), 2, 1)
        gen = power_generator(jumpy_spec, pi, POWER)
        expected = 4.0 ** 0.5 * (np.array([1.0, 0.0]) @ expm(1.5 * gen)).sum()
        assert exact_expected_power(jumpy_spec, pi, 0, 4.0, 1.5, POWER) == pytest.approx(expected, rel=1e-12)

    def test_exact_value_matches_monte_carlo(self, jumpy_spec):
        rng = np.random.default_rng(3)
        for trial in range(3):
            pi = _random_portfolio(jumpy_spec, rng, 2, 1)
            exact = exact_expected_power(jumpy_spec, pi, 0, 1.0, 1.0, POWER)
            mean, stderr = expected_utility_mc(jumpy_spec, pi, POWER, 1.0, 1.0, 1500, seed=100 + trial)
            assert abs(mean - exact) < 3 * stderr, (trial, mean, exact, stderr)

    def test_first_order_expansion_for_short_horizons(self, jumpy_spec):
        pi = _random_portfolio(jumpy_spec, np.random.default_rng(4), 2, 1)
        horizon = 1e-3
        exact = exact_expected_power(jumpy_spec, pi, 0, 1.0, horizon, POWER)
        first_order = deterministic_expected_power(jumpy_spec, pi, 0, 1.0, horizon, POWER)
        assert abs(exact - first_order) < 1e-6

    def test_power_functions_reject_log_utility(self, jumpy_spec):
        with pytest.raises(DomainError):
            exact_expected_power(jumpy_spec, PortfolioWeights.zeros(2), 0, 1.0, 1.0, LOG)
        with pytest.raises(DomainError):
            deterministic_expected_power(jumpy_spec, PortfolioWeights.zeros(2), 0, 1.0, 1.0, LOG)


def test_objective_frame_columns():
    frame = objective_frame([ObjectiveRow(0, 2, 1, 0.05, 0.0)])
    assert list(frame.columns) == ["regime", "K", "L", "objective", "stderr"]
