"""Tests for the change of measure and the martingale z-test"""

import copy
import math

import numpy as np
import pytest

from app.config import build_market
from app.errors import DomainError, SpecError
from app.market import simulate_assets
from app.measure import (brownian_drift_check, brownian_under_q, density_normalization, density_path,
                         girsanov_parameters, martingale_ztest, require_paths, weighted_mean, ztest_frame)
from conftest import JUMPY_MARKET, PRICED_MARKET


def test_girsanov_parameters(priced_spec):
    gir = girsanov_parameters(priced_spec)
    np.testing.assert_allclose(gir.psi0, [(0.03 - 0.08) / 0.2, (0.01 - 0.05) / 0.3])
    # security 1 in regime 0: (r_0 - mu) / (sigma * lambda_01)
    assert math.isclose(gir.psi(0, 1), (0.03 - 0.05) / (0.3 * 0.5))
    assert math.isclose(gir.psi(1, 0), (0.01 - 0.04) / (0.4 * 1.0))
    assert np.isnan(gir.psij[0, 0])
    with pytest.raises(DomainError):
        gir.psi(1, 1)


def test_compliant_market_has_no_switch_risk_premium(jumpy_spec):
    np.testing.assert_allclose(girsanov_parameters(jumpy_spec).off_diagonal(), 0.0)


def test_density_must_stay_positive():
    market = copy.deepcopy(PRICED_MARKET)
    market["jump_securities"]["mu"][0][1] = 0.5
    with pytest.raises(SpecError) as info:
        girsanov_parameters(build_market(market))
    assert info.value.field == "psi[1][0]"


def test_single_regime_density_is_exponential_martingale(single_regime_spec):
    gir = girsanov_parameters(single_regime_spec)
    path = simulate_assets(single_regime_spec, 1.0, 0.01, 1, 0, seed=3)
    psi0 = gir.psi0[0]
    expected = psi0 * path.brownian - 0.5 * psi0 ** 2 * path.times
    np.testing.assert_allclose(density_path(gir, path).log_values, expected, atol=1e-12)
    np.testing.assert_allclose(brownian_under_q(gir, path), path.brownian - psi0 * path.times, atol=1e-12)


def test_density_normalization(priced_spec):
    gir = girsanov_parameters(priced_spec)
    mean, stderr = density_normalization(priced_spec, gir, 1.0, 2000, seed=8)
    assert abs(mean - 1.0) < 3 * stderr


def test_brownian_motion_has_no_drift_under_q(priced_spec):
    gir = girsanov_parameters(priced_spec)
    row = brownian_drift_check(priced_spec, gir, 1.0, 2000, seed=12)
    assert abs(row.z) < 3


def test_weighted_mean():
    mean, stderr = weighted_mean(np.array([1.0, 2.0, 3.0, 4.0]), np.array([1.0, 1.0, 0.5, 0.5]))
    assert math.isclose(mean, (1.0 + 2.0 + 1.5 + 2.0) / 4)
    assert stderr > 0
    with pytest.raises(DomainError):
        weighted_mean(np.array([1.0]))


def test_weighted_mean_of_identical_samples_is_exact():
    value = math.sqrt(2.0) * math.exp(0.015)
    mean, stderr = weighted_mean(np.full(1000, value))
    assert mean == value
    assert stderr == 0.0


def test_too_few_paths():
    with pytest.raises(DomainError):
        require_paths(50)
    require_paths(100)


class TestMartingaleZTest:

    ASSETS = ["B", "S0", "S_{0}", "S_{1}", "S^{(2)}", "S_{1}^{(1)}"]

    def test_compliant_market_passes(self, jumpy_spec):
        gir = girsanov_parameters(jumpy_spec)
        rows = martingale_ztest(jumpy_spec, gir, self.ASSETS, [0.5, 1.0], 1000, seed=31, K=2, L=1)
        assert len(rows) == 2 * len(self.ASSETS)
        assert [row.checkpoint for row in rows[:len(self.ASSETS)]] == [0.5] * len(self.ASSETS)
        for row in rows:
            assert abs(row.z) < 3, row

    def test_mispriced_jump_security_is_detected(self, jumpy_spec):
        gir = girsanov_parameters(jumpy_spec)
        market = copy.deepcopy(JUMPY_MARKET)
        market["jump_securities"]["mu"][1][1] += 0.02
        mispriced = build_market(market)
        # own-regime drift does not enter the risk premia
        np.testing.assert_allclose(girsanov_parameters(mispriced).off_diagonal(), gir.off_diagonal())
        compliant = martingale_ztest(jumpy_spec, gir, ["S_{1}"], [10.0], 20000, seed=7, K=1, L=0)[0]
        drifted = martingale_ztest(mispriced, gir, ["S_{1}"], [10.0], 20000, seed=7, K=1, L=0)[0]
        assert drifted.mean > compliant.mean
        assert drifted.z > 3, drifted

    def test_results_do_not_depend_on_thread_count(self, jumpy_spec):
        gir = girsanov_parameters(jumpy_spec)
        single = martingale_ztest(jumpy_spec, gir, None, [1.0], 200, seed=4, K=2, L=1, threads=1)
        pooled = martingale_ztest(jumpy_spec, gir, None, [1.0], 200, seed=4, K=2, L=1, threads=4)
        assert ztest_frame(single).equals(ztest_frame(pooled))

    def test_unknown_asset(self, jumpy_spec):
        gir = girsanov_parameters(jumpy_spec)
        with pytest.raises(DomainError):
            martingale_ztest(jumpy_spec, gir, ["S_{5}"], [1.0], 200, seed=0)

    def test_checkpoints_must_be_positive(self, jumpy_spec):
        gir = girsanov_parameters(jumpy_spec)
        with pytest.raises(DomainError):
            martingale_ztest(jumpy_spec, gir, None, [0.0, 1.0], 200, seed=0)

    def test_report_columns(self, jumpy_spec):
        gir = girsanov_parameters(jumpy_spec)
        rows = martingale_ztest(jumpy_spec, gir, ["S0"], [1.0], 100, seed=0, K=1, L=0)
        assert list(ztest_frame(rows).columns) == ["checkpoint", "asset", "mean", "stderr", "z"]
