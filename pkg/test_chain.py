"""Tests for the regime chain: construction, simulation, compensators, uniformization"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from app.chain import (ChainPath, RegimeChain, counting_and_compensator, lambda_j, occupation_expectation,
                       simulate_chain, stationary_distribution, transition_probabilities, uniformized_exp_action)
from app.errors import DomainError, SpecError
from app.parallel import path_rng

TWO_STATE = [[-0.5, 0.5], [1.0, -1.0]]

rates = st.floats(min_value=0.05, max_value=5.0, allow_nan=False)


@st.composite
def generators(draw, max_states=4):
    n = draw(st.integers(min_value=2, max_value=max_states))
    lam = np.array([[draw(rates) for _ in range(n)] for _ in range(n)])
    np.fill_diagonal(lam, 0.0)
    np.fill_diagonal(lam, -lam.sum(axis=1))
    return lam


class TestRegimeChain:

    def test_single_regime_chain(self):
        chain = RegimeChain([[0.0]])
        assert chain.n_regimes == 1
        np.testing.assert_array_equal(chain.initial_state, [1.0])

    def test_row_must_sum_to_zero(self):
        with pytest.raises(SpecError) as info:
            RegimeChain([[-0.5, 0.4], [1.0, -1.0]])
        assert info.value.field == "intensity[0]"

    def test_diagonal_must_be_negative(self):
        with pytest.raises(SpecError) as info:
            RegimeChain([[0.0, 0.0], [1.0, -1.0]])
        assert info.value.field == "intensity[0][0]"

    def test_off_diagonal_must_be_positive(self):
        with pytest.raises(SpecError) as info:
            RegimeChain([[-1.0, 1.0, 0.0], [0.5, -1.0, 0.5], [0.5, 0.5, -1.0]])
        assert info.value.field == "intensity[0][2]"

    def test_single_regime_rejects_nonzero_rate(self):
        with pytest.raises(SpecError):
            RegimeChain([[0.3]])

    def test_initial_distribution(self):
        chain = RegimeChain(TWO_STATE, [0.25, 0.75])
        np.testing.assert_allclose(chain.initial_state, [0.25, 0.75])
        with pytest.raises(SpecError):
            RegimeChain(TWO_STATE, [0.5, 0.6])
        with pytest.raises(SpecError):
            RegimeChain(TWO_STATE, 2)

    @given(generators())
    @settings(max_examples=30, deadline=None)
    def test_valid_generators_construct(self, lam):
        chain = RegimeChain(lam)
        np.testing.assert_allclose(chain.exit_rates, lam.sum(axis=1) - np.diag(lam))
        assert np.all(chain.off_diagonal() >= 0)


def test_left_limit_convention():
    path = ChainPath(horizon=1.0, jump_epochs=np.array([0.4]), states=np.array([0, 1]))
    assert path.state_at(0.4) == 1
    assert path.state_before(0.4) == 0
    assert path.state_before(0.0) == 0
    assert path.state_at(1.0) == 1
    with pytest.raises(DomainError):
        path.state_at(1.5)


def test_lambda_j_reads_left_limit():
    chain = RegimeChain(TWO_STATE)
    path = ChainPath(horizon=1.0, jump_epochs=np.array([0.4]), states=np.array([0, 1]))
    assert lambda_j(chain, path, 1, 0.4) == 0.5
    assert lambda_j(chain, path, 1, 0.6) == 0.0
    assert lambda_j(chain, path, 0, 0.6) == 1.0


def test_single_regime_path_never_jumps():
    path = simulate_chain(RegimeChain([[0.0]]), 5.0, seed=3)
    assert path.n_epochs == 0
    np.testing.assert_allclose(path.occupation_times(5.0), [5.0])


def test_simulated_path_alternates_states():
    path = simulate_chain(RegimeChain(TWO_STATE), 20.0, seed=11)
    assert path.n_epochs > 0
    assert np.all(np.diff(path.states) != 0)
    assert math.isclose(path.occupation_times(20.0, 2).sum(), 20.0)


def test_counting_and_compensator_exact_on_fixed_path():
    chain = RegimeChain(TWO_STATE)
    path = ChainPath(horizon=2.0, jump_epochs=np.array([0.5, 1.25]), states=np.array([0, 1, 0]))
    into_one = counting_and_compensator(chain, path, 1, 2.0)
    assert into_one.count == 1
    # time in regime 0 is 0.5 + 0.75
    assert math.isclose(into_one.compensator, 0.5 * 1.25)
    into_zero = counting_and_compensator(chain, path, 0, 2.0)
    assert into_zero.count == 1
    assert math.isclose(into_zero.compensator, 1.0 * 0.75)


def test_compensated_count_has_zero_mean():
    chain = RegimeChain(TWO_STATE)
    values = []
    for index in range(2000):
        path = simulate_chain(chain, 2.0, path_rng(5, index))
        values.append(counting_and_compensator(chain, path, 1, 2.0).compensated)
    values = np.array(values)
    stderr = values.std(ddof=1) / math.sqrt(values.size)
    assert abs(values.mean()) < 3 * stderr


def test_mean_switch_count_integrates_exit_rates():
    chain = RegimeChain(TWO_STATE)
    counts = np.array([simulate_chain(chain, 4.0, path_rng(23, i)).n_epochs for i in range(3000)], dtype=float)
    stderr = counts.std(ddof=1) / math.sqrt(counts.size)
    # E[number of switches] = sum_i lambda_i E[time spent in i]
    expected = occupation_expectation(chain, 4.0) @ chain.exit_rates
    assert abs(counts.mean() - expected) < 3 * stderr


def test_transition_probabilities_match_expm():
    chain = RegimeChain([[-1.2, 0.7, 0.5], [0.3, -0.4, 0.1], [2.0, 1.0, -3.0]])
    for t in (0.1, 1.0, 4.0):
        np.testing.assert_allclose(transition_probabilities(chain, t), expm(t * chain.intensity), atol=1e-12)


@given(generators(), st.floats(min_value=0.01, max_value=3.0))
@settings(max_examples=25, deadline=None)
def test_transition_rows_sum_to_one(lam, t):
    probabilities = transition_probabilities(RegimeChain(lam), t)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probabilities >= -1e-15)


def test_exp_action_with_positive_row_sums():
    a = np.array([[0.4, 0.3], [0.2, -0.1]])
    v = np.array([0.3, 0.7])
    np.testing.assert_allclose(uniformized_exp_action(a, v, 2.0), v @ expm(2.0 * a), rtol=1e-12)


def test_exp_action_rejects_negative_off_diagonal():
    with pytest.raises(DomainError):
        uniformized_exp_action(np.array([[0.0, -1.0], [1.0, -1.0]]), np.ones(2), 1.0)


def test_occupation_expectation_two_state_closed_form():
    a, b, horizon = 0.5, 1.0, 3.0
    chain = RegimeChain(TWO_STATE)
    expected_zero = b / (a + b) * horizon + a / (a + b) ** 2 * (1.0 - math.exp(-(a + b) * horizon))
    tau = occupation_expectation(chain, horizon)
    np.testing.assert_allclose(tau, [expected_zero, horizon - expected_zero], rtol=1e-12)


def test_occupation_expectation_respects_initial_distribution():
    chain = RegimeChain(TWO_STATE)
    mixed = occupation_expectation(chain, 1.0, np.array([0.5, 0.5]))
    from_zero = occupation_expectation(chain, 1.0, 0)
    from_one = occupation_expectation(chain, 1.0, 1)
    np.testing.assert_allclose(mixed, 0.5 * (from_zero + from_one), rtol=1e-12)


def test_occupation_expectation_matches_simulation():
    chain = RegimeChain(TWO_STATE)
    samples = np.array([simulate_chain(chain, 2.0, path_rng(17, i)).occupation_times(2.0, 2) for i in range(3000)])
    mean = samples.mean(axis=0)
    stderr = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    assert np.all(np.abs(mean - occupation_expectation(chain, 2.0)) < 3 * stderr + 1e-12)


def test_stationary_distribution():
    np.testing.assert_allclose(stationary_distribution(RegimeChain(TWO_STATE)), [2 / 3, 1 / 3], atol=1e-12)
