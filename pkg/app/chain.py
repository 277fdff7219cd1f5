"""
MAP Market Lab - Regime Chain

Continuous-time finite-state Markov chain J driving every market coefficient:
event-driven simulation, the counting processes of transitions into each
state with their exact compensators, and transition/occupation expectations
computed by uniformization.

Regimes are 0-based integers. A transition at exactly time t belongs to the
past of t: J(t) is the post-jump state, J(t-) the pre-jump state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np
from numpy.typing import NDArray
from scipy.stats import poisson

from app.errors import DomainError, SpecError

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
UNIFORMIZATION_TOL = 1e-14

SeedLike = Union[int, np.random.Generator]


def as_generator(seed: SeedLike) -> np.random.Generator:
    """Accept either an integer seed or an existing Generator"""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class RegimeChain:
    """Markov chain with intensity matrix Λ and an initial distribution.

    Parameters
    ----------
    intensity : (N, N) array
        Rows sum to zero, off-diagonal entries strictly positive when N > 1.
    initial_state : int or (N,) array
        Either a fixed starting regime or a probability vector.
    """

    intensity: NDArray[np.float64]
    initial_state: Union[int, Sequence[float], NDArray[np.float64]] = 0

    def __post_init__(self):
        lam = np.atleast_2d(np.asarray(self.intensity, dtype=np.float64))
        n = lam.shape[0]
        if lam.ndim != 2 or lam.shape != (n, n) or n == 0:
            raise SpecError("intensity", f"expected a square matrix, got shape {lam.shape}")
        if not np.all(np.isfinite(lam)):
            raise SpecError("intensity", "entries must be finite")
        row_sums = lam.sum(axis=1)
        bad_rows = np.flatnonzero(np.abs(row_sums) > ROW_SUM_TOL)
        if bad_rows.size:
            i = int(bad_rows[0])
            raise SpecError(f"intensity[{i}]", f"row sums to {row_sums[i]:.3e}, expected 0")
        if n == 1:
            if lam[0, 0] != 0.0:
                raise SpecError("intensity[0][0]", "single-regime chain must have intensity [0]")
        else:
            for i in range(n):
                if lam[i, i] >= 0:
                    raise SpecError(f"intensity[{i}][{i}]", "diagonal entry must be negative")
                for j in range(n):
                    if i != j and lam[i, j] <= 0:
                        raise SpecError(f"intensity[{i}][{j}]", "off-diagonal rates must be strictly positive")

        p0 = self._initial_distribution(self.initial_state, n)
        object.__setattr__(self, "intensity", lam)
        object.__setattr__(self, "initial_state", p0)

    @staticmethod
    def _initial_distribution(initial, n: int) -> NDArray[np.float64]:
        if isinstance(initial, (int, np.integer)):
            if not 0 <= int(initial) < n:
                raise SpecError("initial_state", f"regime {initial} outside 0..{n - 1}")
            p0 = np.zeros(n)
            p0[int(initial)] = 1.0
            return p0
        p0 = np.asarray(initial, dtype=np.float64).ravel()
        if p0.shape != (n,):
            raise SpecError("initial_state", f"distribution must have {n} entries")
        if np.any(p0 < 0) or abs(p0.sum() - 1.0) > ROW_SUM_TOL:
            raise SpecError("initial_state", "distribution must be nonnegative and sum to 1")
        return p0

    @property
    def n_regimes(self) -> int:
        return self.intensity.shape[0]

    @property
    def exit_rates(self) -> NDArray[np.float64]:
        """-λ_ii for each regime"""
        return -np.diag(self.intensity)

    def off_diagonal(self) -> NDArray[np.float64]:
        """Λ with its diagonal zeroed: entry (i, j) is the rate of jumping i -> j"""
        rates = self.intensity.copy()
        np.fill_diagonal(rates, 0.0)
        return rates


@dataclass(frozen=True)
class ChainPath:
    """One trajectory of J on [0, horizon], stored by its transitions only.

    ``states[0]`` is the initial regime and ``states[n + 1]`` the regime
    entered at ``jump_epochs[n]``.
    """

    horizon: float
    jump_epochs: NDArray[np.float64]
    states: NDArray[np.int64]

    def __post_init__(self):
        epochs = np.asarray(self.jump_epochs, dtype=np.float64)
        states = np.asarray(self.states, dtype=np.int64)
        if self.horizon <= 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if states.shape != (epochs.size + 1,):
            raise DomainError("states must hold one entry more than jump_epochs")
        if epochs.size:
            if epochs[0] <= 0 or epochs[-1] > self.horizon or np.any(np.diff(epochs) <= 0):
                raise DomainError("jump epochs must be strictly increasing inside (0, horizon]")
            if np.any(states[1:] == states[:-1]):
                raise DomainError("a recorded epoch must change the regime")
        object.__setattr__(self, "jump_epochs", epochs)
        object.__setattr__(self, "states", states)

    @property
    def n_epochs(self) -> int:
        return self.jump_epochs.size

    def _check_time(self, t: float):
        if not 0.0 <= t <= self.horizon:
            raise DomainError(f"time {t} outside [0, {self.horizon}]")

    def state_at(self, t: float) -> int:
        """J(t), post-jump at an epoch"""
        self._check_time(t)
        return int(self.states[np.searchsorted(self.jump_epochs, t, side="right")])

    def state_before(self, t: float) -> int:
        """J(t-); at t = 0 this is the initial regime"""
        self._check_time(t)
        return int(self.states[np.searchsorted(self.jump_epochs, t, side="left")])

    def segments(self, t: float):
        """Regime occupied on each piece of [0, t] and the piece lengths"""
        self._check_time(t)
        n = np.searchsorted(self.jump_epochs, t, side="right")
        edges = np.concatenate(([0.0], self.jump_epochs[:n], [t]))
        return self.states[: n + 1], np.diff(edges)

    def occupation_times(self, t: float, n_regimes: int = 0) -> NDArray[np.float64]:
        """Time spent in each regime during [0, t]; exact"""
        regimes, lengths = self.segments(t)
        n_regimes = max(n_regimes, int(self.states.max()) + 1)
        return np.bincount(regimes, weights=lengths, minlength=n_regimes)


class JumpCount(NamedTuple):
    """Φ_j(t) and its compensator φ_j(t)"""

    count: int
    compensator: float

    @property
    def compensated(self) -> float:
        return self.count - self.compensator


def simulate_chain(chain: RegimeChain, horizon: float, seed: SeedLike) -> ChainPath:
    """Sample one path of J: exponential holding times, jump-chain transitions"""
    if horizon <= 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    rng = as_generator(seed)
    n = chain.n_regimes
    state = int(rng.choice(n, p=chain.initial_state)) if n > 1 else 0

    rates = chain.off_diagonal()
    epochs, states = [], [state]
    t = 0.0
    while True:
        exit_rate = -chain.intensity[state, state]
        if exit_rate <= 0:
            break
        t += rng.exponential(1.0 / exit_rate)
        if t > horizon:
            break
        state = int(rng.choice(n, p=rates[state] / exit_rate))
        epochs.append(t)
        states.append(state)

    return ChainPath(horizon=horizon, jump_epochs=np.array(epochs), states=np.array(states))


def lambda_j(chain: RegimeChain, path: ChainPath, j: int, t: float) -> float:
    """Intensity of a transition into regime j at time t, read at J(t-)"""
    if not 0 <= j < chain.n_regimes:
        raise DomainError(f"regime {j} outside 0..{chain.n_regimes - 1}")
    i = path.state_before(t)
    return 0.0 if i == j else float(chain.intensity[i, j])


def counting_and_compensator(chain: RegimeChain, path: ChainPath, j: int, t: float) -> JumpCount:
    """Number of entries into regime j up to t and the exact integral of λ_j"""
    if not 0 <= j < chain.n_regimes:
        raise DomainError(f"regime {j} outside 0..{chain.n_regimes - 1}")
    regimes, lengths = path.segments(t)
    count = int(np.count_nonzero(regimes[1:] == j))
    compensator = float(np.dot(chain.off_diagonal()[regimes, j], lengths))
    return JumpCount(count, compensator)


def _uniformization_weights(rate: float, tol: float) -> NDArray[np.float64]:
    n_max = int(poisson.isf(tol, rate)) + 2
    return poisson.pmf(np.arange(n_max + 1), rate)


def uniformized_exp_action(matrix: NDArray[np.float64], vector: NDArray[np.float64], t: float,
                           tol: float = UNIFORMIZATION_TOL) -> NDArray[np.float64]:
    """Compute v·exp(tA) for a matrix with nonnegative off-diagonal entries.

    A is shifted by its largest row sum so that the uniformized jump matrix is
    substochastic; the Poisson-weighted series is then truncated once the
    remaining Poisson mass drops below ``tol``.
    """
    a = np.asarray(matrix, dtype=np.float64)
    v = np.asarray(vector, dtype=np.float64)
    off = a - np.diag(np.diag(a))
    if np.any(off < 0):
        raise DomainError("uniformization needs nonnegative off-diagonal entries")
    if t == 0:
        return v.copy()

    shift = float(a.sum(axis=1).max())
    a0 = a - shift * np.eye(a.shape[0])
    q = float(np.max(-np.diag(a0)))
    if q <= 0:
        return v * np.exp(shift * t)

    jump_matrix = np.eye(a.shape[0]) + a0 / q
    weights = _uniformization_weights(q * t, tol)
    term = v.copy()
    total = weights[0] * term
    for w in weights[1:]:
        term = term @ jump_matrix
        total = total + w * term
    return total * np.exp(shift * t)


def transition_probabilities(chain: RegimeChain, t: float) -> NDArray[np.float64]:
    """exp(tΛ) by uniformization; row i is the law of J(t) given J(0) = i"""
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    return uniformized_exp_action(chain.intensity, np.eye(chain.n_regimes), t)


def occupation_expectation(chain: RegimeChain, horizon: float,
                           initial: Union[None, int, NDArray[np.float64]] = None) -> NDArray[np.float64]:
    """Expected time spent in each regime on [0, horizon].

    Integrating the uniformized series term by term gives
    (1/q) Σ_n P(N_{qT} > n) p0 P^n, with N_{qT} Poisson.
    """
    if horizon <= 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    p0 = chain.initial_state if initial is None else RegimeChain._initial_distribution(initial, chain.n_regimes)
    q = float(chain.exit_rates.max())
    if q <= 0:
        return p0 * horizon

    rate = q * horizon
    n_max = int(poisson.isf(UNIFORMIZATION_TOL / max(rate, 1.0), rate)) + 2
    tail = poisson.sf(np.arange(n_max + 1), rate)
    jump_matrix = np.eye(chain.n_regimes) + chain.intensity / q

    term = p0.copy()
    total = tail[0] * term
    for w in tail[1:]:
        term = term @ jump_matrix
        total = total + w * term
    occupation = total / q
    logger.debug("occupation expectation: %d uniformization terms, mass %.3e", n_max + 1, occupation.sum())
    return occupation


def stationary_distribution(chain: RegimeChain) -> NDArray[np.float64]:
    """π with πΛ = 0 and Σπ = 1, solved as a least-squares system"""
    n = chain.n_regimes
    a = np.vstack([chain.intensity.T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    return pi
