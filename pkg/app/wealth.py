"""
MAP Market Lab - Wealth and Expected Utility

Wealth of a fractional strategy in the enlarged market, advanced through the
exponential solution of its SDE, and the objectives evaluated on it:
Monte-Carlo expected utility, the deterministic log objective and the power
utility rate, plus an exact Feynman-Kac value for power utility.

While the chain sits in regime c the portfolio is exposed to three kinds of
jumps, each written as 1 + (linear form in the weights):

  Lévy mark m          A_m = π0 γ_c(x_m) + Σ_k π^(k) σ^(k)_c γ_c(x_m)^k
  switch c -> j        D_j = π_j σ_j^c
  switch mark u of j   B_j(u) = π0 u + Σ_l π_j^(l) σ^(l)_{j,c} u^l

A switch into j multiplies wealth by (1 + D_j)(1 + B_j(u)).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from app.chain import RegimeChain, occupation_expectation, uniformized_exp_action
from app.errors import AdmissibilityError, DomainError, SpecError
from app.market import MarketSpec, ScenarioPath, asset_labels, simulate_assets
from app.measure import require_paths, weighted_mean
from app.parallel import map_paths

logger = logging.getLogger(__name__)

LOG = "log"
POWER = "power"
TRUNCATION_TOL = 1e-9


@dataclass(frozen=True)
class UtilitySpec:
    """U(z) = log z, or U(z) = z^α with 0 < α < 1"""

    kind: str = LOG
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (LOG, POWER):
            raise SpecError("utility", f"unsupported utility {self.kind!r}; expected 'log' or 'power'")
        if self.kind == POWER:
            if self.alpha is None:
                raise SpecError("alpha", "power utility needs an exponent")
            if not 0.0 < self.alpha < 1.0:
                raise SpecError("alpha", f"exponent must lie in (0, 1), got {self.alpha}")
            object.__setattr__(self, "alpha", float(self.alpha))
        else:
            object.__setattr__(self, "alpha", None)

    @classmethod
    def log(cls) -> "UtilitySpec":
        return cls(LOG)

    @classmethod
    def power(cls, alpha: float) -> "UtilitySpec":
        return cls(POWER, alpha)

    @property
    def is_power(self) -> bool:
        return self.kind == POWER

    @property
    def label(self) -> str:
        return f"power({self.alpha:g})" if self.is_power else LOG

    def __call__(self, wealth):
        wealth = np.asarray(wealth, dtype=np.float64)
        return wealth ** self.alpha if self.is_power else np.log(wealth)


def weight_labels(n_regimes: int, K: int, L: int) -> List[str]:
    """Weight names in vector order, one per tradable risky asset"""
    return ["pi" + label[1:] for label in asset_labels(n_regimes, K, L)]


@dataclass(frozen=True)
class PortfolioWeights:
    """Fractions of wealth in each risky asset; the rest sits in the money market.

    Attributes:
        pi0: stock weight
        pij: (N,) Markovian jump security weights
        pik: (K-1,) power-jump security weights for k = 2..K
        pil: (N, L) impulse security weights indexed [i][l-1]
    """

    pi0: float
    pij: NDArray[np.float64]
    pik: Optional[NDArray[np.float64]] = None
    pil: Optional[NDArray[np.float64]] = None

    def __post_init__(self):
        pij = np.asarray(self.pij, dtype=np.float64).ravel()
        n = pij.size
        pik = np.zeros(0) if self.pik is None else np.asarray(self.pik, dtype=np.float64).ravel()
        pil = np.zeros((n, 0)) if self.pil is None else np.asarray(self.pil, dtype=np.float64)
        if pil.ndim == 1 and pil.size == n:
            pil = pil[:, None]
        if pil.ndim != 2 or pil.shape[0] != n:
            raise DomainError(f"impulse weights must have shape ({n}, L), got {pil.shape}")
        if not (math.isfinite(self.pi0) and np.all(np.isfinite(pij))
                and np.all(np.isfinite(pik)) and np.all(np.isfinite(pil))):
            raise DomainError("portfolio weights must be finite")
        object.__setattr__(self, "pi0", float(self.pi0))
        object.__setattr__(self, "pij", pij)
        object.__setattr__(self, "pik", pik)
        object.__setattr__(self, "pil", pil)

    @property
    def n_regimes(self) -> int:
        return self.pij.size

    @property
    def K(self) -> int:
        return 1 + self.pik.size

    @property
    def L(self) -> int:
        return self.pil.shape[1]

    @property
    def labels(self) -> List[str]:
        return weight_labels(self.n_regimes, self.K, self.L)

    def to_vector(self) -> NDArray[np.float64]:
        """(π0, π_j, π^(k), π_i^(l) l-major)"""
        return np.concatenate(([self.pi0], self.pij, self.pik, self.pil.T.ravel()))

    @classmethod
    def from_vector(cls, vector, n_regimes: int, K: int, L: int) -> "PortfolioWeights":
        v = np.asarray(vector, dtype=np.float64).ravel()
        n = n_regimes
        if v.size != n + K + n * L:
            raise DomainError(f"weight vector has {v.size} entries, expected {n + K + n * L}")
        return cls(pi0=v[0], pij=v[1:1 + n], pik=v[1 + n:n + K], pil=v[n + K:].reshape(L, n).T)

    @classmethod
    def zeros(cls, n_regimes: int, K: int = 1, L: int = 0) -> "PortfolioWeights":
        return cls.from_vector(np.zeros(n_regimes + K + n_regimes * L), n_regimes, K, L)

    def padded(self, K: int, L: int) -> "PortfolioWeights":
        """Same portfolio at higher truncation orders, new weights set to 0"""
        if K < self.K or L < self.L:
            raise DomainError(f"cannot pad orders (K={self.K}, L={self.L}) down to (K={K}, L={L})")
        pik = np.concatenate((self.pik, np.zeros(K - self.K)))
        pil = np.hstack((self.pil, np.zeros((self.n_regimes, L - self.L))))
        return replace(self, pik=pik, pil=pil)

    def check_admissible(self, spec: MarketSpec, regimes: Optional[Sequence[int]] = None):
        """Raise AdmissibilityError when a wealth jump factor is nonpositive on the support"""
        for c in range(spec.n_regimes) if regimes is None else regimes:
            regime_exposures(spec, c, self.K, self.L).check(self.to_vector())


Strategy = Union[PortfolioWeights, Sequence[PortfolioWeights]]


def regime_weights(pi: Strategy, n_regimes: int) -> List[PortfolioWeights]:
    """One PortfolioWeights per regime; a single portfolio is used in every regime"""
    weights = [pi] * n_regimes if isinstance(pi, PortfolioWeights) else list(pi)
    if len(weights) != n_regimes:
        raise DomainError(f"regime strategy needs {n_regimes} portfolios, got {len(weights)}")
    for w in weights:
        if w.n_regimes != n_regimes:
            raise DomainError(f"portfolio is sized for {w.n_regimes} regimes, the market has {n_regimes}")
        if (w.K, w.L) != (weights[0].K, weights[0].L):
            raise DomainError("every regime portfolio must use the same truncation orders")
    return weights


@dataclass(frozen=True)
class RegimeExposures:
    """Linear maps from the weight vector to every wealth jump in one regime.

    Rows of ``poisson_loadings`` are Lévy marks with rates λ_P p_m. Switch rows
    enumerate (target j, mark m of η_j) with rates λ_cj q_jm; each carries the
    loading of D_j and of B_j(u_m).
    """

    regime: int
    r: float
    sigma0: float
    excess: NDArray[np.float64]
    poisson_rates: NDArray[np.float64]
    poisson_loadings: NDArray[np.float64]
    switch_rates: NDArray[np.float64]
    switch_targets: NDArray[np.int64]
    switch_d: NDArray[np.float64]
    switch_b: NDArray[np.float64]
    names: Tuple[Tuple[str, ...], Tuple[str, ...], Tuple[str, ...]] = field(default=((), (), ()))

    @property
    def dim(self) -> int:
        return self.excess.size

    def jumps(self, X: NDArray[np.float64]):
        """(A, D, B) for each row of X"""
        return X @ self.poisson_loadings.T, X @ self.switch_d.T, X @ self.switch_b.T

    def check(self, x: NDArray[np.float64]):
        for values, names in zip(self.jumps(np.asarray(x, dtype=np.float64)), self.names):
            bad = np.flatnonzero(values <= -1.0)
            if bad.size:
                raise AdmissibilityError(names[bad[0]], f"wealth jump factor {1.0 + values[bad[0]]:.6g} is not positive")

    def admissible(self, X: NDArray[np.float64]) -> NDArray[np.bool_]:
        A, D, B = self.jumps(np.atleast_2d(X))
        return (A > -1).all(axis=1) & (D > -1).all(axis=1) & (B > -1).all(axis=1)

    def log_drift(self, x: NDArray[np.float64]) -> float:
        """Drift of log wealth, compensators included"""
        A, D, B = self.jumps(x)
        return float(self.r + self.excess @ x - 0.5 * (self.sigma0 * x[0]) ** 2
                     - self.poisson_rates @ A - self.switch_rates @ (D + B))

    def rate(self, X: NDArray[np.float64], utility: UtilitySpec) -> NDArray[np.float64]:
        """Regime-local objective rate for each row of X; -inf where inadmissible"""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        A, D, B = self.jumps(X)
        linear = self.r + X @ self.excess
        var = (self.sigma0 * X[:, 0]) ** 2
        with np.errstate(invalid="ignore", divide="ignore"):
            if utility.is_power:
                a = utility.alpha
                out = (a * linear + 0.5 * a * (a - 1.0) * var
                       + ((1.0 + A) ** a - 1.0 - a * A) @ self.poisson_rates
                       + (((1.0 + D) * (1.0 + B)) ** a - 1.0 - a * (D + B)) @ self.switch_rates)
            else:
                out = (linear - 0.5 * var
                       + (np.log1p(A) - A) @ self.poisson_rates
                       + (np.log1p(D) - D + np.log1p(B) - B) @ self.switch_rates)
        ok = (A > -1).all(axis=1) & (D > -1).all(axis=1) & (B > -1).all(axis=1)
        return np.where(ok, out, -np.inf)

    def gradient(self, x: NDArray[np.float64], utility: UtilitySpec) -> NDArray[np.float64]:
        """Exact gradient of ``rate`` at an admissible x"""
        x = np.asarray(x, dtype=np.float64)
        A, D, B = self.jumps(x)
        pr, sr = self.poisson_rates, self.switch_rates
        if utility.is_power:
            a = utility.alpha
            grad = a * self.excess
            grad[0] += a * (a - 1.0) * self.sigma0 ** 2 * x[0]
            grad += self.poisson_loadings.T @ (pr * a * ((1.0 + A) ** (a - 1.0) - 1.0))
            grad += self.switch_d.T @ (sr * a * ((1.0 + D) ** (a - 1.0) * (1.0 + B) ** a - 1.0))
            grad += self.switch_b.T @ (sr * a * ((1.0 + D) ** a * (1.0 + B) ** (a - 1.0) - 1.0))
        else:
            grad = self.excess.copy()
            grad[0] -= self.sigma0 ** 2 * x[0]
            grad += self.poisson_loadings.T @ (pr * (1.0 / (1.0 + A) - 1.0))
            grad += self.switch_d.T @ (sr * (1.0 / (1.0 + D) - 1.0))
            grad += self.switch_b.T @ (sr * (1.0 / (1.0 + B) - 1.0))
        return grad

    def riskless(self) -> NDArray[np.bool_]:
        """Coordinates with no diffusion and no jump loading in this regime"""
        loaded = (np.any(self.poisson_loadings != 0, axis=0) | np.any(self.switch_d != 0, axis=0)
                  | np.any(self.switch_b != 0, axis=0))
        if self.sigma0 != 0:
            loaded[0] = True
        return ~loaded


def regime_exposures(spec: MarketSpec, regime: int, K: int, L: int) -> RegimeExposures:
    """Excess returns and jump loadings of every tradable asset in ``regime``"""
    n = spec.n_regimes
    if not 0 <= regime < n:
        raise DomainError(f"regime {regime} outside 0..{n - 1}")
    spec.check_orders(K, L)
    c = regime
    dim = n + K + n * L
    r = spec.r[c]
    jump, power, impulse = spec.jump_securities, spec.power_securities, spec.impulse_securities

    excess = np.concatenate((
        [spec.mu0[c] - r],
        jump.mu[:, c] - r,
        power.mu[:K - 1, c] - r,
        (impulse.mu[:, :L, c] - r).T.ravel(),
    ))

    levy = spec.levy
    gamma = levy.gamma[c]
    poisson_loadings = np.zeros((levy.n_marks, dim))
    poisson_loadings[:, 0] = gamma
    for k in range(2, K + 1):
        poisson_loadings[:, n + k - 1] = power.sigma[k - 2, c] * gamma ** k
    poisson_names = tuple(f"Levy mark {m} in regime {c}" for m in range(levy.n_marks))

    rates = spec.chain.off_diagonal()[c]
    s_rates, s_targets, s_d, s_b, d_names, b_names = [], [], [], [], [], []
    for j in range(n):
        if rates[j] <= 0:
            continue
        for m, (u, q) in enumerate(zip(spec.switch.marks[j], spec.switch.probs[j])):
            d_row = np.zeros(dim)
            d_row[1 + j] = jump.sigma[j, c]
            b_row = np.zeros(dim)
            b_row[0] = u
            for l in range(1, L + 1):
                b_row[n + K + (l - 1) * n + j] = impulse.sigma[j, l - 1, c] * u ** l
            s_rates.append(rates[j] * q)
            s_targets.append(j)
            s_d.append(d_row)
            s_b.append(b_row)
            d_names.append(f"jump security {j} at switch {c}->{j}")
            b_names.append(f"switch mark {m} at switch {c}->{j}")

    return RegimeExposures(
        regime=c,
        r=float(r),
        sigma0=float(spec.sigma0[c]),
        excess=excess,
        poisson_rates=levy.intensity * levy.probs,
        poisson_loadings=poisson_loadings,
        switch_rates=np.array(s_rates),
        switch_targets=np.array(s_targets, dtype=np.int64),
        switch_d=np.array(s_d).reshape(-1, dim),
        switch_b=np.array(s_b).reshape(-1, dim),
        names=(poisson_names, tuple(d_names), tuple(b_names)),
    )


def regime_rate(spec: MarketSpec, pi: Strategy, regime: int, utility: UtilitySpec) -> float:
    """F_c for log utility, the bracketed power rate G_c otherwise"""
    w = regime_weights(pi, spec.n_regimes)[regime]
    exposures = regime_exposures(spec, regime, w.K, w.L)
    x = w.to_vector()
    exposures.check(x)
    return float(exposures.rate(x, utility)[0])


@dataclass(frozen=True)
class WealthPath:
    times: NDArray[np.float64]
    log_values: NDArray[np.float64]
    z0: float

    @property
    def values(self) -> NDArray[np.float64]:
        return np.exp(self.log_values)

    @property
    def terminal(self) -> float:
        return float(np.exp(self.log_values[-1]))


def _log_factor(values: NDArray[np.float64], factor: str) -> NDArray[np.float64]:
    if np.any(values <= -1.0):
        raise AdmissibilityError(factor, "wealth jump factor is not positive on this path")
    return np.log1p(values)


def simulate_wealth(spec: MarketSpec, pi: Strategy, path: ScenarioPath, z0: float = 1.0) -> WealthPath:
    """
    Wealth of ``pi`` along a simulated path

    Args:
        pi: one portfolio, or one per regime (read at J(t-))
        path: scenario simulated with the same truncation orders as ``pi``
        z0: initial wealth

    Returns:
        WealthPath on the scenario grid
    """
    if not z0 > 0:
        raise DomainError(f"initial wealth must be positive, got {z0}")
    n = spec.n_regimes
    weights = regime_weights(pi, n)
    K, L = weights[0].K, weights[0].L
    if (K, L) != (path.K, path.L):
        raise DomainError(f"portfolio orders (K={K}, L={L}) differ from the path's (K={path.K}, L={path.L})")

    X = np.stack([w.to_vector() for w in weights])
    drift = np.empty(n)
    for c in range(n):
        exposures = regime_exposures(spec, c, K, L)
        exposures.check(X[c])
        drift[c] = exposures.log_drift(X[c])

    c = path.regimes
    inc = drift[c] * path.dt + X[c, 0] * spec.sigma0[c] * path.dW

    events = path.events
    pc = c[path.poisson_steps]
    gamma = spec.levy.gamma[pc, events.poisson_marks]
    A = X[pc, 0] * gamma
    for k in range(2, K + 1):
        A = A + X[pc, n + k - 1] * spec.power_securities.sigma[k - 2, pc] * gamma ** k
    np.add.at(inc, path.poisson_steps, _log_factor(A, "Levy jump"))

    sc = c[path.switch_steps]
    sj = events.switch_targets
    u = events.switch_marks
    D = X[sc, 1 + sj] * spec.jump_securities.sigma[sj, sc]
    B = X[sc, 0] * u
    for l in range(1, L + 1):
        B = B + X[sc, n + K + (l - 1) * n + sj] * spec.impulse_securities.sigma[sj, l - 1, sc] * u ** l
    np.add.at(inc, path.switch_steps, _log_factor(D, "jump security at switch") + _log_factor(B, "switch mark"))

    return WealthPath(times=path.times, log_values=math.log(z0) + np.concatenate(([0.0], np.cumsum(inc))), z0=z0)


def expected_utility_mc(spec: MarketSpec, pi: Strategy, utility: UtilitySpec, z0: float, horizon: float,
                        n_paths: int, seed: int, dt: Optional[float] = None,
                        threads: int = 1) -> Tuple[float, float]:
    """Sample mean and standard error of U(R(T)); the event grid is exact for wealth"""
    require_paths(n_paths)
    weights = regime_weights(pi, spec.n_regimes)
    K, L = weights[0].K, weights[0].L
    for c, w in enumerate(weights):
        w.check_admissible(spec, [c])

    def one_path(index: int, rng: np.random.Generator) -> float:
        path = simulate_assets(spec, horizon, dt, K, L, rng)
        return float(utility(simulate_wealth(spec, weights, path, z0).terminal))

    samples = np.array(map_paths(one_path, n_paths, seed, threads, description="Expected utility"))
    mean, stderr = weighted_mean(samples)
    logger.debug("expected %s utility: %.8g ± %.3g over %d paths", utility.label, mean, stderr, n_paths)
    return float(mean), float(stderr)


def _rates(spec: MarketSpec, pi: Strategy, utility: UtilitySpec) -> NDArray[np.float64]:
    weights = regime_weights(pi, spec.n_regimes)
    return np.array([regime_rate(spec, w, c, utility) for c, w in enumerate(weights)])


def deterministic_expected_log(spec: MarketSpec, pi: Strategy, initial=None, z0: float = 1.0,
                               horizon: float = 1.0, utility: Optional[UtilitySpec] = None) -> float:
    """log z0 + Σ_i F_i τ_i with τ the expected occupation times on [0, horizon]"""
    if utility is not None and utility.is_power:
        raise DomainError("the deterministic log objective does not apply to power utility; "
                          "use deterministic_expected_power or exact_expected_power")
    if not z0 > 0:
        raise DomainError(f"initial wealth must be positive, got {z0}")
    tau = occupation_expectation(spec.chain, horizon, initial)
    return float(math.log(z0) + _rates(spec, pi, UtilitySpec.log()) @ tau)


def deterministic_expected_power(spec: MarketSpec, pi: Strategy, initial, z0: float, horizon: float,
                                 utility: UtilitySpec) -> float:
    """z0^α (1 + Σ_i G_i τ_i), first order in the regime rates"""
    if not utility.is_power:
        raise DomainError("deterministic_expected_power needs power utility")
    if not z0 > 0:
        raise DomainError(f"initial wealth must be positive, got {z0}")
    tau = occupation_expectation(spec.chain, horizon, initial)
    return float(z0 ** utility.alpha * (1.0 + _rates(spec, pi, utility) @ tau))


def power_generator(spec: MarketSpec, pi: Strategy, utility: UtilitySpec) -> NDArray[np.float64]:
    """Generator of E[(R/z0)^α | regime]; row c sums to G_c"""
    n = spec.n_regimes
    weights = regime_weights(pi, n)
    a = utility.alpha
    gen = np.zeros((n, n))
    for c, w in enumerate(weights):
        exposures = regime_exposures(spec, c, w.K, w.L)
        x = w.to_vector()
        exposures.check(x)
        A, D, B = exposures.jumps(x)
        gen[c, c] = (a * exposures.log_drift(x) + 0.5 * a ** 2 * (exposures.sigma0 * x[0]) ** 2
                     + exposures.poisson_rates @ ((1.0 + A) ** a - 1.0) - exposures.switch_rates.sum())
        np.add.at(gen[c], exposures.switch_targets, exposures.switch_rates * ((1.0 + D) * (1.0 + B)) ** a)
    return gen


def exact_expected_power(spec: MarketSpec, pi: Strategy, initial, z0: float, horizon: float,
                         utility: UtilitySpec) -> float:
    """E[R(T)^α] = z0^α p0 exp(T A) 1 for a regime strategy"""
    if not utility.is_power:
        raise DomainError("exact_expected_power needs power utility")
    if not z0 > 0:
        raise DomainError(f"initial wealth must be positive, got {z0}")
    p0 = spec.chain.initial_state if initial is None else RegimeChain._initial_distribution(initial, spec.n_regimes)
    action = uniformized_exp_action(power_generator(spec, pi, utility), p0, horizon)
    return float(z0 ** utility.alpha * action.sum())


class ObjectiveRow(NamedTuple):
    regime: int
    K: int
    L: int
    objective: float
    stderr: float


class TruncationReport(NamedTuple):
    regime: int
    K_low: int
    K_high: int
    difference: float
    monotone: bool


def truncation_diagnostic(lower, higher, tol: float = TRUNCATION_TOL) -> TruncationReport:
    """
    Compare optimal objectives at truncation orders K and K+1

    Args:
        lower, higher: solver outputs (FocSolution) for the same regime and utility

    Returns:
        TruncationReport; ``monotone`` is False when the larger market does worse by more than tol
    """
    if lower.regime != higher.regime:
        raise DomainError("truncation diagnostic compares solutions for the same regime")
    difference = float(higher.objective - lower.objective)
    report = TruncationReport(lower.regime, lower.weights.K, higher.weights.K, difference, difference >= -tol)
    if not report.monotone:
        logger.warning("objective dropped by %.3e from K=%d to K=%d in regime %d",
                       -difference, report.K_low, report.K_high, report.regime)
    return report


def objective_frame(rows: Sequence[ObjectiveRow]) -> pd.DataFrame:
    """Objective report: regime, K, L, objective, stderr"""
    return pd.DataFrame(list(rows), columns=list(ObjectiveRow._fields))
