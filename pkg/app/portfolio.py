"""
MAP Market Lab - Optimal Portfolios

First-order conditions of the regime-local objective and their solvers:
damped Newton for the enlarged market, a bracketed scalar root for the stock
alone, Merton and jump-security closed forms, and a brute-force grid
maximizer used as an independent oracle.

The residual is the exact gradient of the rate computed in app.wealth, so a
stationary point of the residual is a stationary point of the objective.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray
from scipy.optimize import brentq

from app.errors import DomainError, GridError
from app.market import DRIFT_TOL, MarketSpec
from app.wealth import PortfolioWeights, RegimeExposures, UtilitySpec, regime_exposures, weight_labels

logger = logging.getLogger(__name__)

MAX_GRID_POINTS = 10 ** 8
GRID_CHUNK = 10 ** 6
ORIGINAL_TOL = 1e-12
MAX_BRACKET_DOUBLINGS = 200


@dataclass(frozen=True)
class FocProblem:
    """One regime-local portfolio problem with its solver options"""

    spec: MarketSpec
    regime: int
    utility: UtilitySpec
    K: int = 1
    L: int = 0
    max_iter: int = 100
    tol: float = 1e-10
    damping: float = 0.5
    fd_step: float = 1e-7

    def __post_init__(self):
        if self.K < 1 or self.L < 0:
            raise DomainError(f"truncation orders need K >= 1 and L >= 0, got K={self.K}, L={self.L}")
        if not self.tol > 0:
            raise DomainError(f"tolerance must be positive, got {self.tol}")
        if not 0 < self.damping < 1:
            raise DomainError(f"damping must lie in (0, 1), got {self.damping}")
        if not 0 <= self.regime < self.spec.n_regimes:
            raise DomainError(f"regime {self.regime} outside 0..{self.spec.n_regimes - 1}")
        self.spec.check_orders(self.K, self.L)

    @property
    def exposures(self) -> RegimeExposures:
        return regime_exposures(self.spec, self.regime, self.K, self.L)

    @property
    def labels(self) -> List[str]:
        return weight_labels(self.spec.n_regimes, self.K, self.L)


@dataclass(frozen=True)
class FocSolution:
    regime: int
    weights: PortfolioWeights
    residual_norm: float
    iterations: int
    converged: bool
    objective: float
    message: str = ""


class ActiveSet(NamedTuple):
    """Coordinates the solver moves, and the riskless ones it cannot"""

    active: NDArray[np.bool_]
    pinned: Tuple[str, ...]
    unbounded: Tuple[str, ...]


class JumpWeight(NamedTuple):
    value: float
    feasible: bool


class OracleResult(NamedTuple):
    weights: PortfolioWeights
    objective: float
    grid_step: float
    n_points: int
    n_admissible: int


def foc_residual(problem: FocProblem, pi: Union[PortfolioWeights, NDArray[np.float64]]) -> NDArray[np.float64]:
    """
    Gradient of the regime-local objective at pi

    Returns:
        Vector ordered (π0, π_j, π^(k), π_i^(l) l-major)
    """
    exposures = problem.exposures
    x = pi.to_vector() if isinstance(pi, PortfolioWeights) else np.asarray(pi, dtype=np.float64)
    if x.size != exposures.dim:
        raise DomainError(f"weights have {x.size} entries, the problem has {exposures.dim}")
    exposures.check(x)
    return exposures.gradient(x, problem.utility)


def active_coordinates(problem: FocProblem) -> ActiveSet:
    """Split off coordinates with no risk in the problem's regime.

    Such a coordinate only earns its excess return: it is pinned at 0 when that
    excess is 0 and makes the objective unbounded otherwise.
    """
    exposures = problem.exposures
    riskless = exposures.riskless()
    labels = problem.labels
    pinned, unbounded = [], []
    for idx in np.flatnonzero(riskless):
        if abs(exposures.excess[idx]) <= DRIFT_TOL:
            pinned.append(labels[idx])
        else:
            unbounded.append(labels[idx])
    return ActiveSet(active=~riskless, pinned=tuple(pinned), unbounded=tuple(unbounded))


def merton_closed_form(spec: MarketSpec, regime: int, utility: UtilitySpec) -> float:
    """(μ0 - r)/σ0² for log utility, (μ0 - r)/((1 - α)σ0²) for power"""
    sigma2 = spec.sigma0[regime] ** 2
    if sigma2 == 0:
        raise DomainError(f"Merton fraction undefined for zero volatility in regime {regime}")
    risk_aversion = 1.0 - utility.alpha if utility.is_power else 1.0
    return float((spec.mu0[regime] - spec.r[regime]) / (risk_aversion * sigma2))


def jump_weight_closed_form(spec: MarketSpec, regime: int, j: int, utility: UtilitySpec) -> Optional[JumpWeight]:
    """
    Weight on the jump security of regime j that zeroes its own first-order condition

    Returns:
        None when j is the current regime (no switch risk to trade); otherwise
        the weight and whether 1 + π_j σ_j stays positive
    """
    if not 0 <= j < spec.n_regimes:
        raise DomainError(f"regime {j} outside 0..{spec.n_regimes - 1}")
    if j == regime:
        return None
    lam = spec.chain.intensity[regime, j]
    mu = spec.jump_securities.mu[j, regime]
    sigma = spec.jump_securities.sigma[j, regime]
    r = spec.r[regime]
    if utility.is_power:
        base = 1.0 - (mu - r) / (lam * sigma)
        if base <= 0:
            return JumpWeight(math.nan, False)
        value = (base ** (1.0 / (utility.alpha - 1.0)) - 1.0) / sigma
    else:
        denom = (r - mu) * sigma + lam * sigma ** 2
        if denom == 0:
            return JumpWeight(math.nan, False)
        value = (mu - r) / denom
    return JumpWeight(float(value), bool(1.0 + value * sigma > 0))


def _initial_point(problem: FocProblem, exposures: RegimeExposures) -> NDArray[np.float64]:
    x = np.zeros(exposures.dim)
    if exposures.sigma0 > 0:
        x[0] = merton_closed_form(problem.spec, problem.regime, problem.utility)
    for _ in range(60):
        if exposures.admissible(x)[0]:
            return x
        x[0] *= 0.5
    x[0] = 0.0
    return x


def _jacobian(exposures: RegimeExposures, utility: UtilitySpec, x: NDArray[np.float64],
              active: NDArray[np.int64], step: float) -> NDArray[np.float64]:
    """Forward differences of the active gradient, backward where forward leaves the admissible set"""
    base = exposures.gradient(x, utility)[active]
    jac = np.empty((active.size, active.size))
    for col, idx in enumerate(active):
        h = step * max(1.0, abs(x[idx]))
        bumped = x.copy()
        bumped[idx] += h
        if not exposures.admissible(bumped)[0]:
            bumped[idx] = x[idx] - h
            h = -h
        jac[:, col] = (exposures.gradient(bumped, utility)[active] - base) / h
    return jac


def _finish(problem: FocProblem, exposures: RegimeExposures, x, norm: float, iterations: int,
            converged: bool, message: str) -> FocSolution:
    spec = problem.spec
    weights = PortfolioWeights.from_vector(x, spec.n_regimes, problem.K, problem.L)
    objective = float(exposures.rate(x, problem.utility)[0])
    if converged:
        logger.debug("regime %d: converged in %d iterations, residual %.3e", problem.regime, iterations, norm)
    else:
        logger.warning("regime %d: no convergence (%s), residual %.3e", problem.regime, message, norm)
    return FocSolution(problem.regime, weights, float(norm), iterations, converged, objective, message)


def solve_enlarged(problem: FocProblem) -> FocSolution:
    """Damped Newton on the first-order conditions over the active coordinates"""
    exposures = problem.exposures
    utility = problem.utility
    active_set = active_coordinates(problem)
    x = _initial_point(problem, exposures)
    active = np.flatnonzero(active_set.active)

    if active_set.unbounded:
        grad = exposures.gradient(x, utility)
        return _finish(problem, exposures, x, float(np.linalg.norm(grad)), 0, False,
                       f"objective unbounded along riskless {active_set.unbounded[0]}")
    if active.size == 0:
        return _finish(problem, exposures, x, 0.0, 0, True, "")

    grad = exposures.gradient(x, utility)[active]
    norm = float(np.linalg.norm(grad))
    for iteration in range(problem.max_iter):
        if norm <= problem.tol:
            return _finish(problem, exposures, x, norm, iteration, True, "")
        jac = _jacobian(exposures, utility, x, active, problem.fd_step)
        step, *_ = np.linalg.lstsq(jac, -grad, rcond=None)

        t = 1.0
        while t > 1e-14:
            trial = x.copy()
            trial[active] += t * step
            if exposures.admissible(trial)[0]:
                trial_grad = exposures.gradient(trial, utility)[active]
                trial_norm = float(np.linalg.norm(trial_grad))
                if trial_norm < norm:
                    break
            t *= problem.damping
        else:
            return _finish(problem, exposures, x, norm, iteration, False, "line search found no decrease")

        x, grad, norm = trial, trial_grad, trial_norm
        logger.debug("regime %d iteration %d: step %.3g, residual %.3e", problem.regime, iteration + 1, t, norm)

    converged = norm <= problem.tol
    return _finish(problem, exposures, x, norm, problem.max_iter, converged,
                   "" if converged else f"max iterations ({problem.max_iter}) reached")


def _stock_only(spec: MarketSpec, regime: int) -> Tuple[RegimeExposures, NDArray[np.float64], NDArray[np.float64]]:
    """Exposures of the primary market: stock jump sizes and their rates"""
    exposures = regime_exposures(spec, regime, 1, 0)
    sizes = np.concatenate((exposures.poisson_loadings[:, 0], exposures.switch_b[:, 0]))
    rates = np.concatenate((exposures.poisson_rates, exposures.switch_rates))
    keep = sizes != 0
    return exposures, sizes[keep], rates[keep]


def solve_original(spec: MarketSpec, regime: int, utility: UtilitySpec) -> float:
    """
    Optimal stock weight when only the money market and the stock trade

    Brackets the root of the scalar first-order condition inside the interval
    where every factor 1 + π γ stays positive, runs Brent, then polishes with
    Newton on the analytic derivative.
    """
    exposures, g, w = _stock_only(spec, regime)
    e0 = exposures.excess[0]
    sigma2 = exposures.sigma0 ** 2
    a = utility.alpha if utility.is_power else None

    def foc(p: float) -> float:
        f = 1.0 + p * g
        if a is None:
            return float(e0 - sigma2 * p + w @ ((1.0 / f - 1.0) * g))
        return float(a * e0 + a * (a - 1.0) * sigma2 * p + w @ (a * (f ** (a - 1.0) - 1.0) * g))

    def slope(p: float) -> float:
        f = 1.0 + p * g
        if a is None:
            return float(-sigma2 - w @ (g ** 2 / f ** 2))
        return float(a * (a - 1.0) * (sigma2 + w @ (f ** (a - 2.0) * g ** 2)))

    lo = float(np.max(-1.0 / g[g > 0])) if np.any(g > 0) else -math.inf
    hi = float(np.min(-1.0 / g[g < 0])) if np.any(g < 0) else math.inf
    if not lo < hi:
        raise DomainError(f"no admissible stock weight in regime {regime}: jump support leaves ({lo}, {hi})")
    if sigma2 == 0 and g.size == 0:
        if abs(e0) <= DRIFT_TOL:
            return 0.0
        raise DomainError(f"stock carries no risk in regime {regime} but earns excess {e0}; no optimum")

    def inside(edge: float, toward: float) -> float:
        span = max(1.0, abs(edge))
        return edge + math.copysign(1e-12 * span, toward - edge)

    left = inside(lo, hi) if math.isfinite(lo) else min(-1.0, hi - 1.0)
    right = inside(hi, lo) if math.isfinite(hi) else max(1.0, lo + 1.0)
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if foc(left) > 0 or math.isfinite(lo):
            break
        left *= 2.0
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if foc(right) < 0 or math.isfinite(hi):
            break
        right *= 2.0
    if not (foc(left) >= 0 >= foc(right)):
        raise DomainError(f"first-order condition has no sign change on ({left}, {right}) in regime {regime}")

    p = brentq(foc, left, right, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(5):
        f = foc(p)
        if abs(f) <= ORIGINAL_TOL:
            break
        candidate = p - f / slope(p)
        if not lo < candidate < hi:
            break
        p = candidate
    if abs(foc(p)) > ORIGINAL_TOL:
        logger.warning("regime %d: stock-only residual %.3e above %.0e", regime, abs(foc(p)), ORIGINAL_TOL)
    return float(p)


def solve_all_regimes(spec: MarketSpec, utility: UtilitySpec, K: int = 1, L: int = 0, **options) -> List[FocSolution]:
    """solve_enlarged in every regime"""
    return [solve_enlarged(FocProblem(spec, c, utility, K, L, **options)) for c in range(spec.n_regimes)]


def original_objective(spec: MarketSpec, regime: int, utility: UtilitySpec, weight: float) -> float:
    exposures = regime_exposures(spec, regime, 1, 0)
    x = np.zeros(exposures.dim)
    x[0] = weight
    return float(exposures.rate(x, utility)[0])


def value_gap(spec: MarketSpec, regime: int, utility: UtilitySpec, K: int = 1, L: int = 0) -> float:
    """Enlarged-market optimal rate minus the stock-only optimal rate"""
    solution = solve_enlarged(FocProblem(spec, regime, utility, K, L))
    weight = solve_original(spec, regime, utility)
    return solution.objective - original_objective(spec, regime, utility, weight)


def _axis_bounds(bounds, n_axes: int) -> NDArray[np.float64]:
    b = np.asarray(bounds, dtype=np.float64)
    if b.shape == (2,):
        b = np.tile(b, (n_axes, 1))
    if b.shape != (n_axes, 2) or np.any(b[:, 0] > b[:, 1]):
        raise DomainError(f"expected one (lo, hi) pair or {n_axes} of them, got shape {b.shape}")
    return b


def grid_oracle(spec: MarketSpec, regime: int, utility: UtilitySpec, bounds, points: int, K: int = 1,
                L: int = 0) -> OracleResult:
    """
    Exhaustive maximization of the regime-local objective on a product grid

    Args:
        bounds: one (lo, hi) pair for every active coordinate, or one pair for all
        points: grid points per axis

    Returns:
        OracleResult with the best admissible grid point; riskless coordinates stay at 0
    """
    problem = FocProblem(spec, regime, utility, K, L)
    active_set = active_coordinates(problem)
    if active_set.unbounded:
        raise DomainError(f"objective unbounded along riskless {active_set.unbounded[0]}")
    active = np.flatnonzero(active_set.active)
    if points < 1:
        raise DomainError(f"points per axis must be positive, got {points}")
    total = points ** active.size
    if total > MAX_GRID_POINTS:
        raise GridError(f"oracle grid of {points}^{active.size} = {total} points exceeds {MAX_GRID_POINTS}")

    exposures = problem.exposures
    if active.size == 0:
        x = np.zeros(exposures.dim)
        weights = PortfolioWeights.from_vector(x, spec.n_regimes, K, L)
        return OracleResult(weights, float(exposures.rate(x, utility)[0]), 0.0, 1, 1)

    b = _axis_bounds(bounds, active.size)
    axes = [np.linspace(lo, hi, points) for lo, hi in b]
    grid_step = float(max(((hi - lo) / (points - 1) for lo, hi in b), default=0.0)) if points > 1 else 0.0

    best_value, best_x, n_admissible = -math.inf, np.zeros(exposures.dim), 0
    for start in range(0, total, GRID_CHUNK):
        flat = np.arange(start, min(start + GRID_CHUNK, total))
        X = np.zeros((flat.size, exposures.dim))
        for axis, idx in enumerate(np.unravel_index(flat, (points,) * active.size)):
            X[:, active[axis]] = axes[axis][idx]
        values = exposures.rate(X, utility)
        n_admissible += int(np.count_nonzero(np.isfinite(values)))
        i = int(np.argmax(values))
        if values[i] > best_value:
            best_value, best_x = float(values[i]), X[i].copy()

    if not math.isfinite(best_value):
        raise DomainError(f"no admissible point on the oracle grid in regime {regime}")
    logger.debug("oracle regime %d: %d points, %d admissible, best %.10g", regime, total, n_admissible, best_value)
    weights = PortfolioWeights.from_vector(best_x, spec.n_regimes, K, L)
    return OracleResult(weights, best_value, grid_step, total, n_admissible)


def solution_frame(solutions: Sequence[FocSolution], utility: UtilitySpec,
                   oracle: Optional[Sequence[OracleResult]] = None) -> pd.DataFrame:
    """Solution report: regime, utility, K, L, each weight, residual_norm, objective, converged"""
    rows = []
    for n, s in enumerate(solutions):
        row = {"regime": s.regime, "utility": utility.label, "K": s.weights.K, "L": s.weights.L}
        row.update(zip(s.weights.labels, s.weights.to_vector()))
        row.update(residual_norm=s.residual_norm, objective=s.objective, converged=s.converged)
        if oracle is not None:
            row["oracle_objective"] = oracle[n].objective
            row["oracle_gap"] = s.objective - oracle[n].objective
            row["grid_step"] = oracle[n].grid_step
        rows.append(row)
    return pd.DataFrame(rows)
