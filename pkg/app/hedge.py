"""
MAP Market Lab - Replication

Given piecewise-constant representation coefficients h, build the Q-martingale
M^K they generate, the replicating positions (cash α^K and units β in each
risky asset), and the pathwise self-financing residual.

Positions are set at every grid time and again at the left limit of every
event, so the position held through a jump is priced at S(t-). The gain is
accumulated in discounted units: G^K(u) = B(u)(M^K(0) + Σ β ΔS̃) - M^K(0).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from app.errors import GridError
from app.jumps import gamma_moment
from app.market import MarketSpec, ScenarioPath, discount
from app.measure import GirsanovSpec

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], NDArray[np.float64]]


@dataclass(frozen=True)
class RepresentationCoefficients:
    """
    h-processes on a scenario grid; row n applies on (times[n], times[n+1]]

    Attributes:
        times: grid the coefficients were laid on
        h0: (n,) loading on the stock differential
        h_jump: (n, N) loadings on the compensated switch counts
        h_power: (n, K-1) loadings on the Teugels martingales, k = 2..K
        h_impulse: (n, N*L) loadings on the impulse martingales, l-major
        m0: M^K(0)
    """

    times: NDArray[np.float64]
    h0: NDArray[np.float64]
    h_jump: NDArray[np.float64]
    h_power: NDArray[np.float64]
    h_impulse: NDArray[np.float64]
    m0: float = 1.0

    def __post_init__(self):
        n = np.asarray(self.times).size - 1
        for name in ("h0", "h_jump", "h_power", "h_impulse"):
            values = np.asarray(getattr(self, name), dtype=np.float64)
            if values.shape[0] != n:
                raise GridError(f"{name} has {values.shape[0]} rows, the grid has {n} steps")
            if not np.all(np.isfinite(values)):
                raise GridError(f"{name} must be finite")
            object.__setattr__(self, name, values)

    def matrix(self) -> NDArray[np.float64]:
        """All loadings side by side, columns in asset-label order"""
        return np.column_stack((self.h0, self.h_jump, self.h_power, self.h_impulse))


@dataclass(frozen=True)
class HedgePortfolio:
    """Positions chosen at ``time``: cash units α and risky units β"""

    time: float
    alpha: float
    beta0: float
    beta_jump: NDArray[np.float64]
    beta_power: NDArray[np.float64]
    beta_impulse: NDArray[np.float64]

    @property
    def beta(self) -> NDArray[np.float64]:
        return np.concatenate(([self.beta0], self.beta_jump, self.beta_power, self.beta_impulse))

    def value(self, bond: float, prices: NDArray[np.float64]) -> float:
        return float(self.alpha * bond + np.dot(self.beta, prices))


class ResidualRow(NamedTuple):
    path_id: int
    max_residual: float
    grid_step: float


def _expand(values: Optional[ArrayLike], n_steps: int, width: int) -> NDArray[np.float64]:
    if values is None:
        return np.zeros((n_steps, width))
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2 and arr.shape != (n_steps, width):
        # impulse loadings given as [i][l-1]
        arr = arr.T.ravel()
    return np.broadcast_to(arr, (n_steps, width)).copy()


def constant_coefficients(path: ScenarioPath, h0: float = 0.0, h_jump: Optional[ArrayLike] = None,
                          h_power: Optional[ArrayLike] = None, h_impulse: Optional[ArrayLike] = None,
                          m0: float = 1.0) -> RepresentationCoefficients:
    """Time-constant loadings laid on the path grid"""
    n_regimes = path.d_counts.shape[1]
    n = path.n_steps
    return RepresentationCoefficients(
        times=path.times,
        h0=np.full(n, float(h0)),
        h_jump=_expand(h_jump, n, n_regimes),
        h_power=_expand(h_power, n, path.K - 1),
        h_impulse=_expand(h_impulse, n, n_regimes * path.L),
        m0=float(m0),
    )


def _check_grid(coeffs: RepresentationCoefficients, path: ScenarioPath):
    if coeffs.times.shape != path.times.shape or np.any(coeffs.times != path.times):
        raise GridError("coefficients were laid on a different grid than the scenario path")
    widths = (coeffs.h_jump.shape[1], coeffs.h_power.shape[1], coeffs.h_impulse.shape[1])
    expected = (path.d_counts.shape[1], path.K - 1, path.d_counts.shape[1] * path.L)
    if widths != expected:
        raise GridError(f"coefficient widths {widths} do not match the path's assets {expected}")


def _unit_sigma(spec: MarketSpec, path: ScenarioPath) -> NDArray[np.float64]:
    """Per-step jump loading of each risky asset on its driver (1 for the stock)"""
    c = path.regimes
    n = spec.n_regimes
    K, L = path.K, path.L
    sigma = np.ones((path.n_steps, len(path.labels)))
    sigma[:, 1:1 + n] = spec.jump_securities.sigma[:, c].T
    sigma[:, 1 + n:n + K] = spec.power_securities.sigma[:K - 1, c].T
    for l in range(1, L + 1):
        cols = slice(n + K + (l - 1) * n, n + K + l * n)
        sigma[:, cols] = spec.impulse_securities.sigma[:, l - 1, c].T
    return sigma


def q_differentials(spec: MarketSpec, path: ScenarioPath, gir: GirsanovSpec):
    """
    Per-step Q-differentials of the stock return and the compensated drivers

    Returns:
        (continuous, jump) arrays of shape (n_steps, n_assets). The stock's
        continuous part is expm1(σ0 ΔW^Q - σ0²Δt/2) minus the jump compensator;
        switch counts are compensated at the Q-intensity (1 + ψ_j) λ_j.
    """
    c = path.regimes
    dt = path.dt
    n = spec.n_regimes
    sigma0 = spec.sigma0[c]
    dWQ = path.dW - gir.psi0[c] * dt
    compensator = np.array([gamma_moment(spec.levy, i, 1) + spec.switch_mark_compensator(i) for i in range(n)])

    stock_cont = np.expm1(sigma0 * dWQ - 0.5 * sigma0 ** 2 * dt) - compensator[c] * dt
    count_cont = -(1.0 + gir.off_diagonal()[c]) * path.d_phi
    continuous = np.column_stack((stock_cont, count_cont, -path.d_power_comp, -path.d_impulse_comp))

    stock_jump = np.zeros(path.n_steps)
    events = path.events
    np.add.at(stock_jump, path.poisson_steps, spec.levy.gamma[c[path.poisson_steps], events.poisson_marks])
    np.add.at(stock_jump, path.switch_steps, events.switch_marks)
    jump = np.column_stack((stock_jump, path.d_counts, path.d_power, path.d_impulse))
    return continuous, jump


def synth_martingale(spec: MarketSpec, coeffs: RepresentationCoefficients, path: ScenarioPath,
                     gir: GirsanovSpec) -> NDArray[np.float64]:
    """M^K on the path grid: M^K(0) plus the four h-weighted integral families"""
    _check_grid(coeffs, path)
    continuous, jump = q_differentials(spec, path, gir)
    increments = np.sum(coeffs.matrix() * (continuous + jump), axis=1)
    return coeffs.m0 + np.concatenate(([0.0], np.cumsum(increments)))


def hedge_positions(spec: MarketSpec, coeffs: RepresentationCoefficients, path: ScenarioPath,
                    gir: GirsanovSpec):
    """(alpha, beta) chosen at every grid time but the last; beta columns follow path.labels"""
    martingale = synth_martingale(spec, coeffs, path, gir)
    disc = discount(path)[:-1]
    bond = path.bond[:-1]
    beta = coeffs.matrix() * bond[:, None] / (_unit_sigma(spec, path) * path.prices[:-1])
    alpha = martingale[:-1] - np.sum(beta * disc, axis=1)
    return alpha, beta


def replication_weights(spec: MarketSpec, coeffs: RepresentationCoefficients, path: ScenarioPath,
                        gir: GirsanovSpec, t: float) -> HedgePortfolio:
    """Portfolio held from grid time t until the next grid time"""
    idx = min(path.grid_index(t), path.n_steps - 1)
    alpha, beta = hedge_positions(spec, coeffs, path, gir)
    n = spec.n_regimes
    row = beta[idx]
    return HedgePortfolio(
        time=float(path.times[idx]),
        alpha=float(alpha[idx]),
        beta0=float(row[0]),
        beta_jump=row[1:1 + n],
        beta_power=row[1 + n:n + path.K],
        beta_impulse=row[n + path.K:],
    )


def residual_path(spec: MarketSpec, coeffs: RepresentationCoefficients, path: ScenarioPath,
                  gir: GirsanovSpec) -> NDArray[np.float64]:
    """|G^K(u) + M^K(0) - M^K(u)B(u)| / (1 + |M^K(u)B(u)|) at every grid time"""
    martingale = synth_martingale(spec, coeffs, path, gir)
    h_over_sigma = coeffs.matrix() / _unit_sigma(spec, path)

    # β S̃ = h/σ both at the grid time and at the pre-jump rebalance
    log_disc = path.log_prices - path.log_bond[:, None]
    cont_log = np.diff(log_disc, axis=0) - path.jump_log
    gain = np.sum(h_over_sigma * (np.expm1(cont_log) + np.expm1(path.jump_log)), axis=1)
    discounted_value = coeffs.m0 + np.concatenate(([0.0], np.cumsum(gain)))

    bond = path.bond
    target = martingale * bond
    return np.abs(discounted_value * bond - target) / (1.0 + np.abs(target))


def selffinancing_check(spec: MarketSpec, coeffs: RepresentationCoefficients, path: ScenarioPath,
                        gir: GirsanovSpec) -> float:
    """Max relative residual of G^K(u) + M^K(0) = M^K(u)B(u) over the grid"""
    _check_grid(coeffs, path)
    residual = float(np.max(residual_path(spec, coeffs, path, gir)))
    logger.debug("self-financing residual %.3e on %d steps", residual, path.n_steps)
    return residual


def residual_report(rows: Sequence[ResidualRow]) -> pd.DataFrame:
    """Residual report: path_id, max_residual, grid_step"""
    return pd.DataFrame(list(rows), columns=list(ResidualRow._fields))
