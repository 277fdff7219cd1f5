"""
MAP Market Lab - Equivalent Martingale Measure

Market prices of diffusion and switch risk, the density process ℓ = dQ/dP on
a simulated path, and Monte-Carlo checks of the martingale property under Q
computed by ℓ-weighting P-paths.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from app.errors import DomainError, SpecError
from app.market import MarketSpec, ScenarioPath, asset_labels, discount, simulate_assets
from app.parallel import map_paths

logger = logging.getLogger(__name__)

MIN_PATHS = 100


@dataclass(frozen=True)
class GirsanovSpec:
    """ψ0 per regime and ψ_j per (current regime i, target j).

    Diagonal entries of ``psij`` are NaN: ψ_j is undetermined while the chain
    sits in j and never enters the density.
    """

    psi0: NDArray[np.float64]
    psij: NDArray[np.float64]

    @property
    def n_regimes(self) -> int:
        return self.psi0.size

    def psi(self, i: int, j: int) -> float:
        if i == j:
            raise DomainError(f"psi[{i}][{j}] is not applicable: the chain cannot jump into its own regime")
        return float(self.psij[i, j])

    def off_diagonal(self) -> NDArray[np.float64]:
        """ψ_j table with the diagonal replaced by 0, for rate contractions"""
        return np.where(np.eye(self.n_regimes, dtype=bool), 0.0, self.psij)


@dataclass(frozen=True)
class DensityPath:
    times: NDArray[np.float64]
    log_values: NDArray[np.float64]

    @property
    def values(self) -> NDArray[np.float64]:
        return np.exp(self.log_values)


class ZScore(NamedTuple):
    checkpoint: float
    asset: str
    mean: float
    stderr: float
    z: float


def girsanov_parameters(spec: MarketSpec) -> GirsanovSpec:
    """ψ0 = (r - μ0)/σ0 and ψ_j = (r_i - μ_j^i)/(σ_j^i λ_ij) for i ≠ j"""
    n = spec.n_regimes
    if np.any(spec.sigma0 <= 0):
        raise SpecError("sigma0", "diffusion price of risk needs strictly positive volatility")
    psi0 = (spec.r - spec.mu0) / spec.sigma0

    jump = spec.jump_securities
    psij = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            psij[i, j] = (spec.r[i] - jump.mu[j, i]) / (jump.sigma[j, i] * spec.chain.intensity[i, j])
            if not 1.0 + psij[i, j] > 0:
                raise SpecError(f"psi[{i}][{j}]",
                                f"1 + psi = {1.0 + psij[i, j]:.6g} leaves the density nonpositive")
    return GirsanovSpec(psi0=psi0, psij=psij)


def density_path(gir: GirsanovSpec, path: ScenarioPath) -> DensityPath:
    """ℓ on the scenario grid; Itô sums for ∫ψ0 dW, exact dφ_j integrals and switch factors"""
    c = path.regimes
    psi0 = gir.psi0[c]
    inc = psi0 * path.dW - 0.5 * psi0 ** 2 * path.dt
    inc -= np.sum(gir.off_diagonal()[c] * path.d_phi, axis=1)

    s_from = c[path.switch_steps]
    s_to = path.events.switch_targets
    np.add.at(inc, path.switch_steps, np.log1p(gir.psij[s_from, s_to]))

    return DensityPath(times=path.times, log_values=np.concatenate(([0.0], np.cumsum(inc))))


def brownian_under_q(gir: GirsanovSpec, path: ScenarioPath) -> NDArray[np.float64]:
    """W^Q(t) = W(t) - ∫ψ0 ds on the scenario grid"""
    drift = np.concatenate(([0.0], np.cumsum(gir.psi0[path.regimes] * path.dt)))
    return path.brownian - drift


def weighted_mean(values: NDArray[np.float64], weights: Optional[NDArray[np.float64]] = None) -> Tuple[float, float]:
    """Sample mean of values·weights over the first axis and its standard error"""
    samples = np.asarray(values, dtype=np.float64)
    if weights is not None:
        samples = samples * np.asarray(weights, dtype=np.float64)
    n = samples.shape[0]
    if n < 2:
        raise DomainError("a standard error needs at least two samples")
    # shifted by the first sample so identical samples give exactly their value and zero spread
    shifted = samples - samples[0]
    return samples[0] + shifted.mean(axis=0), shifted.std(axis=0, ddof=1) / math.sqrt(n)


def _zscore(mean: float, stderr: float, target: float) -> float:
    if stderr > 0:
        return (mean - target) / stderr
    return 0.0 if mean == target else math.copysign(math.inf, mean - target)


def require_paths(n_paths: int):
    if n_paths < MIN_PATHS:
        raise DomainError(f"n_paths={n_paths} is too few for a meaningful standard error (minimum {MIN_PATHS})")


def martingale_ztest(spec: MarketSpec, gir: GirsanovSpec, assets: Optional[Sequence[str]],
                     checkpoints: Sequence[float], n_paths: int, seed: int, K: Optional[int] = None,
                     L: Optional[int] = None, dt: Optional[float] = None, threads: int = 1) -> List[ZScore]:
    """
    z-scores of E_P[ℓ(t) S̃(t)] against S̃(0) for each asset and checkpoint

    Args:
        assets: asset labels, "B" for the money market; None selects every risky asset
        checkpoints: times in (0, horizon]; the largest one is the simulation horizon
        dt: uniform grid step; None simulates on the event grid, which is exact here

    Returns:
        One ZScore per (checkpoint, asset), checkpoint-major
    """
    require_paths(n_paths)
    K = spec.k_max if K is None else K
    L = spec.l_max if L is None else L
    checkpoints = sorted(float(t) for t in checkpoints)
    if not checkpoints or checkpoints[0] <= 0:
        raise DomainError("checkpoints must be positive times")
    horizon = checkpoints[-1]
    spec.check_orders(K, L)
    known = asset_labels(spec.n_regimes, K, L)
    unknown = [a for a in (assets or ()) if a != "B" and a not in known]
    if unknown:
        raise DomainError(f"unknown asset {unknown[0]!r}; known: B, {', '.join(known)}")

    def one_path(index: int, rng: np.random.Generator):
        path = simulate_assets(spec, horizon, dt, K, L, rng, checkpoints=checkpoints)
        idx = [path.grid_index(t) for t in checkpoints]
        ell = density_path(gir, path).values[idx]
        disc = discount(path)
        return ell, disc[idx], disc[0], path.labels

    results = map_paths(one_path, n_paths, seed, threads, description="Martingale test")
    initial, labels = results[0][2], results[0][3]
    ell = np.stack([r[0] for r in results])
    disc = np.stack([r[1] for r in results])
    selected = list(labels) if assets is None else list(assets)

    rows = []
    for c, t in enumerate(checkpoints):
        for asset in selected:
            if asset == "B":
                # discounted numeraire is identically 1
                rows.append(ZScore(t, "B", 1.0, 0.0, 0.0))
                continue
            a = labels.index(asset)
            mean, stderr = weighted_mean(disc[:, c, a], ell[:, c])
            rows.append(ZScore(t, asset, float(mean), float(stderr), _zscore(mean, stderr, float(initial[a]))))
    for row in rows:
        logger.debug("z-test t=%g %s: mean %.6g stderr %.3g z %.3f", *row)
    return rows


def _density_samples(spec: MarketSpec, gir: GirsanovSpec, t: float, n_paths: int, seed: int,
                     dt: Optional[float], threads: int) -> NDArray[np.float64]:
    """(ℓ(t), W^Q(t)) per path"""
    require_paths(n_paths)
    if not t > 0:
        raise DomainError(f"time must be positive, got {t}")

    def one_path(index: int, rng: np.random.Generator):
        path = simulate_assets(spec, t, dt, 1, 0, rng)
        return density_path(gir, path).values[-1], brownian_under_q(gir, path)[-1]

    return np.array(map_paths(one_path, n_paths, seed, threads))


def density_normalization(spec: MarketSpec, gir: GirsanovSpec, t: float, n_paths: int, seed: int,
                          dt: Optional[float] = None, threads: int = 1) -> Tuple[float, float]:
    """Monte-Carlo mean of ℓ(t) and its standard error; the mean should be 1"""
    samples = _density_samples(spec, gir, t, n_paths, seed, dt, threads)
    mean, stderr = weighted_mean(samples[:, 0])
    return float(mean), float(stderr)


def brownian_drift_check(spec: MarketSpec, gir: GirsanovSpec, t: float, n_paths: int, seed: int,
                         dt: Optional[float] = None, threads: int = 1) -> ZScore:
    """z-score of E_P[ℓ(t) W^Q(t)] against 0: W^Q carries no drift under Q"""
    samples = _density_samples(spec, gir, t, n_paths, seed, dt, threads)
    mean, stderr = weighted_mean(samples[:, 1], samples[:, 0])
    return ZScore(t, "W^Q", float(mean), float(stderr), _zscore(mean, stderr, 0.0))


def ztest_frame(rows: Sequence[ZScore]) -> pd.DataFrame:
    """z-test report: checkpoint, asset, mean, stderr, z"""
    return pd.DataFrame(list(rows), columns=list(ZScore._fields))
