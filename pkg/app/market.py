"""
MAP Market Lab - Enlarged Market

Regime-dependent coefficients of the money market B, the stock S0 and the
completion securities (Markovian jump securities S_j, power-jump securities
S^(k), impulse securities S_i^(l)), with event-driven path simulation.

Every price is advanced in log-space. Between events the coefficients are
frozen at the regime occupied on the open interval, so the continuous part is
exact; at an event time the jump factor uses the pre-jump regime.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from app.chain import ChainPath, RegimeChain, SeedLike, as_generator, simulate_chain
from app.errors import DomainError, GridError, SpecError
from app.jumps import JumpEventLog, LevyJumpSpec, SwitchJumpSpec, gamma_moment, simulate_jumps, switch_moment

logger = logging.getLogger(__name__)

DEFAULT_GRID_STEPS = 2000
DRIFT_TOL = 1e-12


@dataclass(frozen=True)
class SecurityBlock:
    """Drift, volatility and initial price of one family of completion securities.

    Shapes by family (N regimes):
      jump     mu, sigma (N, N) indexed [j][regime], s_init (N,)
      power    mu, sigma (K_max - 1, N) indexed [k - 2][regime], s_init (K_max - 1,)
      impulse  mu, sigma (N, L_max, N) indexed [i][l - 1][regime], s_init (N, L_max)
    """

    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]
    s_init: NDArray[np.float64]

    def __post_init__(self):
        for name in ("mu", "sigma", "s_init"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))


@dataclass(frozen=True)
class MarketSpec:
    """All regime-indexed coefficients of the enlarged market.

    ``limit_case`` admits the boundary values σ0 = 0 and μ0 = r used by the
    deterministic and zero-excess-return limits; scenario documents never set it.
    """

    chain: RegimeChain
    levy: LevyJumpSpec
    switch: SwitchJumpSpec
    r: NDArray[np.float64]
    mu0: NDArray[np.float64]
    sigma0: NDArray[np.float64]
    s0: float = 1.0
    jump_securities: Optional[SecurityBlock] = None
    power_securities: Optional[SecurityBlock] = None
    impulse_securities: Optional[SecurityBlock] = None
    limit_case: bool = False

    def __post_init__(self):
        n = self.chain.n_regimes
        if self.levy.n_regimes != n:
            raise SpecError("levy.gamma", f"expected {n} rows, one per regime")
        if self.switch.n_regimes != n:
            raise SpecError("switch", f"expected {n} mark distributions, one per regime")

        r = self._regime_vector("r", self.r, n)
        mu0 = self._regime_vector("mu0", self.mu0, n)
        sigma0 = self._regime_vector("sigma0", self.sigma0, n)
        for i in range(n):
            if sigma0[i] < 0 or (sigma0[i] == 0 and not self.limit_case):
                raise SpecError(f"sigma0[{i}]" if n > 1 else "sigma0", "volatility must be strictly positive")
            if mu0[i] < r[i] or (mu0[i] == r[i] and not self.limit_case):
                raise SpecError(f"mu0[{i}]" if n > 1 else "mu0", f"stock drift must exceed the short rate r={r[i]}")
        if not self.s0 > 0:
            raise SpecError("s0", "initial price must be strictly positive")

        jump = self.jump_securities or SecurityBlock(mu=np.tile(r, (n, 1)), sigma=np.ones((n, n)), s_init=np.ones(n))
        power = self.power_securities or SecurityBlock(mu=np.zeros((0, n)), sigma=np.zeros((0, n)), s_init=np.zeros(0))
        impulse = self.impulse_securities or SecurityBlock(mu=np.zeros((n, 0, n)), sigma=np.zeros((n, 0, n)),
                                                           s_init=np.zeros((n, 0)))
        self._check_block("jump_securities", jump, (n, n), (n,))
        k_rows = power.mu.shape[0] if power.mu.ndim == 2 else -1
        self._check_block("power_securities", power, (k_rows, n), (k_rows,))
        l_cols = impulse.mu.shape[1] if impulse.mu.ndim == 3 else -1
        self._check_block("impulse_securities", impulse, (n, l_cols, n), (n, l_cols))

        # jump factors of the completion securities must stay positive on the support
        for k_idx in range(power.mu.shape[0]):
            factors = 1.0 + power.sigma[k_idx][:, None] * self.levy.gamma ** (k_idx + 2)
            bad = np.argwhere(factors <= 0)
            if bad.size:
                i, m = bad[0]
                raise SpecError(f"power_securities.sigma[{k_idx}][{i}]",
                                f"jump factor nonpositive at mark {m}")
        for i in range(n):
            for l_idx in range(impulse.mu.shape[1]):
                u_pow = self.switch.marks[i] ** (l_idx + 1)
                factors = 1.0 + impulse.sigma[i, l_idx][:, None] * u_pow[None, :]
                bad = np.argwhere(factors <= 0)
                if bad.size:
                    j, m = bad[0]
                    raise SpecError(f"impulse_securities.sigma[{i}][{l_idx}][{j}]",
                                    f"jump factor nonpositive at switch mark {m}")

        object.__setattr__(self, "r", r)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "sigma0", sigma0)
        object.__setattr__(self, "s0", float(self.s0))
        object.__setattr__(self, "jump_securities", jump)
        object.__setattr__(self, "power_securities", power)
        object.__setattr__(self, "impulse_securities", impulse)

    @staticmethod
    def _regime_vector(name: str, values, n: int) -> NDArray[np.float64]:
        arr = np.asarray(values, dtype=np.float64).ravel()
        if arr.size == 1 and n > 1:
            arr = np.full(n, arr[0])
        if arr.shape != (n,):
            raise SpecError(name, f"expected {n} entries, one per regime")
        if not np.all(np.isfinite(arr)):
            raise SpecError(name, "entries must be finite")
        return arr

    @staticmethod
    def _check_block(name: str, block: SecurityBlock, shape: tuple, price_shape: tuple):
        if -1 in shape or block.mu.shape != shape or block.sigma.shape != shape:
            raise SpecError(f"{name}.mu", f"expected shape {shape}, got {block.mu.shape}")
        if block.s_init.shape != price_shape:
            raise SpecError(f"{name}.s_init", f"expected shape {price_shape}, got {block.s_init.shape}")
        if not np.all(np.isfinite(block.mu)):
            raise SpecError(f"{name}.mu", "entries must be finite")
        bad = np.argwhere(block.sigma <= 0)
        if bad.size:
            raise SpecError(f"{name}.sigma{''.join(f'[{x}]' for x in bad[0])}", "volatility must be strictly positive")
        bad = np.argwhere(block.s_init <= 0)
        if bad.size:
            raise SpecError(f"{name}.s_init{''.join(f'[{x}]' for x in bad[0])}",
                            "initial price must be strictly positive")

    @property
    def n_regimes(self) -> int:
        return self.chain.n_regimes

    @property
    def k_max(self) -> int:
        return 1 + self.power_securities.mu.shape[0]

    @property
    def l_max(self) -> int:
        return self.impulse_securities.mu.shape[1]

    def check_orders(self, K: int, L: int):
        if not 1 <= K <= self.k_max:
            raise DomainError(f"power-jump order K={K} outside 1..{self.k_max}")
        if not 0 <= L <= self.l_max:
            raise DomainError(f"impulse order L={L} outside 0..{self.l_max}")

    def switch_mark_compensator(self, regime: int, l: int = 1) -> float:
        """Σ_{j≠i} λ_ij E[(U^(j))^l] while the chain sits in regime i"""
        rates = self.chain.off_diagonal()[regime]
        return float(sum(rates[j] * switch_moment(self.switch, j, l) for j in range(self.n_regimes)))


def asset_labels(n_regimes: int, K: int, L: int) -> List[str]:
    """Risky asset names in export order: S0, S_{j}, S^{(k)}, S_{i}^{(l)} (l-major)"""
    labels = ["S0"]
    labels += [f"S_{{{j}}}" for j in range(n_regimes)]
    labels += [f"S^{{({k})}}" for k in range(2, K + 1)]
    labels += [f"S_{{{i}}}^{{({l})}}" for l in range(1, L + 1) for i in range(n_regimes)]
    return labels


@dataclass(frozen=True)
class ScenarioPath:
    """One simulated trajectory on the merged time grid.

    Step n covers (times[n], times[n+1]]; ``regimes[n]`` is the regime on that
    interval, and an event recorded for step n happens at times[n+1].
    ``jump_log`` is the event part of each step's log-price increment; the
    ``d_*`` arrays hold per-step increments of the driving processes.
    """

    horizon: float
    K: int
    L: int
    labels: Tuple[str, ...]
    chain_path: ChainPath
    events: JumpEventLog
    times: NDArray[np.float64]
    regimes: NDArray[np.int64]
    dW: NDArray[np.float64]
    log_bond: NDArray[np.float64]
    log_prices: NDArray[np.float64]
    jump_log: NDArray[np.float64]
    poisson_steps: NDArray[np.int64]
    switch_steps: NDArray[np.int64]
    d_counts: NDArray[np.float64]
    d_phi: NDArray[np.float64]
    d_power: NDArray[np.float64]
    d_power_comp: NDArray[np.float64]
    d_impulse: NDArray[np.float64]
    d_impulse_comp: NDArray[np.float64]

    @property
    def n_steps(self) -> int:
        return self.regimes.size

    @property
    def dt(self) -> NDArray[np.float64]:
        return np.diff(self.times)

    @property
    def bond(self) -> NDArray[np.float64]:
        return np.exp(self.log_bond)

    @property
    def prices(self) -> NDArray[np.float64]:
        return np.exp(self.log_prices)

    @property
    def brownian(self) -> NDArray[np.float64]:
        return np.concatenate(([0.0], np.cumsum(self.dW)))

    def column(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise DomainError(f"unknown asset {label!r}; known: B, {', '.join(self.labels)}") from None

    def grid_index(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t))
        if idx >= self.times.size or self.times[idx] != t:
            raise GridError(f"time {t} is not on the scenario grid; pass it as a checkpoint")
        return idx

    def regime_column(self) -> NDArray[np.int64]:
        """J(t) at every grid time"""
        return np.append(self.regimes, self.chain_path.states[-1])


def _merged_grid(horizon: float, dt: Optional[float], chain_path: ChainPath, events: JumpEventLog,
                 checkpoints: Sequence[float]) -> NDArray[np.float64]:
    pieces = [np.array([0.0, horizon]), chain_path.jump_epochs, events.poisson_times]
    if dt is not None:
        if not dt > 0:
            raise DomainError(f"time step must be positive, got {dt}")
        pieces.append(np.linspace(0.0, horizon, max(int(math.ceil(horizon / dt - 1e-9)), 1) + 1))
    ck = np.asarray(checkpoints, dtype=np.float64)
    if ck.size and (ck.min() < 0 or ck.max() > horizon):
        raise DomainError(f"checkpoints must lie in [0, {horizon}]")
    pieces.append(ck)
    return np.unique(np.concatenate(pieces))


def _log_drift_table(spec: MarketSpec, K: int, L: int) -> NDArray[np.float64]:
    """Per-regime log drift of every risky asset, compensators included"""
    n = spec.n_regimes
    rates = spec.chain.off_diagonal()
    jump, power, impulse = spec.jump_securities, spec.power_securities, spec.impulse_securities
    table = np.zeros((n, 1 + n + (K - 1) + n * L))
    for c in range(n):
        table[c, 0] = (spec.mu0[c] - 0.5 * spec.sigma0[c] ** 2 - gamma_moment(spec.levy, c, 1)
                       - spec.switch_mark_compensator(c))
        table[c, 1:1 + n] = jump.mu[:, c] - jump.sigma[:, c] * rates[c]
        for k in range(2, K + 1):
            table[c, n + k - 1] = power.mu[k - 2, c] - power.sigma[k - 2, c] * gamma_moment(spec.levy, c, k)
        col = n + K
        for l in range(1, L + 1):
            for i in range(n):
                table[c, col] = (impulse.mu[i, l - 1, c]
                                 - impulse.sigma[i, l - 1, c] * rates[c, i] * switch_moment(spec.switch, i, l))
                col += 1
    return table


def _safe_log1p(factors: NDArray[np.float64], what: str) -> NDArray[np.float64]:
    if np.any(factors <= -1.0):
        raise SpecError(what, "nonpositive price factor on a simulated path")
    return np.log1p(factors)


def simulate_assets(spec: MarketSpec, horizon: float, dt: Optional[float], K: int, L: int, seed: SeedLike,
                    checkpoints: Sequence[float] = ()) -> ScenarioPath:
    """Simulate the chain, the jumps and every price on one merged grid.

    ``dt=None`` keeps only event times, checkpoints and the endpoints, which
    is exact for every price because the coefficients are regime-constant.
    """
    if not horizon > 0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    spec.check_orders(K, L)
    rng = as_generator(seed)
    n = spec.n_regimes

    chain_path = simulate_chain(spec.chain, horizon, rng)
    events = simulate_jumps(spec.levy, spec.switch, chain_path, rng)
    times = _merged_grid(horizon, dt, chain_path, events, checkpoints)
    dts = np.diff(times)
    n_steps = dts.size
    regimes = chain_path.states[np.searchsorted(chain_path.jump_epochs, times[:-1], side="right")]
    dW = rng.standard_normal(n_steps) * np.sqrt(dts)

    poisson_steps = np.searchsorted(times, events.poisson_times) - 1
    switch_steps = np.searchsorted(times, events.switch_times) - 1
    p_regimes = regimes[poisson_steps]
    gammas = spec.levy.gamma[p_regimes, events.poisson_marks]
    s_from = regimes[switch_steps]
    s_to = events.switch_targets
    u = events.switch_marks

    labels = asset_labels(n, K, L)
    inc = _log_drift_table(spec, K, L)[regimes] * dts[:, None]
    inc[:, 0] += spec.sigma0[regimes] * dW
    jump_log = np.zeros_like(inc)

    # Poisson events: S0 and the power-jump securities
    np.add.at(jump_log[:, 0], poisson_steps, _safe_log1p(gammas, "levy.gamma"))
    for k in range(2, K + 1):
        factors = spec.power_securities.sigma[k - 2, p_regimes] * gammas ** k
        np.add.at(jump_log[:, n + k - 1], poisson_steps, _safe_log1p(factors, "power_securities.sigma"))

    # chain switches: S0, the jump security of the entered regime, its impulse securities
    np.add.at(jump_log[:, 0], switch_steps, _safe_log1p(u, "switch.marks"))
    np.add.at(jump_log, (switch_steps, 1 + s_to),
              _safe_log1p(spec.jump_securities.sigma[s_to, s_from], "jump_securities.sigma"))
    for l in range(1, L + 1):
        factors = spec.impulse_securities.sigma[s_to, l - 1, s_from] * u ** l
        np.add.at(jump_log, (switch_steps, n + K + (l - 1) * n + s_to),
                  _safe_log1p(factors, "impulse_securities.sigma"))

    s_init = np.concatenate((
        [spec.s0],
        spec.jump_securities.s_init,
        spec.power_securities.s_init[:K - 1],
        spec.impulse_securities.s_init[:, :L].T.ravel(),
    ))
    log_prices = np.vstack((np.log(s_init), np.log(s_init) + np.cumsum(inc + jump_log, axis=0)))
    log_bond = np.concatenate(([0.0], np.cumsum(spec.r[regimes] * dts)))

    # driving processes, increment form
    rates = spec.chain.off_diagonal()
    d_counts = np.zeros((n_steps, n))
    np.add.at(d_counts, (switch_steps, s_to), 1.0)
    d_phi = rates[regimes] * dts[:, None]

    d_power = np.zeros((n_steps, K - 1))
    d_power_comp = np.zeros((n_steps, K - 1))
    for k in range(2, K + 1):
        np.add.at(d_power[:, k - 2], poisson_steps, gammas ** k)
        moments = np.array([gamma_moment(spec.levy, c, k) for c in range(n)])
        d_power_comp[:, k - 2] = moments[regimes] * dts

    d_impulse = np.zeros((n_steps, n * L))
    d_impulse_comp = np.zeros((n_steps, n * L))
    for l in range(1, L + 1):
        cols = (l - 1) * n + s_to
        np.add.at(d_impulse, (switch_steps, cols), u ** l)
        moments = np.array([switch_moment(spec.switch, i, l) for i in range(n)])
        d_impulse_comp[:, (l - 1) * n:l * n] = d_phi * moments[None, :]

    logger.debug("simulated path: %d steps, %d switches, %d Poisson events",
                 n_steps, events.n_switches, events.n_poisson)
    return ScenarioPath(
        horizon=horizon, K=K, L=L, labels=tuple(labels), chain_path=chain_path, events=events,
        times=times, regimes=regimes, dW=dW, log_bond=log_bond, log_prices=log_prices, jump_log=jump_log,
        poisson_steps=poisson_steps, switch_steps=switch_steps,
        d_counts=d_counts, d_phi=d_phi, d_power=d_power, d_power_comp=d_power_comp,
        d_impulse=d_impulse, d_impulse_comp=d_impulse_comp,
    )


def discount(path: ScenarioPath) -> NDArray[np.float64]:
    """S̃ = S / B at every grid time, columns in ``path.labels`` order"""
    return np.exp(path.log_prices - path.log_bond[:, None])


def price_at(path: ScenarioPath, asset: str, t: float) -> float:
    """Price of ``asset`` (a label or "B") at grid time t"""
    idx = path.grid_index(t)
    if asset == "B":
        return float(np.exp(path.log_bond[idx]))
    return float(np.exp(path.log_prices[idx, path.column(asset)]))


def path_frame(path: ScenarioPath) -> pd.DataFrame:
    frame = pd.DataFrame(path.prices, columns=list(path.labels))
    frame.insert(0, "B", path.bond)
    frame.insert(0, "regime", path.regime_column())
    frame.insert(0, "time", path.times)
    return frame


def export_path_csv(path: ScenarioPath, file: Union[str, Path]) -> Path:
    """Write time, regime, B and every risky price, one row per grid time"""
    file = Path(file)
    path_frame(path).to_csv(file, index=False)
    return file


@dataclass(frozen=True)
class NoArbitrageReport:
    """Outcome of the static martingale conditions on the drifts.

    ``violations`` names every drift that breaks a condition; ``warnings``
    names switch-mark channels the density leaves untilted, where a nonzero
    market price of switch risk meets a nonzero mark moment.
    """

    passed: bool
    violations: Tuple[str, ...] = ()
    warnings: Tuple[str, ...] = field(default=())


def check_no_arbitrage(spec: MarketSpec, K: Optional[int] = None, L: Optional[int] = None) -> NoArbitrageReport:
    """Check μ_j^j = r_j, μ^(k)_i = r_i and μ^(l)_{i,j} = r_j for the traded orders"""
    K = spec.k_max if K is None else K
    L = spec.l_max if L is None else L
    spec.check_orders(K, L)
    n = spec.n_regimes
    jump, power, impulse = spec.jump_securities, spec.power_securities, spec.impulse_securities

    violations = []
    for j in range(n):
        if abs(jump.mu[j, j] - spec.r[j]) > DRIFT_TOL:
            violations.append(f"jump_securities.mu[{j}][{j}] (j={j})")
    for k in range(2, K + 1):
        for i in range(n):
            if abs(power.mu[k - 2, i] - spec.r[i]) > DRIFT_TOL:
                violations.append(f"power_securities.mu[{k - 2}][{i}] (k={k}, regime={i})")
    for l in range(1, L + 1):
        for i in range(n):
            for j in range(n):
                if abs(impulse.mu[i, l - 1, j] - spec.r[j]) > DRIFT_TOL:
                    violations.append(f"impulse_securities.mu[{i}][{l - 1}][{j}] (i={i}, l={l}, regime={j})")

    warnings = []
    rates = spec.chain.off_diagonal()
    for c in range(n):
        for j in range(n):
            if j == c:
                continue
            psi = (spec.r[c] - jump.mu[j, c]) / (jump.sigma[j, c] * rates[c, j])
            if psi == 0:
                continue
            if switch_moment(spec.switch, j, 1) != 0:
                warnings.append(f"S0 switch marks into {j} under psi[{c}][{j}]={psi:.6g}")
            for l in range(1, L + 1):
                if switch_moment(spec.switch, j, l) != 0:
                    warnings.append(f"S_{{{j}}}^{{({l})}} switch marks under psi[{c}][{j}]={psi:.6g}")

    for v in violations:
        logger.warning("no-arbitrage condition violated: %s", v)
    return NoArbitrageReport(passed=not violations, violations=tuple(violations), warnings=tuple(warnings))
