"""
MAP Market Lab - Jump Components

Finite-activity Lévy jumps whose size depends on the current regime, marks
drawn at each regime switch, and the compensated power-jump and impulse
processes built from them. All compensators are exact sums over regime
occupation, so Monte-Carlo means of the compensated processes carry no
time-stepping bias.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from app.chain import ChainPath, RegimeChain, SeedLike, as_generator, counting_and_compensator
from app.errors import DomainError, SpecError

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12


def _check_weights(field: str, probs: NDArray[np.float64]):
    if probs.ndim != 1 or probs.size == 0:
        raise SpecError(field, "needs at least one weight")
    if np.any(probs <= 0):
        raise SpecError(field, "weights must be strictly positive")
    if abs(probs.sum() - 1.0) > PROB_TOL:
        raise SpecError(field, f"weights sum to {probs.sum():.15g}, expected 1")


@dataclass(frozen=True)
class LevyJumpSpec:
    """Compound Poisson jumps with discrete marks.

    ``gamma[i, m]`` is the return impact of mark m while the chain sits in
    regime i, so ν = intensity · Σ_m probs[m] δ_{marks[m]}. Exponential
    moments of ν are finite because the support is finite.
    """

    intensity: float
    marks: NDArray[np.float64]
    probs: NDArray[np.float64]
    gamma: NDArray[np.float64]

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=np.float64).ravel()
        probs = np.asarray(self.probs, dtype=np.float64).ravel()
        gamma = np.atleast_2d(np.asarray(self.gamma, dtype=np.float64))
        if not self.intensity > 0:
            raise SpecError("levy.intensity", "must be strictly positive")
        _check_weights("levy.probs", probs)
        if marks.shape != probs.shape:
            raise SpecError("levy.marks", "needs one mark per probability weight")
        if np.unique(marks).size != marks.size:
            raise SpecError("levy.marks", "marks must be distinct")
        if gamma.shape[1] != marks.size:
            raise SpecError("levy.gamma", f"expected {marks.size} columns, got {gamma.shape[1]}")
        bad = np.argwhere(gamma <= -1.0)
        if bad.size:
            i, m = bad[0]
            raise SpecError(f"levy.gamma[{i}][{m}]", "jump impact must exceed -1")
        object.__setattr__(self, "intensity", float(self.intensity))
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def disabled(cls, n_regimes: int) -> "LevyJumpSpec":
        """Spec with γ ≡ 0: Poisson events still happen but move nothing"""
        return cls(intensity=1.0, marks=np.zeros(1), probs=np.ones(1), gamma=np.zeros((n_regimes, 1)))

    @property
    def n_regimes(self) -> int:
        return self.gamma.shape[0]

    @property
    def n_marks(self) -> int:
        return self.marks.size

    @property
    def is_trivial(self) -> bool:
        return bool(np.all(self.gamma == 0))


@dataclass(frozen=True)
class SwitchJumpSpec:
    """Distribution η_i of the mark drawn when the chain enters regime i"""

    marks: tuple
    probs: tuple

    def __post_init__(self):
        if len(self.marks) != len(self.probs) or len(self.marks) == 0:
            raise SpecError("switch", "needs one mark list and one weight list per regime")
        marks, probs = [], []
        for i, (u, q) in enumerate(zip(self.marks, self.probs)):
            u = np.asarray(u, dtype=np.float64).ravel()
            q = np.asarray(q, dtype=np.float64).ravel()
            _check_weights(f"switch.probs[{i}]", q)
            if u.shape != q.shape:
                raise SpecError(f"switch.marks[{i}]", "needs one mark per probability weight")
            bad = np.flatnonzero(u <= -1.0)
            if bad.size:
                raise SpecError(f"switch.marks[{i}][{bad[0]}]", "switch mark must exceed -1")
            marks.append(u)
            probs.append(q)
        object.__setattr__(self, "marks", tuple(marks))
        object.__setattr__(self, "probs", tuple(probs))

    @classmethod
    def disabled(cls, n_regimes: int) -> "SwitchJumpSpec":
        """η_i = δ_0 in every regime"""
        return cls(marks=tuple(np.zeros(1) for _ in range(n_regimes)),
                   probs=tuple(np.ones(1) for _ in range(n_regimes)))

    @property
    def n_regimes(self) -> int:
        return len(self.marks)

    @property
    def is_trivial(self) -> bool:
        return all(np.all(u == 0) for u in self.marks)


@dataclass(frozen=True)
class JumpEventLog:
    """Every jump on one path.

    Poisson events are (time, mark index); switch events are (epoch, entered
    regime, drawn mark value) and line up one-to-one with the chain epochs.
    """

    poisson_times: NDArray[np.float64]
    poisson_marks: NDArray[np.int64]
    switch_times: NDArray[np.float64]
    switch_targets: NDArray[np.int64]
    switch_marks: NDArray[np.float64]

    @property
    def n_poisson(self) -> int:
        return self.poisson_times.size

    @property
    def n_switches(self) -> int:
        return self.switch_times.size


class CompensatedValue(NamedTuple):
    """A jump sum and the same sum minus its compensator"""

    value: float
    compensated: float


def gamma_moment(levy: LevyJumpSpec, regime: int, k: int) -> float:
    """∫ γ_i(x)^k ν(dx) = λ_P Σ_m p_m γ_i(x_m)^k"""
    return float(levy.intensity * np.dot(levy.probs, levy.gamma[regime] ** k))


def switch_moment(switch: SwitchJumpSpec, i: int, l: int) -> float:
    """E[(U^(i))^l] as a finite sum over the marks of η_i"""
    return float(np.dot(switch.probs[i], switch.marks[i] ** l))


def simulate_jumps(levy: LevyJumpSpec, switch: SwitchJumpSpec, chain_path: ChainPath,
                   seed: SeedLike) -> JumpEventLog:
    """Draw the Poisson events on [0, T] and one switch mark per chain epoch"""
    rng = as_generator(seed)
    horizon = chain_path.horizon

    n_events = rng.poisson(levy.intensity * horizon)
    poisson_times = np.sort(rng.uniform(0.0, horizon, size=n_events))
    poisson_marks = rng.choice(levy.n_marks, size=n_events, p=levy.probs)

    targets = chain_path.states[1:]
    switch_marks = np.empty(targets.size)
    for n, i in enumerate(targets):
        switch_marks[n] = switch.marks[i][rng.choice(switch.marks[i].size, p=switch.probs[i])]

    return JumpEventLog(
        poisson_times=poisson_times,
        poisson_marks=np.asarray(poisson_marks, dtype=np.int64),
        switch_times=chain_path.jump_epochs.copy(),
        switch_targets=targets.copy(),
        switch_marks=switch_marks,
    )


def poisson_regimes(events: JumpEventLog, chain_path: ChainPath) -> NDArray[np.int64]:
    """J(τ-) at each Poisson event time τ"""
    idx = np.searchsorted(chain_path.jump_epochs, events.poisson_times, side="left")
    return chain_path.states[idx]


def power_jump_path(events: JumpEventLog, levy: LevyJumpSpec, chain_path: ChainPath,
                    k: int, t: float) -> CompensatedValue:
    """X^(k)(t) and the Teugels martingale X̄^(k)(t)"""
    if k < 2:
        raise DomainError(f"power-jump order must be at least 2, got {k}")
    if not 0.0 <= t <= chain_path.horizon:
        raise DomainError(f"time {t} outside [0, {chain_path.horizon}]")

    upto = events.poisson_times <= t
    regimes = poisson_regimes(events, chain_path)[upto]
    value = float(np.sum(levy.gamma[regimes, events.poisson_marks[upto]] ** k))

    occupation = chain_path.occupation_times(t, levy.n_regimes)
    moments = np.array([gamma_moment(levy, i, k) for i in range(levy.n_regimes)])
    return CompensatedValue(value, value - float(np.dot(occupation, moments)))


def impulse_path(events: JumpEventLog, switch: SwitchJumpSpec, chain: RegimeChain,
                 chain_path: ChainPath, i: int, l: int, t: float) -> CompensatedValue:
    """Ψ_i^(l)(t) and Ψ̄_i^(l)(t) = Ψ_i^(l)(t) - E[(U^(i))^l] φ_i(t)"""
    if not 0 <= i < switch.n_regimes:
        raise DomainError(f"regime {i} outside 0..{switch.n_regimes - 1}")
    if l < 1:
        raise DomainError(f"impulse order must be at least 1, got {l}")

    jc = counting_and_compensator(chain, chain_path, i, t)
    into_i = (events.switch_targets == i) & (events.switch_times <= t)
    value = float(np.sum(events.switch_marks[into_i] ** l))
    return CompensatedValue(value, value - switch_moment(switch, i, l) * jc.compensator)
