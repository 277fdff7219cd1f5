"""
MAP Market Lab - Scenario Documents

One JSON document fully determines a run: the market, the run parameters and
the optional hedge and oracle blocks. Unknown keys are rejected at every
level so a typo never silently falls back to a default. Environment defaults
(worker count, output directory) come from the process environment or a
``.env`` file via python-dotenv.
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from dotenv import load_dotenv

from app.chain import RegimeChain
from app.errors import ConfigError, DomainError
from app.jumps import LevyJumpSpec, SwitchJumpSpec
from app.market import DEFAULT_GRID_STEPS, MarketSpec, SecurityBlock
from app.wealth import LOG, POWER, UtilitySpec

logger = logging.getLogger(__name__)

DEFAULT_PATHS = 10000
DEFAULT_OUTPUT_DIR = "output"

MARKET_KEYS = {"intensity", "initial_state", "r", "mu0", "sigma0", "s0", "levy", "switch",
               "jump_securities", "power_securities", "impulse_securities"}
REQUIRED_MARKET_KEYS = ("intensity", "r", "mu0", "sigma0")
LEVY_KEYS = {"intensity", "marks", "probs", "gamma"}
SWITCH_KEYS = {"marks", "probs"}
SECURITY_KEYS = {"mu", "sigma", "s_init"}
RUN_KEYS = {"horizon", "dt", "n_paths", "seed", "K", "L", "checkpoints", "utility", "alpha", "z0", "export_paths"}
HEDGE_KEYS = {"h0", "h_jump", "h_power", "h_impulse", "m0"}
ORACLE_KEYS = {"bounds", "points"}
TOP_KEYS = {"market", "run", "hedge", "oracle"}

_UNSET = object()


@dataclass(frozen=True)
class RunConfig:
    horizon: float = 1.0
    dt: Optional[float] = None
    n_paths: int = DEFAULT_PATHS
    seed: int = 0
    K: Optional[int] = None
    L: Optional[int] = None
    checkpoints: Tuple[float, ...] = ()
    utility: UtilitySpec = field(default_factory=UtilitySpec)
    z0: float = 1.0
    export_paths: int = 1


@dataclass(frozen=True)
class HedgeConfig:
    h0: float = 0.0
    h_jump: Optional[List[float]] = None
    h_power: Optional[List[float]] = None
    h_impulse: Optional[List[List[float]]] = None
    m0: float = 1.0


@dataclass(frozen=True)
class OracleConfig:
    bounds: Any
    points: int = 41


@dataclass(frozen=True)
class ScenarioConfig:
    """A parsed scenario document and the overrides applied on top of it"""

    document: Dict[str, Any]
    run: RunConfig
    hedge: Optional[HedgeConfig] = None
    oracle: Optional[OracleConfig] = None
    overrides: Dict[str, Any] = field(default_factory=dict)
    source: Optional[str] = None

    @property
    def market(self) -> Dict[str, Any]:
        return self.document["market"]


@dataclass(frozen=True)
class EnvironmentDefaults:
    threads: int = 1
    output_dir: str = DEFAULT_OUTPUT_DIR


def _check_keys(block: Any, allowed: set, where: str):
    if not isinstance(block, dict):
        raise ConfigError("expected an object", field=where)
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", field=f"{where}.{unknown[0]}" if where else unknown[0])


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=where)
    return float(value)


def _integer(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", field=where)
    return value


def _array(value: Any, where: str, ndim: Optional[int] = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError("expected a numeric array with regular shape", field=where) from None
    if ndim is not None and arr.ndim != ndim:
        raise ConfigError(f"expected a {ndim}-dimensional array, got {arr.ndim} dimensions", field=where)
    return arr


def _security_block(block: Any, where: str, ndim: int) -> SecurityBlock:
    _check_keys(block, SECURITY_KEYS, where)
    missing = sorted(SECURITY_KEYS - set(block))
    if missing:
        raise ConfigError("missing key", field=f"{where}.{missing[0]}")
    return SecurityBlock(mu=_array(block["mu"], f"{where}.mu", ndim),
                         sigma=_array(block["sigma"], f"{where}.sigma", ndim),
                         s_init=_array(block["s_init"], f"{where}.s_init", ndim - 1))


def build_market(config: Union[ScenarioConfig, Dict[str, Any]]) -> MarketSpec:
    """MarketSpec from the ``market`` block; SpecError names any violated invariant"""
    market = config.market if isinstance(config, ScenarioConfig) else config
    _check_keys(market, MARKET_KEYS, "market")
    for key in REQUIRED_MARKET_KEYS:
        if key not in market:
            raise ConfigError("missing key", field=f"market.{key}")

    initial = market.get("initial_state", 0)
    if not isinstance(initial, int) or isinstance(initial, bool):
        initial = _array(initial, "market.initial_state", 1)
    chain = RegimeChain(_array(market["intensity"], "market.intensity", 2), initial)
    n = chain.n_regimes

    if "levy" in market:
        levy_block = market["levy"]
        _check_keys(levy_block, LEVY_KEYS, "market.levy")
        missing = sorted(LEVY_KEYS - set(levy_block))
        if missing:
            raise ConfigError("missing key", field=f"market.levy.{missing[0]}")
        levy = LevyJumpSpec(intensity=_number(levy_block["intensity"], "market.levy.intensity"),
                            marks=_array(levy_block["marks"], "market.levy.marks", 1),
                            probs=_array(levy_block["probs"], "market.levy.probs", 1),
                            gamma=_array(levy_block["gamma"], "market.levy.gamma", 2))
    else:
        levy = LevyJumpSpec.disabled(n)

    if "switch" in market:
        switch_block = market["switch"]
        _check_keys(switch_block, SWITCH_KEYS, "market.switch")
        missing = sorted(SWITCH_KEYS - set(switch_block))
        if missing:
            raise ConfigError("missing key", field=f"market.switch.{missing[0]}")
        marks, probs = switch_block["marks"], switch_block["probs"]
        if not isinstance(marks, list) or not isinstance(probs, list):
            raise ConfigError("expected one list per regime", field="market.switch")
        switch = SwitchJumpSpec(
            marks=tuple(_array(u, f"market.switch.marks[{i}]", 1) for i, u in enumerate(marks)),
            probs=tuple(_array(q, f"market.switch.probs[{i}]", 1) for i, q in enumerate(probs)),
        )
    else:
        switch = SwitchJumpSpec.disabled(n)

    def optional_block(key: str, ndim: int) -> Optional[SecurityBlock]:
        return _security_block(market[key], f"market.{key}", ndim) if key in market else None

    return MarketSpec(
        chain=chain,
        levy=levy,
        switch=switch,
        r=_array(market["r"], "market.r"),
        mu0=_array(market["mu0"], "market.mu0"),
        sigma0=_array(market["sigma0"], "market.sigma0"),
        s0=_number(market.get("s0", 1.0), "market.s0"),
        jump_securities=optional_block("jump_securities", 2),
        power_securities=optional_block("power_securities", 2),
        impulse_securities=optional_block("impulse_securities", 3),
    )


def _parse_run(block: Any) -> RunConfig:
    _check_keys(block, RUN_KEYS, "run")
    horizon = _number(block.get("horizon", 1.0), "run.horizon")
    if not horizon > 0:
        raise ConfigError("horizon must be positive", field="run.horizon")

    dt = block.get("dt", _UNSET)
    if dt is _UNSET:
        dt = horizon / DEFAULT_GRID_STEPS
    elif dt is not None:
        dt = _number(dt, "run.dt")
        if not dt > 0:
            raise ConfigError("time step must be positive or null", field="run.dt")

    kind = block.get("utility", LOG)
    if kind not in (LOG, POWER):
        raise ConfigError(f"unsupported utility {kind!r}; expected 'log' or 'power'", field="run.utility")
    if kind == POWER and block.get("alpha") is None:
        raise ConfigError("power utility needs an exponent", field="run.alpha")
    utility = UtilitySpec(kind, _number(block["alpha"], "run.alpha") if kind == POWER else None)

    checkpoints = tuple(float(t) for t in _array(block.get("checkpoints", [horizon]), "run.checkpoints", 1))
    for key in ("n_paths", "seed", "K", "L", "export_paths"):
        if key in block and block[key] is not None:
            _integer(block[key], f"run.{key}")
    return RunConfig(
        horizon=horizon,
        dt=dt,
        n_paths=block.get("n_paths", DEFAULT_PATHS),
        seed=block.get("seed", 0),
        K=block.get("K"),
        L=block.get("L"),
        checkpoints=checkpoints,
        utility=utility,
        z0=_number(block.get("z0", 1.0), "run.z0"),
        export_paths=block.get("export_paths", 1),
    )


def _parse_hedge(block: Any) -> HedgeConfig:
    _check_keys(block, HEDGE_KEYS, "hedge")
    return HedgeConfig(
        h0=_number(block.get("h0", 0.0), "hedge.h0"),
        h_jump=_array(block["h_jump"], "hedge.h_jump", 1).tolist() if "h_jump" in block else None,
        h_power=_array(block["h_power"], "hedge.h_power", 1).tolist() if "h_power" in block else None,
        h_impulse=_array(block["h_impulse"], "hedge.h_impulse", 2).tolist() if "h_impulse" in block else None,
        m0=_number(block.get("m0", 1.0), "hedge.m0"),
    )


def _parse_oracle(block: Any) -> OracleConfig:
    _check_keys(block, ORACLE_KEYS, "oracle")
    if "bounds" not in block:
        raise ConfigError("missing key", field="oracle.bounds")
    bounds = _array(block["bounds"], "oracle.bounds")
    if bounds.ndim not in (1, 2) or bounds.shape[-1] != 2:
        raise ConfigError("expected [lo, hi] or a list of [lo, hi] pairs", field="oracle.bounds")
    return OracleConfig(bounds=bounds.tolist(), points=_integer(block.get("points", 41), "oracle.points"))


def parse_config(document: Any, source: Optional[str] = None) -> ScenarioConfig:
    """Validate a decoded document and build the market once to surface invariant violations"""
    _check_keys(document, TOP_KEYS, "")
    if "market" not in document:
        raise ConfigError("missing key", field="market")
    config = ScenarioConfig(
        document=document,
        run=_parse_run(document.get("run", {})),
        hedge=_parse_hedge(document["hedge"]) if "hedge" in document else None,
        oracle=_parse_oracle(document["oracle"]) if "oracle" in document else None,
        source=source,
    )
    build_market(config)
    return config


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    """Read and validate a scenario document"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read scenario file: {e.strerror or e}", field=str(path)) from None
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}", field=str(path)) from None
    config = parse_config(document, source=str(path))
    logger.info("loaded scenario %s (%s)", path, config_hash(config)[:12])
    return config


def with_overrides(config: ScenarioConfig, n_paths: Optional[int] = None, seed: Optional[int] = None) -> ScenarioConfig:
    """Apply --paths / --seed on top of the document; the effective values are kept for the manifest"""
    changes, overrides = {}, dict(config.overrides)
    if n_paths is not None:
        changes["n_paths"] = overrides["n_paths"] = int(n_paths)
    if seed is not None:
        changes["seed"] = overrides["seed"] = int(seed)
    if not changes:
        return config
    return replace(config, run=replace(config.run, **changes), overrides=overrides)


def config_hash(config: Union[ScenarioConfig, Dict[str, Any]]) -> str:
    """SHA-256 of the canonical JSON form of the document"""
    document = config.document if isinstance(config, ScenarioConfig) else config
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def environment_defaults(dotenv_path: Optional[Union[str, Path]] = None) -> EnvironmentDefaults:
    """MAPLAB_THREADS and MAPLAB_OUTPUT_DIR; real environment variables win over .env"""
    load_dotenv(dotenv_path=dotenv_path, override=False)
    raw_threads = os.getenv("MAPLAB_THREADS", "1")
    try:
        threads = int(raw_threads)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw_threads!r}", field="MAPLAB_THREADS") from None
    if threads < 1:
        raise ConfigError("worker count must be at least 1", field="MAPLAB_THREADS")
    return EnvironmentDefaults(threads=threads, output_dir=os.getenv("MAPLAB_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))


def resolve_orders(config: ScenarioConfig, spec: MarketSpec) -> Tuple[int, int]:
    """Truncation orders of the run, defaulting to every traded security"""
    K = spec.k_max if config.run.K is None else config.run.K
    L = spec.l_max if config.run.L is None else config.run.L
    spec.check_orders(K, L)
    return K, L


def resolve_checkpoints(config: ScenarioConfig) -> List[float]:
    horizon = config.run.horizon
    checkpoints = sorted(set(config.run.checkpoints) | {horizon})
    if checkpoints[0] <= 0 or checkpoints[-1] > horizon:
        raise DomainError(f"checkpoints must lie in (0, {horizon}]")
    return checkpoints
