"""
Shared scenario fixtures

Market blocks are kept as plain dicts so the same data feeds both the library
tests (through build_market) and the command-line tests (written to JSON).
"""

import copy
import json

import pytest

from app.config import build_market

SINGLE_REGIME_MARKET = {
    "intensity": [[0.0]],
    "r": [0.03],
    "mu0": [0.08],
    "sigma0": [0.2],
}

# no Lévy or switch jumps, but power securities that carry no risk
NO_JUMP_POWER_MARKET = {
    "intensity": [[-0.5, 0.5], [1.0, -1.0]],
    "r": [0.03, 0.01],
    "mu0": [0.08, 0.05],
    "sigma0": [0.2, 0.3],
    "jump_securities": {"mu": [[0.03, 0.01], [0.03, 0.01]], "sigma": [[0.5, 0.4], [0.3, 0.6]], "s_init": [1.0, 1.0]},
    "power_securities": {"mu": [[0.03, 0.01], [0.03, 0.01]], "sigma": [[2.0, 1.5], [5.0, 4.0]],
                         "s_init": [1.0, 1.0]},
}

# every market price of switch risk is zero, so the density only tilts the Brownian motion
JUMPY_MARKET = {
    "intensity": [[-0.5, 0.5], [1.0, -1.0]],
    "initial_state": 0,
    "r": [0.03, 0.01],
    "mu0": [0.08, 0.05],
    "sigma0": [0.2, 0.3],
    "s0": 1.0,
    "levy": {"intensity": 2.0, "marks": [0.0, 1.0], "probs": [0.6, 0.4], "gamma": [[-0.05, 0.04], [-0.1, 0.06]]},
    "switch": {"marks": [[-0.02, 0.03], [0.05, -0.04]], "probs": [[0.5, 0.5], [0.5, 0.5]]},
    "jump_securities": {"mu": [[0.03, 0.01], [0.03, 0.01]], "sigma": [[0.5, 0.4], [0.3, 0.6]], "s_init": [1.0, 1.0]},
    "power_securities": {"mu": [[0.03, 0.01], [0.03, 0.01]], "sigma": [[2.0, 1.5], [5.0, 4.0]],
                         "s_init": [1.0, 1.0]},
    "impulse_securities": {
        "mu": [[[0.03, 0.01], [0.03, 0.01]], [[0.03, 0.01], [0.03, 0.01]]],
        "sigma": [[[1.0, 0.8], [3.0, 2.0]], [[1.2, 0.9], [2.5, 2.0]]],
        "s_init": [[1.0, 1.0], [1.0, 1.0]],
    },
}

# switch risk priced in both directions; used by the solvers, never by the z-test
PRICED_MARKET = copy.deepcopy(JUMPY_MARKET)
PRICED_MARKET["jump_securities"]["mu"] = [[0.03, 0.04], [0.05, 0.01]]
PRICED_MARKET["power_securities"]["mu"] = [[0.0305, 0.0103], [0.03, 0.01]]

# one Lévy mark, one switch mark per regime, K = 2, L = 1
ORACLE_MARKET = {
    "intensity": [[-0.5, 0.5], [1.0, -1.0]],
    "r": [0.03, 0.01],
    "mu0": [0.08, 0.05],
    "sigma0": [0.2, 0.3],
    "levy": {"intensity": 2.0, "marks": [1.0], "probs": [1.0], "gamma": [[-0.08], [-0.12]]},
    "switch": {"marks": [[0.05], [-0.04]], "probs": [[1.0], [1.0]]},
    "jump_securities": {"mu": [[0.03, 0.04], [0.05, 0.01]], "sigma": [[0.5, 0.4], [0.3, 0.6]], "s_init": [1.0, 1.0]},
    "power_securities": {"mu": [[0.032, 0.012]], "sigma": [[3.0, 2.0]], "s_init": [1.0]},
    "impulse_securities": {
        "mu": [[[0.03, 0.012]], [[0.029, 0.01]]],
        "sigma": [[[1.0, 1.0]], [[1.0, 1.0]]],
        "s_init": [[1.0], [1.0]],
    },
}


@pytest.fixture
def single_regime_spec():
    return build_market(copy.deepcopy(SINGLE_REGIME_MARKET))


@pytest.fixture
def no_jump_spec():
    return build_market(copy.deepcopy(NO_JUMP_POWER_MARKET))


@pytest.fixture
def jumpy_spec():
    return build_market(copy.deepcopy(JUMPY_MARKET))


@pytest.fixture
def priced_spec():
    return build_market(copy.deepcopy(PRICED_MARKET))


@pytest.fixture
def oracle_spec():
    return build_market(copy.deepcopy(ORACLE_MARKET))


@pytest.fixture
def write_scenario(tmp_path):
    """Write a scenario document to a temporary JSON file and return its path"""

    def _write(market, run=None, name="scenario.json", **blocks):
        document = {"market": copy.deepcopy(market), "run": run or {}}
        document.update(blocks)
        file = tmp_path / name
        file.write_text(json.dumps(document), encoding="utf-8")
        return str(file)

    return _write
