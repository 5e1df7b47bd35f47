import json
from pathlib import Path

import numpy as np
import pytest

from sellock.envs import HypothesisConfig, HypothesisEnv, make_family

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def golden_env():
    with open(FIXTURES / "golden_env_s4_q3_a2_seed7.json") as fh:
        return HypothesisEnv.from_dict(json.load(fh))


@pytest.fixture
def ref_family():
    return make_family(HypothesisConfig(num_states=4, num_queries=4, alphabet=2, horizon=3,
                                        identifiable=True, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_state_env(horizon=1):
    """Null query plus a perfectly discriminating one."""
    obs = np.array([[-1, 0], [-1, 1]])
    return HypothesisEnv(obs, 0, horizon, frozenset({0}), 2)
