import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sellock.belief import (
    UNKNOWN,
    OracleTrajectory,
    as_belief,
    bayes_update,
    consistency_mask,
    dump_jsonl,
    one_step_progress,
    oracle_rollout,
    point_mass,
    potential,
    support,
    uniform,
)
from sellock.envs import HypothesisEnv
from sellock.errors import InconsistentObservationError, UsageError

from conftest import two_state_env


def test_potential_reads_true_state_mass():
    assert potential(uniform(4), 2) == 0.25
    assert potential(point_mass(4, 1), 1) == 1.0
    assert potential(np.array([0.6, 0.3, 0.1]), 1) == 0.3


def test_potential_out_of_range():
    with pytest.raises(UsageError):
        potential(uniform(3), 3)


def test_as_belief_rejects_unnormalized():
    with pytest.raises(UsageError):
        as_belief([0.5, 0.4])
    with pytest.raises(UsageError):
        as_belief([1.5, -0.5])


def test_bayes_constant_query_is_noop():
    obs = np.array([[1], [1], [1], [1]])
    assert np.array_equal(bayes_update(uniform(4), 0, 1, obs), uniform(4))


def test_bayes_symmetric_elimination():
    obs = np.array([[0], [0], [1], [1]])
    assert np.allclose(bayes_update(uniform(4), 0, 0, obs), [0.5, 0.5, 0, 0])


def test_bayes_eliminates_one_state():
    obs = np.array([[0], [0], [1]])
    post = bayes_update(np.array([0.6, 0.3, 0.1]), 0, 0, obs)
    assert np.allclose(post, [2 / 3, 1 / 3, 0], atol=1e-12)


def test_bayes_inconsistent_raises():
    obs = np.array([[0], [0]])
    with pytest.raises(InconsistentObservationError):
        bayes_update(uniform(2), 0, 1, obs)


def test_unknown_observation_is_noop():
    obs = np.array([[0], [1]])
    b = np.array([0.3, 0.7])
    assert consistency_mask(obs, 0, UNKNOWN).all()
    assert np.array_equal(bayes_update(b, 0, UNKNOWN, obs), b)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 8), st.integers(1, 5), st.integers(2, 4), st.integers(0, 2**31 - 1))
def test_bayes_posterior_normalized_and_supported(S, Q, A, seed):
    rng = np.random.default_rng(seed)
    obs = rng.integers(0, A, size=(S, Q))
    b = rng.dirichlet(np.ones(S))
    s, q = int(rng.integers(S)), int(rng.integers(Q))
    post = bayes_update(b, q, obs[s, q], obs)
    assert abs(post.sum() - 1) <= 1e-9
    assert np.all(post[obs[:, q] != obs[s, q]] == 0)
    assert post[s] >= b[s] - 1e-15


@pytest.mark.parametrize("before,after,expected", [
    (0.25, 0.40, (0.15, 0.15, 0.0)),
    (0.40, 0.40, (0.0, 0.0, 0.0)),
    (0.5, 0.2, (-0.3, 0.0, 0.3)),
])
def test_one_step_progress(before, after, expected):
    b0 = np.array([before, 1 - before])
    b1 = np.array([after, 1 - after])
    d, a, x = one_step_progress(b0, b1, 0)
    assert np.allclose((d, a, x), expected)
    assert a - x == pytest.approx(d)


def test_support():
    assert support(np.array([0.5, 0, 0.5])) == frozenset({0, 2})


def test_oracle_rollout_horizon_zero():
    env = two_state_env(horizon=0)
    tr = oracle_rollout(lambda b, t, H, rng: 1, env, rng=np.random.default_rng(0))
    assert len(tr.beliefs) == 1 and tr.progress == [] and tr.total_progress == 0


def test_oracle_rollout_discriminating_query():
    env = two_state_env(horizon=1)
    tr = oracle_rollout(lambda b, t, H, rng: 1, env, rng=np.random.default_rng(0))
    assert tr.beliefs[-1][0] == 1.0
    assert tr.progress == [0.5]


def test_oracle_rollout_constant_table():
    env = HypothesisEnv(np.zeros((3, 2), dtype=int), 1, 4, frozenset(), 2)
    tr = oracle_rollout(lambda b, t, H, rng: int(rng.integers(2)), env,
                        rng=np.random.default_rng(1))
    assert all(p == 0 for p in tr.progress)


def test_oracle_rollout_prior_must_cover_truth():
    env = two_state_env()
    with pytest.raises(UsageError):
        oracle_rollout(lambda b, t, H, rng: 1, env, prior=np.array([0.0, 1.0]))


def test_trajectory_json_roundtrip(tmp_path):
    env = two_state_env(horizon=2)
    tr = oracle_rollout(lambda b, t, H, rng: 1, env, rng=np.random.default_rng(0))
    back = OracleTrajectory.from_json(tr.to_json())
    assert back.queries == tr.queries and np.allclose(back.beliefs, tr.beliefs)
    path = tmp_path / "t.jsonl"
    dump_jsonl([tr, tr], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["true_state"] == 0
