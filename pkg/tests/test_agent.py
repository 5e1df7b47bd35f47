import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sellock.acceptance import finite_difference_check, random_tiny_config
from sellock.agent import (
    DEFAULT_OPS,
    AgentParams,
    UpdateOperator,
    belief_summary,
    init_deficient,
    init_random,
    init_zero,
    logprob_grad,
    query_score,
    replay_beliefs,
    restrict_ops,
    rollout,
    select_query,
    select_update,
    softmax,
    step_logprobs,
    trajectory_logprob,
    uninformative_queries,
)
from sellock.belief import UNKNOWN, bayes_update, uniform
from sellock.diagnostics import estimate_C_BT, estimate_I_th
from sellock.envs import make_family
from sellock.errors import NumericError, UsageError


def test_zero_weights_sample_uniformly(golden_env, rng):
    params = init_zero(golden_env)
    _, lp = select_query(params, uniform(4), (0, 1, 2), rng)
    assert lp == pytest.approx(-math.log(3), abs=1e-12)
    counts = np.bincount([select_query(params, uniform(4), (0, 1, 2), rng)[0]
                          for _ in range(3000)], minlength=3)
    assert np.all(np.abs(counts / 3000 - 1 / 3) < 0.04)


def test_saturated_score_dominates(golden_env, rng):
    params = init_zero(golden_env)
    params.query_weights[2, 0] = 60.0
    q, lp = select_query(params, uniform(4), (0, 1, 2), rng)
    assert q == 2 and lp == pytest.approx(0.0, abs=1e-20)


def test_select_query_deterministic(golden_env):
    params = init_random(golden_env, np.random.default_rng(0))
    a = [select_query(params, uniform(4), (0, 1, 2), np.random.default_rng(5))
         for _ in range(2)]
    assert a[0] == a[1]


def test_softmax_nonfinite():
    with pytest.raises(NumericError):
        softmax([0.0, np.inf])
    with pytest.raises(NumericError):
        softmax([np.nan, 1.0])


def test_empty_slates(golden_env, rng):
    params = init_zero(golden_env)
    with pytest.raises(UsageError):
        select_query(params, uniform(4), (), rng)
    with pytest.raises(UsageError):
        select_update(params, uniform(4), 1, 0, (), rng, golden_env.obs_fn)


def test_operators(golden_env, rng):
    b = uniform(4)
    obs = golden_env.obs_fn
    params = init_zero(golden_env)
    idx = {op.kind: i for i, op in enumerate(params.ops)}
    _, _, nb = select_update(params, b, 1, 1, (idx["identity"],), rng, obs)
    assert nb is b
    _, _, nb = select_update(params, b, 1, 1, (idx["bayes_full"],), rng, obs)
    assert np.array_equal(nb, bayes_update(b, 1, 1, obs))
    peaked = np.array([0.7, 0.1, 0.1, 0.1])
    assert np.allclose(UpdateOperator("toward_uniform", 1.0).apply(peaked, 1, 1, obs), b)
    anti = UpdateOperator("anti_bayes", 0.5).apply(b, 1, 0, obs)
    assert anti[3] == pytest.approx(0.125) and anti.sum() == pytest.approx(1)
    assert np.array_equal(UpdateOperator("anti_bayes", 0.5).apply(b, 1, UNKNOWN, obs), b)


def test_operator_validation():
    with pytest.raises(UsageError):
        UpdateOperator("nonsense")
    with pytest.raises(UsageError):
        UpdateOperator("anti_bayes", 1.0)


def test_rollout_zero_horizon(golden_env, rng):
    env = golden_env.__class__(golden_env.obs_fn, 0, 0, golden_env.null_queries, 2)
    tr = rollout(init_zero(env), env, rng)
    assert tr.steps == [] and np.array_equal(tr.final_belief, tr.prior)
    assert tr.reward == env.reward(tr.prior)


def test_identity_kernel_freezes_belief(golden_env, rng):
    params = restrict_ops(init_random(golden_env, rng), ("identity",))
    tr = rollout(params, golden_env, rng)
    assert np.array_equal(tr.final_belief, tr.prior)
    assert tr.reward == golden_env.reward(tr.prior)


def test_greedy_bayes_solves_golden_env(golden_env, rng):
    # query 1 eliminates the most states for the true state of the fixture
    params = restrict_ops(init_zero(golden_env), ("bayes_full",))
    params.query_weights[1, 0] = 50.0
    tr = rollout(params, golden_env, rng)
    assert golden_env.horizon == golden_env.num_states - 1
    assert tr.reward == 1.0


def test_recorded_logprobs_match_recompute(ref_family, rng):
    params = init_random(ref_family.base, rng)
    tr = rollout(params, ref_family.sample(rng), rng)
    lq, lu = step_logprobs(params, tr)
    assert np.allclose(lq, tr.logp_q, atol=1e-12) and np.allclose(lu, tr.logp_u, atol=1e-12)
    assert trajectory_logprob(params, tr) == pytest.approx(tr.loglik, abs=1e-10)


def test_nullify_replaces_observations(ref_family, rng):
    tr = rollout(init_zero(ref_family.base), ref_family.sample(rng), rng, nullify=True)
    assert all(o == UNKNOWN for o in tr.observations)


def test_uniform_policy_single_step_gradient(golden_env, rng):
    env = golden_env.__class__(golden_env.obs_fn, 3, 1, golden_env.null_queries, 2)
    params = init_zero(env)
    tr = rollout(params, env, rng)
    g = logprob_grad(params, tr)
    s = tr.steps[0]
    for q in range(3):
        want = ((q == s.query) - 1 / 3) * s.x_q
        assert np.allclose(g.query_weights[q], want)
    n_ops = len(params.ops)
    for k in range(n_ops):
        assert np.allclose(g.update_weights[k], ((k == s.op) - 1 / n_ops) * s.x_u)


def test_gradient_blocks_are_separate(ref_family, rng):
    params = init_random(ref_family.base, rng)
    tr = rollout(params, ref_family.sample(rng), rng)
    other = params.copy()
    other.update_weights += rng.normal(size=other.update_weights.shape)
    assert np.array_equal(logprob_grad(params, tr).query_weights,
                          logprob_grad(other, tr).query_weights)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    env = make_family(random_tiny_config(rng)).sample(rng)
    params = init_random(env, rng, 1.0)
    tr = rollout(params, env, rng)
    assert finite_difference_check(params, tr) < 1e-4


def test_query_score_matches_trajectory_gradient(ref_family, rng):
    params = init_random(ref_family.base, rng)
    env = ref_family.sample(rng)
    tr = rollout(params, env, rng)
    s = tr.steps[0]
    g = logprob_grad(params, tr)
    total = sum(query_score(params, st_.belief, st_.query, st_.t, env.horizon) for st_ in tr.steps)
    assert np.allclose(total, g.query_weights)
    assert s.x_q.shape == belief_summary(s.belief, 0, 3).shape


def test_params_json_roundtrip(ref_family, rng):
    params = restrict_ops(init_random(ref_family.base, rng), ("identity", "bayes_full"))
    back = AgentParams.from_json(params.to_json())
    assert np.array_equal(back.flat(), params.flat())
    assert back.op_slate == params.op_slate and back.ops == params.ops
    assert np.array_equal(params.with_flat(params.flat()).query_weights, params.query_weights)
    bad = json.loads(params.to_json())
    bad["values"] = bad["values"][:-1]
    with pytest.raises(UsageError):
        AgentParams.from_json(json.dumps(bad))


def test_replay_oracle_mode_is_bayes_chain(ref_family, rng):
    params = init_random(ref_family.base, rng)
    env = ref_family.sample(rng)
    tr = rollout(params, env, rng)
    b = tr.prior
    for q, o in zip(tr.queries, tr.observations):
        b = bayes_update(b, q, o, env.obs_fn)
    got = replay_beliefs(params, env, tr.queries, tr.observations, "oracle", rng)
    assert np.array_equal(got, b)
    with pytest.raises(UsageError):
        replay_beliefs(params, env, tr.queries, tr.observations, "bogus", rng)


def test_uninformative_queries(golden_env):
    assert uninformative_queries(golden_env) == [0]
    no_null = golden_env.__class__(golden_env.obs_fn[:, 1:], 3, 3, frozenset(), 2)
    assert uninformative_queries(no_null) == [0, 1]


def test_deficient_limits_exact(ref_family):
    frozen = init_deficient(ref_family.base, query_bias=0.0, update_bias=1e4,
                            update_targets=("identity",))
    assert estimate_C_BT(frozen, ref_family, 300, 0).mean == 0.0
    silent = init_deficient(ref_family.base, query_bias=1e4, update_bias=0.0)
    assert estimate_I_th(silent, ref_family, 300, 0).mean == 0.0


def test_deficient_default_is_locked(ref_family):
    params = init_deficient(ref_family.base)
    assert estimate_I_th(params, ref_family, 2000, 1).mean <= 0.05
    assert estimate_C_BT(params, ref_family, 2000, 2).mean <= 0.05


def test_default_ops_cover_all_kinds():
    assert {op.kind for op in DEFAULT_OPS} == {
        "identity", "bayes_full", "bayes_partial", "toward_uniform", "anti_bayes"}
