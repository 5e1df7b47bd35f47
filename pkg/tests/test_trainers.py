import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sellock.agent import init_deficient, init_random, init_zero, logprob_grad, rollout
from sellock.critique import CritiqueTrack
from sellock.errors import ConfigError, NumericError, UsageError
from sellock.trainers import (
    METRIC_COLUMNS,
    Sample,
    TrainConfig,
    arew_shape,
    config_from_dict,
    gae,
    grpo_advantages,
    gspo_ratio,
    policy_step,
    stream,
    train,
)


def test_gae_examples():
    assert np.array_equal(gae(np.zeros(3), np.zeros(4)), np.zeros(3))
    assert np.allclose(gae([0, 0, 1.5], np.zeros(4)), [1.5, 1.5, 1.5])
    r, v = np.array([0.2, -0.1, 1.0]), np.array([0.3, 0.1, 0.4, 0.0])
    assert np.allclose(gae(r, v, lam=0.7, gamma=0.0), r - v[:3])
    with pytest.raises(UsageError):
        gae([1.0], [0.0])


def test_gae_full_lambda_is_return_minus_value():
    r = np.array([0.0, 0.5, 1.0])
    v = np.array([0.2, 0.4, 0.9, 0.0])
    ret = np.cumsum(r[::-1])[::-1]
    assert np.allclose(gae(r, v, 1.0, 1.0), ret - v[:3])


def test_grpo_examples():
    s = math.sqrt(2)
    assert np.allclose(grpo_advantages([1, 0, 1]), [1 / s, -s, 1 / s])
    assert np.array_equal(grpo_advantages([0.3, 0.3, 0.3]), np.zeros(3))
    with pytest.raises(UsageError):
        grpo_advantages([1.0])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=16))
def test_grpo_normalization(r):
    a = grpo_advantages(r)
    if np.ptp(r) == 0:
        assert np.all(a == 0)
    else:
        assert abs(a.mean()) <= 1e-9 and abs(a.std() - 1) <= 1e-9


def test_gspo_examples():
    assert gspo_ratio([-1.0, -2.0], [-1.0, -2.0]) == 1.0
    assert gspo_ratio([math.log(4), 0.0], [0.0, 0.0]) == pytest.approx(2.0)
    with pytest.raises(UsageError):
        gspo_ratio([], [])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 0), st.floats(-5, 0)), min_size=1, max_size=10),
       st.integers(2, 4))
def test_gspo_duplication_invariance(pairs, k):
    new, old = np.array(pairs).T
    assert gspo_ratio(np.tile(new, k), np.tile(old, k)) == pytest.approx(
        gspo_ratio(new, old), rel=1e-12)


def test_arew_shape_examples():
    assert np.allclose(arew_shape([0.2, -0.1], [1, -1], 0.5), [0.7, -0.6])
    a = np.array([0.3, -0.4])
    assert np.array_equal(arew_shape(a, [1, -1], 0.0), a)
    assert np.array_equal(arew_shape(a, [0, 0], 2.0), a)
    with pytest.raises(UsageError):
        arew_shape([0.1], [0.1, 0.2], 1.0)


def _one_sample(ref_family, rng, params=None):
    params = params if params is not None else init_random(ref_family.base, rng)
    env = ref_family.sample(rng)
    tr = rollout(params, env, rng)
    return params, tr, env


def test_policy_step_zero_advantages(ref_family, rng):
    params, tr, env = _one_sample(ref_family, rng)
    z = np.zeros(tr.horizon)
    new, m = policy_step(params, [Sample(tr, env, z, z)], TrainConfig())
    assert np.array_equal(new.flat(), params.flat())
    assert m.grad_norm_q == m.grad_norm_u == 0


def test_policy_step_matches_hand_update(ref_family, rng):
    params, tr, env = _one_sample(ref_family, rng)
    A = np.array([0.2, -0.1, 0.4])
    u = np.array([0.5, -1.0, 0.5])
    lam, eta = 0.5, 0.3
    cfg = TrainConfig(lr=eta)
    new, m = policy_step(params, [Sample(tr, env, arew_shape(A, u, lam), A)], cfg)
    want = params.flat().copy()
    for t, st_ in enumerate(tr.steps):
        one = np.zeros(3)
        one[t] = 1
        from sellock.agent import weighted_logprob_grad
        gq = weighted_logprob_grad(params, tr, one * (A[t] + lam * u[t]), np.zeros(3))
        gu = weighted_logprob_grad(params, tr, np.zeros(3), one * A[t])
        want += eta * (gq.flat() + gu.flat())
    assert np.allclose(new.flat(), want, atol=1e-12)
    assert m.clip_frac == 0


def test_policy_step_gspo_normalizes_by_length(ref_family, rng):
    params, tr, env = _one_sample(ref_family, rng)
    A = np.full(tr.horizon, 0.7)
    ppo, _ = policy_step(params, [Sample(tr, env, A, A)], TrainConfig(lr=1.0))
    gspo, _ = policy_step(params, [Sample(tr, env, A, A)],
                          TrainConfig(lr=1.0, algorithm="gspo", batch_size=3))
    d_ppo = ppo.flat() - params.flat()
    d_gspo = gspo.flat() - params.flat()
    assert np.allclose(d_gspo, d_ppo / (2 * tr.horizon), atol=1e-12)


def test_policy_step_clips_stale_ratio(ref_family, rng):
    params, tr, env = _one_sample(ref_family, rng)
    for s in tr.steps:  # pretend the data came from a policy with much lower probabilities
        s.logp_q -= 1.0
        s.logp_u -= 1.0
    A = np.ones(tr.horizon)
    new, m = policy_step(params, [Sample(tr, env, A, A)], TrainConfig())
    assert m.clip_frac == 1.0
    assert np.array_equal(new.flat(), params.flat())
    A = -A  # negative advantages with ratio > 1 are not clipped
    new, m = policy_step(params, [Sample(tr, env, A, A)], TrainConfig())
    assert m.clip_frac == 0.0 and not np.array_equal(new.flat(), params.flat())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_policy_step_nonfinite(ref_family, rng):
    params, tr, env = _one_sample(ref_family, rng)
    A = np.array([np.inf, 0.0, 0.0])
    with pytest.raises(NumericError):
        policy_step(params, [Sample(tr, env, A, np.zeros(3))], TrainConfig())
    with pytest.raises(UsageError):
        policy_step(params, [], TrainConfig())


def test_train_zero_steps(ref_family):
    params = init_zero(ref_family.base)
    run = train(TrainConfig(steps=0), ref_family, params)
    assert run.records == [] and np.array_equal(run.params.flat(), params.flat())


def test_train_deterministic_and_csv(ref_family, tmp_path):
    cfg = TrainConfig(steps=4, batch_size=8, seed=3, arew_mode="as_bt", flip_alpha=0.2,
                      acc_every=2, diag_rollouts=8)
    a = train(cfg, ref_family, init_zero(ref_family.base))
    b = train(cfg, ref_family, init_zero(ref_family.base))
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert tuple(rows[0]) == METRIC_COLUMNS and len(rows) == 5
    assert all(math.isnan(r.acc_q) for r in a.records[1::2])
    acc = [r.acc_q for r in a.records[::2] if not math.isnan(r.acc_q)]
    assert all(0 <= x <= 1 for x in acc)
    assert all(r.C_BT_est >= 0 for r in a.records)


def test_zero_lambda_equivalence(ref_family):
    params = init_zero(ref_family.base)

    def hist(**kw):
        cfg = TrainConfig(steps=5, batch_size=8, seed=1, **kw)
        return np.array(train(cfg, ref_family, params, record_params=True).param_history)

    base = hist(arew_mode="off")
    assert np.array_equal(hist(arew_mode="as_bt", lambda_inj=0.0), base)
    assert not np.array_equal(hist(arew_mode="as_bt", lambda_inj=1.0), base)


def test_single_class_labels_do_nothing(ref_family):
    params = init_zero(ref_family.base)

    def all_pos(tr, env):
        z = np.ones(tr.horizon, dtype=int)
        return CritiqueTrack(z, z)

    cfg = dict(steps=4, batch_size=8, seed=2)
    a = train(TrainConfig(**cfg), ref_family, params, record_params=True)
    b = train(TrainConfig(arew_mode="as_bt", lambda_inj=3.0, **cfg), ref_family, params,
              critique_fn=all_pos, record_params=True)
    assert np.array_equal(np.array(a.param_history), np.array(b.param_history))


def test_as_only_leaves_update_shaping_out(ref_family):
    params = init_zero(ref_family.base)
    cfg = dict(steps=1, batch_size=16, seed=4, lambda_inj=1.0)
    off = train(TrainConfig(arew_mode="off", **cfg), ref_family, params)
    as_only = train(TrainConfig(arew_mode="as_only", **cfg), ref_family, params)
    as_bt = train(TrainConfig(arew_mode="as_bt", **cfg), ref_family, params)
    assert np.array_equal(off.params.update_weights, as_only.params.update_weights)
    assert not np.array_equal(off.params.query_weights, as_only.params.query_weights)
    assert np.array_equal(as_only.params.query_weights, as_bt.params.query_weights)


def test_group_algorithms_run(ref_family):
    for alg in ("grpo", "gspo"):
        run = train(TrainConfig(algorithm=alg, steps=2, batch_size=9, group_size=3),
                    ref_family, init_deficient(ref_family.base))
        assert len(run.records) == 2 and run.records[0].algorithm == alg


def test_lambda_schedule_hook(ref_family):
    cfg = TrainConfig(steps=3, batch_size=4, arew_mode="as_bt",
                      lambda_schedule=lambda step, lam: lam * 0.5**step)
    run = train(cfg, ref_family, init_zero(ref_family.base))
    assert [r.lambda_inj for r in run.records] == [0.5, 0.25, 0.125]


def test_on_record_streams(ref_family):
    seen = []
    train(TrainConfig(steps=3, batch_size=4), ref_family, init_zero(ref_family.base),
          on_record=seen.append)
    assert [r.step for r in seen] == [0, 1, 2]


@pytest.mark.parametrize("kw,field", [
    ({"algorithm": "a2c"}, "train.algorithm"),
    ({"arew_mode": "both"}, "train.arew_mode"),
    ({"flip_alpha": 1.5}, "train.flip_alpha"),
    ({"lr": 0.0}, "train.lr"),
    ({"algorithm": "grpo", "group_size": 1}, "train.group_size"),
])
def test_config_errors(kw, field):
    with pytest.raises(ConfigError, match=field):
        config_from_dict(kw)


def test_streams_are_independent():
    a = stream(0, 0).random(4)
    b = stream(0, 1).random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, stream(0, 0).random(4))
