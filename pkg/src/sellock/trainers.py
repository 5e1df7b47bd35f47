"""Outcome-reward policy-gradient trainers with critique-based advantage shaping.

PPO (GAE against a per-turn running baseline), GRPO (group-normalized outcome
advantages) and GSPO (length-normalized sequence ratios) share one loop:
rollout batch, critiques, advantages, shaping, one clipped ascent step.

Each turn contributes two decisions: a query (AS channel) and an update
operator (BT channel). Both carry the turn's outcome advantage; shaping adds
``lambda * u_t`` per channel, where ``u_t`` are the margin coefficients of that
channel's critique labels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .agent import softmax, step_logprobs, weighted_logprob_grad
from .critique import (
    critique_trajectory,
    margin_coeffs,
    oracle_sign,
    perturb,
    weighted_accuracy,
)
from .diagnostics import OracleValue, oracle_progress_values
from .belief import bayes_update
from .envs import as_family
from .errors import ConfigError, NumericError, UndefinedStatisticError, UsageError

ALGORITHMS = ("ppo", "grpo", "gspo")
AREW_MODES = ("off", "as_only", "as_bt")
STREAM_ROLLOUT, STREAM_CRITIQUE, STREAM_DIAG = 0, 1, 2

METRIC_COLUMNS = (
    "step", "algorithm", "arew_mode", "lambda_inj", "flip_alpha", "mean_reward",
    "as_proxy_mean", "bt_proxy_mean", "I_th_est", "C_BT_est", "acc_q", "acc_u",
    "clip_frac", "grad_norm_q", "grad_norm_u", "seed",
)


def stream(seed, stream_id):
    """Generator for ``(seed, stream_id)``; parallel and serial runs agree."""
    return np.random.default_rng([int(seed), int(stream_id)])


@dataclass
class TrainConfig:
    algorithm: str = "ppo"
    lr: float = 2.0
    clip_eps: float = 0.2
    clip_low: float = 3e-4
    clip_high: float = 4e-4
    gae_lambda: float = 1.0
    gamma: float = 1.0
    group_size: int = 3
    arew_mode: str = "off"
    lambda_inj: float = 0.5
    steps: int = 200
    batch_size: int = 64
    seed: int = 0
    flip_alpha: float = 0.0
    as_rule: str = "auto"
    bt_rule: str = "auto"
    baseline_decay: float = 0.9
    diag_rollouts: int = 0
    acc_every: int = 0
    lambda_schedule: Callable | None = field(default=None, repr=False, compare=False)

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"must be one of {ALGORITHMS}", "algorithm")
        if self.arew_mode not in AREW_MODES:
            raise ConfigError(f"must be one of {AREW_MODES}", "arew_mode")
        if not self.lr > 0:
            raise ConfigError("must be > 0", "lr")
        if not (self.clip_eps > 0 and self.clip_low > 0 and self.clip_high > 0):
            raise ConfigError("clip ranges must be > 0", "clip_eps")
        if self.algorithm != "ppo" and self.group_size < 2:
            raise ConfigError("group methods need group_size >= 2", "group_size")
        if self.lambda_inj < 0:
            raise ConfigError("must be >= 0", "lambda_inj")
        if not 0 <= self.flip_alpha <= 1:
            raise ConfigError("must lie in [0, 1]", "flip_alpha")
        if self.steps < 0:
            raise ConfigError("must be >= 0", "steps")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "batch_size")
        if self.algorithm != "ppo" and self.batch_size < self.group_size:
            raise ConfigError("batch must hold at least one group", "batch_size")
        if not 0 <= self.baseline_decay < 1:
            raise ConfigError("must lie in [0, 1)", "baseline_decay")
        return self

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "lambda_schedule"}
        return d


# ---------------------------------------------------------- advantage algebra


def gae(rewards, values, lam=1.0, gamma=1.0):
    """Generalized advantage estimates; ``values`` carries one trailing bootstrap entry."""
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if v.shape != (r.size + 1,):
        raise UsageError("values must have length len(rewards) + 1")
    adv = np.zeros(r.size)
    last = 0.0
    for t in reversed(range(r.size)):
        delta = r[t] + gamma * v[t + 1] - v[t]
        last = delta + gamma * lam * last
        adv[t] = last
    return adv


def grpo_advantages(group_rewards):
    """(r - mean) / std with the population std; identical rewards give zeros."""
    r = np.asarray(group_rewards, dtype=float)
    if r.size < 2:
        raise UsageError("group needs at least 2 rewards")
    spread = np.ptp(r)
    if spread == 0:
        return np.zeros_like(r)
    # dividing by the range first keeps the variance from underflowing for tiny spreads
    x = (r - r.mean()) / spread
    return x / x.std()


def gspo_ratio(new_logprobs, old_logprobs):
    """Length-normalized sequence importance ratio."""
    new = np.asarray(new_logprobs, dtype=float)
    old = np.asarray(old_logprobs, dtype=float)
    if new.size == 0 or new.shape != old.shape:
        raise UsageError("need two aligned, nonempty log-probability sequences")
    return float(np.exp(np.mean(new - old)))


def arew_shape(advantages, coeffs, lam):
    a = np.asarray(advantages, dtype=float)
    u = np.asarray(coeffs, dtype=float)
    if a.shape != u.shape:
        raise UsageError("advantages and coefficients must align")
    return a + lam * u


class RunningBaseline:
    """Per-turn exponential running mean of returns."""

    def __init__(self, horizon, decay):
        self.values = np.zeros(horizon)
        self.decay = decay
        self.initialized = False

    def update(self, returns):
        m = np.mean(returns, axis=0)
        if not self.initialized:
            self.values = m.copy()
            self.initialized = True
        else:
            self.values = self.decay * self.values + (1 - self.decay) * m


# ------------------------------------------------------------------ batches


@dataclass
class Sample:
    traj: object
    env: object
    adv_q: np.ndarray
    adv_u: np.ndarray
    z_q: np.ndarray = None
    z_u: np.ndarray = None
    u_q: np.ndarray = None
    u_u: np.ndarray = None


@dataclass
class StepMetrics:
    mean_reward: float
    surrogate: float
    clip_frac: float
    grad_norm_q: float
    grad_norm_u: float


def _clipped_coef(ratio, adv, lo, hi):
    clipped = (adv > 0) & (ratio > 1 + hi) | (adv < 0) & (ratio < 1 - lo)
    surr = np.minimum(ratio * adv, np.clip(ratio, 1 - lo, 1 + hi) * adv)
    return np.where(clipped, 0.0, ratio * adv), surr, clipped


def policy_step(params, batch, config):
    """One clipped-surrogate ascent step on the (shaped) advantages in ``batch``."""
    if not batch:
        raise UsageError("batch is empty")
    grad = params.zeros_like()
    surr_total, n_clipped, n_tok = 0.0, 0, 0
    for smp in batch:
        tr = smp.traj
        if tr.horizon == 0:
            continue
        new_q, new_u = step_logprobs(params, tr)
        if config.algorithm == "gspo":
            s = gspo_ratio(np.concatenate([new_q, new_u]),
                           np.concatenate([tr.logp_q, tr.logp_u]))
            scale = s / (2 * tr.horizon)
            cq, sq, kq = _clipped_coef(np.full(tr.horizon, s), smp.adv_q,
                                       config.clip_low, config.clip_high)
            cu, su, ku = _clipped_coef(np.full(tr.horizon, s), smp.adv_u,
                                       config.clip_low, config.clip_high)
            coef_q, coef_u = cq * scale / s, cu * scale / s
            surr_total += (sq.sum() + su.sum()) / (2 * tr.horizon)
        else:
            eps = config.clip_eps
            cq, sq, kq = _clipped_coef(np.exp(new_q - tr.logp_q), smp.adv_q, eps, eps)
            cu, su, ku = _clipped_coef(np.exp(new_u - tr.logp_u), smp.adv_u, eps, eps)
            coef_q, coef_u = cq, cu
            surr_total += sq.sum() + su.sum()
        n_clipped += int(kq.sum() + ku.sum())
        n_tok += 2 * tr.horizon
        g = weighted_logprob_grad(params, tr, coef_q, coef_u)
        grad.query_weights += g.query_weights
        grad.update_weights += g.update_weights
    n = len(batch)
    grad.query_weights /= n
    grad.update_weights /= n
    if not np.all(np.isfinite(grad.flat())):
        raise NumericError(
            f"non-finite gradient (|g_q|={np.abs(grad.query_weights).max()}, "
            f"|g_u|={np.abs(grad.update_weights).max()})"
        )
    new = params.step(grad, config.lr)
    return new, StepMetrics(
        mean_reward=float(np.mean([s.traj.reward for s in batch])),
        surrogate=surr_total / n,
        clip_frac=n_clipped / n_tok if n_tok else 0.0,
        grad_norm_q=float(np.linalg.norm(grad.query_weights)),
        grad_norm_u=float(np.linalg.norm(grad.update_weights)),
    )


# ------------------------------------------------------------- training loop


@dataclass
class MetricsRecord:
    step: int
    algorithm: str
    arew_mode: str
    lambda_inj: float
    flip_alpha: float
    mean_reward: float
    as_proxy_mean: float
    bt_proxy_mean: float
    I_th_est: float
    C_BT_est: float
    acc_q: float
    acc_u: float
    clip_frac: float
    grad_norm_q: float
    grad_norm_u: float
    seed: int


@dataclass
class TrainingRun:
    records: list
    params: object
    initial_params: object
    config: TrainConfig
    param_history: list = field(default_factory=list)

    def series(self, column):
        return np.array([getattr(r, column) for r in self.records], dtype=float)

    def write_csv(self, path):
        write_metrics_csv(self.records, path)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in METRIC_COLUMNS])


def _collect(params, fam, config, rng):
    from .agent import rollout

    prior = getattr(fam, "prior", None)
    out = []
    if config.algorithm == "ppo":
        for _ in range(config.batch_size):
            env = fam.sample(rng)
            out.append((rollout(params, env, rng, prior=prior), env))
        return out
    for _ in range(config.batch_size // config.group_size):
        env = fam.sample(rng)
        out.extend((rollout(params, env, rng, prior=prior), env)
                   for _ in range(config.group_size))
    return out


def _returns(tr, gamma):
    H = tr.horizon
    r = np.zeros(H)
    if H:
        r[-1] = tr.reward
    ret = np.zeros(H)
    acc = 0.0
    for t in reversed(range(H)):
        acc = r[t] + gamma * acc
        ret[t] = acc
    return r, ret


def _outcome_advantages(rolls, config, baseline):
    if config.algorithm == "ppo":
        per = [_returns(tr, config.gamma) for tr, _ in rolls]
        H = rolls[0][0].horizon
        if baseline is not None and H:
            if not baseline.initialized:
                baseline.update(np.array([ret for _, ret in per]))
            vals = np.append(baseline.values, 0.0)
        else:
            vals = np.zeros(H + 1)
        advs = [gae(r, vals, config.gae_lambda, config.gamma) for r, _ in per]
        if baseline is not None and H:
            baseline.update(np.array([ret for _, ret in per]))
        return advs
    advs = []
    G = config.group_size
    for i in range(0, len(rolls), G):
        group = rolls[i:i + G]
        a = grpo_advantages([tr.reward for tr, _ in group])
        advs.extend(np.full(tr.horizon, ai) for (tr, _), ai in zip(group, a))
    return advs


def _oracle_beliefs(tr, env):
    b = tr.prior
    out = []
    for s in tr.steps:
        out.append(b)
        b = bayes_update(b, s.query, s.obs, env.obs_fn)
    return out


def critique_accuracy(params, samples):
    """Weighted accuracy of the (possibly perturbed) labels against oracle directions."""
    zq, yq, wq, zu, yu, wu = [], [], [], [], [], []
    tables = {}
    for smp in samples:
        tr, env = smp.traj, smp.env
        H = tr.horizon
        if H == 0:
            continue
        ov = tables.setdefault(env.true_state, OracleValue(params, env))
        for t, (st, bb) in enumerate(zip(tr.steps, _oracle_beliefs(tr, env))):
            if smp.u_q[t] != 0:
                a = ov.advantage(bb, st.query, t)
                p, _ = softmax(params.query_weights[list(st.slate_q)] @ st.x_q)
                d = -p
                d[st.slate_q.index(st.query)] += 1
                norm_sq = float((d**2).sum() * (st.x_q**2).sum())
                zq.append(smp.z_q[t])
                yq.append(oracle_sign(a))
                wq.append(abs(smp.u_q[t]) * abs(a) * norm_sq)
            if smp.u_u[t] != 0:
                slate = st.slate_u
                p, _ = softmax(params.update_weights[list(slate)] @ st.x_u)
                psi = np.array([params.ops[k].apply(st.belief, st.query, st.obs, env.obs_fn)
                                [tr.true_state] for k in slate])
                a = psi[slate.index(st.op)] - float(p @ psi)
                d = -p
                d[slate.index(st.op)] += 1
                zu.append(smp.z_u[t])
                yu.append(oracle_sign(a))
                wu.append(abs(smp.u_u[t]) * abs(a) * float((d**2).sum() * (st.x_u**2).sum()))

    def acc(z, y, w):
        try:
            return weighted_accuracy(z, y, w) if w else float("nan")
        except UndefinedStatisticError:
            return float("nan")

    return acc(zq, yq, wq), acc(zu, yu, wu)


def train(config, env_family, params, critique_fn=None, record_params=False, on_record=None):
    """Run ``config.steps`` policy updates from ``params`` on ``env_family``.

    ``critique_fn(traj, env)`` may replace the rule-based critiques; it must
    return a ``CritiqueTrack``. ``on_record`` sees each metrics row as soon as
    it exists, so callers can stream it to disk.
    """
    config.validate()
    fam = as_family(env_family)
    rng = stream(config.seed, STREAM_ROLLOUT)
    crng = stream(config.seed, STREAM_CRITIQUE)
    drng = stream(config.seed, STREAM_DIAG)
    baseline = RunningBaseline(fam.horizon, config.baseline_decay)
    run = TrainingRun([], params, params.copy(), config)
    if record_params:
        run.param_history.append(params.flat().copy())
    for step in range(config.steps):
        lam = config.lambda_inj
        if config.lambda_schedule is not None:
            lam = float(config.lambda_schedule(step, lam))
        rolls = _collect(params, fam, config, rng)
        advs = _outcome_advantages(rolls, config, baseline)
        samples = []
        for (tr, env), a in zip(rolls, advs):
            track = (critique_fn(tr, env) if critique_fn is not None
                     else critique_trajectory(tr, env, config.as_rule, config.bt_rule))
            track = perturb(track, config.flip_alpha, crng)
            u_q, u_u = margin_coeffs(track.z_q), margin_coeffs(track.z_u)
            adv_q, adv_u = a.copy(), a.copy()
            if config.arew_mode in ("as_only", "as_bt"):
                adv_q = arew_shape(adv_q, u_q, lam)
            if config.arew_mode == "as_bt":
                adv_u = arew_shape(adv_u, u_u, lam)
            samples.append(Sample(tr, env, adv_q, adv_u, track.z_q, track.z_u, u_q, u_u))

        if config.acc_every and step % config.acc_every == 0:
            acc_q, acc_u = critique_accuracy(params, samples)
        else:
            acc_q = acc_u = float("nan")
        if config.diag_rollouts:
            i_th = float(oracle_progress_values(params, fam, config.diag_rollouts, drng).mean())
        else:
            i_th = float("nan")

        params, m = policy_step(params, samples, config)
        trajs = [s.traj for s in samples]
        steps = [st for tr in trajs for st in tr.steps]
        c_bt = np.mean([
            sum(max(st.next_belief[tr.true_state] - st.belief[tr.true_state], 0.0)
                for st in tr.steps)
            for tr in trajs
        ])
        rec = MetricsRecord(
            step=step, algorithm=config.algorithm, arew_mode=config.arew_mode,
            lambda_inj=float(lam), flip_alpha=float(config.flip_alpha),
            mean_reward=m.mean_reward,
            as_proxy_mean=float(np.mean([s.as_proxy for s in steps])) if steps else math.nan,
            bt_proxy_mean=float(np.mean([s.bt_proxy for s in steps])) if steps else math.nan,
            I_th_est=i_th, C_BT_est=float(c_bt), acc_q=acc_q, acc_u=acc_u,
            clip_frac=m.clip_frac, grad_norm_q=m.grad_norm_q, grad_norm_u=m.grad_norm_u,
            seed=int(config.seed),
        )
        run.records.append(rec)
        if on_record is not None:
            on_record(rec)
        if record_params:
            run.param_history.append(params.flat().copy())
    run.params = params
    return run


def config_from_dict(d):
    d = dict(d)
    known = {f.name for f in fields(TrainConfig)} - {"lambda_schedule"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "train")
    try:
        return TrainConfig(**d).validate()
    except ConfigError as e:
        raise ConfigError(str(e).split(": ", 1)[-1], f"train.{e.field}") from None


__all__ = [
    "ALGORITHMS", "AREW_MODES", "METRIC_COLUMNS", "MetricsRecord", "RunningBaseline",
    "Sample", "StepMetrics", "TrainConfig", "TrainingRun", "arew_shape",
    "config_from_dict", "critique_accuracy", "gae", "grpo_advantages", "gspo_ratio",
    "policy_step", "stream", "train", "write_metrics_csv",
]
