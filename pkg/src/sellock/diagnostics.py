"""Estimators and enumeration oracles for the capability indices and their drifts.

``I_th`` is the expected total oracle-belief progress of the query policy when
beliefs are updated by exact Bayes conditioning. ``C_BT`` is the expected sum of
positive one-step potential changes under the agent's own update kernel.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .agent import query_score, rollout, replay_beliefs, weighted_logprob_grad
from .belief import bayes_update, oracle_rollout
from .critique import margin_coeffs, oracle_sign, weighted_accuracy
from .envs import as_family
from .errors import NumericError, SizeError, UndefinedStatisticError, UsageError

TELESCOPE_TOL = 1e-12
TINY_LIMITS = {"num_states": 5, "num_queries": 4, "horizon": 4}


@dataclass
class Estimate:
    mean: float
    stderr: float
    n: int

    @classmethod
    def of(cls, values):
        v = np.asarray(values, dtype=float)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        return cls(float(v.mean()), se, int(v.size))


@dataclass
class CapabilityEstimate:
    i_th: Estimate
    c_bt: Estimate
    n_rollouts: int
    seed: int | None = None


def _rng(rng):
    return np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng


# ------------------------------------------------------------------ I_th


def oracle_progress_values(params, env_family, n, rng):
    """Per-rollout total oracle progress; checks the telescoping identity."""
    fam = as_family(env_family)
    rng = _rng(rng)
    policy = params.query_policy()
    out = np.empty(n)
    for i in range(n):
        env = fam.sample(rng)
        tr = oracle_rollout(policy, env, prior=getattr(fam, "prior", None), rng=rng)
        net = tr.beliefs[-1][env.true_state] - tr.beliefs[0][env.true_state]
        if abs(tr.total_progress - net) > TELESCOPE_TOL:
            raise AssertionError("oracle progress does not telescope")
        out[i] = net
    return out


def estimate_I_th(params, env_family, n, rng):
    if n < 1:
        raise UsageError("n must be positive")
    return Estimate.of(oracle_progress_values(params, env_family, n, rng))


class OracleValue:
    """Exact expected terminal oracle potential under the agent's query policy.

    ``value(b, t)`` is E[Psi(b_H) | b_t = b] on the oracle-belief process for a
    fixed true state; results are memoized per (belief, turn).
    """

    def __init__(self, params, env):
        self.params = params
        self.env = env
        self._memo = {}

    def successor(self, b, q):
        return bayes_update(b, q, self.env.observe(q), self.env.obs_fn)

    def value(self, b, t):
        H = self.env.horizon
        if t >= H:
            return float(b[self.env.true_state])
        key = (b.tobytes(), t)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        slate, p = self.params.query_probs(b, t, H)
        v = float(sum(pk * self.value(self.successor(b, q), t + 1) for q, pk in zip(slate, p)))
        self._memo[key] = v
        return v

    def q_value(self, b, q, t):
        return self.value(self.successor(b, q), t + 1)

    def advantage(self, b, q, t):
        return self.q_value(b, q, t) - self.value(b, t)


def _check_tiny(env):
    for name, limit in TINY_LIMITS.items():
        if getattr(env, name) > limit:
            raise SizeError(f"{name}={getattr(env, name)} exceeds enumeration limit {limit}")


def exact_I_th(params, tiny_env, check_size=True):
    """I_th by exhaustive enumeration of the query tree (and of true states for a family)."""
    fam = as_family(tiny_env)
    total = 0.0
    for w, env in fam.enumerate():
        if check_size:
            _check_tiny(env)
        prior = getattr(fam, "prior", None)
        b0 = np.full(env.num_states, 1.0 / env.num_states) if prior is None else prior
        total += w * (OracleValue(params, env).value(b0, 0) - b0[env.true_state])
    return float(total)


# ------------------------------------------------------------------ C_BT


def _bt_values(trajs):
    out = np.empty(len(trajs))
    for i, tr in enumerate(trajs):
        s = tr.true_state
        out[i] = sum(max(st.next_belief[s] - st.belief[s], 0.0) for st in tr.steps)
    return out


def model_rollouts(params, env_family, n, rng, nullify=False):
    fam = as_family(env_family)
    rng = _rng(rng)
    return [rollout(params, fam.sample(rng), rng, prior=getattr(fam, "prior", None),
                    nullify=nullify) for _ in range(n)]


def estimate_C_BT(params, env_family, n, rng):
    if n < 1:
        raise UsageError("n must be positive")
    return Estimate.of(_bt_values(model_rollouts(params, env_family, n, rng)))


def capabilities(params, env_family, n, seed):
    """Both indices, each from its own seeded stream."""
    ss = np.random.SeedSequence(seed)
    a, b = (np.random.default_rng(s) for s in ss.spawn(2))
    return CapabilityEstimate(
        estimate_I_th(params, env_family, n, a),
        estimate_C_BT(params, env_family, n, b),
        n, seed,
    )


def in_locking_regime(i_th, c_bt, delta, eps):
    if delta <= 0 or eps <= 0:
        raise UsageError("thresholds must be positive")
    return bool(i_th <= delta and c_bt <= eps)


# ----------------------------------------------------------- projected drift


def outcome_gradient(params, env_family, channel, n, rng):
    """Monte Carlo channel gradient of expected reward with a mean-reward baseline."""
    trajs = model_rollouts(params, env_family, n, rng)
    rewards = np.array([tr.reward for tr in trajs])
    adv = rewards - rewards.mean()
    g = params.zeros_like()
    for tr, a in zip(trajs, adv):
        ones = np.full(tr.horizon, a)
        zeros = np.zeros(tr.horizon)
        if channel == "Q":
            gi = weighted_logprob_grad(params, tr, ones, zeros)
        else:
            gi = weighted_logprob_grad(params, tr, zeros, ones)
        g.query_weights += gi.query_weights / n
        g.update_weights += gi.update_weights / n
    if not np.all(np.isfinite(g.flat())):
        raise NumericError("non-finite outcome gradient")
    return g


@dataclass
class DriftReport:
    channel: str
    eta: float
    before: CapabilityEstimate
    after: CapabilityEstimate
    d_i_th: float
    d_i_th_stderr: float
    d_c_bt: float
    d_c_bt_stderr: float
    grad_norm: float

    @property
    def pos_i_th(self):
        return max(self.d_i_th, 0.0)

    @property
    def pos_c_bt(self):
        return max(self.d_c_bt, 0.0)

    def to_dict(self):
        d = asdict(self)
        d["pos_i_th"] = self.pos_i_th
        d["pos_c_bt"] = self.pos_c_bt
        return d


def projected_drift(params, env_family, channel, eta, n, rng):
    """Apply one channel's outcome-gradient step and re-measure both indices.

    Gradient estimation and the before/after evaluations use independent
    streams, so the reported stderr is that of a difference of two
    independent means.
    """
    if channel not in ("Q", "U"):
        raise UsageError("channel must be 'Q' or 'U'")
    rng = _rng(rng)
    s_grad, s_before, s_after = (int(x) for x in rng.integers(2**63 - 1, size=3))
    g = outcome_gradient(params, env_family, channel, n, s_grad)
    moved = params.step(g, eta, "q" if channel == "Q" else "u")
    before = capabilities(params, env_family, n, s_before)
    if np.array_equal(moved.flat(), params.flat()):
        after = before
    else:
        after = capabilities(moved, env_family, n, s_after)

    def diff(a, b):
        se = math.hypot(a.stderr, b.stderr) if after is not before else 0.0
        return b.mean - a.mean, se

    di, di_se = diff(before.i_th, after.i_th)
    dc, dc_se = diff(before.c_bt, after.c_bt)
    norm = float(np.linalg.norm(g.query_weights if channel == "Q" else g.update_weights))
    return DriftReport(channel, eta, before, after, di, di_se, dc, dc_se, norm)


@dataclass
class EscapeBound:
    alpha: float
    beta_i: float
    beta_c: float
    C: float
    delta: float
    eps: float
    eta: float
    i_th0: float

    @property
    def m(self):
        return max(self.alpha, self.beta_i + self.beta_c)

    @property
    def K(self):
        return escape_bound(self.i_th0, (self.alpha, self.beta_i, self.beta_c, self.C),
                            self.eta, self.eps)


def escape_bound(i_th0, constants, eta, eps):
    """Steps the outcome-only dynamics must spend inside the locking regime.

    ``constants`` is (alpha, beta_I, beta_C, C). Returns ``math.inf`` when both
    ``i_th0`` and ``C`` are zero.
    """
    alpha, beta_i, beta_c, C = constants
    if eta <= 0:
        raise UsageError("eta must be positive")
    m = max(alpha, beta_i + beta_c)
    if m <= 0:
        raise UsageError("m = max(alpha, beta_I + beta_C) must be positive")
    denom = i_th0 + C * eta
    if denom <= 0:
        return math.inf
    k = math.floor(math.log((eps + C * eta) / denom) / (eta * m))
    return max(k, 0)


# ------------------------------------------------------ observations 2 and 3


@dataclass
class InteractionSensitivity:
    reward_normal: float
    reward_nullified: float
    belief_consistency: float
    belief_consistency_nullified: float
    n: int


def _consistency(trajs):
    return float(np.mean([np.argmax(t.final_belief) == np.argmax(t.prior) for t in trajs]))


def interaction_sensitivity(params, env_family, n, rng):
    """Reward with real feedback vs. with every answer replaced by UNKNOWN.

    Both arms replay the same random stream, so an agent that ignores feedback
    produces identical episodes in both.
    """
    seed = int(_rng(rng).integers(2**63 - 1))
    normal = model_rollouts(params, env_family, n, seed)
    nulled = model_rollouts(params, env_family, n, seed, nullify=True)
    return InteractionSensitivity(
        float(np.mean([t.reward for t in normal])),
        float(np.mean([t.reward for t in nulled])),
        _consistency(normal),
        _consistency(nulled),
        n,
    )


def _corr(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.std() == 0 or y.std() == 0:
        raise UndefinedStatisticError("correlation undefined for a zero-variance sample")
    return float(np.corrcoef(x, y)[0, 1])


def replayed_rewards(params, env_family, n, seed, bt_mode):
    """(total AS proxy, reward) per episode on model-generated action sequences."""
    ss = np.random.SeedSequence(seed)
    gen, rep = (np.random.default_rng(s) for s in ss.spawn(2))
    fam = as_family(env_family)
    trajs = model_rollouts(params, fam, n, gen)
    as_tot = np.array([sum(s.as_proxy for s in t.steps) for t in trajs])
    rewards = np.empty(n)
    for i, t in enumerate(trajs):
        env = fam.base.with_true_state(t.true_state)
        b = replay_beliefs(params, env, t.queries, t.observations, bt_mode, rep, prior=t.prior)
        rewards[i] = env.reward(b)
    return as_tot, rewards


def reward_as_correlation(params, env_family, bt_mode, n, rng):
    """Correlation between per-episode AS proxy totals and replayed terminal reward."""
    if n < 10:
        raise UsageError("need n >= 10")
    seed = rng if isinstance(rng, (int, np.integer)) else int(_rng(rng).integers(2**63 - 1))
    as_tot, rewards = replayed_rewards(params, env_family, n, seed, bt_mode)
    return _corr(as_tot, rewards)


# ------------------------------------------------------- accuracy effect


@dataclass
class OracleStep:
    traj: int
    t: int
    y: int
    adv: float
    score: np.ndarray
    score_sq: float


def oracle_steps(params, env_family, n, rng):
    """Oracle-belief rollouts annotated with exact oracle advantages and query scores."""
    fam = as_family(env_family)
    rng = _rng(rng)
    policy = params.query_policy()
    tables = {}
    out = []
    for i in range(n):
        env = fam.sample(rng)
        ov = tables.setdefault(env.true_state, OracleValue(params, env))
        tr = oracle_rollout(policy, env, prior=getattr(fam, "prior", None), rng=rng)
        steps = []
        for t, q in enumerate(tr.queries):
            b = tr.beliefs[t]
            a = ov.advantage(b, q, t)
            s = query_score(params, b, q, t, env.horizon)
            steps.append(OracleStep(i, t, oracle_sign(a), a, s, float((s * s).sum())))
        out.append(steps)
    return out


@dataclass
class AccuracyEffect:
    target_acc: float
    effect: float
    measured_acc: float
    weight: float


def accuracy_effect_curve(params, env_family, acc_grid, eta, lam, n, rng):
    """I_th gain of the critique-shaped query update over the unshaped one.

    Labels agree with the oracle direction label with probability equal to the
    target accuracy; one uniform per step is shared across the grid so that
    neighbouring accuracies differ only in the labels that flip between them.
    """
    fam = as_family(env_family)
    rng = _rng(rng)
    if any(not 0.0 <= a <= 1.0 for a in acc_grid):
        raise UsageError("accuracies must lie in [0, 1]")
    g = outcome_gradient(params, fam, "Q", n, int(rng.integers(2**63 - 1)))
    base = params.step(g, eta, "q")
    base_value = exact_I_th(base, fam)
    trajs = oracle_steps(params, fam, n, rng)
    draws = [rng.random(len(steps)) for steps in trajs]
    rows = []
    for acc in acc_grid:
        g_aux = np.zeros_like(params.query_weights)
        zs, ys, ws = [], [], []
        for steps, u_draw in zip(trajs, draws):
            y = np.array([s.y for s in steps], dtype=int)
            z = np.where(u_draw < acc, y, -y)
            u = margin_coeffs(z)
            for s, ut in zip(steps, u):
                if ut != 0.0:
                    g_aux += ut * s.score
            zs.extend(z)
            ys.extend(y)
            ws.extend(abs(ut) * abs(s.adv) * s.score_sq for s, ut in zip(steps, u))
        g_aux /= len(trajs)
        shaped = base.copy()
        shaped.query_weights += eta * lam * g_aux
        effect = exact_I_th(shaped, fam) - base_value
        try:
            measured = weighted_accuracy(zs, ys, ws)
        except UndefinedStatisticError:
            measured = float("nan")
        rows.append(AccuracyEffect(float(acc), float(effect), measured, float(np.sum(ws))))
    return rows


def t_interval(values, level=0.95):
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    if v.size < 2:
        return m, m, m
    half = stats.t.ppf(0.5 + level / 2, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size)
    return m, m - half, m + half


# -------------------------------------------------------------- reporting


def diagnostics_report(params, env_family, n, seed, delta=0.05, eps=0.05):
    """JSON-ready report keyed by estimator name."""
    cap = capabilities(params, env_family, n, seed)
    sens = interaction_sensitivity(params, env_family, n, seed)
    report = {
        "estimate_I_th": asdict(cap.i_th),
        "estimate_C_BT": asdict(cap.c_bt),
        "in_locking_regime": in_locking_regime(cap.i_th.mean, cap.c_bt.mean, delta, eps),
        "interaction_sensitivity": asdict(sens),
    }
    for mode in ("model", "oracle"):
        try:
            report[f"reward_as_correlation_{mode}"] = reward_as_correlation(
                params, env_family, mode, max(n, 10), seed)
        except UndefinedStatisticError:
            report[f"reward_as_correlation_{mode}"] = None
    return report

