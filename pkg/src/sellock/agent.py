"""A two-channel parametric agent: softmax query policy plus softmax update kernel.

The query channel scores each candidate query with one weight row applied to a
coarse belief summary. The update channel scores a finite slate of belief
update operators from the observation (one-hot) and the same summary. Both are
plain softmax policies, so log-probabilities and their gradients are exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .belief import UNKNOWN, bayes_update, consistency_mask, uniform
from .errors import NumericError, UsageError

OPERATOR_KINDS = ("identity", "bayes_full", "bayes_partial", "toward_uniform", "anti_bayes")
N_SUMMARY = 4  # bias, max prob, normalized entropy, normalized turn


@dataclass(frozen=True)
class UpdateOperator:
    kind: str
    rate: float = 0.5

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise UsageError(f"unknown operator kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise UsageError("operator rate must lie in [0, 1]")
        if self.kind == "anti_bayes" and self.rate >= 1.0:
            # rate 1 would zero the true state and break later conditioning
            raise UsageError("anti_bayes rate must be < 1")

    @property
    def name(self):
        if self.kind in ("identity", "bayes_full"):
            return self.kind
        return f"{self.kind}({self.rate:g})"

    def apply(self, b, q, o, obs_fn):
        kind, rho = self.kind, self.rate
        if kind == "identity":
            return b
        if kind == "bayes_full":
            return bayes_update(b, q, o, obs_fn)
        if kind == "bayes_partial":
            return (1 - rho) * b + rho * bayes_update(b, q, o, obs_fn)
        if kind == "toward_uniform":
            return (1 - rho) * b + rho * uniform(len(b))
        # anti_bayes: shift mass from consistent to inconsistent states
        mask = consistency_mask(obs_fn, q, o)
        inc_mass = b[~mask].sum()
        if mask.all():
            return b
        moved = rho * b[mask].sum()
        out = np.where(mask, (1 - rho) * b, b)
        if inc_mass > 0:
            out[~mask] += moved * b[~mask] / inc_mass
        else:
            out[~mask] += moved / (~mask).sum()
        return out / out.sum()


DEFAULT_OPS = (
    UpdateOperator("identity"),
    UpdateOperator("bayes_full"),
    UpdateOperator("bayes_partial", 0.5),
    UpdateOperator("toward_uniform", 0.5),
    UpdateOperator("anti_bayes", 0.5),
)


def belief_summary(b, t, horizon):
    n = len(b)
    nz = b[b > 0]
    ent = float(-(nz * np.log(nz)).sum() / np.log(n)) if n > 1 else 0.0
    return np.array([1.0, float(b.max()), ent, t / max(horizon, 1)])


def update_features(b, o, t, horizon, n_symbols):
    onehot = np.zeros(n_symbols + 1)
    onehot[n_symbols if o == UNKNOWN else o] = 1.0
    return np.concatenate([onehot, belief_summary(b, t, horizon)])


def softmax(scores):
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise NumericError(f"non-finite scores {scores}")
    z = scores - scores.max()
    e = np.exp(z)
    p = e / e.sum()
    return p, z - np.log(e.sum())


def _sample(p, rng):
    # exactly one uniform per decision keeps parallel streams aligned
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(idx, len(p) - 1)


@dataclass
class AgentParams:
    """Query-channel and update-channel weight blocks plus their row labels."""

    query_weights: np.ndarray
    update_weights: np.ndarray
    ops: tuple = DEFAULT_OPS
    query_slate: tuple | None = None
    op_slate: tuple | None = None

    def __post_init__(self):
        self.query_weights = np.asarray(self.query_weights, dtype=float)
        self.update_weights = np.asarray(self.update_weights, dtype=float)
        if self.update_weights.shape[0] != len(self.ops):
            raise UsageError("update_weights needs one row per operator")

    @property
    def num_queries(self):
        return self.query_weights.shape[0]

    @property
    def n_symbols(self):
        return self.update_weights.shape[1] - N_SUMMARY - 1

    def qslate(self):
        return tuple(range(self.num_queries)) if self.query_slate is None else self.query_slate

    def uslate(self):
        return tuple(range(len(self.ops))) if self.op_slate is None else self.op_slate

    def copy(self):
        return replace(self, query_weights=self.query_weights.copy(),
                       update_weights=self.update_weights.copy())

    def zeros_like(self):
        return replace(self, query_weights=np.zeros_like(self.query_weights),
                       update_weights=np.zeros_like(self.update_weights))

    def flat(self):
        return np.concatenate([self.query_weights.ravel(), self.update_weights.ravel()])

    def with_flat(self, v):
        nq = self.query_weights.size
        return replace(
            self,
            query_weights=np.asarray(v[:nq], dtype=float).reshape(self.query_weights.shape),
            update_weights=np.asarray(v[nq:], dtype=float).reshape(self.update_weights.shape),
        )

    def step(self, grad, eta, channels="qu"):
        """Return ``self + eta * grad`` restricted to the named channels."""
        out = self.copy()
        if "q" in channels:
            out.query_weights += eta * grad.query_weights
        if "u" in channels:
            out.update_weights += eta * grad.update_weights
        return out

    def query_policy(self):
        def policy(b, t, horizon, rng):
            return select_query(self, b, self.qslate(), rng, t, horizon)[0]
        return policy

    def query_probs(self, b, t, horizon):
        slate = self.qslate()
        x = belief_summary(b, t, horizon)
        p, _ = softmax(self.query_weights[list(slate)] @ x)
        return slate, p

    def to_json(self):
        return json.dumps({
            "shape": {"query": list(self.query_weights.shape),
                      "update": list(self.update_weights.shape)},
            "ops": [[op.kind, op.rate] for op in self.ops],
            "query_slate": None if self.query_slate is None else list(self.query_slate),
            "op_slate": None if self.op_slate is None else list(self.op_slate),
            "values": self.flat().tolist(),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        qs, us = d["shape"]["query"], d["shape"]["update"]
        v = np.asarray(d["values"], dtype=float)
        nq = qs[0] * qs[1]
        if v.size != nq + us[0] * us[1]:
            raise UsageError("flat parameter array does not match its shape header")
        return cls(
            v[:nq].reshape(qs), v[nq:].reshape(us),
            ops=tuple(UpdateOperator(k, r) for k, r in d["ops"]),
            query_slate=None if d["query_slate"] is None else tuple(d["query_slate"]),
            op_slate=None if d["op_slate"] is None else tuple(d["op_slate"]),
        )


def init_zero(env, ops=DEFAULT_OPS):
    return AgentParams(
        np.zeros((env.num_queries, N_SUMMARY)),
        np.zeros((len(ops), env.n_symbols + 1 + N_SUMMARY)),
        ops=tuple(ops),
    )


def init_random(env, rng, scale=0.5, ops=DEFAULT_OPS):
    p = init_zero(env, ops)
    p.query_weights = scale * rng.standard_normal(p.query_weights.shape)
    p.update_weights = scale * rng.standard_normal(p.update_weights.shape)
    return p


def uninformative_queries(env):
    null = set(getattr(env, "null_queries", ()))
    if null:
        return sorted(null)
    # no null action: fall back to the queries with the fewest distinct answers
    counts = [np.unique(env.obs_fn[:, q]).size for q in range(env.num_queries)]
    return [q for q, c in enumerate(counts) if c == min(counts)]


def init_deficient(env, query_bias=6.0, update_bias=4.0,
                   update_targets=("identity", "toward_uniform"), ops=DEFAULT_OPS):
    """Parameters inside the low-information, low-belief-tracking regime.

    Null (or least informative) queries get ``query_bias`` on the bias feature;
    operators whose kind is in ``update_targets`` get ``update_bias``.
    """
    p = init_zero(env, ops)
    for q in uninformative_queries(env):
        p.query_weights[q, 0] = query_bias
    bias_col = env.n_symbols + 1
    for i, op in enumerate(p.ops):
        if op.kind in update_targets:
            p.update_weights[i, bias_col] = update_bias
    return p


def restrict_ops(params, kinds):
    """Restrict the update slate to operators of the given kinds."""
    slate = tuple(i for i, op in enumerate(params.ops) if op.kind in kinds)
    if not slate:
        raise UsageError(f"no operator of kinds {kinds}")
    return replace(params, op_slate=slate)


# ------------------------------------------------------------------ sampling


def select_query(params, belief, slate, rng, t=0, horizon=1):
    slate = tuple(slate)
    if not slate:
        raise UsageError("query slate is empty")
    x = belief_summary(belief, t, horizon)
    p, logp = softmax(params.query_weights[list(slate)] @ x)
    k = _sample(p, rng)
    return slate[k], float(logp[k])


def select_update(params, belief, query, observation, op_slate, rng, obs_fn, t=0, horizon=1):
    """Sample an update operator and apply it. Returns (op index, logprob, next belief)."""
    op_slate = tuple(op_slate)
    if not op_slate:
        raise UsageError("operator slate is empty")
    x = update_features(belief, observation, t, horizon, params.n_symbols)
    p, logp = softmax(params.update_weights[list(op_slate)] @ x)
    k = _sample(p, rng)
    op_idx = op_slate[k]
    nxt = params.ops[op_idx].apply(belief, query, observation, obs_fn)
    if not (np.all(nxt >= 0) and abs(nxt.sum() - 1) <= 1e-9):
        raise AssertionError(f"operator {params.ops[op_idx].name} produced an invalid belief")
    return op_idx, float(logp[k]), nxt


# ---------------------------------------------------------------- trajectory


@dataclass
class Step:
    t: int
    belief: np.ndarray
    query: int
    obs: int
    op: int
    next_belief: np.ndarray
    logp_q: float
    logp_u: float
    x_q: np.ndarray
    x_u: np.ndarray
    slate_q: tuple
    slate_u: tuple
    support_before: frozenset
    support_after: frozenset
    as_proxy: float
    bt_proxy: float
    readout_before: float
    readout_after: float
    repeat: bool


@dataclass
class Trajectory:
    prior: np.ndarray
    true_state: int
    steps: list = field(default_factory=list)
    final_belief: np.ndarray = None
    reward: float = 0.0

    @property
    def horizon(self):
        return len(self.steps)

    @property
    def queries(self):
        return [s.query for s in self.steps]

    @property
    def observations(self):
        return [s.obs for s in self.steps]

    @property
    def logp_q(self):
        return np.array([s.logp_q for s in self.steps])

    @property
    def logp_u(self):
        return np.array([s.logp_u for s in self.steps])

    @property
    def loglik(self):
        return float(self.logp_q.sum() + self.logp_u.sum())

    def beliefs(self):
        return [self.prior] + [s.next_belief for s in self.steps]

    def to_dict(self):
        return {
            "true_state": int(self.true_state),
            "reward": float(self.reward),
            "prior": self.prior.tolist(),
            "final_belief": self.final_belief.tolist(),
            "steps": [
                {
                    "t": s.t, "query": int(s.query), "obs": int(s.obs), "op": int(s.op),
                    "logp_q": s.logp_q, "logp_u": s.logp_u,
                    "as_proxy": float(s.as_proxy), "bt_proxy": float(s.bt_proxy),
                    "readout_before": s.readout_before, "readout_after": s.readout_after,
                    "belief": s.belief.tolist(), "next_belief": s.next_belief.tolist(),
                }
                for s in self.steps
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def rollout(params, env, rng, prior=None, nullify=False):
    """Run the agent for ``env.horizon`` alternating query/update rounds.

    ``nullify`` replaces every observation with ``UNKNOWN`` (the feedback
    ablation used to measure interaction sensitivity).
    """
    H = env.horizon
    b = uniform(env.num_states) if prior is None else np.asarray(prior, dtype=float)
    traj = Trajectory(prior=b, true_state=env.true_state)
    supp = frozenset(np.flatnonzero(b > 0).tolist())
    asked = set()
    qslate, uslate = params.qslate(), params.uslate()
    for t in range(H):
        q, lq = select_query(params, b, qslate, rng, t, H)
        o = UNKNOWN if nullify else env.observe(q)
        op, lu, nb = select_update(params, b, q, o, uslate, rng, env.obs_fn, t, H)
        mask = consistency_mask(env.obs_fn, q, o)
        supp_after = frozenset(s for s in supp if mask[s])
        traj.steps.append(Step(
            t=t, belief=b, query=q, obs=o, op=op, next_belief=nb,
            logp_q=lq, logp_u=lu,
            x_q=belief_summary(b, t, H),
            x_u=update_features(b, o, t, H, params.n_symbols),
            slate_q=qslate, slate_u=uslate,
            support_before=supp, support_after=supp_after,
            as_proxy=float(env.as_proxy(supp, q, o)),
            bt_proxy=float(env.bt_proxy(b, nb)),
            readout_before=env.readout(b), readout_after=env.readout(nb),
            repeat=q in asked,
        ))
        asked.add(q)
        supp = supp_after
        b = nb
    traj.final_belief = b
    traj.reward = float(env.reward(b))
    return traj


def replay_beliefs(params, env, queries, observations, bt_mode, rng, prior=None):
    """Re-run the update channel on a fixed query/observation sequence.

    ``bt_mode`` is ``"model"`` (sample the agent's kernel) or ``"oracle"``
    (exact Bayes conditioning). Returns the final belief.
    """
    H = env.horizon
    b = uniform(env.num_states) if prior is None else np.asarray(prior, dtype=float)
    for t, (q, o) in enumerate(zip(queries, observations)):
        if bt_mode == "oracle":
            b = bayes_update(b, q, o, env.obs_fn)
        elif bt_mode == "model":
            _, _, b = select_update(params, b, q, o, params.uslate(), rng, env.obs_fn, t, H)
        else:
            raise UsageError(f"unknown bt_mode {bt_mode!r}")
    return b


# ------------------------------------------------------------------ gradients


def step_logprobs(params, traj):
    """Log-probabilities of the recorded decisions under ``params``."""
    lq = np.empty(traj.horizon)
    lu = np.empty(traj.horizon)
    for i, s in enumerate(traj.steps):
        _, lpq = softmax(params.query_weights[list(s.slate_q)] @ s.x_q)
        lq[i] = lpq[s.slate_q.index(s.query)]
        _, lpu = softmax(params.update_weights[list(s.slate_u)] @ s.x_u)
        lu[i] = lpu[s.slate_u.index(s.op)]
    return lq, lu


def trajectory_logprob(params, traj):
    lq, lu = step_logprobs(params, traj)
    return float(lq.sum() + lu.sum())


def weighted_logprob_grad(params, traj, coef_q=None, coef_u=None):
    """Sum over steps of ``coef_q[t] * grad log pi_Q + coef_u[t] * grad log pi_U``."""
    H = traj.horizon
    coef_q = np.ones(H) if coef_q is None else np.asarray(coef_q, dtype=float)
    coef_u = np.ones(H) if coef_u is None else np.asarray(coef_u, dtype=float)
    g = params.zeros_like()
    for i, s in enumerate(traj.steps):
        if coef_q[i] != 0.0:
            rows = list(s.slate_q)
            p, _ = softmax(params.query_weights[rows] @ s.x_q)
            d = -p
            d[s.slate_q.index(s.query)] += 1.0
            g.query_weights[rows] += coef_q[i] * np.outer(d, s.x_q)
        if coef_u[i] != 0.0:
            rows = list(s.slate_u)
            p, _ = softmax(params.update_weights[rows] @ s.x_u)
            d = -p
            d[s.slate_u.index(s.op)] += 1.0
            g.update_weights[rows] += coef_u[i] * np.outer(d, s.x_u)
    return g


def logprob_grad(params, traj):
    """Exact score-function gradient of the trajectory log-likelihood."""
    return weighted_logprob_grad(params, traj)


def query_score(params, b, q, t, horizon):
    """Gradient of log pi_Q(q | b) with respect to the query block."""
    slate = params.qslate()
    x = belief_summary(b, t, horizon)
    p, _ = softmax(params.query_weights[list(slate)] @ x)
    d = -p
    d[slate.index(q)] += 1.0
    g = np.zeros_like(params.query_weights)
    g[list(slate)] = np.outer(d, x)
    return g
