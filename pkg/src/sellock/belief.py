"""Beliefs over a finite latent-state set, exact Bayes conditioning and oracle rollouts.

A belief is a dense 1-D float array summing to one. Observations are small
integers; ``UNKNOWN`` is the censored answer ("cannot answer"), which carries
no information and leaves every belief unchanged under conditioning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistentObservationError, UsageError

UNKNOWN = -1
NORM_TOL = 1e-9


def as_belief(probs, tol=NORM_TOL):
    """Validate and return ``probs`` as a float array."""
    b = np.asarray(probs, dtype=float)
    if b.ndim != 1 or b.size == 0:
        raise UsageError("belief must be a nonempty 1-D vector")
    if not np.all(np.isfinite(b)) or np.any(b < -tol) or np.any(b > 1 + tol):
        raise UsageError("belief entries must lie in [0, 1]")
    if abs(b.sum() - 1.0) > tol:
        raise UsageError(f"belief sums to {b.sum():.12g}, not 1")
    return b


def uniform(n):
    return np.full(n, 1.0 / n)


def point_mass(n, s):
    b = np.zeros(n)
    b[s] = 1.0
    return b


def potential(b, true_state):
    """Mass the belief places on the true state."""
    if not 0 <= true_state < len(b):
        raise UsageError(f"true_state {true_state} out of range for |S|={len(b)}")
    return float(b[true_state])


def consistency_mask(obs_fn, q, o):
    """Boolean mask of states whose deterministic answer to ``q`` is ``o``."""
    obs_fn = np.asarray(obs_fn)
    if not 0 <= q < obs_fn.shape[1]:
        raise UsageError(f"query {q} out of range for |Q|={obs_fn.shape[1]}")
    if o == UNKNOWN:
        return np.ones(obs_fn.shape[0], dtype=bool)
    return obs_fn[:, q] == o


def bayes_update(b, q, o, obs_fn):
    """Condition ``b`` on observing ``o`` after query ``q``."""
    mask = consistency_mask(obs_fn, q, o)
    post = np.where(mask, b, 0.0)
    z = post.sum()
    if z <= 0.0:
        raise InconsistentObservationError(
            f"observation {o} for query {q} is inconsistent with the whole support"
        )
    return post / z


def one_step_progress(b_before, b_after, true_state):
    """Return (delta, absorbed, destructive) for one potential change."""
    delta = potential(b_after, true_state) - potential(b_before, true_state)
    return delta, max(delta, 0.0), max(-delta, 0.0)


def support(b):
    return frozenset(np.flatnonzero(np.asarray(b) > 0).tolist())


@dataclass
class OracleTrajectory:
    beliefs: list
    queries: list = field(default_factory=list)
    observations: list = field(default_factory=list)
    progress: list = field(default_factory=list)
    true_state: int = 0

    @property
    def total_progress(self):
        return float(sum(self.progress))

    def to_json(self):
        return json.dumps(
            {
                "true_state": int(self.true_state),
                "beliefs": [np.asarray(b).tolist() for b in self.beliefs],
                "queries": [int(q) for q in self.queries],
                "observations": [int(o) for o in self.observations],
                "progress": [float(p) for p in self.progress],
            }
        )

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(
            beliefs=[np.asarray(b) for b in d["beliefs"]],
            queries=d["queries"],
            observations=d["observations"],
            progress=d["progress"],
            true_state=d["true_state"],
        )


def oracle_rollout(query_policy, env, prior=None, horizon=None, rng=None):
    """Roll out ``query_policy`` on ``env`` with exact Bayes belief updates.

    ``query_policy(belief, t, horizon, rng)`` returns a query index; the agent's
    update kernel is never consulted.
    """
    horizon = env.horizon if horizon is None else horizon
    if horizon < 0:
        raise UsageError("horizon must be nonnegative")
    b = uniform(env.num_states) if prior is None else as_belief(prior)
    s_star = env.true_state
    if b[s_star] <= 0:
        raise UsageError("prior must put positive mass on the true state")
    rng = np.random.default_rng() if rng is None else rng

    traj = OracleTrajectory(beliefs=[b], true_state=s_star)
    for t in range(horizon):
        q = query_policy(b, t, horizon, rng)
        o = env.observe(q)
        b_next = bayes_update(b, q, o, env.obs_fn)
        traj.queries.append(q)
        traj.observations.append(o)
        traj.progress.append(b_next[s_star] - b[s_star])
        traj.beliefs.append(b_next)
        b = b_next
    return traj


def dump_jsonl(records, path):
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
