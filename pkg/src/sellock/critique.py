"""Stepwise directional critiques and the likelihood-margin coefficients they induce."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .belief import UNKNOWN, consistency_mask
from .errors import UndefinedStatisticError, UsageError

AS_RULES = ("auto", "hypothesis", "pe", "flodial")
BT_RULES = ("auto", "sign", "pe", "invariance")


@dataclass
class CritiqueTrack:
    z_q: np.ndarray
    z_u: np.ndarray
    flipped: bool = False

    def __post_init__(self):
        self.z_q = np.asarray(self.z_q, dtype=int)
        self.z_u = np.asarray(self.z_u, dtype=int)
        if self.z_q.shape != self.z_u.shape:
            raise UsageError("AS and BT label tracks must have equal length")

    def to_dict(self):
        return {
            "z_q": self.z_q.tolist(),
            "z_u": self.z_u.tolist(),
            "provenance": "flipped" if self.flipped else "clean",
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def _is_pe(env):
    return getattr(env, "kind", "hypothesis") in ("pe_g", "pe_f")


def as_critique(env, step, history=None, rule="auto"):
    """+1 for an informative new query, -1 for null/repeated/uninformative ones.

    ``history`` is the collection of earlier queries in the episode; when
    omitted the step's own repeat flag is used.
    """
    if rule == "auto":
        rule = "pe" if _is_pe(env) else "hypothesis"
    repeat = step.repeat if history is None else step.query in history
    if rule == "flodial":
        if step.obs == UNKNOWN:
            return -1
        return 1 if step.obs == 1 else 0
    if step.query in env.null_queries or repeat:
        return -1
    if rule == "pe":
        return 1 if env.as_indicator(step.query) == 1 else -1
    if rule == "hypothesis":
        return 1 if step.as_proxy > 0 else -1
    raise UsageError(f"unknown AS critique rule {rule!r}")


def bt_critique(readout_before, readout_after):
    """Sign of the change in truth-aligned confidence; exact ties give 0."""
    d = readout_after - readout_before
    return int(d > 0) - int(d < 0)


def feedback_informative(env, step):
    """True when exact conditioning on the observation would move the belief."""
    if step.obs == UNKNOWN:
        return False
    mask = consistency_mask(env.obs_fn, step.query, step.obs)
    return bool(np.any(step.belief[~mask] > 0))


def bt_step_label(env, step, z_q, rule="auto"):
    if rule == "auto":
        rule = "pe" if _is_pe(env) else "sign"
    if rule == "sign":
        return bt_critique(step.readout_before, step.readout_after)
    if rule == "pe":
        return bt_critique(step.readout_before, step.readout_after) if z_q == 1 else 0
    if rule == "invariance":
        if feedback_informative(env, step):
            return 1 if step.readout_after > step.readout_before else -1
        return 1 if np.array_equal(step.next_belief, step.belief) else -1
    raise UsageError(f"unknown BT critique rule {rule!r}")


def critique_trajectory(traj, env, as_rule="auto", bt_rule="auto"):
    z_q = [as_critique(env, s, rule=as_rule) for s in traj.steps]
    z_u = [bt_step_label(env, s, zq, bt_rule) for s, zq in zip(traj.steps, z_q)]
    return CritiqueTrack(z_q, z_u)


def perturb(track, alpha, rng):
    """Negate each nonzero label independently with probability ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise UsageError("alpha must lie in [0, 1]")

    def flip(z):
        m = rng.random(z.shape) < alpha
        return np.where(m & (z != 0), -z, z)

    return CritiqueTrack(flip(track.z_q), flip(track.z_u), flipped=track.flipped or alpha > 0)


def margin_coeffs(labels):
    """Per-step coefficients 1/|P|, -1/|N|, 0; all zero unless both classes occur."""
    z = np.asarray(labels, dtype=int)
    n_pos = int((z == 1).sum())
    n_neg = int((z == -1).sum())
    u = np.zeros(z.shape, dtype=float)
    if n_pos == 0 or n_neg == 0:
        return u
    u[z == 1] = 1.0 / n_pos
    u[z == -1] = -1.0 / n_neg
    return u


def margin_objective(step_logprobs, labels):
    """Mean log-probability of positive steps minus that of negative steps."""
    lp = np.asarray(step_logprobs, dtype=float)
    z = np.asarray(labels, dtype=int)
    if lp.shape != z.shape:
        raise UsageError("log-probabilities and labels must align")
    pos, neg = lp[z == 1], lp[z == -1]
    if pos.size == 0 or neg.size == 0:
        return 0.0
    return float(pos.mean() - neg.mean())


def weighted_accuracy(labels, oracle_labels, weights):
    """Weighted agreement rate between critique labels and oracle direction labels."""
    z = np.asarray(labels)
    y = np.asarray(oracle_labels)
    w = np.asarray(weights, dtype=float)
    if not (z.shape == y.shape == w.shape):
        raise UsageError("labels, oracle labels and weights must align")
    if np.any(w < 0):
        raise UsageError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise UndefinedStatisticError("weighted accuracy is undefined for zero total weight")
    return float((w * (z == y)).sum() / total)


def oracle_sign(advantage):
    """Direction label of an oracle advantage; exact zero counts as +1."""
    return 1 if advantage >= 0 else -1
