"""Deterministic-feedback active-reasoning environments.

Two kinds are provided:

* ``HypothesisEnv``: a finite hypothesis-identification game. A hidden state
  ``s*`` answers every query through a fixed table ``obs_fn[s, q]``.
* ``PrefEnv``: rule-based preference estimation (PE-G / PE-F). The user holds a
  hidden preference vector and answers pairwise comparisons restricted to an
  attribute subset. ``PrefHypothesisEnv`` exposes a PE task through the same
  finite-state interface the agent uses, with the hidden preference drawn from
  a fixed candidate set.

Every environment answers with the same duck-typed surface: ``num_states``,
``num_queries``, ``horizon``, ``obs_fn``, ``true_state``, ``n_symbols``,
``null_queries``, ``observe``, ``reward``, ``readout``, ``as_proxy``,
``bt_proxy``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from enum import IntEnum

import numpy as np

from .belief import UNKNOWN, consistency_mask, uniform
from .errors import ConfigError, UsageError

EQUAL_TOL = 1e-9
PE_G_THRESHOLD = 0.03


# ---------------------------------------------------------------- hypothesis


@dataclass(frozen=True)
class HypothesisConfig:
    num_states: int = 4
    num_queries: int = 4
    alphabet: int = 2
    horizon: int = 3
    includes_null_query: bool = True
    identity_query: bool = False
    identifiable: bool = False
    seed: int = 0

    def validate(self):
        if self.num_states < 2:
            raise ConfigError("need at least 2 states", "num_states")
        if self.num_states > 64:
            raise ConfigError("at most 64 states are supported", "num_states")
        if self.num_queries < 1:
            raise ConfigError("need at least 1 query", "num_queries")
        if self.alphabet < 1:
            raise ConfigError("alphabet must be positive", "alphabet")
        if self.horizon < 0:
            raise ConfigError("horizon must be nonnegative", "horizon")
        if self.identity_query and self.alphabet < self.num_states:
            raise ConfigError("identity query needs alphabet >= num_states", "identity_query")
        n_random = self.num_queries - int(self.includes_null_query) - int(self.identity_query)
        if n_random < 0:
            raise ConfigError("too few queries for the null/identity layout", "num_queries")
        if not self.identity_query and (n_random == 0 or self.alphabet < 2):
            raise ConfigError("no informative query is possible", "alphabet")
        return self


@dataclass(frozen=True, eq=False)
class HypothesisEnv:
    obs_fn: np.ndarray
    true_state: int
    horizon: int
    null_queries: frozenset = frozenset()
    n_symbols: int = 2
    kind: str = "hypothesis"

    @property
    def num_states(self):
        return self.obs_fn.shape[0]

    @property
    def num_queries(self):
        return self.obs_fn.shape[1]

    def with_true_state(self, s):
        return replace(self, true_state=int(s))

    def observe(self, q):
        return hyp_observe(self, q)

    def reward(self, belief):
        return hyp_reward(self, belief)

    def readout(self, belief):
        return float(belief[self.true_state])

    def as_proxy(self, support_before, q, o):
        return hyp_as_proxy(self, support_before, o, q)

    def bt_proxy(self, before, after):
        return hyp_bt_proxy(before, after, self.true_state)

    def to_dict(self):
        return {
            "kind": self.kind,
            "obs_fn": self.obs_fn.tolist(),
            "true_state": int(self.true_state),
            "horizon": int(self.horizon),
            "null_queries": sorted(int(q) for q in self.null_queries),
            "n_symbols": int(self.n_symbols),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            obs_fn=np.asarray(d["obs_fn"], dtype=int),
            true_state=int(d["true_state"]),
            horizon=int(d["horizon"]),
            null_queries=frozenset(d.get("null_queries", [])),
            n_symbols=int(d["n_symbols"]),
        )


def _random_column(rng, num_states, alphabet):
    while True:
        col = rng.integers(0, alphabet, size=num_states)
        if np.unique(col).size > 1:
            return col


def _build_table(config, rng):
    S = config.num_states
    cols = []
    null = set()
    if config.includes_null_query:
        null.add(len(cols))
        cols.append(np.full(S, UNKNOWN))
    if config.identity_query:
        cols.append(np.arange(S))
    n_random = config.num_queries - len(cols)
    for attempt in range(1000):
        rand_cols = [_random_column(rng, S, config.alphabet) for _ in range(n_random)]
        table = np.stack(cols + rand_cols, axis=1).astype(int)
        if not config.identifiable or np.unique(table, axis=0).shape[0] == S:
            return table, frozenset(null)
    raise ConfigError("could not draw an identifiable table", "identifiable")


def hyp_reset(config, seed=None):
    """Build a hypothesis environment; table and true state are drawn from ``seed``."""
    config = config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    table, null = _build_table(config, rng)
    s_star = int(rng.integers(config.num_states))
    return HypothesisEnv(table, s_star, config.horizon, null, config.alphabet)


def hyp_observe(env, q):
    if not 0 <= q < env.num_queries:
        raise UsageError(f"query {q} out of range for |Q|={env.num_queries}")
    return int(env.obs_fn[env.true_state, q])


def hyp_reward(env, final_belief):
    """1.0 if the argmax (lowest index on ties) is the true state."""
    return float(int(np.argmax(final_belief)) == env.true_state)


def hyp_as_proxy(env, oracle_support_before, o, q):
    """Number of states in the support that the observation rules out."""
    if not oracle_support_before:
        raise UsageError("support must be nonempty")
    mask = consistency_mask(env.obs_fn, q, o)
    return int(sum(1 for s in oracle_support_before if not mask[s]))


def margin(b, gt):
    others = np.delete(np.asarray(b, dtype=float), gt)
    return float(b[gt] - others.max())


def hyp_bt_proxy(before, after, true_state):
    return margin(after, true_state) - margin(before, true_state)


# --------------------------------------------------------------- preference


class Feedback(IntEnum):
    NO = 0
    YES = 1
    EQUAL = 2


@dataclass(frozen=True)
class PrefConfig:
    kind: str = "pe_g"
    D: int = 4
    N: int = 8
    k: int = 2
    horizon: int = 6
    seed: int = 0
    n_candidates: int = 8
    n_queries: int = 12
    includes_null_query: bool = True

    def validate(self):
        if self.kind not in ("pe_g", "pe_f"):
            raise ConfigError("kind must be pe_g or pe_f", "kind")
        if self.D < 1:
            raise ConfigError("D must be positive", "D")
        if self.N < 2:
            raise ConfigError("need at least 2 items", "N")
        if not 1 <= self.k <= self.D:
            raise ConfigError("need 1 <= k <= D", "k")
        if self.kind == "pe_f" and self.k != self.D:
            raise ConfigError("PE-F queries all attributes (k = D)", "k")
        if self.kind == "pe_g" and self.k >= self.D:
            raise ConfigError("PE-G needs k < D", "k")
        if self.horizon < 0:
            raise ConfigError("horizon must be nonnegative", "horizon")
        if not 2 <= self.n_candidates <= 64:
            raise ConfigError("n_candidates must be in [2, 64]", "n_candidates")
        if self.n_queries < 1 + int(self.includes_null_query):
            raise ConfigError("too few queries", "n_queries")
        return self


@dataclass(frozen=True, eq=False)
class PrefEnv:
    items: np.ndarray
    latent_pref: np.ndarray
    subset_size: int
    horizon: int
    kind: str = "pe_g"


def pref_reset(config, seed=None):
    config = config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    items = rng.random((config.N, config.D))
    w_star = rng.random(config.D)
    return PrefEnv(items, w_star, config.k, config.horizon, config.kind)


def _check_query(env, subset, pair):
    subset = tuple(int(d) for d in subset)
    D = env.items.shape[1]
    if len(subset) != env.subset_size or len(set(subset)) != len(subset):
        raise UsageError(f"subset must hold exactly {env.subset_size} distinct attributes")
    if any(not 0 <= d < D for d in subset):
        raise UsageError("attribute index out of range")
    i, j = (int(x) for x in pair)
    n = env.items.shape[0]
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise UsageError("pair must be two distinct valid items")
    return list(subset), i, j


def compare(w, a_i, a_j, subset):
    score = float(np.dot(w[subset], a_i[subset] - a_j[subset]))
    if score > EQUAL_TOL:
        return Feedback.YES
    if score < -EQUAL_TOL:
        return Feedback.NO
    return Feedback.EQUAL


def pref_feedback(env, subset, pair):
    """Does the user prefer item i over item j on the attribute subset?"""
    subset, i, j = _check_query(env, subset, pair)
    return compare(env.latent_pref, env.items[i], env.items[j], subset)


def pref_as_indicator(subset, a_i, a_j):
    """1 iff neither item dominates the other on the subset."""
    idx = list(subset)
    d = np.asarray(a_i, dtype=float)[idx] - np.asarray(a_j, dtype=float)[idx]
    return int(bool(np.any(d > 0) and np.any(d < 0)))


def cosine(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise UsageError("cosine similarity of a zero vector is undefined")
    return float(u @ v / (nu * nv))


def pref_bt_proxy(w_before, w_after, w_star):
    return cosine(w_after, w_star) - cosine(w_before, w_star)


def pref_reward(kind, w_final, w_init, w_star):
    """Terminal reward: thresholded (PE-G) or clamped (PE-F) cosine improvement."""
    improvement = cosine(w_final, w_star) - cosine(w_init, w_star)
    if kind == "pe_g":
        return float(improvement > PE_G_THRESHOLD)
    if kind == "pe_f":
        return float(min(max(improvement, 0.0), 1.0))
    raise UsageError(f"unknown preference kind {kind!r}")


@dataclass(frozen=True, eq=False)
class PrefHypothesisEnv:
    """A PE task seen as a finite hypothesis game over candidate preferences.

    Query 0 is the null action when ``includes_null_query``; the remaining
    queries are fixed (subset, pair) comparisons.
    """

    items: np.ndarray
    candidates: np.ndarray
    queries: tuple
    obs_fn: np.ndarray
    true_state: int
    horizon: int
    kind: str = "pe_g"
    null_queries: frozenset = frozenset()
    n_symbols: int = 3

    @property
    def num_states(self):
        return self.candidates.shape[0]

    @property
    def num_queries(self):
        return self.obs_fn.shape[1]

    @property
    def latent_pref(self):
        return self.candidates[self.true_state]

    @property
    def w_init(self):
        return np.full(self.items.shape[1], 0.5)

    def with_true_state(self, s):
        return replace(self, true_state=int(s))

    def estimate(self, belief):
        return np.asarray(belief) @ self.candidates

    def observe(self, q):
        if not 0 <= q < self.num_queries:
            raise UsageError(f"query {q} out of range for |Q|={self.num_queries}")
        return int(self.obs_fn[self.true_state, q])

    def reward(self, belief):
        return pref_reward(self.kind, self.estimate(belief), self.w_init, self.latent_pref)

    def readout(self, belief):
        return cosine(self.estimate(belief), self.latent_pref)

    def as_indicator(self, q):
        if q in self.null_queries:
            return 0
        subset, (i, j) = self.queries[q]
        return pref_as_indicator(subset, self.items[i], self.items[j])

    def as_proxy(self, support_before, q, o):
        return self.as_indicator(q)

    def bt_proxy(self, before, after):
        return pref_bt_proxy(self.estimate(before), self.estimate(after), self.latent_pref)


def pref_hypothesis_reset(config, seed=None):
    """Build a PE task with a finite candidate set; the truth is one candidate."""
    config = config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    items = rng.random((config.N, config.D))
    candidates = rng.random((config.n_candidates, config.D))
    queries = []
    null = set()
    if config.includes_null_query:
        null.add(0)
        queries.append(None)
    while len(queries) < config.n_queries:
        subset = tuple(sorted(rng.choice(config.D, size=config.k, replace=False).tolist()))
        i, j = (int(x) for x in rng.choice(config.N, size=2, replace=False))
        queries.append((subset, (i, j)))
    table = np.empty((config.n_candidates, len(queries)), dtype=int)
    for q, query in enumerate(queries):
        if query is None:
            table[:, q] = UNKNOWN
            continue
        subset, (i, j) = query
        for s in range(config.n_candidates):
            table[s, q] = compare(candidates[s], items[i], items[j], list(subset))
    s_star = int(rng.integers(config.n_candidates))
    return PrefHypothesisEnv(
        items, candidates, tuple(queries), table, s_star, config.horizon,
        config.kind, frozenset(null), len(Feedback),
    )


# ------------------------------------------------------------------ families


@dataclass
class EnvFamily:
    """A fixed environment table with the true state drawn per episode."""

    base: object
    prior: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.prior is None:
            self.prior = uniform(self.base.num_states)

    @property
    def num_states(self):
        return self.base.num_states

    @property
    def num_queries(self):
        return self.base.num_queries

    @property
    def horizon(self):
        return self.base.horizon

    @property
    def n_symbols(self):
        return self.base.n_symbols

    def sample(self, rng):
        s = int(rng.choice(self.base.num_states, p=self.prior))
        return self.base.with_true_state(s)

    def enumerate(self):
        return [
            (float(p), self.base.with_true_state(s))
            for s, p in enumerate(self.prior)
            if p > 0
        ]


def as_family(env_or_family):
    if isinstance(env_or_family, EnvFamily):
        return env_or_family
    return _SingleEnv(env_or_family)


class _SingleEnv:
    def __init__(self, env):
        self.base = env

    def __getattr__(self, name):
        return getattr(self.base, name)

    def sample(self, rng):
        return self.base

    def enumerate(self):
        return [(1.0, self.base)]


# -------------------------------------------------------------- config I/O

ENV_KINDS = ("hypothesis", "pe_g", "pe_f")


def config_from_dict(d):
    """Parse an ``env`` config block into a HypothesisConfig or PrefConfig."""
    d = dict(d)
    kind = d.pop("kind", "hypothesis")
    if kind not in ENV_KINDS:
        raise ConfigError(f"unknown env kind {kind!r}", "env.kind")
    cls = HypothesisConfig if kind == "hypothesis" else PrefConfig
    if cls is PrefConfig:
        d["kind"] = kind
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", "env")
    try:
        return cls(**d).validate()
    except ConfigError as e:
        raise ConfigError(str(e).split(": ", 1)[-1], f"env.{e.field}") from None
    except TypeError as e:
        raise ConfigError(str(e), "env") from None


def config_to_dict(config):
    d = asdict(config)
    if isinstance(config, HypothesisConfig):
        d = {"kind": "hypothesis", **d}
    return d


def make_env(config, seed=None):
    if isinstance(config, HypothesisConfig):
        return hyp_reset(config, seed)
    return pref_hypothesis_reset(config, seed)


def make_family(config):
    """Family keyed by ``config.seed``: fixed table, uniform true state."""
    return EnvFamily(make_env(config))


def save_env_json(env, path):
    with open(path, "w") as fh:
        json.dump(env.to_dict(), fh, indent=1)


def load_env_json(path):
    with open(path) as fh:
        return HypothesisEnv.from_dict(json.load(fh))
