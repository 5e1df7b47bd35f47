"""
Oracle beliefs versus the agent's own beliefs
=============================================

A small hypothesis game: four candidate states, three yes/no style queries
(one of them asks nothing), three turns. We roll out the same query policy
twice, once with exact conditioning and once with the agent's update kernel,
and watch the truth-aligned confidence Psi(b) = b(s*).
"""

import numpy as np

from sellock.agent import init_zero, restrict_ops, rollout
from sellock.belief import oracle_rollout
from sellock.envs import HypothesisConfig, hyp_reset

env = hyp_reset(HypothesisConfig(num_states=4, num_queries=3, alphabet=2), 7)
print("observation table (rows = states, -1 = no answer)")
print(env.obs_fn)
print("true state:", env.true_state)

###############################################################################
# Exact conditioning. Progress per turn telescopes to the net change in Psi.

rng = np.random.default_rng(0)
params = init_zero(env)
params.query_weights[1, 0] = 3.0  # lean towards the informative query
tr = oracle_rollout(params.query_policy(), env, rng=rng)
for t, (q, o, p) in enumerate(zip(tr.queries, tr.observations, tr.progress)):
    print(f"turn {t}: ask {q}, hear {o:2d}, progress {p:+.3f}")
print("sum of progress", tr.total_progress,
      "= Psi(b_H) - Psi(b_0) =", tr.beliefs[-1][env.true_state] - tr.beliefs[0][env.true_state])

###############################################################################
# The same queries through different update kernels.

for kinds in [("identity",), ("bayes_full",), ("toward_uniform", "anti_bayes")]:
    p = restrict_ops(params, kinds)
    model = rollout(p, env, np.random.default_rng(0))
    psi = [round(float(b[env.true_state]), 3) for b in model.beliefs()]
    print(f"{'+'.join(kinds):28s} Psi path {psi}  reward {model.reward}")
