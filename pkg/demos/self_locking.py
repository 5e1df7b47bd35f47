"""
Self-locking under outcome-only training, and the critique repair
=================================================================

Start an agent that mostly asks the null question and mostly ignores the
answer. With terminal reward alone the gradient through either channel is
tiny, so training stalls. Adding directional critiques per step (the
likelihood-margin term) breaks the lock.

Runs four short training jobs; expect about a minute.
"""

import numpy as np

from sellock.agent import init_deficient
from sellock.diagnostics import capabilities
from sellock.envs import HypothesisConfig, make_family
from sellock.trainers import TrainConfig, train

fam = make_family(HypothesisConfig(num_states=4, num_queries=4, alphabet=2, horizon=3,
                                   identifiable=True))
start = init_deficient(fam.base)
cap = capabilities(start, fam, 2000, 0)
print(f"initial I_th {cap.i_th.mean:.4f}  C_BT {cap.c_bt.mean:.4f}")

###############################################################################
# Vanilla PPO against critique shaping on the query channel only, and on both.

print(f"{'mode':8s} {'reward':>7s} {'AS':>6s} {'BT':>7s}")
for mode in ("off", "as_only", "as_bt"):
    run = train(TrainConfig(arew_mode=mode, steps=150, batch_size=32, lr=0.5, seed=0),
                fam, start)
    last = slice(-20, None)
    print(f"{mode:8s} {run.series('mean_reward')[last].mean():7.3f} "
          f"{run.series('as_proxy_mean')[last].mean():6.3f} "
          f"{run.series('bt_proxy_mean')[last].mean():7.3f}")

###############################################################################
# Noisy critiques: flip each label with probability alpha.

for alpha in (0.0, 0.25, 0.5):
    run = train(TrainConfig(arew_mode="as_bt", flip_alpha=alpha, steps=150, batch_size=32,
                            lr=0.5, seed=0), fam, start)
    print(f"alpha {alpha:.2f}: final reward {np.mean(run.series('mean_reward')[-20:]):.3f}")
