"""
How critique accuracy turns into informativeness
================================================

On a two-turn game we can compute I_th exactly. Labels that agree with the
sign of the exact oracle advantage at rate Acc are fed through the margin
term; the first-order effect on I_th is proportional to 2 Acc - 1.
"""

import numpy as np

from sellock.agent import init_zero
from sellock.diagnostics import accuracy_effect_curve, t_interval
from sellock.envs import HypothesisConfig, make_family

fam = make_family(HypothesisConfig(num_states=4, num_queries=4, alphabet=2, horizon=2,
                                   identifiable=True))
grid = [0.0, 0.25, 0.5, 0.75, 1.0]
effects = np.array([[r.effect for r in accuracy_effect_curve(init_zero(fam.base), fam, grid,
                                                             0.1, 0.2, 500, seed)]
                    for seed in range(5)])
for j, acc in enumerate(grid):
    m, lo, hi = t_interval(effects[:, j])
    print(f"Acc {acc:.2f}: effect {m:+.2e}  [{lo:+.2e}, {hi:+.2e}]")
