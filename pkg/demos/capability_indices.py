"""
Capability indices, projected drift and the escape bound
========================================================

I_th measures how much the query policy alone could raise the truth-aligned
confidence if beliefs were tracked exactly; C_BT measures how much the
agent's own updates actually raise it. When the update kernel is frozen
(C_BT = 0) an outcome-gradient step on the query channel cannot improve I_th
beyond noise. With exact updates it can.
"""

from sellock.agent import init_deficient, init_zero, restrict_ops
from sellock.diagnostics import capabilities, escape_bound, exact_I_th, projected_drift
from sellock.envs import HypothesisConfig, make_family

fam = make_family(HypothesisConfig(num_states=4, num_queries=4, alphabet=2, horizon=3,
                                   identifiable=True))

for name, params in [("deficient", init_deficient(fam.base)),
                     ("uniform, identity kernel", restrict_ops(init_zero(fam.base), ("identity",))),
                     ("uniform, exact kernel", restrict_ops(init_zero(fam.base), ("bayes_full",)))]:
    cap = capabilities(params, fam, 2000, 0)
    print(f"{name:26s} I_th {cap.i_th.mean:.4f} (exact {exact_I_th(params, fam):.4f})"
          f"  C_BT {cap.c_bt.mean:.4f}")

###############################################################################
# One outcome-gradient step on the query block.

for kind in ("identity", "bayes_full"):
    params = restrict_ops(init_zero(fam.base), (kind,))
    d = projected_drift(params, fam, "Q", 2.0, 2000, 0)
    print(f"{kind:10s} Q-step drift in I_th {d.d_i_th:+.4f} +/- {d.d_i_th_stderr:.4f}")

###############################################################################
# The bound needs constants that are not observable; here they are made up.

for eta in (0.05, 0.1, 0.2):
    print(f"eta {eta}: at least {escape_bound(0.005, (0.5, 0.2, 0.2, 0.01), eta, 0.05)} "
          "steps inside the locking regime")
