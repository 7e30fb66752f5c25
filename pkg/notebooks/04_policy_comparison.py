"""Rank the solved feedback policy against simple alternatives.

All policies see the same claim scenarios (shared claim streams), so the
comparison is sharper than independent runs.  The feedback rule should never
be dominated; the constant extremes illustrate how much each fixed stance
gives up at different surplus levels.
"""
from ruinvest import (ConstantPolicy, ExponentialClaims, FeedbackPolicy,
                      ModelParams, SimConfig, compare_policies, solve)

params = ModelParams(c=0.02, lam=0.09, mu=0.02, r=0.015, sigma=0.1, a=1.0, b=20.0)
law = ExponentialClaims(1.0)
curve = solve(params, 1.0)

policies = [
    FeedbackPolicy(curve, params, label="feedback"),
    ConstantPolicy(params.a, params, label="always long cap"),
    ConstantPolicy(-params.b, params, label="always short cap"),
    ConstantPolicy(0.0, params, label="never invest"),
    FeedbackPolicy(curve, params, clamp=(0.0, 1.0), label="no-short clamp"),
]

cfg = SimConfig(n_paths=10_000, rng_seed=11)
report = compare_policies([1.0, 5.0, 10.0], policies, params, law, cfg)

for x0 in (1.0, 5.0, 10.0):
    print(f"\nx0 = {x0:g}   (V/V_inf = {float(curve.survival(x0)):.4f})")
    rows = sorted((r for r in report.rows if r["x0"] == x0),
                  key=lambda r: -r["p_hat"])
    for r in rows:
        print(f"  {r['policy']:<18} survival {r['p_hat']:.4f} +/- {r['ci_half']:.4f}")

print("""
Notes: the always-short stance is catastrophic at every level (it throws away
the drift and takes twenty-fold volatility); never investing is competitive
only in the mid range; the no-short clamp tracks the feedback rule closely
wherever the unrestricted optimum stays long anyway.
""")
