"""Check the solved curve against simulation two ways.

First the engine itself is validated on a configuration with a classical
closed form: without investment and with r = 0, the ruin probability for
exponential claims is (lambda m / c) exp(-(1/m - lambda/c) x).

Then the controlled process is simulated under the solved feedback policy;
the verification identity says the survival probability equals V(x)/V(inf).

Path counts are kept modest here so the script runs in under a minute; the
acceptance suite repeats both checks at n = 100 000.
"""
import numpy as np

from ruinvest import (ConstantPolicy, ExponentialClaims, FeedbackPolicy,
                      ModelParams, SimConfig, estimate_survival,
                      lundberg_ruin_probability, solve)

law = ExponentialClaims(1.0)

# --- engine oracle -----------------------------------------------------------
oracle = ModelParams(c=0.2, lam=0.09, mu=0.0, r=0.0, sigma=0.1, a=1.0, b=1.0)
cfg = SimConfig(n_paths=20_000, rng_seed=42)
report = estimate_survival([0.0, 1.0, 2.0, 5.0], ConstantPolicy(0.0, oracle),
                           oracle, law, cfg)
print("no-investment oracle (closed form vs simulation):")
for row in report.rows:
    ref = 1.0 - float(lundberg_ruin_probability(0.2, 0.09, 1.0, row["x0"]))
    z = abs(row["p_hat"] - ref) / row["ci_half"]
    print(f"  x0={row['x0']:4.1f}  closed form {ref:.4f}   "
          f"simulated {row['p_hat']:.4f} +/- {row['ci_half']:.4f}  ({z:.2f} CI)")

# --- verification identity ---------------------------------------------------
params = ModelParams(c=0.02, lam=0.09, mu=0.02, r=0.015, sigma=0.1, a=1.0, b=20.0)
curve = solve(params, 1.0)
policy = FeedbackPolicy(curve, params)
cfg = SimConfig(n_paths=20_000, rng_seed=42)
report = estimate_survival([1.0, 5.0, 10.0], policy, params, law, cfg)
print("\nfeedback policy vs V(x)/V(inf):")
for row in report.rows:
    ref = float(curve.survival(row["x0"]))
    z = abs(row["p_hat"] - ref) / row["ci_half"]
    print(f"  x0={row['x0']:4.1f}  V/V_inf {ref:.4f}   "
          f"simulated {row['p_hat']:.4f} +/- {row['ci_half']:.4f}  ({z:.2f} CI)")
print("\n(ruin between claims never occurs: the paths drift upward and the "
      "step control keeps diffusion increments small, so every ruin is a claim)")
