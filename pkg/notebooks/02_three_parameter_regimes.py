"""The qualitative shape of the optimal policy across the mu-vs-r and a-vs-b
parameter quadrants.

Three configurations sharing c=0.02, lambda=0.09, sigma=0.1, exponential
claims with mean 1:

  * mu > r, a < b : long cap -> short cap -> long cap -> interior taper
  * mu < r, a > b : the mirror image (short cap -> LONG cap -> short -> interior)
  * mu < r, a < b : short cap -> interior taper, no long excursion

plus a premium-rich variant of the first where the convex-start condition
fails and the short excursion disappears.
"""
import numpy as np

from ruinvest import ModelParams, convex_start_condition, solve

CASES = [
    ("mu>r, a<b ", ModelParams(c=0.02, lam=0.09, mu=0.02, r=0.015, sigma=0.1, a=1.0, b=20.0)),
    ("mu<r, a>b ", ModelParams(c=0.02, lam=0.09, mu=0.02, r=0.025, sigma=0.1, a=20.0, b=1.0)),
    ("mu<r, a<b ", ModelParams(c=0.02, lam=0.09, mu=0.01, r=0.015, sigma=0.1, a=1.0, b=20.0)),
    ("rich premium", ModelParams(c=0.10, lam=0.09, mu=0.02, r=0.015, sigma=0.1, a=1.0, b=20.0)),
]

curves = {}
for label, p in CASES:
    cur = solve(p, 1.0)
    curves[label] = cur
    chain = " -> ".join(s.regime for s in cur.segments)
    cond = convex_start_condition(p, 1.0)
    print(f"{label}:  {chain:<22} V(inf) = {cur.V_inf:8.3f}   convex start: {cond}")

print("""
Reading the table: A = maximal long (fraction a), B = maximal short
(fraction -b), INT = the interior vertex fraction.  The short excursion in
the first row needs both the convex start (claims heavy relative to premium
and drift) and plenty of shorting room; raising the premium to 0.10 kills it.
""")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 2, figsize=(11, 7))
    for ax, (label, _) in zip(axes.ravel(), CASES):
        cur = curves[label]
        ax.plot(cur.x, cur.theta_star, "k-", lw=1.2)
        ax.set_title(label)
        ax.set_xlim(0, 10)
        ax.set_xlabel("surplus x")
        ax.set_ylabel("optimal fraction")
    fig.tight_layout()
    fig.savefig("three_parameter_regimes.png", dpi=120)
    print("saved three_parameter_regimes.png")
except ImportError:
    print("(matplotlib not available; skipping plots)")
