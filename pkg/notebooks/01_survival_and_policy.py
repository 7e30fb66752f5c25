"""Walk through the flagship configuration: mu > r with a tight long bound
and a loose short bound (a=1, b=20).

The solver produces the maximal survival probability V(x)/V(inf) and the
optimal investment fraction.  The striking feature of this parameter set is
the switching pattern: with little surplus the insurer leverages long at the
cap, then flips to the maximal SHORT position (gambling on volatility while
the rate of return is the worst available), then back to the long cap, and
finally tapers the long fraction toward zero as surplus grows.
"""
import numpy as np

from ruinvest import ExponentialClaims, ModelParams, SolveOptions, solve

params = ModelParams(c=0.02, lam=0.09, mu=0.02, r=0.015, sigma=0.1, a=1.0, b=20.0)
claim_mean = 1.0

curve = solve(params, claim_mean)

print("regime schedule:")
for seg in curve.segments:
    print(f"  {seg.regime:>4} on [{seg.lo:9.6f}, {seg.hi:9.6f}]   ({seg.terminal_event})")
print(f"\nV(inf) = {curve.V_inf:.6f}")
print(f"survival with zero surplus: {curve.survival(0.0):.4f}")
for x0 in (1.0, 2.0, 5.0, 10.0, 20.0):
    print(f"  survival({x0:5.1f}) = {float(curve.survival(x0)):.4f}"
          f"   optimal fraction = {float(curve.theta(x0)):+.4f}")

# near zero the indicator phi starts at 2a and must climb past 2ab/(b-a)
# before the first flip; the first switch is therefore tiny but nonzero
x1, x2, x3 = curve.switch_points
print(f"\nswitch points: x1 = {x1:.6f} (long -> short), "
      f"x2 = {x2:.6f} (short -> long), x3 = {x3:.6f} (long -> interior)")

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    ax1.plot(curve.x, curve.survival(curve.x), "k-")
    ax1.set_xlabel("initial surplus x")
    ax1.set_ylabel("maximal survival probability")
    ax1.set_xlim(0, 25)

    ax2.plot(curve.x, curve.theta_star, "k-")
    for xi in curve.switch_points:
        ax2.axvline(xi, color="0.7", lw=0.8)
    ax2.set_xlabel("surplus x")
    ax2.set_ylabel("optimal investment fraction")
    ax2.set_xlim(0, 12)
    fig.tight_layout()
    fig.savefig("survival_and_policy.png", dpi=120)
    print("\nsaved survival_and_policy.png")
except ImportError:
    print("\n(matplotlib not available; skipping plots)")
