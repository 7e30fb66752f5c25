import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from ruinvest.curve import SolutionCurve
from ruinvest.exp_solver import (AugmentedState, SolveOptions, SolverAbort,
                                 detect_switch, extrapolate_tail,
                                 rhs_constant_regime, rhs_interior_regime, solve,
                                 third_order_check)
from ruinvest.model import ExponentialClaims, ModelParams, regime_constants
from ruinvest.series import handoff_point, series_coefficients, series_eval

M = 1.0

# switch abscissas of Example 1, frozen after the first verified run
X1_FIX, X2_FIX, X3_FIX = 0.021941989, 3.207494533, 4.131445767


# ---------------------------------------------------------------------------
# regime right-hand sides
# ---------------------------------------------------------------------------

def test_rhs_constant_matches_series_at_handoff(example1):
    se = series_coefficients(example1, M, example1.a)
    x_eps = handoff_point(se, example1, M)
    V, Vp, Vpp, J = series_eval(se, x_eps, example1, M)
    dV, dVp, dJ = rhs_constant_regime(AugmentedState(x_eps, V, Vp, J), example1.a,
                                      example1, M)
    assert dV == Vp
    assert dVp == pytest.approx(Vpp, rel=1e-8)
    assert dJ == pytest.approx((V - J) / M)


def test_rhs_constant_annihilates_constants(example1):
    # V constant with J = V (stationary convolution) gives V'' = 0
    s = AugmentedState(x=1.0, V=2.0, Vp=0.0, J=2.0)
    dV, dVp, dJ = rhs_constant_regime(s, example1.a, example1, M)
    assert dV == 0.0 and dVp == 0.0 and dJ == 0.0


def test_rhs_constant_third_order_consistency(example1):
    # d/dx of the second-order form reproduces the third-order equation
    se = series_coefficients(example1, M, example1.a)
    rc = regime_constants(example1, example1.a)
    x = 0.008
    d = 1e-5
    vpp = {}
    for xx in (x - d, x + d):
        V, Vp, Vpp, J = series_eval(se, xx, example1, M)
        vpp[xx] = rhs_constant_regime(AugmentedState(xx, V, Vp, J), example1.a,
                                      example1, M)[1]
    fd_vppp = (vpp[x + d] - vpp[x - d]) / (2 * d)
    V, Vp, Vpp, J = series_eval(se, x, example1, M)
    mb, sb2 = rc.mu_bar, rc.sigma_bar**2
    ode_vppp = -((x**2 / M + 2 * (1 + mb / sb2) * x + 2 * example1.c / sb2) * Vpp
                 + 2 * (mb * x / (M * sb2) + (mb - example1.lam + example1.c / M) / sb2) * Vp) / x**2
    assert fd_vppp == pytest.approx(ode_vppp, rel=1e-5)


def test_rhs_interior_rejects_nonpositive_deficit(example1):
    s = AugmentedState(x=5.0, V=2.0, Vp=10.0, J=1.999)  # I < 0
    with pytest.raises(ValueError):
        rhs_interior_regime(s, example1, M)


def test_rhs_interior_vertex_identity(example1, curve1):
    # on interior nodes the indicator equals the vertex -(mu-r)V'/(sigma^2 x V'')
    seg = curve1.segments[-1]
    inside = (curve1.x > seg.lo + 0.5) & (curve1.x < seg.hi - 5.0)
    idx = np.nonzero(inside)[0][:: max(1, inside.sum() // 30)]
    for i in idx:
        al = -(example1.mu - example1.r) * curve1.Vp[i] / (
            example1.sigma**2 * curve1.x[i] * curve1.Vpp[i])
        assert al == pytest.approx(curve1.phi[i], rel=1e-8)


# ---------------------------------------------------------------------------
# full solve: structure, boundary values, invariants
# ---------------------------------------------------------------------------

def test_example1_structure(curve1):
    regimes = [s.regime for s in curve1.segments]
    assert regimes == ["A", "B", "A", "INT"]
    x1, x2, x3 = curve1.switch_points
    assert 0 < x1 < x2 < x3 < np.inf
    assert x1 == pytest.approx(X1_FIX, rel=1e-6)
    assert x2 == pytest.approx(X2_FIX, rel=1e-6)
    assert x3 == pytest.approx(X3_FIX, rel=1e-6)


def test_example2_starts_short(curve2):
    assert curve2.segments[0].regime == "B"
    assert [s.regime for s in curve2.segments] == ["B", "A", "B", "INT"]


def test_example3_structure(curve3):
    assert [s.regime for s in curve3.segments] == ["B", "INT"]


def test_no_short_excursion_when_convex_start_fails():
    # c = 0.1 violates the convex-start condition: no maximal-short stretch
    p = ModelParams(c=0.1, lam=0.09, mu=0.02, r=0.015, sigma=0.1, a=1.0, b=20.0)
    cur = solve(p, M)
    regimes = [s.regime for s in cur.segments]
    assert "B" not in regimes
    assert set(regimes) <= {"A", "INT"}


def test_boundary_values(curve1):
    assert curve1.V[0] == 1.0
    assert curve1.Vp[0] == pytest.approx(4.5, abs=1e-12)
    assert curve1.Vpp[0] == pytest.approx(11.25, abs=1e-8)
    assert curve1.J[0] == 0.0


def test_monotone_and_bounded(curve1, curve2, curve3):
    for cur in (curve1, curve2, curve3):
        assert np.all(np.diff(cur.V) > 0)
        assert np.all(cur.Vp > 0)
        assert cur.V[-1] <= cur.V_inf < np.inf


def test_j_state_matches_kernel_quadrature(example1, curve1):
    # J(x) = int_0^x V(x-z) exp(-z/m)/m dz on a sample of nodes
    sel = np.linspace(5, len(curve1.x) - 5, 12).astype(int)
    for i in sel:
        x = curve1.x[i]
        Jq, _ = quad(lambda z: float(curve1.value(x - z)) * np.exp(-z / M) / M,
                     0.0, x, limit=400, epsabs=1e-10, epsrel=1e-10)
        assert curve1.J[i] == pytest.approx(Jq, abs=1e-7)


def test_smoothness_at_switch_points(curve1, example1):
    # one-sided second-derivative estimates agree at each switch abscissa;
    # the node grid hugs the switch points so the quotients read the
    # integrator's dense output on each side
    for xi in curve1.switch_points:
        d = 1e-7 * max(1.0, xi)
        vpl = np.interp([xi - d, xi], curve1.x, curve1.Vp)
        vpr = np.interp([xi, xi + d], curve1.x, curve1.Vp)
        left = (vpl[1] - vpl[0]) / d
        right = (vpr[1] - vpr[0]) / d
        mid = 0.5 * (left + right)
        assert abs(right - left) <= 1e-4 * abs(mid)


def test_series_handoff_consistency(example1):
    # integrate the regime ODE from x_eps/2 to 2 x_eps and compare with the
    # series there (both inside the series validity radius)
    se = series_coefficients(example1, M, example1.a)
    x_eps = handoff_point(se, example1, M)
    x0, x1 = x_eps / 2.0, min(2.0 * x_eps, 0.021)  # stay inside the first regime
    V0, Vp0, Vpp0, J0 = series_eval(se, x0, example1, M)
    rc = regime_constants(example1, example1.a)

    def rhs(x, y):
        V, Vp, D = y
        vpp = 2.0 * (example1.lam * D - (example1.c + rc.mu_bar * x) * Vp) / (
            rc.sigma_bar**2 * x**2)
        return [Vp, vpp, Vp - D / M]

    sol = solve_ivp(rhs, (x0, x1), [V0, Vp0, V0 - J0], rtol=1e-12, atol=1e-14)
    V1, Vp1, Vpp1, J1 = series_eval(se, x1, example1, M)
    assert sol.y[0][-1] == pytest.approx(V1, rel=1e-7)
    assert sol.y[1][-1] == pytest.approx(Vp1, rel=1e-7)


def test_detect_switch_standalone(example1):
    # march the starting regime without events and locate the first crossing
    se = series_coefficients(example1, M, example1.a)
    x_eps = handoff_point(se, example1, M)
    V0, Vp0, Vpp0, J0 = series_eval(se, x_eps, example1, M)
    rc = regime_constants(example1, example1.a)

    def rhs(x, y):
        V, Vp, D = y
        vpp = 2.0 * (example1.lam * D - (example1.c + rc.mu_bar * x) * Vp) / (
            rc.sigma_bar**2 * x**2)
        return [Vp, vpp, Vp - D / M]

    sol = solve_ivp(rhs, (x_eps, 0.05), [V0, Vp0, V0 - J0], rtol=1e-12, atol=1e-14,
                    dense_output=True)
    ev = detect_switch(sol.sol, x_eps, 0.05, "A", example1)
    assert ev is not None
    assert ev.kind == "indicator-extreme-bound"
    assert ev.x == pytest.approx(X1_FIX, rel=1e-5)


def test_hjb_residual_spot_check(example1, curve1):
    # supremum property at a sample of nodes and fractions
    thetas = np.linspace(-example1.b, example1.a, 64)
    sel = np.linspace(1, len(curve1.x) - 2, 60).astype(int)
    for i in sel:
        x = curve1.x[i]
        if x <= 0 or curve1.Vp[i] < 1e-12:
            continue
        MV = example1.lam * (curve1.V[i] - curve1.J[i])
        gen = (0.5 * example1.sigma**2 * x**2 * thetas**2 * curve1.Vpp[i]
               + (example1.c + example1.r * x + example1.excess * thetas * x) * curve1.Vp[i]
               - MV)
        tol = 1e-6 * example1.lam * curve1.V[i]
        assert np.max(gen) <= tol
        g_star = (0.5 * example1.sigma**2 * x**2 * curve1.theta_star[i]**2 * curve1.Vpp[i]
                  + (example1.c + example1.r * x + example1.excess * curve1.theta_star[i] * x)
                  * curve1.Vp[i] - MV)
        assert abs(g_star) <= tol


# ---------------------------------------------------------------------------
# tail extrapolation
# ---------------------------------------------------------------------------

def test_extrapolate_tail_power_law(example1):
    # exact V' = 3 x^{-2} with q = 2 forced via a custom regime constant:
    # use parameters whose maximal-long regime gives q = 2 mu_bar/sigma_bar^2 = 2
    p = ModelParams(c=0.02, lam=0.09, mu=0.02, r=0.015, sigma=np.sqrt(0.02), a=1.0, b=20.0)
    q = 2.0 * regime_constants(p, 1.0).mu_bar / regime_constants(p, 1.0).sigma_bar**2
    assert q == pytest.approx(2.0)
    x = np.geomspace(1.0, 100.0, 400)
    Vp = 3.0 * x**-2.0
    V_inf, tail = extrapolate_tail(x, Vp, V_end=10.0, terminal_regime="A", params=p)
    assert tail["mode"] == "power-law"
    assert tail["d"] == pytest.approx(3.0, rel=1e-10)
    assert V_inf == pytest.approx(10.0 + 3.0 / 100.0, rel=1e-10)


def test_extrapolate_tail_warns_when_exponent_small():
    p = ModelParams(c=0.02, lam=0.09, mu=0.02, r=0.015, sigma=0.3, a=1.0, b=20.0)
    # q = 2*0.02/0.09 < 1
    x = np.geomspace(1.0, 100.0, 50)
    V_inf, tail = extrapolate_tail(x, 3.0 * x**-2.0, V_end=10.0, terminal_regime="A", params=p)
    assert tail["mode"] == "q-below-one"
    assert V_inf == 10.0


def test_tail_converged_mode(curve1):
    # Example 1 completes with the derivative at the noise floor: no tail fit
    assert curve1.meta["tail"]["mode"] == "converged"


def test_v_inf_stable_under_x_max_doubling(example1, curve1):
    cur2 = solve(example1, M, SolveOptions(x_max=2 * 200.0 * example1.c / example1.lam))
    assert cur2.V_inf == pytest.approx(curve1.V_inf, rel=1e-6)


# ---------------------------------------------------------------------------
# third-order cross-check
# ---------------------------------------------------------------------------

def test_third_order_check_all_constant_segments(example1, curve1):
    for seg in curve1.segments:
        if seg.regime in ("A", "B"):
            assert third_order_check(curve1, seg, example1, M) <= 1e-6


def test_zero_limit_conditions(example1):
    # lambda V(0) = c V'(0) exactly under the normalisation, and
    # c V''(0+) + (mu_bar - lambda + c/m) V'(0+) = 0
    lam, c = example1.lam, example1.c
    assert lam * 1.0 - c * (lam / c) == 0.0
    rc = regime_constants(example1, example1.a)
    vpp0 = 11.25
    val = c * vpp0 + (rc.mu_bar - lam + c / M) * (lam / c)
    assert val == pytest.approx(0.0, abs=1e-12)


def test_third_order_check_rejects_interior_segment(example1, curve1):
    with pytest.raises(ValueError):
        third_order_check(curve1, curve1.segments[-1], example1, M)


# ---------------------------------------------------------------------------
# degenerate and invalid configurations
# ---------------------------------------------------------------------------

def test_solver_refuses_zero_interest():
    p = ModelParams(c=0.2, lam=0.09, mu=0.0, r=0.0, sigma=0.1, a=1.0, b=1.0)
    with pytest.raises(ValueError):
        solve(p, M)


def test_equal_rates_runs_without_interior():
    p = ModelParams(c=0.02, lam=0.09, mu=0.015, r=0.015, sigma=0.1, a=1.0, b=20.0)
    cur = solve(p, M)
    assert "INT" not in {s.regime for s in cur.segments}
    assert set(np.unique(cur.theta_star)) <= {0.0, p.a, -p.b}
    assert np.all(np.diff(cur.V) >= 0)
    assert cur.V_inf >= cur.V[-1]


def test_policy_schedule_from_curve(curve1, example1):
    from ruinvest.curve import PolicySchedule
    sched = PolicySchedule.from_curve(curve1, example1)
    assert [s.regime for s in sched.segments] == ["A", "B", "A", "INT"]
    assert sched.thresholds["extreme_bound"] == pytest.approx(40.0 / 19.0)
    assert sched.thresholds["convex_split"] == pytest.approx(-9.5)


def test_csv_roundtrip(tmp_path, curve1):
    path = tmp_path / "curve.csv"
    curve1.to_csv(path, manifest_hash="deadbeef")
    back = SolutionCurve.from_csv(path)
    assert np.array_equal(back.theta_star, curve1.theta_star)
    assert np.array_equal(back.x, curve1.x)
    assert np.array_equal(back.regime, curve1.regime)
