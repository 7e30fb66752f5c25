import numpy as np
import pytest

from ruinvest.exp_solver import SolverAbort, solve
from ruinvest.general_solver import (GridFunction, TOperatorContext, general_solve,
                                     integrate_w, solve_constant_regime_near_zero,
                                     t_operator)
from ruinvest.model import ExponentialClaims, ModelParams
from ruinvest.series import handoff_point, series_coefficients, series_eval

M = 1.0


@pytest.fixture(scope="module")
def table1(example1, exp_law):
    return solve_constant_regime_near_zero(example1, exp_law, example1.a)


@pytest.fixture(scope="module")
def ctx1(example1, exp_law, table1):
    return TOperatorContext(params=example1, law=exp_law, table=table1,
                            exclusion=1e-6 * min(example1.a, example1.b))


# ---------------------------------------------------------------------------
# near-zero constant-regime solve
# ---------------------------------------------------------------------------

def test_near_zero_initial_data(table1, example1):
    assert table1.V[0] == 1.0
    assert table1.Vp[0] == example1.lam / example1.c
    assert table1.Vpp[0] == pytest.approx(11.25, abs=1e-8)


def test_near_zero_matches_exponential_series(table1, example1):
    se = series_coefficients(example1, M, example1.a)
    for i in range(1, len(table1.x), 16):
        V, Vp, Vpp, _ = series_eval(se, table1.x[i], example1, M)
        assert table1.V[i] == pytest.approx(V, rel=1e-6)
        assert table1.Vp[i] == pytest.approx(Vp, rel=1e-6)
        assert table1.Vpp[i] == pytest.approx(Vpp, rel=1e-6, abs=1e-6)


def test_near_zero_second_derivative_formula(example3, exp_law):
    # mirrored starting regime: V''(0+) from the stated boundary expression
    tab = solve_constant_regime_near_zero(example3, exp_law, -example3.b)
    lam, c = example3.lam, example3.c
    mu_bar = -example3.b * example3.mu + (1 + example3.b) * example3.r
    want = (lam / c) * (lam / c - 1.0 / M - mu_bar / c)
    assert tab.Vpp[0] == pytest.approx(want, abs=1e-8)
    assert want == pytest.approx(-10.125)


def test_near_zero_mixture_runs(example1, mixture_law):
    tab = solve_constant_regime_near_zero(example1, mixture_law, example1.a)
    assert np.all(tab.Vp > 0)
    assert tab.V[0] == 1.0
    f0 = mixture_law.density_at_zero
    want = (example1.lam / example1.c) * (example1.lam / example1.c - f0
                                          - (example1.r + example1.excess) / example1.c)
    assert tab.Vpp[0] == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------------------
# the continuation operator
# ---------------------------------------------------------------------------

def test_t_operator_matches_exp_solver_at_handoff(ctx1, example1, curve1):
    # Tw(eps) is the curvature; compare with the exponential path's V''(eps)
    eps = ctx1.epsilon
    w = GridFunction(np.array([eps, eps * 2]), np.array([ctx1.table.Vp[-1]] * 2))
    got = t_operator(ctx1, w, eps)
    want = float(np.interp(eps, curve1.x, curve1.Vpp))
    assert got == pytest.approx(want, rel=1e-6)


def test_t_operator_positive_homogeneity(ctx1, example1, exp_law, table1):
    # scaling w and the near-zero table jointly by k scales Tw by k
    eps = ctx1.epsilon
    xs = np.linspace(eps, 0.02, 50)
    w_vals = np.full_like(xs, table1.Vp[-1])
    w = GridFunction(xs, w_vals)
    base = t_operator(ctx1, w, 0.015)
    k = 3.5
    import dataclasses
    tab_scaled = dataclasses.replace(table1, V=k * table1.V, Vp=k * table1.Vp,
                                     Vpp=k * table1.Vpp, M=k * table1.M)
    ctx_scaled = TOperatorContext(params=example1, law=exp_law, table=tab_scaled,
                                  exclusion=ctx1.exclusion)
    scaled = t_operator(ctx_scaled, GridFunction(xs, k * w_vals), 0.015)
    assert scaled == pytest.approx(k * base, rel=1e-10)


def test_t_operator_mu_equal_r_max_volatility(exp_law):
    # theta-free numerator: with a positive numerator the infimum sits at the
    # largest-|theta| endpoint
    p = ModelParams(c=0.02, lam=0.09, mu=0.015, r=0.015, sigma=0.1, a=1.0, b=20.0)
    tab = solve_constant_regime_near_zero(p, exp_law, -p.b)
    ctx = TOperatorContext(params=p, law=exp_law, table=tab, exclusion=1e-6)
    eps = ctx.epsilon
    xs = np.linspace(eps, 0.01, 30)
    w = GridFunction(xs, np.full_like(xs, tab.Vp[-1]))
    x = 0.008
    got = t_operator(ctx, w, x)
    # reconstruct the numerator at the same point to predict the endpoint value
    n = 200
    ys = np.linspace(eps, x, n)
    ws = w(ys)
    W = tab.V[-1] + np.concatenate([[0.0], np.cumsum(0.5 * np.diff(ys) * (ws[1:] + ws[:-1]))])
    piece1 = np.trapezoid(tab.V * exp_law.pdf(x - tab.x), tab.x)
    piece2 = np.trapezoid(W * exp_law.pdf(x - ys), ys)
    I = p.lam * (W[-1] - piece1 - piece2) - (p.c + p.r * x) * float(w(x))
    assert I > 0
    # this reconstruction uses its own quadrature grid, so compare loosely;
    # selecting any other candidate would be off by orders of magnitude
    want = 2.0 * I / (p.sigma**2 * p.b**2 * x**2)
    assert got == pytest.approx(want, rel=1e-3)


def test_integrate_w_initial_condition(ctx1):
    march = integrate_w(ctx1, x_max=0.05)
    assert march.x[0] == ctx1.epsilon
    assert march.w[0] == ctx1.table.Vp[-1]  # w(eps) = V_gamma'(eps) exactly
    assert np.all(march.w > 0)


def test_integrate_w_march_consistent_with_t_operator(ctx1):
    # the marched w' equals the reference quadrature T on the marched w
    march = integrate_w(ctx1, x_max=0.4)
    w = march.grid_function()
    for x in (0.05, 0.15, 0.3):
        k = int(np.argmin(np.abs(march.x - x)))
        ref = t_operator(ctx1, w, float(march.x[k]))
        assert march.T[k] == pytest.approx(ref, rel=2e-4, abs=1e-8)


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def test_exponential_equivalence_example1(example1, exp_law, curve1):
    gen = general_solve(example1, exp_law, x_max=22.0)
    xs = np.linspace(0.0, 20.0, 300)
    rel = np.abs(gen.value(xs) - curve1.value(xs)) / np.abs(curve1.value(xs))
    assert rel.max() <= 1e-5
    assert [s.regime for s in gen.segments][:4] == ["A", "B", "A", "INT"]


def test_assemble_smoothness_at_epsilon(example1, exp_law):
    gen = general_solve(example1, exp_law, x_max=2.0)
    eps = gen.meta["epsilon"]
    i = int(np.searchsorted(gen.x, eps))
    # one-sided estimates of V'' across the handoff
    dl = (gen.Vp[i] - gen.Vp[i - 1]) / (gen.x[i] - gen.x[i - 1])
    dr = (gen.Vp[i + 1] - gen.Vp[i]) / (gen.x[i + 1] - gen.x[i])
    assert dl == pytest.approx(dr, rel=1e-3)
    assert gen.Vpp[i] == pytest.approx(0.5 * (dl + dr), rel=1e-3)


def test_mixture_full_solve(example1, mixture_law):
    cur = general_solve(example1, mixture_law, x_max=25.0)
    assert np.all(np.diff(cur.V) >= 0)
    assert np.all(cur.Vp > 0)
    assert cur.V[-1] <= cur.V_inf < np.inf
    assert cur.theta_star.min() >= -example1.b - 1e-12
    assert cur.theta_star.max() <= example1.a + 1e-12


def test_mixture_hjb_residual(example1, mixture_law):
    # the variational inequality holds pointwise with M = lambda(V - J)
    cur = general_solve(example1, mixture_law, x_max=12.0)
    thetas = np.linspace(-example1.b, example1.a, 64)
    sel = np.linspace(10, len(cur.x) - 2, 40).astype(int)
    for i in sel:
        x = cur.x[i]
        if x < cur.meta["epsilon"] * 2:
            continue
        MV = example1.lam * (cur.V[i] - cur.J[i])
        gen = (0.5 * example1.sigma**2 * x**2 * thetas**2 * cur.Vpp[i]
               + (example1.c + example1.r * x + example1.excess * thetas * x) * cur.Vp[i]
               - MV)
        assert np.max(gen) <= 2e-5 * example1.lam * cur.V[i]


def test_lipschitz_bound_empirical(ctx1, example1):
    # sup |Tv - Tw| <= C sup |v - w| on a fixed window, C stable under
    # grid refinement of the probe
    eps = ctx1.epsilon
    for n in (60, 120):
        xs = np.linspace(eps, 0.018, n)
        base = np.full_like(xs, ctx1.table.Vp[-1])
        w1 = GridFunction(xs, base)
        delta = 1e-4 * np.sin(np.linspace(0.0, 3.0, n))
        w2 = GridFunction(xs, base + delta)
        diffs = [abs(t_operator(ctx1, w2, float(x)) - t_operator(ctx1, w1, float(x)))
                 for x in xs[2::7]]
        C = max(diffs) / np.max(np.abs(delta))
        assert np.isfinite(C)
        assert C < 1e4


def test_general_solve_rejects_equal_rates(exp_law):
    p = ModelParams(c=0.02, lam=0.09, mu=0.015, r=0.015, sigma=0.1, a=1.0, b=20.0)
    with pytest.raises(SolverAbort):
        general_solve(p, exp_law, x_max=1.0)


def test_grid_function_validation():
    with pytest.raises(ValueError):
        GridFunction(np.array([0.0, 0.0, 1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        GridFunction(np.array([0.0, 1.0]), np.array([1.0, np.nan]))
