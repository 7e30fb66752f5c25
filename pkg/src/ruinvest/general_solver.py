"""General-claim-density solver: first-order continuation w' = T w.

For an arbitrary continuous claim density f the HJB solution is built as
W(x) = V_gamma(eps) + int_eps^x w, where V_gamma solves the starting
constant-regime equation on (0, eps] and w satisfies w'(x) = Tw(x) with

    Tw(x) = 2 inf_{theta in U, |theta| > A}
              { M_gamma(W)(x) - [c + r x + theta x (mu - r)] w(x) }
              / (theta^2 sigma^2 x^2),

    M_gamma(W)(x) = lambda ( W(x) - int_0^eps V_gamma(y) f(x-y) dy
                                   - int_eps^x W(y) f(x-y) dy ).

In 1/theta the braced expression is quadratic, so the infimum is attained at
one of finitely many candidates (the endpoints a, -b, the cutoff +-A, or the
stationary fraction) and needs no numerical minimisation; the infimum's
argument tracks the optimal policy automatically, so no event detection is
required on this path.

The march keeps the jump deficit G(x) = W(x) - int_0^x Vbar(x-s) f(s) ds
(so M = lambda G) as a third state with G' = w - f(x) - int_0^x vbar f(x-.),
which avoids differencing two O(V_inf) quantities at the far tail.  Stepping
is a fixed-step 4th-order Adams-Bashforth-Moulton predictor-corrector on a
uniform grid (right-hand sides live only on grid nodes, where the Volterra
history is exact), bootstrapped by three Runge-Kutta steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .curve import (REGIME_INTERIOR, REGIME_LONG, REGIME_SHORT, RegimeSegment,
                    SolutionCurve)
from .exp_solver import SolverAbort, extrapolate_tail
from .model import ClaimLaw, ModelParams, regime_constants, require_valid

__all__ = [
    "GridFunction",
    "NearZeroTable",
    "TOperatorContext",
    "solve_constant_regime_near_zero",
    "t_operator",
    "integrate_w",
    "assemble_solution",
    "general_solve",
]


@dataclass
class GridFunction:
    """Tabulated function with strictly increasing abscissas (pchip between)."""

    x: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("abscissas must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        self._interp = PchipInterpolator(self.x, self.values, extrapolate=False)

    def __call__(self, xq):
        return self._interp(xq)


@dataclass
class NearZeroTable:
    """Constant-regime solution V_gamma tabulated on [0, eps]."""

    gamma: float
    x: np.ndarray
    V: np.ndarray
    Vp: np.ndarray
    Vpp: np.ndarray
    M: np.ndarray  # jump operator along the table


def solve_constant_regime_near_zero(params: ModelParams, law: ClaimLaw, gamma: float,
                                    epsilon: float = 1e-3, n_nodes: int = 257,
                                    max_retries: int = 8) -> NearZeroTable:
    """Solve L(gamma) V = 0 on [0, eps] as a Volterra integro-differential march.

    Initial data V(0) = 1, V'(0+) = lambda/c and

        V''(0+) = (lambda/c) (lambda/c - f(0+) - (r + gamma (mu-r))/c).

    Near the singular point the equation is stiff (its decaying mode relaxes
    on the scale sigma_bar^2 x^2 / c, far below any reasonable step), so the
    step is trapezoidal semi-implicit: with V'' eliminated through the regime
    equation the update is linear in the new V', solvable in closed form.  The
    claim convolution is composite trapezoid over the already-computed table;
    its single new-node term joins the implicit solve.

    If V' loses positivity before eps the interval is halved and the solve
    retried (the constant-regime branch only exists on a small interval).
    """
    rc = regime_constants(params, gamma)
    lam, c = params.lam, params.c
    mb, sb2 = rc.mu_bar, rc.sigma_bar**2
    f0 = law.density_at_zero
    vpp0 = (lam / c) * (lam / c - f0 - mb / c)

    for _ in range(max_retries + 1):
        h = epsilon / (n_nodes - 1)
        x = np.linspace(0.0, epsilon, n_nodes)
        fg = law.pdf(x)
        V = np.empty(n_nodes)
        Vp = np.empty(n_nodes)
        Vpp = np.empty(n_nodes)
        M = np.empty(n_nodes)
        V[0], Vp[0], Vpp[0], M[0] = 1.0, lam / c, vpp0, lam

        ok = True
        for k in range(n_nodes - 1):
            xk1 = x[k + 1]
            beta = 2.0 / (sb2 * xk1**2)
            d = c + mb * xk1
            # history part of conv(x_{k+1}); the s = 0 endpoint carries the
            # unknown V(x_{k+1}) with trapezoid weight h/2
            hist = V[k:: -1] * fg[1: k + 2]
            R = h * (np.sum(hist) - 0.5 * hist[-1])
            coefV = lam * (1.0 - 0.5 * h * fg[0])  # M+ = coefV * V+ - lam * R
            # trapezoidal step, V''+ eliminated via the regime equation
            denom = 1.0 + 0.5 * h * beta * d - 0.25 * h * h * beta * coefV
            rhs = (Vp[k] + 0.5 * h * Vpp[k]
                   + 0.5 * h * beta * (coefV * (V[k] + 0.5 * h * Vp[k]) - lam * R))
            Vp[k + 1] = rhs / denom
            V[k + 1] = V[k] + 0.5 * h * (Vp[k] + Vp[k + 1])
            M[k + 1] = coefV * V[k + 1] - lam * R
            Vpp[k + 1] = beta * (M[k + 1] - d * Vp[k + 1])
            if Vp[k + 1] <= 0:
                ok = False
                break
        if ok:
            # the quotient form of V'' divides an O(x^2)-cancelling numerator
            # by sigma_bar^2 x^2 and is hopeless near zero; the reported column
            # differentiates the (accurate, smooth-error) marched V' instead
            Vpp = np.gradient(Vp, x, edge_order=2)
            Vpp[0] = vpp0
            return NearZeroTable(gamma=gamma, x=x, V=V, Vp=Vp, Vpp=Vpp, M=M)
        epsilon *= 0.5
    raise SolverAbort(f"near-zero constant-regime solve lost V' > 0 even at eps={epsilon}")


@dataclass
class TOperatorContext:
    """Everything T needs besides w itself."""

    params: ModelParams
    law: ClaimLaw
    table: NearZeroTable          # V_gamma on [0, eps]
    exclusion: float              # vertex-exclusion cutoff A (constant schedule)

    @property
    def epsilon(self) -> float:
        return float(self.table.x[-1])


def _infimum(ctx: TOperatorContext, x: float, w: float, M: float):
    """(T value, argmin theta) of the closed-form infimum at one point."""
    p = ctx.params
    I = M - (p.c + p.r * x) * w
    ex = (p.mu - p.r) * x * w
    scale = 2.0 / (p.sigma**2 * x**2)

    def g(theta):
        return scale * (I - theta * ex) / theta**2

    A = ctx.exclusion
    cands = [p.a, -p.b, A, -A]
    if I > 0 and ex != 0.0:
        phi = 2.0 * I / ex
        if A <= abs(phi) and -p.b <= phi <= p.a:
            cands.append(phi)
    vals = [g(t) for t in cands]
    i = int(np.argmin(vals))
    return vals[i], cands[i]


def t_operator(ctx: TOperatorContext, w: GridFunction, x: float) -> float:
    """Reference evaluation of Tw(x) by direct quadrature of the split convolution.

    W is recovered by integrating w from eps; both convolution pieces are
    composite trapezoid on fine resamplings.  This is the specification-facing
    route; the march in `integrate_w` tracks the same quantities through the
    deficit state and agrees to quadrature tolerance.
    """
    p, law, tab = ctx.params, ctx.law, ctx.table
    eps = ctx.epsilon
    if x < eps:
        raise ValueError("t_operator domain starts at eps")
    # W(x) = V_gamma(eps) + int_eps^x w
    n = max(33, int((x - eps) / 2e-4) + 1)
    xs = np.linspace(eps, x, n)
    ws = w(xs)
    W_at = tab.V[-1] + np.concatenate([[0.0], np.cumsum(0.5 * np.diff(xs) * (ws[1:] + ws[:-1]))])
    piece1 = np.trapezoid(tab.V * law.pdf(x - tab.x), tab.x)
    piece2 = np.trapezoid(W_at * law.pdf(x - xs), xs)
    M = p.lam * (W_at[-1] - piece1 - piece2)
    val, _ = _infimum(ctx, x, float(w(x)), M)
    return val


@dataclass
class WMarch:
    """Accepted-grid history of the continuation march."""

    x: np.ndarray
    w: np.ndarray
    W: np.ndarray
    G: np.ndarray           # jump deficit, M = lambda G
    T: np.ndarray           # w' = Tw at nodes
    theta: np.ndarray       # argmin fraction of the infimum
    completion: str

    def grid_function(self) -> GridFunction:
        return GridFunction(self.x, self.w)


def integrate_w(ctx: TOperatorContext, x_max: float, step: float = 0.0005) -> WMarch:
    """March w' = Tw from eps on a uniform grid by semi-implicit trapezoid.

    Constant-fraction branches of T are stiff near zero (their w-coefficient
    is -2(c + mu_bar x)/(sigma_bar^2 x^2)), so each step freezes theta at the
    current node's argmin and takes a trapezoidal step of the resulting
    linear-in-w right-hand side; by the envelope property of the infimum the
    frozen-theta step retains second order even on the interior branch.  The
    jump deficit G and the antiderivative W join the same linear step, so one
    history convolution per step is the only nonlocal work.

    Aborts if w loses positivity at a node with non-negligible magnitude;
    stops with completion='derivative-floor' once w underflows the scale of
    meaningful tail mass.
    """
    p, law, tab = ctx.params, ctx.law, ctx.table
    lam = p.lam
    eps = ctx.epsilon
    n = int(math.ceil((x_max - eps) / step))
    h = (x_max - eps) / n
    xg = eps + h * np.arange(n + 1)

    fg = law.pdf(h * np.arange(n + 1))          # f on the uniform offsets
    fx = law.pdf(xg)                            # f at the nodes themselves
    f0 = law.density_at_zero
    fp0 = float(law.pdf_derivative(0.0))
    fp_at = law.pdf_derivative

    w = np.empty(n + 1)
    W = np.empty(n + 1)
    G = np.empty(n + 1)
    T = np.empty(n + 1)
    dG = np.empty(n + 1)
    theta = np.empty(n + 1)

    w[0] = tab.Vp[-1]
    W[0] = tab.V[-1]
    G[0] = tab.M[-1] / lam

    def hist_conv(k1):
        """History part of int_0^{x_{k1}} vbar(u) f(x_{k1}-u) du.

        Everything except the u = x_{k1} trapezoid term, whose coefficient
        (h/2) f(0) multiplies the still-unknown w at the new node.  The
        Euler-Maclaurin end correction (with w' lagged one node on the right)
        lifts the uniform-grid trapezoid to ~4th order.
        """
        x = xg[k1]
        piece1 = np.trapezoid(tab.Vp * law.pdf(x - tab.x), tab.x)
        vals = w[:k1] * fg[k1:0:-1]
        piece2 = h * (np.sum(vals) - 0.5 * vals[0])
        gp_lo = T[0] * fg[k1] - w[0] * float(fp_at(x - eps))
        gp_hi = T[k1 - 1] * f0 - w[k1 - 1] * fp0
        piece2 -= h * h / 12.0 * (gp_hi - gp_lo)
        return piece1 + piece2

    T[0], theta[0] = _infimum(ctx, xg[0], w[0], lam * G[0])
    dG[0] = w[0] - fx[0] - (np.trapezoid(tab.Vp * law.pdf(xg[0] - tab.x), tab.x))

    completion = "reached-x-max"
    w_max = w[0]
    w_floor = 1e-12
    last = 0
    for k in range(n):
        x1 = xg[k + 1]
        th = theta[k]
        beta1 = 2.0 / (p.sigma**2 * th**2 * x1**2)
        d1 = p.c + p.r * x1 + (p.mu - p.r) * th * x1
        Hh = hist_conv(k + 1)
        # trapezoid step of the frozen-theta linear system:
        #   w+ = w + h/2 (T_k + beta1 (lam G+ - d1 w+))
        #   G+ = G + h/2 (dG_k + w+ (1 - h f0 / 2) - f(x1) - Hh)
        cG = 1.0 - 0.5 * h * f0
        denom = 1.0 + 0.5 * h * beta1 * d1 - 0.25 * h * h * beta1 * lam * cG
        rhs = (w[k] + 0.5 * h * T[k]
               + 0.5 * h * beta1 * lam * (G[k] + 0.5 * h * (dG[k] - fx[k + 1] - Hh)))
        w[k + 1] = rhs / denom
        dG[k + 1] = w[k + 1] * cG - fx[k + 1] - Hh
        G[k + 1] = G[k] + 0.5 * h * (dG[k] + dG[k + 1])
        W[k + 1] = W[k] + 0.5 * h * (w[k] + w[k + 1])
        T[k + 1], theta[k + 1] = _infimum(ctx, x1, w[k + 1], lam * G[k + 1])

        last = k + 1
        w_max = max(w_max, w[k + 1])
        floor = max(w_floor, 1e-10 * w_max)
        if w[k + 1] <= floor:
            if w[k + 1] < -1e-6 * w_max:
                raise SolverAbort(
                    f"continuation lost w > 0 at x={x1:.6g} (w={w[k + 1]:.3g})")
            completion = "derivative-floor"
            break
        I_next = lam * G[k + 1] - (p.c + p.r * x1) * w[k + 1]
        if I_next <= 0:
            if w[k + 1] <= 1e-6 * w_max:
                completion = "deficit-zero"
                break
            raise SolverAbort(
                f"jump-drift deficit lost positivity at x={x1:.6g} with "
                f"w={w[k + 1]:.3g}; structural failure, not tail underflow")

    if completion == "deficit-zero":
        last -= 1  # the break node's curvature is cancellation noise
    sl = slice(0, last + 1)
    return WMarch(x=xg[sl], w=w[sl], W=W[sl], G=G[sl], T=T[sl], theta=theta[sl],
                  completion=completion)


def assemble_solution(ctx: TOperatorContext, march: WMarch) -> SolutionCurve:
    """Concatenate the near-zero table with the continuation into a curve."""
    p, tab = ctx.params, ctx.table
    lam = p.lam

    # near-zero block (drop the duplicated eps node)
    x0, V0, Vp0, Vpp0, M0 = tab.x[:-1], tab.V[:-1], tab.Vp[:-1], tab.Vpp[:-1], tab.M[:-1]
    x1, V1, Vp1, Vpp1 = march.x, march.W, march.w, march.T
    M1 = lam * march.G

    x = np.concatenate([x0, x1])
    V = np.concatenate([V0, V1])
    Vp = np.concatenate([Vp0, Vp1])
    Vpp = np.concatenate([Vpp0, Vpp1])
    M = np.concatenate([M0, M1])
    J = V - M / lam

    with np.errstate(divide="ignore", invalid="ignore"):
        I = M - (p.c + p.r * x) * Vp
        if p.mu != p.r:
            phi = 2.0 * I / ((p.mu - p.r) * x * Vp)
            phi[0] = 2.0 * tab.gamma
        else:
            phi = np.full_like(x, np.nan)

    theta0 = np.full(x0.shape, tab.gamma)
    theta = np.concatenate([theta0, march.theta])
    tol = 1e-9 * (abs(p.a) + abs(p.b))

    def tag(th):
        if abs(th - p.a) <= tol:
            return REGIME_LONG
        if abs(th + p.b) <= tol:
            return REGIME_SHORT
        return REGIME_INTERIOR

    regime = np.array([tag(t) for t in theta], dtype=object)
    segments = []
    lo = 0.0
    for i in range(1, len(x)):
        if regime[i] != regime[i - 1]:
            segments.append(RegimeSegment(lo, x[i], str(regime[i - 1]), "switch"))
            lo = x[i]
    segments.append(RegimeSegment(lo, x[-1], str(regime[-1]), march.completion))

    V_inf, tail = extrapolate_tail(x, Vp, float(V[-1]), str(regime[-1]), p,
                                   completion=march.completion)
    meta = {"epsilon": ctx.epsilon, "scheme": "abm4-uniform", "tail": tail,
            "completion": march.completion}
    return SolutionCurve(x=x, V=V, Vp=Vp, Vpp=Vpp, J=J, phi=phi, theta_star=theta,
                         regime=regime, segments=segments, V_inf=V_inf, params=p,
                         meta=meta)


def general_solve(params: ModelParams, law: ClaimLaw, x_max: Optional[float] = None,
                  epsilon: float = 1e-3, step: float = 0.0005) -> SolutionCurve:
    """Full general-claims pipeline: near-zero solve, continuation, assembly."""
    require_valid(params, law)
    if params.mu == params.r:
        raise SolverAbort("the continuation path requires mu != r; "
                          "use the exponential-claims solver for mu = r")
    x_max = x_max if x_max is not None else 200.0 * params.c / params.lam
    gamma0 = params.a if params.mu > params.r else -params.b
    table = solve_constant_regime_near_zero(params, law, gamma0, epsilon=epsilon)
    ctx = TOperatorContext(params=params, law=law, table=table,
                           exclusion=1e-6 * min(params.a, params.b))
    march = integrate_w(ctx, x_max, step=step)
    return assemble_solution(ctx, march)
