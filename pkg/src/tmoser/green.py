"""Radial Green function of -div(|grad G|^{n-2} grad G) + G^{n-1} = delta_0.

Integrated in s = log r as the first-order system

    dG/ds = -(m / omega)^{1/(n-1)},   dm/ds = -omega r^n G^{n-1},

where m(r) = 1 - int_{B_r} G^{n-1} dx is the flux through the sphere of radius
r.  G = -(n/alpha_n) log r + A + O(r^n log^n r) near the origin.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from tmoser.constants import DimensionContext
from tmoser.grid import DECAYING, RadialFunction, RadialGrid

log = logging.getLogger(__name__)


class ShootingError(RuntimeError):
    def __init__(self, message: str, trace: list[tuple[float, str]]):
        super().__init__(message)
        self.trace = trace


def _root(x: float, n: int) -> float:
    # signed (n-1)-th root
    return math.copysign(abs(x) ** (1.0 / (n - 1)), x)


def _rhs_factory(ctx: DimensionContext):
    n, omega = ctx.n, ctx.omega

    def rhs(s, y):
        G, m = y
        dG = -_root(m / omega, n)
        dm = -omega * math.exp(n * s) * math.copysign(abs(G) ** (n - 1), G)
        return [dG, dm]

    return rhs


def singular_part(ctx: DimensionContext, r):
    """-(n/alpha_n) log r."""
    return -(ctx.n / ctx.alpha_n) * np.log(r)


def core_mass(ctx: DimensionContext, r_inner: float, A: float) -> float:
    """int_{B_{r_inner}} G^{n-1} dx using the leading asymptotics of G."""

    def integrand(s):
        G = -(ctx.n / ctx.alpha_n) * s + A
        return ctx.omega * math.exp(ctx.n * s) * max(G, 0.0) ** (ctx.n - 1)

    # substitute r = e^s; the integrand decays like e^{ns} toward s = -inf
    s_in = math.log(r_inner)
    val, _ = integrate.quad(integrand, s_in - 60.0 / ctx.n, s_in, epsabs=0.0, epsrel=1e-12)
    return val


@dataclass
class GreenSolution:
    ctx: DimensionContext
    profile: RadialFunction
    A: float
    r_inner: float
    R_max: float
    tol: float
    mass_deficit: np.ndarray
    flux_residual: np.ndarray
    core: float
    dense: object = field(repr=False, default=None)
    iterations: int = 0

    @property
    def flux_residual_max(self) -> float:
        return float(np.max(self.flux_residual))

    @property
    def s_nodes(self) -> np.ndarray:
        return np.log(self.profile.r)

    def _state(self, r):
        r = np.asarray(r, dtype=float)
        s = np.log(np.clip(r, self.r_inner, self.R_max))
        G, m = self.dense(s)
        return G, m

    def __call__(self, r):
        """G(r); leading asymptotics inside r_inner, zero beyond R_max."""
        r = np.asarray(r, dtype=float)
        G, _ = self._state(r)
        G = np.where(r < self.r_inner, singular_part(self.ctx, np.maximum(r, 1e-300)) + self.A, G)
        G = np.where(r > self.R_max, 0.0, np.maximum(G, 0.0))
        return float(G) if G.ndim == 0 else G

    def deficit(self, r):
        """1 - int_{B_r} G^{n-1} dx."""
        r = np.asarray(r, dtype=float)
        _, m = self._state(r)
        m = np.where(r < self.r_inner, 1.0, m)
        return float(m) if m.ndim == 0 else m

    def derivative(self, r):
        """G'(r) from the flux identity."""
        m = np.maximum(self.deficit(r), 0.0)
        r = np.asarray(r, dtype=float)
        return -(m / (self.ctx.omega * r ** (self.ctx.n - 1))) ** (1.0 / (self.ctx.n - 1))

    def to_files(self, path) -> None:
        path = Path(path)
        self.profile.to_csv(path)
        meta = {
            "n": self.ctx.n,
            "A": self.A,
            "r_inner": self.r_inner,
            "R_max": self.R_max,
            "tol": self.tol,
            "flux_residual_max": self.flux_residual_max,
        }
        path.with_name(path.stem + "_green.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _shoot(ctx, A, s0, s1, m0, rtol, dense=False, terminal=True):
    rhs = _rhs_factory(ctx)
    G0 = -(ctx.n / ctx.alpha_n) * s0 + A

    def hits_zero(s, y):
        return y[0]

    hits_zero.terminal = terminal
    hits_zero.direction = -1

    def flux_reverses(s, y):
        return y[1]

    flux_reverses.terminal = terminal
    flux_reverses.direction = -1

    return integrate.solve_ivp(
        rhs,
        (s0, s1),
        [G0, m0],
        method="DOP853",
        rtol=rtol,
        atol=1e-300,
        events=(hits_zero, flux_reverses),
        dense_output=dense,
    )


def shoot_outer_value(ctx: DimensionContext, A: float, r_inner: float, R_max: float) -> float:
    """Single outward shot: G(R_max) if G stays positive, else minus the unused log-radius.

    Increasing in A; the decaying solution sits where this crosses zero.
    """
    s0, s1 = math.log(r_inner), math.log(R_max)
    sol = _shoot(ctx, A, s0, s1, 1.0 - core_mass(ctx, r_inner, A), 1e-12)
    if sol.t_events[0].size:
        return -(s1 - float(sol.t_events[0][0]))
    if sol.t_events[1].size:
        # flux reversed: G turns upward and stays positive
        return float(sol.y[0, -1]) + (s1 - float(sol.t_events[1][0]))
    return float(sol.y[0, -1])


def decay_rate(n: int) -> float:
    """k with e^{-k r} solving the far-field equation (|G'|^{n-2} G')' = G^{n-1}."""
    return (n - 1) ** (-1.0 / n)


class _Piecewise:
    """Dense (G, m) in s: outward core solution below s_match, scaled far solution above."""

    def __init__(self, inner, outer, s_match, scale, n):
        self.inner, self.outer = inner, outer
        self.s_match, self.scale, self.n = s_match, scale, n

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s)
        G = np.empty_like(flat)
        m = np.empty_like(flat)
        lo = flat <= self.s_match
        if np.any(lo):
            G[lo], m[lo] = self.inner(flat[lo])
        if np.any(~lo):
            g, mm = self.outer(flat[~lo])
            G[~lo] = self.scale * g
            m[~lo] = self.scale ** (self.n - 1) * mm
        if s.ndim == 0:
            return G[0], m[0]
        return G, m


def solve_green(
    ctx: DimensionContext,
    R_max: float,
    r_inner: float,
    tol: float = 1e-8,
    *,
    r_match: float = 1.0,
    nodes: int = 4000,
    rtol: float = 1e-13,
    max_iter: int = 200,
) -> GreenSolution:
    """Solve for G on [r_inner, R_max] and its inner constant A.

    The far part is integrated inward from R_max, starting on the decaying
    exponential (inward integration damps the growing mode).  The equation is
    invariant under G -> t G, m -> t^{n-1} m, so the far part only fixes the ratio
    m / G^{n-1} at r_match.  A is the root of the mismatch of that ratio between
    the outward core shot and the far part, bracketed and then bisected; the far
    part is finally rescaled to join continuously.
    """
    if not (0 < r_inner < r_match < R_max):
        raise ValueError("need 0 < r_inner < r_match < R_max")
    if not tol > 0:
        raise ValueError("tol must be positive")
    n = ctx.n
    s0, s_m, s1 = math.log(r_inner), math.log(r_match), math.log(R_max)
    trace: list[tuple[float, str]] = []

    k = decay_rate(n)
    far_init = [1.0, ctx.omega * R_max ** (n - 1) * (k * 1.0) ** (n - 1)]
    far = integrate.solve_ivp(
        _rhs_factory(ctx), (s1, s_m), far_init, method="DOP853", rtol=rtol, atol=1e-300,
        dense_output=True,
    )
    if not far.success or far.y[0, -1] <= 0 or far.y[1, -1] <= 0:
        raise ShootingError("inward far-field integration failed", trace)
    G_far, m_far = far.y[:, -1]
    target = m_far / G_far ** (n - 1)

    def mismatch(A, dense=False):
        m0 = 1.0 - core_mass(ctx, r_inner, A)
        sol = _shoot(ctx, A, s0, s_m, m0, rtol, dense)
        if sol.t_events[0].size:
            return math.inf, sol, m0
        if sol.t_events[1].size:
            return -math.inf, sol, m0
        G, m = sol.y[:, -1]
        return m / G ** (n - 1) - target, sol, m0

    lo, hi = -1.0, 1.0
    for _ in range(60):
        val = mismatch(lo)[0]
        trace.append((lo, "low" if val > 0 else "high"))
        if val > 0:
            break
        lo -= 2.0 * abs(lo) + 1.0
    else:
        raise ShootingError("no lower shooting bracket found", trace)
    for _ in range(60):
        val = mismatch(hi)[0]
        trace.append((hi, "low" if val > 0 else "high"))
        if val < 0:
            break
        hi += 2.0 * abs(hi) + 1.0
    else:
        raise ShootingError("no upper shooting bracket found", trace)

    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = mismatch(mid)[0]
        trace.append((mid, "low" if val > 0 else "high"))
        if val > 0:
            lo = mid
        elif val < 0:
            hi = mid
        else:
            lo = hi = mid
            break
    else:
        raise ShootingError(f"bisection did not converge in {max_iter} steps", trace)

    A = 0.5 * (lo + hi)
    _, inner, m0 = mismatch(A, dense=True)
    G_in = float(inner.y[0, -1])
    scale = G_in / G_far
    dense = _Piecewise(inner.sol, far.sol, s_m, scale, n)
    log.debug("green n=%d A=%.16g after %d bisections", n, A, it)

    s = np.linspace(s0, s1, nodes)
    G, m = dense(s)
    r = np.exp(s)
    grid = RadialGrid(n, r, {"kind": "log-uniform", "r_inner": r_inner, "R_max": R_max})
    profile = RadialFunction(grid, np.maximum(G, 0.0), DECAYING)
    core = 1.0 - m0
    residual = flux_residual(ctx, s, profile.values, core)
    if G[-1] > tol:
        log.warning("G(R_max) = %.3g above tol %.3g; increase R_max", G[-1], tol)
    return GreenSolution(
        ctx=ctx,
        profile=profile,
        A=A,
        r_inner=r_inner,
        R_max=R_max,
        tol=tol,
        mass_deficit=m,
        flux_residual=residual,
        core=core,
        dense=dense,
        iterations=it,
    )


def flux_residual(ctx: DimensionContext, s: np.ndarray, G: np.ndarray, core: float) -> np.ndarray:
    """|omega r^{n-1} (-G')^{n-1} - (1 - int_{B_r} G^{n-1})| on the nodes.

    Recomputed from the sampled profile alone: G' from a cubic spline in log r,
    the mass by cumulative Simpson quadrature, independent of the integrator.
    """
    spline = CubicSpline(s, G)
    Gs = spline(s, 1)
    integrand = ctx.omega * np.exp(ctx.n * s) * np.maximum(G, 0.0) ** (ctx.n - 1)
    mass = core + integrate.cumulative_simpson(integrand, x=s, initial=0.0)
    flux = ctx.omega * np.maximum(-Gs, 0.0) ** (ctx.n - 1)
    return np.abs(flux - (1.0 - mass))


def green_constant_A(sol: GreenSolution, count: int = 40, spread_tol: float = 1e-6) -> float:
    """lim_{r->0} G(r) + (n/alpha_n) log r, fitted over the innermost nodes.

    Model a + K r^n |log r|^n (the size of the remainder); the fit is flagged
    (warning) if the fitted values differ from the raw ones by more than
    spread_tol.
    """
    ctx = sol.ctx
    r = sol.profile.r[:count]
    vals = sol.profile.values[:count] - singular_part(ctx, r)
    basis = (r * np.abs(np.log(r))) ** ctx.n
    design = np.column_stack([np.ones_like(r), basis])
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    spread = float(np.max(np.abs(design @ coef - vals)))
    if spread > spread_tol:
        log.warning("A extrapolation spread %.3g above %.3g", spread, spread_tol)
    return float(coef[0])


def green_tail_energy(sol: GreenSolution, delta: float) -> tuple[float, float]:
    """(direct, formula) for int_{|x|>delta} |grad G|^n + G^n dx = G(delta) (1 - int_{B_delta} G^{n-1}).

    The direct side is Simpson quadrature in log r over the dense solution.
    """
    if not sol.r_inner < delta < sol.R_max:
        raise ValueError("delta must lie inside (r_inner, R_max)")
    ctx = sol.ctx
    s = np.linspace(math.log(delta), math.log(sol.R_max), 20001)
    r = np.exp(s)
    G = sol(r)
    dG = sol.derivative(r)
    integrand = ctx.omega * r**ctx.n * (np.abs(dG) ** ctx.n + G**ctx.n)
    direct = float(integrate.simpson(integrand, x=s))
    formula = float(sol(delta) * sol.deficit(delta))
    return direct, formula


def total_mass(sol: GreenSolution) -> float:
    """int_{B_{R_max}} G^{n-1} dx."""
    return 1.0 - float(sol.deficit(sol.R_max))
