"""Closed-form profiles: the blow-up bubble, Moser functions and the two test-function families."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from tmoser.constants import DimensionContext
from tmoser.grid import (
    COMPACT,
    DECAYING,
    RadialFunction,
    RadialGrid,
    dirichlet_energy,
    grid_from_nodes,
    ln_norm_pow,
    log_tm_functional,
    normalize,
    sobolev_norm,
    tm_functional,
)


class UnderResolvedError(ValueError):
    """The grid cannot represent a feature of the requested profile."""


class EpsTooLargeError(ValueError):
    """The small-parameter construction is not yet in its asymptotic regime."""


# ---------------------------------------------------------------- bubble


def bubble(ctx: DimensionContext, r):
    """w(r) = -n log(1 + c_n r^{n/(n-1)})."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be >= 0")
    out = -ctx.n * np.log1p(ctx.c_n * r**ctx.q)
    return float(out) if out.ndim == 0 else out


def bubble_source_constant(ctx: DimensionContext) -> float:
    """(n alpha_n / (n-1))^{n-1}."""
    return (ctx.n * ctx.alpha_n / (ctx.n - 1)) ** (ctx.n - 1)


def bubble_mass(ctx: DimensionContext, R: float) -> float:
    """int_{B_R} e^w dx by adaptive quadrature in log r."""
    if not R > 0:
        raise ValueError("R must be positive")
    n = ctx.n

    def integrand(s):
        r = math.exp(s)
        return ctx.omega * r**n * math.exp(bubble(ctx, r))

    # e^{ns} decay below s ~ -40/n is far beyond double precision of the total
    s_lo = -40.0
    s_hi = math.log(R)
    pts = [p for p in (-5.0, -2.0, 0.0, 2.0) if s_lo < p < s_hi]
    val, _ = integrate.quad(integrand, s_lo, s_hi, points=pts or None, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def bubble_pde_residual(ctx: DimensionContext, grid: RadialGrid, relative: bool = True) -> float:
    """max |-(r^{n-1}|w'|^{n-2} w')'/r^{n-1} - K e^w| over interior nodes.

    Flux differences at cell midpoints (centred on uniform cells).  With
    `relative` the residual at each node is divided by the source K e^w there.
    """
    r = grid.nodes
    if r[0] <= 0:
        raise ValueError("residual grid must avoid r = 0")
    n = ctx.n
    w = bubble(ctx, r)
    mid = 0.5 * (r[1:] + r[:-1])
    dw = np.diff(w) / np.diff(r)
    flux = mid ** (n - 1) * np.abs(dw) ** (n - 2) * dw
    div = np.diff(flux) / (mid[1:] - mid[:-1]) / r[1:-1] ** (n - 1)
    source = bubble_source_constant(ctx) * np.exp(w[1:-1])
    res = np.abs(-div - source)
    if relative:
        res = res / source
    return float(res.max())


# ---------------------------------------------------------------- Moser functions


def moser_plateau_radius(ctx: DimensionContext, c: float, L_outer: float) -> float:
    """L eps with eps^n = exp(-alpha_n c^{n/(n-1)})."""
    return L_outer * math.exp(-ctx.alpha_n * c**ctx.q / ctx.n)


def moser_grid(ctx: DimensionContext, c: float, L_outer: float, count: int = 6000, R=None) -> RadialGrid:
    """Geometric grid resolving the plateau edge and the log branch of a Moser function."""
    rho = moser_plateau_radius(ctx, c, L_outer)
    R = L_outer if R is None else R
    nodes = np.concatenate([[0.0], np.geomspace(rho * 1e-2, L_outer, count)])
    if R > L_outer:
        tail = np.linspace(L_outer, R, max(16, count // 20))[1:]
        nodes = np.concatenate([nodes, tail])
    return grid_from_nodes(ctx.n, nodes, "moser").with_breakpoints([rho, L_outer])


def moser_function(ctx: DimensionContext, c: float, L_outer: float, grid: RadialGrid | None = None) -> RadialFunction:
    """Plateau c on [0, L eps], n log(L/r) / (alpha_n c^{1/(n-1)}) on [L eps, L], zero beyond.

    Unit Dirichlet energy.  The plateau edge and L are inserted into the grid.
    """
    if not c > 0:
        raise ValueError("plateau height c must be positive")
    if grid is None:
        grid = moser_grid(ctx, c, L_outer)
    if grid.outer_radius < L_outer * (1 - 1e-12):
        raise ValueError("grid must reach L_outer")
    rho = moser_plateau_radius(ctx, c, L_outer)
    inner = grid.nodes[grid.nodes > 0]
    if inner.size == 0 or rho < inner[0]:
        raise UnderResolvedError(f"plateau radius {rho:.3g} below the first grid cell")
    grid = grid.with_breakpoints([rho, L_outer])
    r = grid.nodes
    vals = np.zeros_like(r)
    vals[r <= rho] = c
    mid = (r > rho) & (r < L_outer)
    vals[mid] = ctx.n * np.log(L_outer / r[mid]) / (ctx.alpha_n * c ** (1.0 / (ctx.n - 1)))
    kind = COMPACT if grid.outer_radius <= L_outer * (1 + 1e-12) else DECAYING
    if kind == COMPACT:
        vals[-1] = 0.0
    return RadialFunction(grid, vals, kind)


def sharpness_experiment(
    ctx: DimensionContext,
    alpha: float,
    c_schedule,
    grid: RadialGrid | None = None,
    L_outer: float = 1.0,
) -> list[float]:
    """Functional of the normalized Moser functions along an increasing c schedule.

    Returns plain values; above double range use `sharpness_log_values`.
    """
    cs = list(c_schedule)
    if any(b <= a for a, b in zip(cs, cs[1:])):
        raise ValueError("c_schedule must be increasing")
    return [tm_functional(ctx, normalize(moser_function(ctx, c, L_outer, grid)), alpha) for c in cs]


def sharpness_log_values(ctx, alpha, c_schedule, grid=None, L_outer=1.0) -> list[float]:
    return [
        log_tm_functional(ctx, normalize(moser_function(ctx, c, L_outer, grid)), alpha)
        for c in c_schedule
    ]


def subcritical_quotients(ctx, alpha, c_schedule, grid=None, L_outer: float = 1.0) -> list[float]:
    """Scale-invariant quotient int Phi(alpha (u/|grad u|)^{n/(n-1)}) * |grad u|^n / |u|_n^n per c.

    Bounded in c for alpha < alpha_n; for n = 2 it tends to alpha as c grows.
    """
    out = []
    for c in c_schedule:
        f = moser_function(ctx, c, L_outer, grid)
        d = dirichlet_energy(f)
        u = f.scaled(d ** (-1.0 / ctx.n))
        out.append(tm_functional(ctx, u, alpha) * d / ln_norm_pow(f))
    return out


# ---------------------------------------------------------------- test function 1


@dataclass
class Test1Params:
    eps: float
    L: float
    C: float
    Lambda_eps: float
    A: float
    phi: float = 0.0
    norm: float = math.nan
    matching_residual: float = math.nan
    history: list = field(default_factory=list)

    __test__ = False

    @property
    def junction(self) -> float:
        return self.L * self.eps


def _log_eps_n(ctx, eps):
    return ctx.n * math.log(eps)


def test1_bracket(ctx: DimensionContext, eps: float) -> tuple[float, float]:
    le = _log_eps_n(ctx, eps)
    p = (ctx.n - 1) / ctx.n
    return (-le / (2 * ctx.alpha_n)) ** p, (-2 * le / ctx.alpha_n) ** p


def test1_f(ctx: DimensionContext, t: float, eps: float, A: float, phi: float = 0.0) -> float:
    """Residual of the height equation for the glued profile."""
    return (
        -ctx.alpha_n * t**ctx.q
        - (ctx.n - 1) * ctx.harmonic
        + ctx.alpha_n * A
        + math.log(ctx.omega / ctx.n)
        - _log_eps_n(ctx, eps)
        + phi
    )


def test1_solve_C(ctx: DimensionContext, eps: float, A: float, phi: float = 0.0) -> float:
    """Root of test1_f by bisection on the bracket from the small-eps sign analysis."""
    if not 0 < eps < math.exp(-1):
        raise ValueError("need 0 < eps < 1/e")
    a, b = test1_bracket(ctx, eps)
    fa, fb = test1_f(ctx, a, eps, A, phi), test1_f(ctx, b, eps, A, phi)
    if not (fa > 0 > fb):
        raise EpsTooLargeError(f"no sign change on bracket [{a:.4g}, {b:.4g}] (f = {fa:.3g}, {fb:.3g}); eps too large")
    return optimize.bisect(lambda t: test1_f(ctx, t, eps, A, phi), a, b, xtol=1e-15, rtol=1e-15, maxiter=400)


def test1_grid(ctx: DimensionContext, eps: float, green, count: int = 6000) -> RadialGrid:
    L = -math.log(eps)
    junction = L * eps
    nodes = np.concatenate([[0.0], np.geomspace(eps * 1e-3, green.R_max, count)])
    return grid_from_nodes(ctx.n, nodes, "test1").with_breakpoints([junction])


def _test1_values(ctx, r, params: Test1Params, green):
    n = ctx.n
    C, eps, Lam = params.C, params.eps, params.Lambda_eps
    root = C ** (1.0 / (n - 1))
    inner = C - ((n - 1) * np.log1p(ctx.c_n * (r / eps) ** ctx.q) + Lam) / (ctx.alpha_n * root)
    outer = green(np.maximum(r, 1e-300)) / root
    return np.where(r <= params.junction, inner, outer)


def _matching_lambda(ctx, C, L, eps, green) -> float:
    # Lambda from continuity at L eps
    return ctx.alpha_n * C**ctx.q - (ctx.n - 1) * math.log1p(ctx.c_n * L**ctx.q) - ctx.alpha_n * green(L * eps)


def matching_residual(ctx, params: Test1Params, green) -> float:
    n = ctx.n
    C, L = params.C, params.L
    root = C ** (1.0 / (n - 1))
    lhs = C - ((n - 1) * math.log1p(ctx.c_n * L**ctx.q) + params.Lambda_eps) / (ctx.alpha_n * root)
    return abs(lhs - green(params.junction) / root)


def test1_build(
    ctx: DimensionContext,
    eps: float,
    green,
    grid: RadialGrid | None = None,
    passes: int = 2,
) -> tuple[RadialFunction, Test1Params]:
    """Glued profile: bubble-shaped core on B_{L eps}, G / C^{1/(n-1)} outside.

    L = -log eps; Lambda_eps from continuity at L eps; C from the height
    equation, first with phi = 0, then with phi read off from the Sobolev norm
    of the previous pass.  Each pass is recorded in params.history.
    """
    if not 0 < eps < math.exp(-1):
        raise ValueError("need 0 < eps < 1/e")
    L = -math.log(eps)
    if L * eps >= green.R_max:
        raise EpsTooLargeError("junction radius outside the Green solution")
    if grid is None:
        grid = test1_grid(ctx, eps, green)
    else:
        grid = grid.with_breakpoints([L * eps])
    base = test1_f(ctx, 0.0, eps, green.A)
    phi = 0.0
    params = None
    f = None
    history = []
    for k in range(passes):
        C = test1_solve_C(ctx, eps, green.A, phi)
        Lam = _matching_lambda(ctx, C, L, eps, green)
        params = Test1Params(eps=eps, L=L, C=C, Lambda_eps=Lam, A=green.A, phi=phi)
        f = RadialFunction(grid, _test1_values(ctx, grid.nodes, params, green), DECAYING)
        energy = sobolev_norm(f) ** ctx.n
        params.norm = energy ** (1.0 / ctx.n)
        params.matching_residual = matching_residual(ctx, params, green)
        entry = {"pass": k + 1, "phi": phi, "C": C, "Lambda": Lam, "norm": params.norm}
        phi = ctx.alpha_n * C**ctx.q * energy - base
        entry["phi_next"] = phi
        history.append(entry)
        params.history = list(history)
    if abs(params.norm - 1) > 1e-2 or params.matching_residual > 1e-6:
        raise EpsTooLargeError(
            f"norm {params.norm:.6g}, matching residual {params.matching_residual:.3g}; eps too large"
        )
    return f, params


def restrict(f: RadialFunction, r_hi: float) -> RadialFunction:
    """f on the nodes with r <= r_hi (r_hi should be a node)."""
    keep = f.grid.nodes <= r_hi * (1 + 1e-12)
    grid = RadialGrid(f.n, f.grid.nodes[keep], dict(f.grid.grading, restricted=r_hi))
    return RadialFunction(grid, f.values[keep], DECAYING)


def exterior(f: RadialFunction, r_lo: float) -> RadialFunction:
    keep = f.grid.nodes >= r_lo * (1 - 1e-12)
    grid = RadialGrid(f.n, f.grid.nodes[keep], dict(f.grid.grading, exterior=r_lo))
    return RadialFunction(grid, f.values[keep], DECAYING)


def test1_threshold(ctx: DimensionContext, A: float) -> float:
    """(omega/n) e^{alpha_n A + H_{n-1}}."""
    return ctx.ball_factor * math.exp(ctx.alpha_n * A + ctx.harmonic)


def test1_lower_bound(ctx, eps, green, grid=None, passes: int = 2):
    """(value, threshold) for the glued profile; value > threshold for small eps."""
    f, params = test1_build(ctx, eps, green, grid, passes)
    return tm_functional(ctx, f, ctx.alpha_n), test1_threshold(ctx, green.A)


def test1_report(ctx, eps, green, grid=None, passes: int = 2) -> dict:
    f, p = test1_build(ctx, eps, green, grid, passes)
    value = tm_functional(ctx, f, ctx.alpha_n)
    threshold = test1_threshold(ctx, green.A)
    core = tm_functional(ctx, restrict(f, p.junction), ctx.alpha_n)
    return {
        "n": ctx.n,
        "eps": eps,
        "L": p.L,
        "C": p.C,
        "Lambda": p.Lambda_eps,
        "phi": p.phi,
        "value": value,
        "core_value": core,
        "threshold": threshold,
        "margin": value - threshold,
        "norm_residual": abs(p.norm - 1.0),
        "matching_residual": p.matching_residual,
        "height_gap": ctx.alpha_n * p.C**ctx.q + _log_eps_n(ctx, eps),
        "history": p.history,
    }


def pointwise_core_bound_gap(ctx, f: RadialFunction, params: Test1Params) -> np.ndarray:
    """alpha_n u^{n/(n-1)} minus its linearized lower bound on nodes inside B_{L eps} (>= 0)."""
    r = f.grid.nodes
    inside = r <= params.junction
    u = f.values[inside]
    bound = (
        ctx.alpha_n * params.C**ctx.q
        - ctx.n * np.log1p(ctx.c_n * (r[inside] / params.eps) ** ctx.q)
        - ctx.q * params.Lambda_eps
    )
    return ctx.alpha_n * u**ctx.q - bound


def tail_norm_formula(ctx, green, params: Test1Params) -> float:
    """C^{-n/(n-1)} G(L eps) (1 - int_{B_{L eps}} G^{n-1})."""
    rho = params.junction
    return float(green(rho) * green.deficit(rho)) / params.C**ctx.q


# ---------------------------------------------------------------- test function 2


@dataclass(frozen=True)
class Test2Params:
    n: int
    c: float
    b: float
    alpha_n: float

    __test__ = False

    def __post_init__(self):
        if self.n <= 2:
            raise ValueError("the second test family needs n > 2")
        if not (self.c > 0 and self.b > 0):
            raise ValueError("c and b must be positive")

    @classmethod
    def make(cls, ctx: DimensionContext, c: float, b: float) -> "Test2Params":
        return cls(ctx.n, c, b, ctx.alpha_n)

    @property
    def log_eps(self) -> float:
        return -self.alpha_n * self.c ** (self.n / (self.n - 1)) / self.n

    @property
    def eps(self) -> float:
        return math.exp(self.log_eps)

    @property
    def L(self) -> float:
        return self.b * self.c ** (1.0 / (self.n - 2))

    def condition_61(self) -> float:
        """c^{n/(n-1)} / L^n, which must tend to zero along the sweep."""
        return self.c ** (self.n / (self.n - 1)) / self.L**self.n


def test2_profile(ctx: DimensionContext, params: Test2Params, grid: RadialGrid | None = None) -> RadialFunction:
    if ctx.n <= 2:
        raise ValueError("the second test family needs n > 2")
    if grid is None:
        grid = moser_grid(ctx, params.c, params.L)
    return moser_function(ctx, params.c, params.L, grid)


def test2_threshold(ctx: DimensionContext) -> float:
    return ctx.threshold_poly


def test2_ratio(ctx: DimensionContext, params: Test2Params, grid: RadialGrid | None = None) -> tuple[float, float]:
    """(functional of the normalized profile, alpha_n^{n-1}/(n-1)!)."""
    u = normalize(test2_profile(ctx, params, grid))
    return tm_functional(ctx, u, ctx.alpha_n), test2_threshold(ctx)


def test2_ln_norm_formula(ctx: DimensionContext, params: Test2Params) -> float:
    """(omega/n) c^n (L eps)^n + omega n^n L^n / (alpha_n^n c^{n/(n-1)}) int_eps^1 r^{n-1} log^n r dr."""
    n, c, L = ctx.n, params.c, params.L
    log_eps = params.log_eps

    def integrand(s):
        # r = e^s, dr = r ds
        return math.exp(n * s) * abs(s) ** n

    tail, _ = integrate.quad(integrand, log_eps, 0.0, epsabs=0.0, epsrel=1e-13, limit=400)
    plateau = ctx.ball_factor * c**n * (L * params.eps) ** n
    return plateau + ctx.omega * n**n * L**n / (ctx.alpha_n**n * c**ctx.q) * tail


def test2_sweep(ctx: DimensionContext, cs, bs) -> list[dict]:
    rows = []
    threshold = test2_threshold(ctx)
    for b in bs:
        for c in cs:
            p = Test2Params.make(ctx, c, b)
            f = test2_profile(ctx, p)
            norm = sobolev_norm(f)
            value = tm_functional(ctx, f.scaled(1.0 / norm), ctx.alpha_n)
            rows.append(
                {
                    "n": ctx.n,
                    "family": "test2",
                    "c": c,
                    "b": b,
                    "L": p.L,
                    "value": value,
                    "threshold": threshold,
                    "margin": value - threshold,
                    "condition_61": p.condition_61(),
                    "dirichlet_residual": abs(dirichlet_energy(f) - 1.0),
                    "ln_norm": ln_norm_pow(f),
                }
            )
    return rows
