"""Constrained maximization of int Phi(beta u^{n/(n-1)}) on the unit Sobolev sphere of H_0(B_R),
with the Euler-Lagrange residual and blow-up diagnostics.

Discretization: u is piecewise linear on a fixed grid with u(R) = 0.  The
constraint N(u) = int |u'|^n + |u|^n dx uses exact cell energies and lumped
node weights; the functional J(u) is integrated over the interpolant with
Gauss points on every cell.  A lumped rule for J would let a peak squeezed
into the first cell gain spurious value, which the ascent readily exploits.
Both have closed-form gradients.

Each iteration takes a preconditioned gradient d = P^{-1} grad J, where P is
the (weighted) stiffness-plus-mass matrix of N, and searches along the arc
u(theta) = normalize((1 - theta) u + theta normalize(d)).  For n = 2, P is
exactly the matrix of N and theta = 1 maximizes the linearization of the
convex functional J over the constraint ellipsoid, so full steps never
decrease J.  Steps are accepted by an Armijo test and the iterate is
rearranged whenever it stops being nonincreasing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from tmoser.constants import DimensionContext, make_context, phi, phi_prime
from tmoser.grid import (
    COMPACT,
    CellQuadrature,
    RadialFunction,
    RadialGrid,
    build_grid,
    dirichlet_energy,
    gauss_integrate,
    ln_norm_pow,
    log_grid,
    normalize,
    sobolev_norm,
    tm_functional_gauss,
)
from tmoser.profiles import bubble, test1_build
from tmoser.rearrangement import rearrange_onto


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, result: "MaximizerResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass
class MaximizerOptions:
    tol: float = 1e-13
    max_iters: int = 4000
    seeds: int = 5
    seed: int = 0
    armijo: float = 1e-4
    seed_agreement: float = 1e-6
    log_path: str | None = None


@dataclass
class MaximizerResult:
    u: RadialFunction
    beta: float
    R: float
    value: float
    c_k: float
    lambda_k: float
    el_residual: float
    iterations: int
    norm_residual: float = 0.0
    seed_values: list = field(default_factory=list)
    seed_spread: float = 0.0
    history: list = field(default_factory=list)

    @property
    def seeds_agree(self) -> bool:
        return self.seed_spread <= 1e-6

    def summary(self) -> dict:
        return {
            "beta": self.beta,
            "R": self.R,
            "value": self.value,
            "c_k": self.c_k,
            "lambda_k": self.lambda_k,
            "el_residual": self.el_residual,
            "iterations": self.iterations,
            "norm_residual": self.norm_residual,
            "seed_values": list(self.seed_values),
            "seed_spread": self.seed_spread,
        }

    def to_files(self, path) -> None:
        path = Path(path)
        self.u.to_csv(path)
        path.with_name(path.stem + "_result.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True))


# ---------------------------------------------------------------- discrete pieces


class _Discrete:
    """N, J and their gradients on a fixed grid; the last node is pinned to 0."""

    def __init__(self, ctx: DimensionContext, grid: RadialGrid, beta: float):
        self.ctx, self.grid, self.beta = ctx, grid, beta
        self.n = ctx.n
        self.om = grid.omega
        self.w = grid.weights
        self.ef = grid.energy_factors
        self.quad = CellQuadrature(grid)

    def norm_pow(self, u):
        d = np.abs(np.diff(u))
        return self.om * (np.dot(d**self.n, self.ef) + np.dot(self.w, np.abs(u) ** self.n))

    def normalize(self, u):
        for _ in range(2):
            u = u / self.norm_pow(u) ** (1.0 / self.n)
        return u

    def value(self, u):
        v = self.quad.values_at(u)
        return self.quad.integrate(phi(self.ctx, self.beta * v**self.ctx.q))

    def grad_value(self, u):
        q = self.ctx.q
        v = self.quad.values_at(u)
        g = self.beta * q * v ** (1.0 / (self.n - 1)) * phi_prime(self.ctx, self.beta * v**q)
        return self.quad.node_gradient(g)

    def grad_norm(self, u):
        n = self.n
        d = np.diff(u)
        flux = self.ef * np.abs(d) ** (n - 2) * d
        g = n * self.om * self.w * np.abs(u) ** (n - 1)
        g[:-1] -= n * self.om * flux
        g[1:] += n * self.om * flux
        return g

    def precondition(self, u, rhs):
        """Solve P x = rhs on the free nodes (tridiagonal)."""
        n = self.n
        d = np.abs(np.diff(u))
        floor = 1e-3 * max(float(u.max()), 1e-300)
        k = self.om * self.ef * np.maximum(d, floor * 1e-3) ** (n - 2) if n > 2 else self.om * self.ef
        m = self.om * self.w * (np.maximum(np.abs(u), floor) ** (n - 2) if n > 2 else 1.0)
        M = u.size - 1  # free nodes 0..M-1
        diag = m[:M].copy()
        diag += k[:M]
        diag[1:] += k[: M - 1]
        off = -k[: M - 1]
        ab = np.zeros((3, M))
        ab[0, 1:] = off
        ab[1] = diag
        ab[2, :-1] = off
        x = np.zeros_like(u)
        x[:M] = solve_banded((1, 1), ab, rhs[:M])
        return x


def _bubble_seed(ctx: DimensionContext, grid: RadialGrid, scale: float) -> np.ndarray:
    r = grid.nodes
    return bubble(ctx, r / scale) - bubble(ctx, grid.outer_radius / scale)


def _random_seed(grid: RadialGrid, rng: np.random.Generator) -> np.ndarray:
    r = grid.nodes / grid.outer_radius
    k = rng.integers(1, 6)
    v = np.zeros_like(r)
    for _ in range(k):
        width = rng.uniform(0.05, 1.0)
        v += rng.uniform(0.2, 1.0) * np.exp(-((r - rng.uniform(0, 0.6)) ** 2) / width**2)
    v = np.abs(v + 0.1 * rng.random(r.size)) * (1 - r)
    return v


def seed_profiles(ctx: DimensionContext, grid: RadialGrid, count: int, seed: int) -> list[np.ndarray]:
    """Bubble-shaped start plus `count - 1` random positive starts (deterministic in `seed`)."""
    rng = np.random.default_rng(seed)
    out = [_bubble_seed(ctx, grid, 0.1 * grid.outer_radius)]
    while len(out) < count:
        out.append(_random_seed(grid, rng))
    return out


def _monotone(disc: _Discrete, u: np.ndarray) -> np.ndarray:
    if np.all(np.diff(u) <= 0):
        return u
    f = RadialFunction(disc.grid, np.maximum(u, 0.0) * (np.arange(u.size) < u.size - 1), COMPACT)
    return rearrange_onto(f, disc.grid).values.copy()


def ascend(ctx, grid, beta, u0, opts: MaximizerOptions, log=None):
    """Single projected-ascent run from u0.  Returns (u, value, iterations, history, converged)."""
    disc = _Discrete(ctx, grid, beta)
    u = np.asarray(u0, dtype=float).copy()
    u[-1] = 0.0
    if not np.any(u):
        raise ValueError("cannot normalize the zero function")
    u = disc.normalize(_monotone(disc, np.abs(u)))
    J = disc.value(u)
    history = [J]
    theta = 1.0
    quiet = 0
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        gJ = disc.grad_value(u)
        d = disc.precondition(u, gJ)
        target = disc.normalize(np.maximum(d, 0.0)) if np.any(d > 0) else u
        h = target - u
        gN = disc.grad_norm(u)
        slope = float(np.dot(gJ, h) - np.dot(gJ, u) * np.dot(gN, h) / disc.n)
        if slope <= 0:
            converged = True
            break
        theta = min(1.0, 2 * theta)
        accepted = False
        while theta > 1e-14:
            v = disc.normalize(_monotone(disc, u + theta * h))
            Jv = disc.value(v)
            if Jv >= J + opts.armijo * theta * slope:
                accepted = True
                break
            theta *= 0.5
        if not accepted:
            converged = True
            break
        change = (Jv - J) / J
        u, J = v, Jv
        history.append(J)
        if log is not None:
            log.write(
                json.dumps(
                    {
                        "iter": it,
                        "value": J,
                        "norm_residual": abs(disc.norm_pow(u) - 1.0),
                        "c_k": float(u[0]),
                    }
                )
                + "\n"
            )
        quiet = quiet + 1 if change < opts.tol else 0
        if quiet >= 3:
            converged = True
            break
    return u, J, it, history, converged


def ball_grid(ctx: DimensionContext, R: float, inner_count: int = 256, outer_count: int = 384,
              inner_scale: float = 0.1) -> RadialGrid:
    """Graded grid on B_R; the outer count grows like sqrt(R) so the profile's
    slow tail stays resolved on large balls."""
    inner = min(inner_scale, inner_scale * R)
    outer = math.ceil(outer_count * math.sqrt(max(R, 1.0)))
    return build_grid(ctx.n, R, inner_count, outer, inner, r_min=inner * 1e-4)


def default_grid(ctx: DimensionContext, R: float) -> RadialGrid:
    return ball_grid(ctx, R)


def maximize_on_ball(
    ctx: DimensionContext,
    R: float,
    beta: float,
    grid: RadialGrid | None = None,
    opts: MaximizerOptions | None = None,
    initial=None,
) -> MaximizerResult:
    """Multi-start projected ascent on {int |grad u|^n + |u|^n = 1} in H_0(B_R).

    Keeps the highest value (ties broken by the smaller Euler-Lagrange
    residual) and records the spread of values over the starts.
    """
    opts = opts or MaximizerOptions()
    if not 0 < beta <= ctx.alpha_n * (1 + 1e-12):
        raise ValueError("need 0 < beta <= alpha_n (the supremum is infinite above alpha_n)")
    if grid is None:
        grid = default_grid(ctx, R)
    if abs(grid.outer_radius - R) > 1e-12 * R:
        raise ValueError("grid outer radius must equal R")
    starts = [np.asarray(initial, float)] if initial is not None else seed_profiles(ctx, grid, opts.seeds, opts.seed)
    log = open(opts.log_path, "w") if opts.log_path else None
    runs = []
    try:
        for k, u0 in enumerate(starts):
            if log is not None:
                log.write(json.dumps({"start": k}) + "\n")
            u, J, it, hist, ok = ascend(ctx, grid, beta, u0, opts, log)
            if not ok:
                raise ConvergenceError(f"start {k}: no convergence after {opts.max_iters} iterations")
            f = RadialFunction(grid, u, COMPACT)
            lam = lagrange_multiplier(ctx, f, beta)
            res = MaximizerResult(
                u=f,
                beta=beta,
                R=R,
                value=J,
                c_k=float(u[0]),
                lambda_k=lam,
                el_residual=math.nan,
                iterations=it,
                norm_residual=abs(sobolev_norm(f) - 1.0),
                history=hist,
            )
            res.el_residual = el_residual(ctx, res)
            runs.append(res)
    finally:
        if log is not None:
            log.close()
    values = [r.value for r in runs]
    best = max(runs, key=lambda r: (r.value, -r.el_residual))
    best.seed_values = values
    best.seed_spread = (max(values) - min(values)) / max(values)
    return best


def schedule(ctx, Rs, betas, grid_factory=None, opts=None) -> list[MaximizerResult]:
    """Maximizers along an (R_k, beta_k) schedule."""
    out = []
    for R, beta in zip(Rs, betas):
        grid = grid_factory(R) if grid_factory else None
        out.append(maximize_on_ball(ctx, R, beta, grid, opts))
    return out


# ---------------------------------------------------------------- multiplier and residual


def lagrange_multiplier(ctx: DimensionContext, u: RadialFunction, beta: float) -> float:
    """int u^{n/(n-1)} Phi'(beta u^{n/(n-1)}) dx (0 for the zero profile)."""

    def integrand(v):
        v = np.abs(v) ** ctx.q
        return v * phi_prime(ctx, beta * v)

    return gauss_integrate(u, integrand)


def _test_bumps(R: float, count: int = 12):
    bumps = []
    for width in (0.05 * R, 0.2 * R, 0.5 * R):
        bumps.append((0.0, width))
    for c in np.geomspace(0.02 * R, 0.85 * R, count):
        bumps.append((float(c), float(0.5 * min(c, R - c))))
    return bumps


def _bump(r, centre, width):
    x = (r - centre) / width
    return np.where(np.abs(x) < 1, (1 - x**2) ** 2, 0.0)


def el_residual(ctx: DimensionContext, result: MaximizerResult, refine: int = 1) -> float:
    """Largest weak Euler-Lagrange residual over smooth bump tests, normalized by
    the Sobolev norm of each bump; evaluated on a grid refined `refine` times."""
    u = result.u
    grid = u.grid
    for _ in range(refine):
        grid = grid.refined()
    vals = u(grid.nodes)
    n, q = ctx.n, ctx.q
    f = RadialFunction(grid, vals, COMPACT)
    lam = lagrange_multiplier(ctx, f, result.beta)
    if lam <= 0:
        return math.inf
    d = np.diff(vals)
    flux = grid.energy_factors * np.abs(d) ** (n - 2) * d
    quad = CellQuadrature(grid)
    v = quad.values_at(vals)
    source = v ** (n - 1) - v ** (1.0 / (n - 1)) * phi_prime(ctx, result.beta * v**q) / lam
    worst = 0.0
    for centre, width in _test_bumps(result.R):
        b = _bump(grid.nodes, centre, width)
        b[-1] = 0.0
        weak = grid.omega * np.dot(flux, np.diff(b)) + quad.integrate(source * quad.values_at(b))
        norm = sobolev_norm(RadialFunction(grid, b, COMPACT))
        worst = max(worst, abs(weak) / norm)
    return worst


def reference_values(
    ctx: DimensionContext,
    result: MaximizerResult,
    green=None,
    cs=(0.25, 0.5, 1.0, 1.5, 2.0, 3.0),
    eps=(1e-2, 1e-3, 1e-4),
) -> dict:
    """Functional at beta of unit-norm competitors sampled on the maximizer's grid.

    Moser functions vanishing at R (plateau c) and, given a Green solution,
    glued bubble/Green profiles shifted down to vanish at R.  Each lies in the
    same discrete space as the maximizer, so none may exceed its value.
    """
    grid, R, n = result.u.grid, result.R, ctx.n
    r = grid.nodes
    out = {}
    for c in cs:
        with np.errstate(divide="ignore"):
            log_branch = n * np.log(R / r) / (ctx.alpha_n * c ** (1.0 / (n - 1)))
        vals = np.minimum(c, log_branch)
        vals[-1] = 0.0
        out[f"moser c={c:g}"] = tm_functional_gauss(ctx, normalize(RadialFunction(grid, vals, COMPACT)), result.beta)
    if green is not None:
        for e in eps:
            f, _ = test1_build(ctx, e, green)
            vals = np.maximum(f(r) - float(f(R)), 0.0)
            vals[-1] = 0.0
            if not np.any(vals > 0):
                continue
            out[f"glued eps={e:g}"] = tm_functional_gauss(ctx, normalize(RadialFunction(grid, vals, COMPACT)), result.beta)
    return out


# ---------------------------------------------------------------- blow-up diagnostics


@dataclass
class BlowupDiagnostics:
    r_k: float
    w_rescaled: RadialFunction
    bubble_distance: float
    core_mass: float
    truncation_energy: dict
    L: float
    flags: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "r_k": self.r_k,
            "L": self.L,
            "bubble_distance": self.bubble_distance,
            "core_mass": self.core_mass,
            "truncation_energy": {str(k): v for k, v in self.truncation_energy.items()},
            "flags": list(self.flags),
        }


def concentration_radius(ctx: DimensionContext, result: MaximizerResult) -> float:
    """r_k with r_k^n = lambda_k / (c_k^{n/(n-1)} e^{beta c_k^{n/(n-1)}})."""
    cq = result.c_k**ctx.q
    log_rn = math.log(result.lambda_k) - math.log(cq) - result.beta * cq
    return math.exp(log_rn / ctx.n)


def truncation_energy(ctx: DimensionContext, u: RadialFunction, level: float) -> float:
    """int |grad u^A|^n + |u^A|^n with u^A = min(u, level); the crossing is added as a node."""
    vals, r = u.values, u.grid.nodes
    above = vals > level
    pts = []
    if above.any() and (~above).any():
        i = int(np.argmax(~above))  # first node at or below the level (u nonincreasing)
        a, b = r[i - 1], r[i]
        fa, fb = vals[i - 1], vals[i]
        pts.append(a + (fa - level) / (fa - fb) * (b - a))
    grid = u.grid if not pts else u.grid.with_breakpoints(pts)
    v = np.minimum(u(grid.nodes), level)
    f = RadialFunction(grid, v, u.boundary_kind)
    return dirichlet_energy(f) + ln_norm_pow(f)


def _partial_integral(u: RadialFunction, func, r_hi: float, count: int = 4000) -> float:
    """int_{B_{r_hi}} func(u) dx on a fine log grid (u interpolated)."""
    r_hi = min(r_hi, u.grid.outer_radius)
    r_min = min(r_hi * 1e-6, u.grid.nodes[1])
    grid = log_grid(u.n, r_min, r_hi, count)
    return grid.integrate(func(u(grid.nodes)))


def blowup_diagnostics(ctx: DimensionContext, result: MaximizerResult, L: float, levels=(2, 4, 8)) -> BlowupDiagnostics:
    n, q, beta = ctx.n, ctx.q, result.beta
    u = result.u
    c = result.c_k
    flags = []
    r_k = concentration_radius(ctx, result)
    if r_k * L > u.grid.outer_radius:
        flags.append("core-exceeds-ball")
    inner = u.grid.nodes[1]
    if r_k < inner:
        flags.append("core-under-resolved")
    x = np.concatenate([[0.0], np.geomspace(1e-4 * L, L, 400)])
    w_grid = RadialGrid(n, x, {"kind": "rescaled", "L": L})
    w_vals = q * beta * c ** (1.0 / (n - 1)) * (u(r_k * x) - c)
    w_vals[0] = 0.0
    w_res = RadialFunction(w_grid, w_vals)
    distance = float(np.max(np.abs(w_vals - bubble(ctx, x))))
    lam = result.lambda_k

    def density(v):
        v = np.abs(v) ** q
        return v * phi_prime(ctx, beta * v) / lam

    core = _partial_integral(u, density, L * r_k)
    trunc = {A: truncation_energy(ctx, u, c / A) for A in levels}
    return BlowupDiagnostics(r_k, w_res, distance, core, trunc, L, flags)


def outer_energy(u: RadialFunction, delta: float) -> float:
    """int_{|x| > delta} |grad u|^n + |u|^n."""
    grid = u.grid.with_breakpoints([delta])
    v = u(grid.nodes)
    keep = grid.nodes >= delta * (1 - 1e-12)
    sub = RadialGrid(u.n, grid.nodes[keep], {"kind": "exterior"})
    f = RadialFunction(sub, v[keep])
    return dirichlet_energy(f) + ln_norm_pow(f)


def dichotomy_report(sequence, green=None, delta: float = 0.5, L: float = 20.0) -> dict:
    """Classify a schedule of maximizers as bounded-peak or blow-up.

    Blow-up: c_k increasing along the schedule, at least 1.5x overall, with
    the last increment not below a quarter of the first.  Anything else is
    reported as bounded-peak.
    """
    seq = list(sequence)
    if not seq:
        raise ValueError("empty schedule")
    cs = [r.c_k for r in seq]
    inc = np.diff(cs)
    growing = len(cs) > 1 and bool(np.all(inc > 0)) and cs[-1] >= 1.5 * cs[0] and inc[-1] >= 0.25 * inc[0]
    report = {
        "classification": "blow-up" if growing else "bounded-peak",
        "c_k": cs,
        "values": [r.value for r in seq],
        "lambda_k": [r.lambda_k for r in seq],
        "lambda_over_c": [r.lambda_k / r.c_k for r in seq],
        "min_lambda": min(r.lambda_k for r in seq),
        "outer_energy": [outer_energy(r.u, min(delta, 0.5 * r.R)) for r in seq],
    }
    ctx = make_context(seq[0].u.n)
    diags = [blowup_diagnostics(ctx, r, L) for r in seq]
    report["bubble_distance"] = [d.bubble_distance for d in diags]
    report["core_mass"] = [d.core_mass for d in diags]
    top = max(range(len(seq)), key=lambda i: seq[i].c_k)
    report["most_concentrated"] = top
    report["most_concentrated_diagnostics"] = diags[top].summary()
    if green is not None and delta < seq[top].R:
        r = seq[top]
        report["green_comparison"] = {
            "delta": delta,
            "scaled_u": r.c_k ** (1.0 / (ctx.n - 1)) * float(r.u(delta)),
            "G": float(green(delta)),
        }
    return report
