"""Radial grids on B_R in R^n, quadrature, Sobolev norms and the Trudinger-Moser functional.

Integrals of a nodal quantity g are computed as omega * sum_i w_i g_i, where w_i
are the trapezoid weights of the linear interpolant of g against r^{n-1}
(integrated exactly per cell).  Energies use the per-cell slope.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from tmoser.constants import LOG_OVERFLOW, DimensionContext, log_phi, phi, sphere_measure

COMPACT = "compact-support"
DECAYING = "decaying-tail"
BOUNDARY_KINDS = (COMPACT, DECAYING)


class FunctionalOverflowWarning(RuntimeWarning):
    """Exponent above the overflow guard; the functional was evaluated in log form."""


class FunctionalOverflowError(OverflowError):
    def __init__(self, log_value: float):
        super().__init__(f"functional exceeds double range (log value {log_value:.6g})")
        self.log_value = log_value


def _cell_weights(a: np.ndarray, b: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact integrals of the two hat halves against r^{n-1} on each cell [a, b].

    Expanded in powers of h = b - a so every term is positive (no cancellation
    on fine cells far from the origin).
    """
    h = b - a
    left = np.zeros_like(a)
    right = np.zeros_like(a)
    for k in range(n):
        term = math.comb(n - 1, k) * a ** (n - 1 - k) * h ** (k + 1)
        left += term / ((k + 1) * (k + 2))
        right += term / (k + 2)
    return left, right


def _energy_factors(nodes: np.ndarray, n: int) -> np.ndarray:
    """shell_i / h_i^n per cell, written in t = a/b so it never under- or overflows."""
    a, b = nodes[:-1], nodes[1:]
    t = a / b
    geo = sum(t**k for k in range(n))
    out = geo / (n * (1.0 - t) ** (n - 1))
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RadialGrid:
    n: int
    nodes: np.ndarray
    grading: dict = field(default_factory=dict)
    explicit_weights: np.ndarray | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 16:
            raise ValueError("a radial grid needs at least 16 nodes")
        if nodes[0] < 0 or np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be nonnegative and strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        left, right = _cell_weights(nodes[:-1], nodes[1:], self.n)
        shells = left + right
        if self.explicit_weights is None:
            weights = np.zeros_like(nodes)
            weights[:-1] += left
            weights[1:] += right
        else:
            weights = np.asarray(self.explicit_weights, dtype=float).copy()
            if weights.shape != nodes.shape or np.any(weights < 0):
                raise ValueError("explicit weights must be nonnegative, one per node")
        weights.setflags(write=False)
        shells.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "shells", shells)
        object.__setattr__(self, "energy_factors", _energy_factors(nodes, self.n))

    @property
    def outer_radius(self) -> float:
        return float(self.nodes[-1])

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def omega(self) -> float:
        return sphere_measure(self.n)

    def integrate(self, values) -> float:
        """omega * int_0^R g(r) r^{n-1} dr for nodal g."""
        return self.omega * float(np.dot(self.weights, values))

    def volume(self) -> float:
        return self.omega * float(self.weights.sum())

    def refined(self) -> "RadialGrid":
        """Grid with every cell halved."""
        mids = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        nodes = np.sort(np.concatenate([self.nodes, mids]))
        grading = dict(self.grading, refined=self.grading.get("refined", 0) + 1)
        return RadialGrid(self.n, nodes, grading)

    def with_breakpoints(self, points) -> "RadialGrid":
        """Same grid with extra nodes inserted (e.g. kinks of a profile).

        Existing nodes closer than 1e-9 (relative) to an inserted point are dropped.
        """
        pts = np.asarray([p for p in np.atleast_1d(points) if 0 < p < self.outer_radius], float)
        nodes = self.nodes
        for p in pts:
            nodes = nodes[np.abs(nodes - p) > 1e-9 * p]
        nodes = np.sort(np.concatenate([nodes, pts]))
        return RadialGrid(self.n, nodes, dict(self.grading, breakpoints=len(pts)))


def build_grid(
    n: int,
    R: float,
    inner_count: int,
    outer_count: int,
    inner_scale: float,
    r_min: float | None = None,
) -> RadialGrid:
    """Origin, `inner_count` geometric nodes ending at `inner_scale`, then
    `outer_count` uniform nodes out to R.

    The geometric part starts at `r_min` (default: inner_scale * 1e-3).
    """
    if not R > 0:
        raise ValueError("R must be positive")
    if inner_count < 8 or outer_count < 8:
        raise ValueError("node counts must be >= 8")
    if not 0 < inner_scale < R:
        raise ValueError("need 0 < inner_scale < R")
    if r_min is None:
        r_min = inner_scale * 1e-3
    if not 0 < r_min < inner_scale:
        raise ValueError("need 0 < r_min < inner_scale")
    geo = np.geomspace(r_min, inner_scale, inner_count)
    uni = np.linspace(inner_scale, R, outer_count + 1)[1:]
    nodes = np.concatenate([[0.0], geo, uni])
    ratio = (inner_scale / r_min) ** (1.0 / (inner_count - 1))
    grading = {
        "kind": "geometric+uniform",
        "r_min": r_min,
        "inner_scale": inner_scale,
        "ratio": ratio,
        "inner_count": inner_count,
        "outer_count": outer_count,
    }
    return RadialGrid(n, nodes, grading)


def log_grid(n: int, r_min: float, R: float, count: int, origin: bool = True) -> RadialGrid:
    """Purely geometric grid on [r_min, R], optionally with a node at the origin."""
    nodes = np.geomspace(r_min, R, count)
    if origin:
        nodes = np.concatenate([[0.0], nodes])
    return RadialGrid(n, nodes, {"kind": "geometric", "r_min": r_min, "count": count})


def grid_from_nodes(n: int, nodes, label: str = "custom") -> RadialGrid:
    return RadialGrid(n, np.asarray(nodes, dtype=float), {"kind": label})


@dataclass(frozen=True, eq=False)
class RadialFunction:
    grid: RadialGrid
    values: np.ndarray
    boundary_kind: str = DECAYING

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise ValueError("one value per grid node required")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        if self.boundary_kind not in BOUNDARY_KINDS:
            raise ValueError(f"boundary_kind must be one of {BOUNDARY_KINDS}")
        if self.boundary_kind == COMPACT and vals[-1] != 0.0:
            raise ValueError("compact-support profile must vanish at the outer radius")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, r):
        """Piecewise-linear evaluation; zero beyond the outer radius."""
        return np.interp(r, self.grid.nodes, self.values, right=0.0)

    def scaled(self, factor: float) -> "RadialFunction":
        return RadialFunction(self.grid, factor * self.values, self.boundary_kind)

    def with_values(self, values) -> "RadialFunction":
        return RadialFunction(self.grid, values, self.boundary_kind)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.grid.nodes)

    def to_csv(self, path) -> None:
        path = Path(path)
        explicit = self.grid.explicit_weights is not None
        lines = ["r,value,weight" if explicit else "r,value"]
        for i, (r, v) in enumerate(zip(self.grid.nodes, self.values)):
            row = [repr(float(r)), repr(float(v))]
            if explicit:
                row.append(repr(float(self.grid.weights[i])))
            lines.append(",".join(row))
        path.write_text("\n".join(lines) + "\n")
        sidecar = {
            "n": self.n,
            "R": self.grid.outer_radius,
            "boundary_kind": self.boundary_kind,
            "grading": self.grid.grading,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "RadialFunction":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        weights = data[:, 2] if data.shape[1] > 2 else None
        grid = RadialGrid(int(meta["n"]), data[:, 0], meta.get("grading", {}), weights)
        return cls(grid, data[:, 1], meta["boundary_kind"])


def dirichlet_energy(f: RadialFunction) -> float:
    """int |grad f|^n dx with the per-cell slope."""
    # |df|^n * shell / h^n avoids overflow of the slope on tiny cells
    d = np.abs(np.diff(f.values))
    return f.grid.omega * float(np.dot(d**f.n, f.grid.energy_factors))


def ln_norm_pow(f: RadialFunction) -> float:
    """int |f|^n dx."""
    return f.grid.integrate(np.abs(f.values) ** f.n)


def sobolev_norm(f: RadialFunction) -> float:
    """(int |grad f|^n + |f|^n dx)^{1/n}."""
    return (dirichlet_energy(f) + ln_norm_pow(f)) ** (1.0 / f.n)


def normalize(f: RadialFunction) -> RadialFunction:
    norm = sobolev_norm(f)
    if norm == 0.0 or not np.any(f.values):
        raise ValueError("cannot normalize the zero function")
    out = f.scaled(1.0 / norm)
    # second pass removes the last ulp-level drift of the norm
    return out.scaled(1.0 / sobolev_norm(out))


def _exponents(ctx: DimensionContext, f: RadialFunction, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if f.n != ctx.n:
        raise ValueError("dimension of context and profile differ")
    return alpha * np.abs(f.values) ** ctx.q


def log_tm_functional(ctx: DimensionContext, f: RadialFunction, alpha: float) -> float:
    """log of int Phi(alpha |f|^{n/(n-1)}) dx, finite whenever f is."""
    t = _exponents(ctx, f, alpha)
    w = f.grid.weights
    mask = (t > 0) & (w > 0)
    if not np.any(mask):
        return -math.inf
    terms = np.log(w[mask]) + log_phi(ctx, t[mask])
    return math.log(f.grid.omega) + float(logsumexp(terms))


def tm_functional(ctx: DimensionContext, f: RadialFunction, alpha: float) -> float:
    """int Phi(alpha |f|^{n/(n-1)}) dx.

    Above the overflow guard the sum is formed in log space and a
    FunctionalOverflowWarning is issued; a value beyond double range raises
    FunctionalOverflowError (carrying the log value) instead of returning inf.
    """
    t = _exponents(ctx, f, alpha)
    if t.max(initial=0.0) <= LOG_OVERFLOW:
        return f.grid.integrate(phi(ctx, t))
    warnings.warn(
        f"exponent {t.max():.1f} above {LOG_OVERFLOW}; evaluated in log form",
        FunctionalOverflowWarning,
        stacklevel=2,
    )
    log_value = log_tm_functional(ctx, f, alpha)
    if log_value > 709.0:
        raise FunctionalOverflowError(log_value)
    return math.exp(log_value)


GAUSS_POINTS = 16


class CellQuadrature:
    """Gauss-Legendre points on every cell for integrals of g(f_h) with f_h piecewise linear.

    `weights[i, p]` already contains omega r^{n-1} and the cell Jacobian, so
    int g(f_h) dx = sum weights * g(values_at(f)).
    """

    def __init__(self, grid: "RadialGrid", points: int = GAUSS_POINTS):
        x, w = np.polynomial.legendre.leggauss(points)
        self.s = 0.5 * (x + 1.0)
        a, b = grid.nodes[:-1, None], grid.nodes[1:, None]
        r = a + (b - a) * self.s
        self.weights = grid.omega * 0.5 * (b - a) * w * r ** (grid.n - 1)

    def values_at(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        return v[:-1, None] + (v[1:, None] - v[:-1, None]) * self.s

    def integrate(self, g) -> float:
        return float(np.sum(self.weights * g))

    def node_gradient(self, g) -> np.ndarray:
        """d/du_i of sum weights * G(f_h) given g = G'(f_h) at the points."""
        wg = self.weights * g
        out = np.zeros(wg.shape[0] + 1)
        out[:-1] += wg @ (1.0 - self.s)
        out[1:] += wg @ self.s
        return out


def gauss_integrate(f: "RadialFunction", func, points: int = GAUSS_POINTS) -> float:
    """int func(f_h) dx for the piecewise-linear interpolant f_h."""
    quad = CellQuadrature(f.grid, points)
    return quad.integrate(func(quad.values_at(f.values)))


def log_tm_functional_gauss(ctx: DimensionContext, f: RadialFunction, alpha: float, points: int = GAUSS_POINTS) -> float:
    """log of int Phi(alpha |f_h|^{n/(n-1)}) dx for the piecewise-linear interpolant f_h.

    Unlike the lumped node rule this stays accurate when the exponent varies
    strongly across a cell, e.g. a peak squeezed into the first cell.
    """
    if f.n != ctx.n:
        raise ValueError("dimension of context and profile differ")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    quad = CellQuadrature(f.grid, points)
    t = alpha * np.abs(quad.values_at(f.values)) ** ctx.q
    mask = (t > 0) & (quad.weights > 0)
    if not np.any(mask):
        return -math.inf
    return float(logsumexp(np.log(quad.weights[mask]) + log_phi(ctx, t[mask])))


def tm_functional_gauss(ctx: DimensionContext, f: RadialFunction, alpha: float, points: int = GAUSS_POINTS) -> float:
    log_value = log_tm_functional_gauss(ctx, f, alpha, points)
    if log_value > 709.0:
        raise FunctionalOverflowError(log_value)
    return math.exp(log_value)


def decay_bound(ctx: DimensionContext, L: float) -> float:
    """Pointwise bound u(L) <= (n / (omega L^n))^{1/n} for nonincreasing u of unit norm."""
    return (ctx.n / (ctx.omega * L**ctx.n)) ** (1.0 / ctx.n)


def tail_error_bar(ctx: DimensionContext, R: float, alpha: float) -> float:
    """Bound on int_{|x|>R} Phi(alpha u^{n/(n-1)}) for nonincreasing u of unit Sobolev norm.

    Uses u <= eps := decay_bound(R) outside B_R together with
    Phi(alpha u^q) <= u^n * Phi(alpha eps^q)/eps^n (Phi(t)/t^{n-1} increasing)
    and int u^n <= 1.
    """
    eps = decay_bound(ctx, R)
    return float(phi(ctx, alpha * eps**ctx.q)) / eps**ctx.n
