"""Decreasing radial rearrangement.

The output keeps the node values of the input, sorted in decreasing order, and
each node keeps its quadrature mass as an explicit weight, so every integral
int F(f) dx is preserved up to summation rounding.  Node positions come from
the exact distribution function of the piecewise-linear interpolant of f: the
node carrying value t sits at the radius of the ball of volume |{f > t}|, i.e.
on the graph of the continuous rearrangement.
"""

from __future__ import annotations

import numpy as np

from tmoser.grid import COMPACT, RadialFunction, RadialGrid, dirichlet_energy

_CHUNK = 256


def _check_nonnegative(f: RadialFunction) -> None:
    if np.any(f.values < 0):
        raise ValueError("rearrangement needs a nonnegative profile (take |f| first)")


def is_nonincreasing(f: RadialFunction) -> bool:
    return bool(np.all(np.diff(f.values) <= 0))


def distribution(f: RadialFunction, levels, strict: bool = True) -> np.ndarray:
    """|{f > t}| (or |{f >= t}| with strict=False) divided by omega, for the
    piecewise-linear interpolant of f."""
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    n = f.n
    a, b = f.grid.nodes[:-1], f.grid.nodes[1:]
    fa, fb = f.values[:-1], f.values[1:]
    full = (b**n - a**n) / n
    out = np.empty(levels.size)
    for start in range(0, levels.size, _CHUNK):
        t = levels[start : start + _CHUNK, None]
        above_a = fa > t if strict else fa >= t
        above_b = fb > t if strict else fb >= t
        vol = np.where(above_a & above_b, full, 0.0)
        cross = above_a ^ above_b
        with np.errstate(divide="ignore", invalid="ignore"):
            rc = a + (t - fa) / (fb - fa) * (b - a)
        rc = np.clip(np.where(cross, rc, a), a, b)
        part = np.where(above_a, (rc**n - a**n) / n, (b**n - rc**n) / n)
        vol = vol + np.where(cross, part, 0.0)
        out[start : start + _CHUNK] = vol.sum(axis=1)
    return out


def decreasing_rearrangement(f: RadialFunction) -> RadialFunction:
    """Nonincreasing, equimeasurable replacement of f (f itself if already nonincreasing)."""
    _check_nonnegative(f)
    if is_nonincreasing(f):
        return f
    n = f.n
    order = np.argsort(-f.values, kind="stable")
    values = f.values[order]
    weights = f.grid.weights[order]
    total = f.grid.outer_radius**n / n

    uniq, start, counts = np.unique(-values, return_index=True, return_counts=True)
    levels = -uniq
    lo = distribution(f, levels, strict=True)
    hi = distribution(f, levels, strict=False)
    # tied nodes share the flat part [lo, hi] in proportion to their masses
    vol = np.empty(values.size)
    for t_lo, t_hi, s, c in zip(lo, hi, start, counts):
        w = weights[s : s + c]
        frac = (np.cumsum(w) - 0.5 * w) / w.sum()
        vol[s : s + c] = t_lo + (t_hi - t_lo) * frac
    vol = np.clip(vol, 0.0, total)
    vol[0] = 0.0 if counts[0] > 1 or lo[0] == 0.0 else vol[0]
    vol[-1] = total
    nodes = (n * vol) ** (1.0 / n)
    nodes[-1] = f.grid.outer_radius

    values, weights, nodes = _merge_collisions(values, weights, nodes)
    grid = RadialGrid(n, nodes, dict(f.grid.grading, rearranged=True), explicit_weights=weights)
    if f.boundary_kind == COMPACT:
        values = values.copy()
        values[-1] = 0.0
    return RadialFunction(grid, values, f.boundary_kind)


def _merge_collisions(values, weights, nodes):
    """Fuse nodes whose radii coincide in floating point (mass-weighted value)."""
    nodes = np.maximum.accumulate(nodes)
    new = np.concatenate([[True], np.diff(nodes) > 0])
    if new.all():
        return values, weights, nodes
    group = np.cumsum(new) - 1
    w = np.bincount(group, weights)
    v = np.bincount(group, weights * values) / np.where(w > 0, w, 1.0)
    # keep the extreme values at the ends
    v[0], v[-1] = values[0], values[-1]
    return v, w, nodes[new]


def rearrange_onto(f: RadialFunction, grid: RadialGrid) -> RadialFunction:
    """Rearrange f and sample the result on `grid`.  Monotonicity is exact,
    equimeasurability holds up to interpolation error."""
    star = decreasing_rearrangement(f)
    values = np.minimum.accumulate(np.asarray(star(grid.nodes), dtype=float))
    if f.boundary_kind == COMPACT:
        values[-1] = 0.0
    return RadialFunction(grid, values, f.boundary_kind)


def superlevel_volume(f: RadialFunction, t: float) -> float:
    """|{f > t}| on the node measure."""
    return f.grid.omega * float(f.grid.weights[f.values > t].sum())


def polya_szego_check(f: RadialFunction) -> tuple[float, float]:
    """Dirichlet energies of f and of its decreasing rearrangement."""
    _check_nonnegative(f)
    return dirichlet_energy(f), dirichlet_energy(decreasing_rearrangement(f))
