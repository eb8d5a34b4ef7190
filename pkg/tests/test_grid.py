import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scipy import integrate

from tmoser.constants import make_context, phi
from tmoser.grid import (
    COMPACT,
    DECAYING,
    CellQuadrature,
    FunctionalOverflowError,
    FunctionalOverflowWarning,
    RadialFunction,
    build_grid,
    decay_bound,
    dirichlet_energy,
    gauss_integrate,
    grid_from_nodes,
    ln_norm_pow,
    log_tm_functional,
    normalize,
    sobolev_norm,
    tail_error_bar,
    tm_functional,
    tm_functional_gauss,
)


def test_build_grid_two_dimensions():
    g = build_grid(2, 1.0, 64, 64, 1e-3)
    assert g.size == 129
    assert g.outer_radius == 1.0
    assert abs(g.volume() - math.pi) / math.pi < 1e-10


def test_build_grid_three_dimensions():
    g = build_grid(3, 10.0, 32, 32, 1e-2)
    vol = 4 * math.pi / 3 * 1000
    assert abs(g.volume() - vol) / vol < 1e-10


@pytest.mark.parametrize(
    "args",
    [(2, -1.0, 64, 64, 1e-3), (2, 0.0, 64, 64, 1e-3), (2, 1.0, 4, 64, 1e-3), (2, 1.0, 64, 7, 1e-3), (2, 1.0, 64, 64, 2.0)],
)
def test_build_grid_rejects(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_grid_invariants():
    with pytest.raises(ValueError):
        grid_from_nodes(2, np.linspace(0, 1, 10))
    with pytest.raises(ValueError):
        grid_from_nodes(2, np.r_[np.linspace(0, 1, 20), 0.5])
    g = build_grid(4, 3.0, 16, 16, 0.3)
    assert np.all(g.weights > 0)
    assert np.all(g.energy_factors > 0)


@pytest.mark.parametrize("n", [2, 3, 4, 7])
def test_linear_functions_integrate_exactly(n):
    g = build_grid(n, 2.5, 24, 40, 0.25)
    r = g.nodes
    a, b = 0.7, -0.3
    exact = g.omega * (a * 2.5**n / n + b * 2.5 ** (n + 1) / (n + 1))
    assert g.integrate(a + b * r) == pytest.approx(exact, rel=1e-12)


def test_breakpoints_inserted():
    g = build_grid(2, 1.0, 32, 32, 0.1)
    h = g.with_breakpoints([0.123456, 0.5, 2.0])
    assert 0.123456 in h.nodes and 0.5 in h.nodes
    assert h.outer_radius == 1.0


def test_dirichlet_energy_constant_is_zero():
    g = build_grid(3, 2.0, 32, 32, 0.2)
    assert dirichlet_energy(RadialFunction(g, np.full(g.size, 3.0))) == 0.0


def test_dirichlet_energy_truncated_log():
    eps = 1e-3
    nodes = np.concatenate([[0.0], np.geomspace(eps * 1e-2, 1.0, 2000)])
    g = grid_from_nodes(2, nodes).with_breakpoints([eps])
    vals = np.log(1 / np.maximum(g.nodes, eps))
    f = RadialFunction(g, vals, COMPACT)
    exact = 2 * math.pi * math.log(1 / eps)
    assert abs(dirichlet_energy(f) - exact) / exact < 1e-3


def test_dirichlet_energy_tiny_cells_do_not_overflow():
    nodes = np.concatenate([[0.0], np.geomspace(1e-200, 1.0, 4000)])
    g = grid_from_nodes(2, nodes)
    f = RadialFunction(g, np.log(1 / np.maximum(g.nodes, 1e-200)) / 460.0)
    assert math.isfinite(dirichlet_energy(f))


def test_ln_norm_examples():
    g = build_grid(2, 1.0, 64, 64, 0.1)
    assert ln_norm_pow(RadialFunction(g, np.zeros(g.size))) == 0.0
    assert ln_norm_pow(RadialFunction(g, np.ones(g.size))) == pytest.approx(math.pi, rel=1e-10)
    g3 = grid_from_nodes(3, np.linspace(0, 30, 30001))
    f = RadialFunction(g3, np.exp(-g3.nodes))
    assert ln_norm_pow(f) == pytest.approx(8 * math.pi / 27, rel=1e-6)


def test_sobolev_norm_homogeneity():
    g = build_grid(3, 2.0, 32, 64, 0.2)
    f = RadialFunction(g, np.exp(-g.nodes**2))
    assert sobolev_norm(RadialFunction(g, np.zeros(g.size))) == 0.0
    for t in (0.1, 3.0, 17.0):
        assert abs(sobolev_norm(f.scaled(t)) - t * sobolev_norm(f)) <= 1e-12 * t * sobolev_norm(f)


def test_tm_functional_examples(ctx2):
    g = build_grid(2, 1.0, 64, 64, 0.1)
    assert tm_functional(ctx2, RadialFunction(g, np.zeros(g.size)), 1.0) == 0.0
    one = RadialFunction(g, np.ones(g.size))
    assert tm_functional(ctx2, one, 1.0) == pytest.approx((math.e - 1) * math.pi, rel=1e-8)
    with pytest.raises(ValueError):
        tm_functional(ctx2, one, 0.0)


def test_tm_functional_overflow_guard(ctx2):
    g = build_grid(2, 1.0, 32, 32, 0.1)
    f = RadialFunction(g, np.where(g.nodes < 0.05, 8.4, 0.0))
    with pytest.warns(FunctionalOverflowWarning):
        v = tm_functional(ctx2, f, 10.0)
    assert math.log(v) == pytest.approx(log_tm_functional(ctx2, f, 10.0), rel=1e-12)
    huge = RadialFunction(g, np.full(g.size, 40.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FunctionalOverflowWarning)
        with pytest.raises(FunctionalOverflowError) as info:
            tm_functional(ctx2, huge, 12.0)
    assert math.isfinite(info.value.log_value)


def _interpolant_integral(f, func):
    """Cell-by-cell adaptive quadrature of func(f_h) r^{n-1} omega."""
    g = f.grid
    total = 0.0
    for a, b, ya, yb in zip(g.nodes[:-1], g.nodes[1:], f.values[:-1], f.values[1:]):
        total += integrate.quad(lambda r: func(ya + (yb - ya) * (r - a) / (b - a)) * r ** (g.n - 1), a, b, epsabs=0, epsrel=1e-13)[0]
    return g.omega * total


@pytest.mark.parametrize("n", [2, 3, 4])
def test_gauss_integrate_matches_adaptive_oracle(n):
    g = build_grid(n, 1.0, 24, 24, 0.1)
    f = RadialFunction(g, (2 + np.cos(3 * g.nodes)) * (1 - g.nodes))
    for func in (lambda v: v**5, lambda v: np.exp(2 * v), lambda v: 1 / (1 + v)):
        assert gauss_integrate(f, func) == pytest.approx(_interpolant_integral(f, func), rel=1e-11)


def test_gauss_integrate_exact_for_polynomials():
    # (1 - r)^2 r^2 has degree 4, so three points per cell are exact
    g = grid_from_nodes(3, np.linspace(0.0, 1.0, 17))
    f = RadialFunction(g, 1 - g.nodes)
    assert gauss_integrate(f, np.square, points=3) == pytest.approx(4 * math.pi / 30, rel=1e-14)


def test_gauss_survives_peak_in_first_cell(ctx2):
    # all of the height sits at the origin node; the lumped rule charges it the
    # whole first-cell weight while the interpolant drops off at once
    g = grid_from_nodes(2, np.concatenate([[0.0], np.linspace(0.02, 1.0, 20)]))
    vals = np.zeros(g.size)
    vals[0] = 1.2
    f = RadialFunction(g, vals)
    alpha = 0.95 * ctx2.alpha_n
    oracle = _interpolant_integral(f, lambda v: phi(ctx2, alpha * v**2))
    assert tm_functional_gauss(ctx2, f, alpha) == pytest.approx(oracle, rel=1e-7)
    assert tm_functional(ctx2, f, alpha) > 2 * oracle


def test_gauss_and_lumped_agree_when_resolved(ctx3):
    g = build_grid(3, 1.0, 400, 400, 0.1)
    f = RadialFunction(g, 1 - g.nodes**2)
    assert tm_functional_gauss(ctx3, f, 2.0) == pytest.approx(tm_functional(ctx3, f, 2.0), rel=1e-4)


def test_cell_quadrature_gradient_matches_differences(ctx2):
    g = build_grid(2, 1.0, 16, 16, 0.1)
    quad = CellQuadrature(g)
    vals = 1 - g.nodes + 0.1 * np.sin(5 * g.nodes)

    def total(v):
        return quad.integrate(np.exp(quad.values_at(v)))

    grad = quad.node_gradient(np.exp(quad.values_at(vals)))
    d = np.random.default_rng(0).standard_normal(g.size)
    h = 1e-5
    fd = (total(vals + h * d) - total(vals - h * d)) / (2 * h)
    assert np.dot(grad, d) == pytest.approx(fd, rel=1e-8)


def test_gauss_functional_overflow(ctx2):
    g = build_grid(2, 1.0, 32, 32, 0.1)
    with pytest.raises(FunctionalOverflowError):
        tm_functional_gauss(ctx2, RadialFunction(g, np.full(g.size, 40.0)), 12.0)


def test_normalize():
    g = build_grid(2, 1.0, 32, 64, 0.1)
    f = RadialFunction(g, 5 * (1 - g.nodes), COMPACT)
    u = normalize(f)
    assert abs(sobolev_norm(u) - 1) < 1e-12
    assert np.max(np.abs(normalize(u).values - u.values)) < 1e-14
    with pytest.raises(ValueError):
        normalize(RadialFunction(g, np.zeros(g.size), COMPACT))


def test_normalization_removes_scale(ctx2):
    g = build_grid(2, 1.0, 32, 64, 0.1)
    f1 = RadialFunction(g, (1 - g.nodes) ** 2, COMPACT)
    f2 = RadialFunction(g, 1 - g.nodes**2, COMPACT)
    base = tm_functional(ctx2, normalize(f1), 10.0) > tm_functional(ctx2, normalize(f2), 10.0)
    scaled = tm_functional(ctx2, normalize(f1.scaled(7.0)), 10.0) > tm_functional(ctx2, normalize(f2.scaled(0.01)), 10.0)
    assert base == scaled


def test_compact_support_must_vanish():
    g = build_grid(2, 1.0, 16, 16, 0.1)
    with pytest.raises(ValueError):
        RadialFunction(g, np.ones(g.size), COMPACT)
    with pytest.raises(ValueError):
        RadialFunction(g, np.full(g.size, np.nan))
    with pytest.raises(ValueError):
        RadialFunction(g, np.ones(g.size), "periodic")


def test_refinement_convergence(ctx3):
    g = build_grid(3, 4.0, 64, 256, 0.4)
    f = RadialFunction(g, np.exp(-g.nodes**2))
    h = g.refined()
    fh = RadialFunction(h, np.exp(-h.nodes**2))
    for fn in (dirichlet_energy, ln_norm_pow, lambda u: tm_functional(ctx3, u, 5.0)):
        a, b = fn(f), fn(fh)
        assert abs(a - b) / abs(b) < 1e-3


def test_csv_round_trip(tmp_path):
    g = build_grid(3, 2.0, 16, 16, 0.2)
    f = RadialFunction(g, np.exp(-g.nodes))
    f.to_csv(tmp_path / "f.csv")
    text = (tmp_path / "f.csv").read_text().splitlines()
    assert text[0] == "r,value"
    meta = json.loads((tmp_path / "f.json").read_text())
    assert meta["n"] == 3 and meta["boundary_kind"] == DECAYING and meta["R"] == 2.0
    back = RadialFunction.from_csv(tmp_path / "f.csv")
    assert np.array_equal(back.values, f.values) and np.array_equal(back.grid.nodes, g.nodes)


def test_decay_bound_and_tail(ctx2):
    g = build_grid(2, 30.0, 64, 400, 1.0)
    f = normalize(RadialFunction(g, np.exp(-g.nodes), DECAYING))
    for L in (1.0, 3.0, 10.0):
        assert f(L) <= decay_bound(ctx2, L)
    assert tail_error_bar(ctx2, 30.0, ctx2.alpha_n) > 0


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(2, 5),
    coef=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    t=st.floats(0.01, 100),
    a1=st.floats(0.1, 5),
    a2=st.floats(0.1, 5),
)
def test_random_profile_properties(n, coef, t, a1, a2):
    ctx = make_context(n)
    g = build_grid(n, 2.0, 16, 32, 0.2)
    r = g.nodes / 2.0
    vals = np.abs(coef[0] + coef[1] * np.cos(3 * r) + coef[2] * r**2) * (1 - r)
    f = RadialFunction(g, vals, COMPACT)
    norm = sobolev_norm(f)
    assert abs(sobolev_norm(f.scaled(t)) - t * norm) <= 1e-12 * max(t * norm, 1e-300)
    lo, hi = sorted((a1, a2))
    assert tm_functional(ctx, f, lo) <= tm_functional(ctx, f, hi)
    assert tm_functional(ctx, f, lo) >= 0
