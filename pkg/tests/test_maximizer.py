import dataclasses
import json
import math

import numpy as np
import pytest
from scipy import integrate

from tmoser.constants import make_context
from tmoser.grid import (
    COMPACT,
    RadialFunction,
    build_grid,
    grid_from_nodes,
    ln_norm_pow,
    normalize,
    sobolev_norm,
    tm_functional,
    tm_functional_gauss,
)
from tmoser.maximizer import (
    MaximizerOptions,
    blowup_diagnostics,
    concentration_radius,
    dichotomy_report,
    el_residual,
    lagrange_multiplier,
    maximize_on_ball,
    outer_energy,
    reference_values,
    schedule,
    seed_profiles,
    truncation_energy,
)
from tmoser.profiles import moser_function


@pytest.fixture(scope="module")
def ctx():
    return make_context(2)


@pytest.fixture(scope="module")
def best(ctx):
    return maximize_on_ball(ctx, 1.0, 0.9 * ctx.alpha_n)


def test_five_starts_agree(best):
    assert len(best.seed_values) == 5
    assert best.seed_spread < 1e-6
    assert best.seeds_agree


def test_solution_is_admissible(best):
    u = best.u
    assert u.boundary_kind == COMPACT
    assert u.values[-1] == 0.0
    assert np.all(np.diff(u.values) <= 0)
    assert abs(sobolev_norm(u) - 1) < 1e-10
    assert best.c_k == u.values[0]


def test_value_matches_functional(ctx, best):
    assert best.value == pytest.approx(tm_functional_gauss(ctx, best.u, best.beta), rel=1e-12)
    # the lumped rule agrees once the profile is resolved
    assert best.value == pytest.approx(tm_functional(ctx, best.u, best.beta), rel=1e-3)


def test_euler_lagrange_residual(ctx, best):
    assert best.el_residual < 1e-4
    assert best.lambda_k > 0


def test_residual_detects_perturbation(ctx, best):
    r = best.u.grid.nodes
    bump = np.exp(-((r - 0.4) / 0.1) ** 2)
    bump[-1] = 0.0
    v = normalize(best.u.with_values(best.u.values + 0.02 * bump))
    fake = dataclasses.replace(best, u=v, lambda_k=lagrange_multiplier(ctx, v, best.beta))
    assert el_residual(ctx, fake) >= 10 * best.el_residual


def test_residual_shrinks_under_refinement(ctx):
    opts = MaximizerOptions(seeds=1)
    coarse = maximize_on_ball(ctx, 1.0, 0.9 * ctx.alpha_n, build_grid(2, 1.0, 128, 192, 0.1, r_min=1e-5), opts)
    fine = maximize_on_ball(ctx, 1.0, 0.9 * ctx.alpha_n, build_grid(2, 1.0, 256, 384, 0.1, r_min=1e-5), opts)
    assert fine.el_residual < 0.5 * coarse.el_residual
    assert fine.value == pytest.approx(coarse.value, rel=1e-3)


def test_ascent_history_nondecreasing(best):
    h = best.history
    assert len(h) >= 2
    assert all(b >= a for a, b in zip(h, h[1:]))


def test_lagrange_multiplier_independent_quadrature(ctx, best):
    # for n = 2, Phi'(t) = e^t, so lambda = int u^2 e^{beta u^2} dx
    u = best.u
    nodes = u.grid.nodes

    def integrand(r):
        v = float(u(r))
        return 2 * math.pi * r * v * v * math.exp(best.beta * v * v)

    pieces = [integrate.quad(integrand, a, b)[0] for a, b in zip(nodes[:-1], nodes[1:])]
    assert best.lambda_k == pytest.approx(sum(pieces), rel=1e-3)


def test_lagrange_multiplier_of_zero(ctx):
    g = build_grid(2, 1.0, 16, 16, 0.1)
    assert lagrange_multiplier(ctx, RadialFunction(g, np.zeros(g.size), COMPACT), 5.0) == 0.0


def test_beats_reference_profiles(ctx, best, greens):
    refs = reference_values(ctx, best, greens[2])
    assert any(k.startswith("glued") for k in refs)
    assert any(k.startswith("moser") for k in refs)
    assert best.value >= max(refs.values())


def test_rejects_supercritical_beta(ctx):
    with pytest.raises(ValueError):
        maximize_on_ball(ctx, 1.0, 1.01 * ctx.alpha_n)


def test_rejects_zero_start(ctx):
    g = build_grid(2, 1.0, 32, 32, 0.1)
    with pytest.raises(ValueError):
        maximize_on_ball(ctx, 1.0, 5.0, g, initial=np.zeros(g.size))


def test_rejects_grid_radius_mismatch(ctx):
    with pytest.raises(ValueError):
        maximize_on_ball(ctx, 2.0, 5.0, build_grid(2, 1.0, 32, 32, 0.1))


def test_seeds_are_deterministic(ctx):
    g = build_grid(2, 1.0, 32, 32, 0.1)
    a = seed_profiles(ctx, g, 4, seed=7)
    b = seed_profiles(ctx, g, 4, seed=7)
    c = seed_profiles(ctx, g, 4, seed=8)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(a[1], c[1])
    assert all(np.all(s >= 0) for s in a)


def test_iteration_log(ctx, tmp_path):
    path = tmp_path / "run.jsonl"
    opts = MaximizerOptions(seeds=2, log_path=str(path))
    maximize_on_ball(ctx, 1.0, 0.5 * ctx.alpha_n, build_grid(2, 1.0, 64, 64, 0.1), opts)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert sum("start" in x for x in lines) == 2
    steps = [x for x in lines if "iter" in x]
    assert steps and set(steps[0]) == {"iter", "value", "norm_residual", "c_k"}


def test_three_dimensional_run():
    ctx3 = make_context(3)
    res = maximize_on_ball(ctx3, 1.0, 0.8 * ctx3.alpha_n, opts=MaximizerOptions(seeds=2))
    assert res.seed_spread < 1e-6
    assert res.lambda_k > 0
    assert abs(sobolev_norm(res.u) - 1) < 1e-10


def test_to_files(best, tmp_path):
    best.to_files(tmp_path / "m.csv")
    meta = json.loads((tmp_path / "m_result.json").read_text())
    assert meta["value"] == best.value
    back = RadialFunction.from_csv(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.values, best.u.values)


# ---------------------------------------------------------------- diagnostics


def test_rescaled_profile_starts_at_zero(ctx, best):
    d = blowup_diagnostics(ctx, best, L=5.0)
    assert d.w_rescaled.values[0] == 0.0
    assert d.r_k == pytest.approx(concentration_radius(ctx, best))
    assert np.all(np.diff(d.w_rescaled.values) <= 1e-12)
    assert set(d.truncation_energy) == {2, 4, 8}


def test_concentration_radius_definition(ctx, best):
    cq = best.c_k**2
    expected = (best.lambda_k / (cq * math.exp(best.beta * cq))) ** 0.5
    assert concentration_radius(ctx, best) == pytest.approx(expected, rel=1e-12)


def test_truncation_energy_limits(ctx, best):
    u = best.u
    assert truncation_energy(ctx, u, 10 * best.c_k) == pytest.approx(1.0, rel=1e-10)
    e = [truncation_energy(ctx, u, best.c_k / A) for A in (1.5, 2, 4, 8)]
    assert all(b < a for a, b in zip(e, e[1:]))


def test_truncation_energy_of_moser_function(ctx):
    # Moser functions have unit Dirichlet energy split evenly in log r, so
    # truncating at c / A keeps 1/A of it (plus the small L^n part)
    nodes = np.concatenate([[0.0], np.geomspace(1e-13, 1.0, 4000)])
    f = moser_function(ctx, 2.0, 1.0, grid_from_nodes(2, nodes))
    for A in (2, 4, 8):
        t = truncation_energy(ctx, f, 2.0 / A)
        lower = 1.0 / A
        assert lower - 1e-4 <= t <= lower + ln_norm_pow(f) + 1e-4


def test_outer_energy_is_partial(ctx, best):
    total = outer_energy(best.u, 1e-12)
    assert total == pytest.approx(1.0, rel=1e-6)
    assert outer_energy(best.u, 0.5) < total


def test_dichotomy_bounded_peak(ctx):
    opts = MaximizerOptions(seeds=1)
    seq = schedule(ctx, [1.0, 2.0, 4.0], [0.8 * ctx.alpha_n] * 3, opts=opts)
    rep = dichotomy_report(seq)
    assert rep["classification"] == "bounded-peak"
    assert rep["min_lambda"] > 0
    values = rep["values"]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert rep["most_concentrated"] == int(np.argmax(rep["c_k"]))
    assert "green_comparison" not in rep


def test_dichotomy_with_green(ctx, best, greens):
    rep = dichotomy_report([best], greens[2], delta=0.5)
    comp = rep["green_comparison"]
    assert comp["G"] > 0 and comp["scaled_u"] > 0


def test_dichotomy_rejects_empty():
    with pytest.raises(ValueError):
        dichotomy_report([])
