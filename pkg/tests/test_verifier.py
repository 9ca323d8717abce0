import math

import numpy as np
import pytest

from carleman_lab.config import default_config
from carleman_lab.manufactured import compact_bump
from carleman_lab.scenario import build_scenario, make_potential
from carleman_lab.solver import ScenarioData, leapfrog, time_grid
from carleman_lab.verifier import (GROUPS, KILLED, RHS_GROUPS, IntegralGroups, SpaceTimeField, VerifierError,
                                   closed_curve_simpson, default_s_grid, estimate_s0, evaluate_groups,
                                   folded_time_weights, make_setup, quad_boundary, quad_volume, summarize,
                                   sweep_s, time_stride, wave_field_family)
from carleman_lab.weights import ArcSet

N_CELLS = 48


@pytest.fixture(scope="module")
def sc():
    return build_scenario(default_config())


@pytest.fixture(scope="module")
def setup(sc):
    d = sc.discretization(N_CELLS)
    w = sc.weights[0]
    mu_sup = float(np.max(w.mu.value(d.xy_inside())))
    q = make_potential(sc.cfg.verifier.potential)
    return make_setup(d, w, default_s_grid(mu_sup, 8), q, sc.gamma_plus[0])


def short_field(d, T, f):
    """Odd-in-time field v(t, x) = sin(t) f(x) sampled on the solver time grid."""
    tg = time_grid(d, T)
    t = tg.dt * np.arange(tg.nt + 2)
    return SpaceTimeField(d, tg.dt, np.sin(t)[:, None] * d.restrict(f)[None, :])


def test_volume_quadrature_area(sc):
    d = sc.discretization(128)
    tg = time_grid(d, 2.0)
    tw = folded_time_weights(tg.times())
    ones = np.ones((len(tw), d.n_inside))
    val = quad_volume(ones, 1.0, None, d.h, tw)
    assert val == pytest.approx(math.pi * 1.2**2 * 2 * 2.0, rel=0.01)
    assert quad_volume(ones, 1.0, np.zeros(d.n_inside, bool), d.h, tw) == 0.0


def test_negative_region_indicator_refinement(sc):
    w = sc.weights[0]
    vals, fracs = [], []
    for n in (64, 128):
        d = sc.discretization(n)
        x = d.xy_inside()
        mu = w.mu.value(x)
        t = 0.8 * w.T
        neg = mu < w.beta * t * t
        vals.append(quad_volume(np.ones(d.n_inside), 1.0, neg, d.h))
        # cells whose neighbourhood straddles the level set
        band = np.abs(mu - w.beta * t * t) <= np.max(np.linalg.norm(w.mu.grad(x), axis=-1)) * d.h
        fracs.append(np.sum(band) / d.n_inside)
    assert abs(vals[1] - vals[0]) <= 2 * fracs[0] * d.area()


def test_boundary_quadrature_measure(sc):
    th, sw = ArcSet.full().quadrature(sc.outer)
    t = np.linspace(0, 3.0, 301)
    tw = folded_time_weights(t)
    val = quad_boundary(np.ones((len(t), len(th))), 1.0, sw, tw)
    assert val == pytest.approx(2 * math.pi * 1.2 * 2 * 3.0, rel=1e-3)
    assert quad_boundary(np.zeros((len(t), len(th))), 1.0, sw, tw) == 0.0
    th2, w2 = closed_curve_simpson(64)
    assert np.sum(w2) == pytest.approx(2 * math.pi, rel=1e-14)


def test_interface_weight_separability(sc):
    w = sc.weights[0]
    s = 3.0
    th, wi = closed_curve_simpson(128)
    pts, _, _, speed = sc.body.boundary(th)
    t = np.linspace(0, w.T, 201)
    tw = folded_time_weights(t)
    W = np.exp(2 * s * w.phi(t[:, None], pts[None, :, :]))
    val = quad_boundary(np.ones_like(W), W, wi * speed, tw)
    prod = np.exp(2 * s * (1 + w.mu.M1)) * np.sum(wi * speed) * np.sum(tw * np.exp(-2 * s * w.beta * t**2))
    assert val == pytest.approx(prod, rel=1e-12)


def test_zero_field_and_scaling(sc, setup):
    d = setup.disc
    zero = SpaceTimeField(d, 0.1, np.zeros((12, d.n_active)))
    for g in evaluate_groups(zero, setup.weight, None, setup.s_values, setup):
        assert all(g[k] == 0.0 for k in GROUPS)
        assert math.isnan(g.ratio)
    v = short_field(d, 3.0, compact_bump((0.2, 0.1), 0.5))
    g1 = evaluate_groups(v, setup.weight, None, setup.s_values, setup)
    v2 = SpaceTimeField(d, v.dt, 2.0 * v.values)
    g2 = evaluate_groups(v2, setup.weight, None, setup.s_values, setup)
    for a, b in zip(g1, g2):
        for k in GROUPS:
            assert b[k] == pytest.approx(4.0 * a[k], rel=1e-14, abs=0.0)


def test_boundary_group_vanishes_for_interior_support(setup):
    v = short_field(setup.disc, 3.0, compact_bump((0.0, 0.0), 0.4))
    for g in evaluate_groups(v, setup.weight, None, setup.s_values, setup):
        assert g["rhs_boundary"] == 0.0
        assert g["lhs_energy"] > 0


def test_residual_matches_source(sc, setup):
    d = setup.disc
    T = 2.0
    tg = time_grid(d, T)
    bump = compact_bump((0.1, 0.0), 0.5)
    f = lambda t, x: np.sin(3 * t) * bump(x)
    q = make_potential(sc.cfg.verifier.potential)
    data = ScenarioData(u0=0.0, u1=lambda x: bump(x), f=f)
    vals = np.array([u for _, _, u in leapfrog(d, tg, data, q, tg.nt + 1)])
    v = SpaceTimeField(d, tg.dt, vals)
    gs = evaluate_groups(v, setup.weight, q, setup.s_values, setup)
    fa = d.restrict(bump)
    w = setup.weight
    t = tg.times()
    tw = folded_time_weights(t)
    for j, s in enumerate(setup.s_values):
        tfac = np.exp(-2 * s * w.beta * t**2)
        per_t = (np.sin(3 * t) ** 2) * float(setup.W[j, setup.act_pos] @ (fa * fa)) * d.h**2
        ref = float(np.sum(tw * tfac * per_t))
        assert gs[j]["rhs_residual"] == pytest.approx(ref, rel=1e-8)


def test_groups_nonnegative_on_random_fields(sc, setup):
    d = setup.disc
    rng = np.random.default_rng(4)
    for _ in range(5):
        vals = rng.normal(size=(14, d.n_active))
        vals[0] = 0.0
        v = SpaceTimeField(d, 0.05, vals)
        for g in evaluate_groups(v, setup.weight, setup.q_act, setup.s_values, setup):
            assert all(g[k] >= 0.0 for k in GROUPS)


def test_theta_kills_groups_and_weights_monotone(sc, setup):
    d = setup.disc
    tg = time_grid(d, sc.T)
    q = make_potential(sc.cfg.verifier.potential)
    fam = wave_field_family(d, tg, q, 2, seed=5)
    rep = sweep_s(fam, setup, time_stride(tg.nt, 256), 1, sc.theta(d.h, 0), include_raw=True)
    assert rep.variants == ["raw", "theta", "raw", "theta"]
    assert rep.killed_fraction("theta") <= 1e-12
    for gs, var in zip(rep.groups, rep.variants):
        if var != "theta":
            continue
        for k in GROUPS:
            col = np.array([g[k] for g in gs])
            if np.all(col > 0):
                unshifted = np.log(col) + setup.log_shift
                assert np.all(np.diff(unshifted) >= -1e-9)


def test_sweep_threads_are_deterministic(sc, setup):
    d = setup.disc
    tg = time_grid(d, 4.0)
    fam = wave_field_family(d, tg, setup.q_act, 3, seed=2)
    a = sweep_s(fam, setup, 4, 1, None)
    b = sweep_s(fam, setup, 4, 3, None)
    assert list(a.rows()) == list(b.rows())
    with pytest.raises(VerifierError):
        make_short = make_setup(d, setup.weight, setup.s_values[:4], None, None)
        sweep_s(fam, make_short, 4, 1, None)


def test_s0_rule_and_degenerate_family():
    assert estimate_s0([5, 4, 3, 2, 1, 1, 1]) == 0
    assert estimate_s0([1, 2, 4, 8, 16, 32]) is None
    assert estimate_s0([1, 10, 1, 1.1, 1.12, 1.1]) == 1
    zero = IntegralGroups({k: 0.0 for k in GROUPS}, True)
    rep = summarize(np.arange(1, 9.0), np.zeros(8), [0], ["raw"], [[zero] * 8])
    assert rep.degenerate == [True] and rep.s0_index is None and rep.flags
    assert set(KILLED) <= set(RHS_GROUPS)
