import numpy as np
import pytest

from carleman_lab.config import default_config
from carleman_lab.geometry import Ellipse, OuterDomain, Superellipse, estimate_constants
from carleman_lab.medium import Constant, MediumSpec
from carleman_lab.scenario import build_scenario
from carleman_lab.weights import (BetaOutOfWindow, DegenerateCenters, InvalidConstants, SpaceTimeWeight,
                                  build_mu, build_theta, choose_horizon, compute_beta_budget,
                                  epsilon_constraints, epsilon_formula, gamma_plus, smoothstep,
                                  verify_transmission)

DISK = Ellipse((0, 0), (1, 1))
OUTER = OuterDomain.disk(2.0)


@pytest.fixture(scope="module")
def sc():
    return build_scenario(default_config())


def test_smoothstep_ramp():
    t = np.linspace(-1, 2, 3001)
    s = smoothstep(t)
    assert np.all(s[t <= 0] == 0) and np.all(s[t >= 1] == 1)
    assert np.all(np.diff(s) >= 0)
    assert smoothstep(0.5) == pytest.approx(0.5, abs=1e-15)


def test_build_mu_disk_example():
    mu = build_mu(DISK, OUTER, (0, 0), 2.0, 1.5, 0.1, 0.05)
    assert mu.M2 == 0.5
    y = DISK.boundary(np.linspace(0, 2 * np.pi, 64, endpoint=False))[0]
    np.testing.assert_allclose(mu.branch1(y), 2.5, rtol=0, atol=1e-14)
    np.testing.assert_allclose(mu.branch2(y), 2.5, rtol=0, atol=1e-14)
    assert mu.value(np.array([0.0, 0.0])) == 1.5
    with pytest.raises(InvalidConstants):
        build_mu(DISK, OUTER, (0, 0), 2.0, 1.0, 0.1, 0.05)


def test_ellipse_flux_identity_analytic():
    body = Ellipse((0, 0), (1.0, 0.6))
    mu = build_mu(body, OuterDomain.disk(2.0), (0.2, 0.1), 10.0, 9.5, 0.1, 0.05)
    rep = verify_transmission(mu, 512, "analytic")
    assert rep.flux <= 1e-8 and rep.continuity <= 1e-10


def test_transmission_disk_and_superellipse():
    mu = build_mu(DISK, OUTER, (0, 0), 2.0, 2.0, 0.1, 0.05)
    rep = verify_transmission(mu, 256)
    assert rep.min_dnu1 == pytest.approx(2.0, rel=1e-12) and rep.bound == 0.5 and rep.passed
    body = Superellipse((0, 0), (1.0, 0.8))
    mu = build_mu(body, OuterDomain.disk(1.5), (0.1, 0.0), 3.0, 3.0, 0.1, 0.05)
    rep = verify_transmission(mu, 512, "fd")
    assert rep.continuity <= 1e-10 and rep.flux <= 1e-6


def test_gamma_plus_disk_cases():
    for c in ((0.0, 0.0), (0.4, -0.3)):
        mu = build_mu(DISK, OUTER, c, 2.0, 2.0, 0.1, 0.05)
        assert gamma_plus(mu, OUTER).is_full


def test_gamma_plus_proper_subarc_matches_dense_sampling():
    body = Ellipse((-0.85, -0.85), (0.9, 0.2))
    outer = OuterDomain((0.0, 0.0), (2.7, 2.1))
    c = np.array([-0.85, -0.85])
    mu = build_mu(body, outer, c, 2.0, 2.0, 0.01, 0.005)
    arcs = gamma_plus(mu, outer, 1024)
    assert not arcs.is_full and arcs.intervals
    th = np.linspace(0, 2 * np.pi, 20000, endpoint=False)
    x = np.stack([2.7 * np.cos(th), 2.1 * np.sin(th)], axis=-1)
    nu = np.stack([np.cos(th) / 2.7, np.sin(th) / 2.1], axis=-1)
    grad = 2.0 * 2.0 * (x - c) / np.array([0.9, 0.2]) ** 2
    dn = np.sum(grad * nu, axis=-1)
    clear = np.abs(dn) > 1e-3 * np.abs(dn).max()
    assert np.array_equal(arcs.contains(th)[clear], (dn > 0)[clear])


def test_beta_budget_interface_and_constant_coefficient_examples():
    medium = MediumSpec(Constant(2.0), Constant(1.0), 1.0, 2.0, rho=0.5)
    k = estimate_constants(DISK, OUTER, (0, 0), 0.1, 0.05)
    mu = build_mu(DISK, OUTER, (0, 0), 2.5, 2.0, 0.1, 0.05)
    b = compute_beta_budget((mu, mu), medium, (k, k))
    c = b.centers[0]
    assert c.b_interface == pytest.approx(1.0 / 24.0, rel=1e-14)
    assert b.r == 0.0
    assert c.b_firstorder == 1.0 * k.m1 * 0.5 / 2.0
    assert b.T0 == pytest.approx(b.L / np.sqrt(b.beta0), rel=1e-14)
    assert c.beta1 == min(c.b_interface, c.b_firstorder, c.b_zeroth_a, c.b_zeroth_b)


def test_beta_budget_default_scenario_positive_and_refinement_stable(sc):
    b = sc.budget
    for c in b.centers:
        assert min(c.b_interface, c.b_firstorder, c.b_zeroth_a, c.b_zeroth_b) > 0
    ks = tuple(estimate_constants(sc.body, sc.outer, x, sc.eps, sc.eps1, 128, grad_mu=m.grad)
               for x, m in zip(sc.centers, sc.mus))
    b2 = compute_beta_budget(sc.mus, sc.medium, ks, 128)
    for c, c2 in zip(b.centers, b2.centers):
        assert abs(c2.beta1 - c.beta1) <= 0.05 * c.beta1


def test_budget_monotone_in_alpha_lo(sc):
    vals = []
    for a0 in (1.0, 0.8, 0.5, 0.2):
        m = MediumSpec(sc.medium.a1, sc.medium.a2, a0, sc.medium.alpha_hi, sc.medium.rho,
                       sc.medium.potential_bound)
        vals.append(compute_beta_budget(sc.mus, m, sc.constants).beta0)
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_horizon_window(sc):
    b = sc.budget
    T, beta = choose_horizon(b)
    assert T == pytest.approx(1.05 * b.T0) and b.L**2 / T**2 < beta < b.beta0
    with pytest.raises(BetaOutOfWindow):
        choose_horizon(b, T=0.99 * b.T0)
    x = sc.discretization(32).xy_inside()
    w = sc.weights[0]
    assert np.all(w.phi(T, x) < 0) and np.all(w.phi(-T, x) < 0)


def test_theta_levels_and_endpoints(sc):
    th = sc.theta(1.2 * 2 / 128, 0)
    mu = th.weight.mu
    # a point on the mu = M1 + 2 eps_tilde level set inside the body, by bisection along a ray
    d = np.array([0.0, 1.0])
    lo, hi = 0.0, 0.5
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mu.value(mu.c + mid * d) < mu.M1 + 2 * th.eps_tilde:
            lo = mid
        else:
            hi = mid
    x = mu.c + lo * d
    assert th.value(0.0, x[None])[0] == 1.0
    pts = sc.discretization(32).xy_inside()
    T = th.weight.T
    assert np.all(th.value(T, pts) == 0) and np.all(th.value(-T, pts) == 0)


def test_theta_normal_derivative_on_interface(sc):
    h = 1.2 * 2 / 128
    th = sc.theta(h, 1)
    ang = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    y, nu = sc.body.boundary(ang)[:2]
    for t in (0.0, 5.0, 12.0, 20.0):
        fd = (th.value(t, y + 1e-4 * nu) - th.value(t, y - 1e-4 * nu)) / 2e-4
        assert np.max(np.abs(fd)) <= 1e-10


def test_theta_rejects_bad_parameters(sc):
    w = sc.weights[0]
    with pytest.raises(Exception):
        build_theta(w, sc.eps**2 / sc.outer.diam**2, 0.1)
    bad = SpaceTimeWeight(w.mu, 0.5 * sc.budget.L**2 / w.T**2, w.T)
    with pytest.raises(BetaOutOfWindow):
        build_theta(bad, sc.eps_tilde, 0.1, sc.budget)


def test_weight_difference_near_centers(sc):
    m1, m2 = sc.mus
    rng = np.random.default_rng(0)
    for i, (a, b) in enumerate(((m2, m1), (m1, m2))):
        c = np.asarray(sc.centers[i])
        r = sc.eps * np.sqrt(rng.uniform(0, 1, 4000))
        ph = rng.uniform(0, 2 * np.pi, 4000)
        x = c + np.stack([r * np.cos(ph), r * np.sin(ph)], axis=-1)
        assert np.min(a.value(x) - b.value(x)) >= sc.eps_tilde


def test_epsilon_constraints_examples():
    ec = epsilon_constraints((-0.3, 0), (0.3, 0), DISK, OUTER)
    assert ec.d == pytest.approx(0.3, rel=1e-15)
    assert epsilon_formula(0.3, 0.7, 1.3, 4.0) == pytest.approx(
        (0.3 / 1.3) * (4 * 0.7 / np.sqrt(0.49 + 16)), rel=1e-15)
    assert epsilon_formula(0.3, 0.7, 1.3, 4.0) == pytest.approx(0.1591, abs=1e-4)
    # dist(x1, interface) = 0.7, farthest interface point from x2 is 1.3 away
    assert ec.d1 == pytest.approx(epsilon_formula(0.3, 0.7, 1.3, 4.0), rel=1e-6)
    assert ec.eps_max == min(ec.d, ec.d1, ec.d2)
    with pytest.raises(DegenerateCenters):
        epsilon_constraints((0.1, 0), (0.1, 0), DISK, OUTER)


def test_eps_fraction_acceptance():
    from carleman_lab.config import ValidationError
    cfg = default_config()
    cfg.geometry.eps_fraction = 0.9
    sc = build_scenario(cfg, require_eps=True)
    assert sc.eps < sc.eps_constraints.eps_max
    cfg.geometry.eps_fraction = 1.1
    with pytest.raises(ValidationError):
        build_scenario(cfg, require_eps=True)
