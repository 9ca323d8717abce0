import numpy as np
import pytest

from carleman_lab.geometry import Ellipse, OuterDomain, estimate_constants
from carleman_lab.medium import (AngularHarmonic, Constant, MediumError, MediumSpec, Potential, Trig,
                                 check_multiplier, field_from_spec, gamma_interval, lambda_on_interface,
                                 verify_admissibility)

DISK = Ellipse((0, 0), (1, 1))
OUTER = OuterDomain.disk(2.0)


def consts(body=DISK, outer=OUTER, centers=((0.0, 0.0),), eps=0.1, density=64):
    return [estimate_constants(body, outer, c, eps, 0.5 * eps, density) for c in centers]


def test_lambda_constant_profiles():
    m = MediumSpec(Constant(4.0), Constant(1.0), 1.0, 4.0)
    p = lambda_on_interface(m, DISK, 64)
    assert p.min == p.max == 4.0
    m = MediumSpec(Constant(1.0), Constant(1.0), 1.0, 1.0)
    assert lambda_on_interface(m, DISK, 64).max == 1.0


def test_lambda_sampled_against_brute_force():
    a1 = AngularHarmonic(3.0, 0.2, 1, (0, 0), 1.0)
    m = MediumSpec(a1, Constant(1.0), 1.0, 3.3)
    p = lambda_on_interface(m, DISK, 512)
    th = np.linspace(0, 2 * np.pi, 10**4, endpoint=False)
    lam = a1.value(np.stack([np.cos(th), np.sin(th)], axis=-1))
    assert p.min == pytest.approx(lam.min(), abs=1e-4)
    assert p.max == pytest.approx(lam.max(), abs=1e-4)
    assert p.min == pytest.approx(2.8, abs=1e-4) and p.max == pytest.approx(3.2, abs=1e-4)


def test_gamma_interval_examples():
    gi = gamma_interval(4.0, 4.0)
    assert (gi.lo, gi.hi, gi.midpoint) == (4.0, 16.0, 10.0)
    gi = gamma_interval(2.8, 3.2)
    assert gi.lo == 3.2 and gi.hi == pytest.approx(7.84)
    assert gamma_interval(1.1, 1.3) is None


def test_gamma_interval_scale_invariance():
    for t in (0.1, 1.0, 7.0):
        m = MediumSpec(Trig(3.0 * t, 0.1 * t, 1.0, 0.5), Constant(t), t, 4 * t)
        p = lambda_on_interface(m, DISK, 256)
        gi = gamma_interval(p.min, p.max)
        ref = gamma_interval(*(lambda q: (q.min, q.max))(
            lambda_on_interface(MediumSpec(Trig(3.0, 0.1, 1.0, 0.5), Constant(1.0), 1.0, 4.0), DISK, 256)))
        assert gi.lo == pytest.approx(ref.lo, rel=1e-14) and gi.hi == pytest.approx(ref.hi, rel=1e-14)


def test_multiplier_constant_coefficients():
    m = MediumSpec(Constant(4.0), Constant(1.0), 1.0, 4.0, rho=0.5)
    k = consts()[0]
    margin = check_multiplier(m, DISK, OUTER, 10.0, 0.5, k.m1, 0.1, (0, 0), 64)
    assert margin == pytest.approx((2 / 10.0) * 1.0 * 0.5 * k.m1, rel=1e-12)


def test_multiplier_rho_one_sign_condition():
    # radially decreasing a1 on the disk body: grad a . grad gauge^2 <= 0
    from carleman_lab.medium import Gaussian
    a1 = Gaussian(3.0, 0.5, (0.0, 0.0), 0.7)
    m = MediumSpec(a1, Constant(1.0), 1.0, 3.5, rho=1.0)
    k = consts()[0]
    assert check_multiplier(m, DISK, OUTER, 10.0, 1.0, k.m1, 0.1, (0, 0), 64) >= -1e-12
    m2 = MediumSpec(a1, Constant(1.0), 1.0, 3.5, rho=0.5)
    floor = (2 / 10.0) * 1.0 * 0.5 * k.m1
    assert check_multiplier(m2, DISK, OUTER, 10.0, 0.5, k.m1, 0.1, (0, 0), 64) >= floor - 1e-12


def test_multiplier_monotone_in_m1_and_gamma():
    a1 = AngularHarmonic(3.0, 0.2, 1, (0, 0), 1.0)
    m = MediumSpec(a1, Constant(1.0), 1.0, 3.3, rho=0.5)
    m1s = [0.5, 1.0, 1.5, 2.0]
    vals = [check_multiplier(m, DISK, OUTER, 5.0, 0.5, x, 0.1, (0, 0), 64) for x in m1s]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    gs = [3.5, 5.0, 7.0]
    vals = [check_multiplier(m, DISK, OUTER, g, 0.5, 1.5, 0.1, (0, 0), 64) for g in gs]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_verify_admissibility_examples():
    m = MediumSpec(Constant(4.0), Constant(1.0), 1.0, 4.0, rho=0.5)
    rep = verify_admissibility(m, DISK, OUTER, [(0.0, 0.0)], consts(), n_grid=60)
    assert rep.passed and rep.chosen_gamma == 10.0
    m = MediumSpec(Constant(1.0), Constant(4.0), 1.0, 4.0, rho=0.5)
    rep = verify_admissibility(m, DISK, OUTER, [(0.0, 0.0)], consts(), n_grid=60)
    assert not rep.passed and "gamma interval empty" in rep.notes


def test_variable_admissibility_and_double_density_replay():
    body = Ellipse((0, 0), (1.0, 0.8))
    a1 = AngularHarmonic(3.0, 0.2, 1, (0, 0), 0.8)
    m = MediumSpec(a1, Constant(1.0), 1.0, 3.3, rho=0.5)
    cs = [(-0.2, 0.0), (0.2, 0.0)]
    rep = verify_admissibility(m, body, OUTER, cs, consts(body, OUTER, cs), n_grid=80)
    assert rep.passed and rep.a4_margin > 0
    rep2 = verify_admissibility(m, body, OUTER, cs, consts(body, OUTER, cs, density=128), n_grid=160,
                                n_interface=1024, sample_density=128)
    assert rep2.passed


def test_bounds_failure_and_potential_bound():
    m = MediumSpec(Constant(4.0), Constant(1.0), 1.0, 3.0)
    rep = verify_admissibility(m, DISK, OUTER, [(0.0, 0.0)], consts(), n_grid=40)
    assert not rep.a1_check and not rep.passed
    with pytest.raises(MediumError):
        Potential(np.array([0.5, -1.5]), 1.0)
    with pytest.raises(MediumError):
        MediumSpec(Constant(1.0), Constant(1.0), 1.0, 1.0, rho=1.5)


def test_field_spec_round_trip_and_strictness():
    f = field_from_spec({"kind": "angular", "c0": 1.2, "amp": 0.02, "n": 2, "radius": 0.9})
    g = field_from_spec(f.spec())
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    np.testing.assert_array_equal(f.value(x), g.value(x))
    with pytest.raises(MediumError):
        field_from_spec({"kind": "constant", "value": 1.0, "beta2": 3})
