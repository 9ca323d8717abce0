import io

import numpy as np
import pytest
from scipy.special import j0, jn_zeros

from carleman_lab.config import default_config
from carleman_lab.geometry import Ellipse, OuterDomain
from carleman_lab.manufactured import (compact_bump, convergence_orders, jump_case, radial_transmission_mode,
                                      smooth_case)
from carleman_lab.medium import Constant, MediumSpec
from carleman_lab.scenario import build_scenario, make_potential
from carleman_lab.solver import (ArcOutsideBoundary, CflViolation, CompatibilityError, Discretization, Grid,
                                 ScenarioData, build_trace_operator, energy, energy_history, flux_trace,
                                 max_time_step, read_snapshots, solve_difference_system, solve_forward,
                                 time_grid, write_snapshot)


@pytest.fixture(scope="module")
def sc():
    return build_scenario(default_config())


def concentric(n_cells, a1=1.0, a2=1.0, R=1.0):
    outer = OuterDomain.disk(R)
    body = Ellipse((0, 0), (0.5 * R, 0.5 * R))
    med = MediumSpec(Constant(a1), Constant(a2), min(a1, a2), max(a1, a2))
    return Discretization.build(Grid.covering(outer, n_cells), outer, body, med)


def test_time_step_bound(sc):
    d = sc.discretization(64)
    tg = time_grid(d, 1.0)
    assert tg.dt <= 0.9 * d.h / np.sqrt(2 * sc.medium.alpha_hi) * (1 + 1e-12)
    assert tg.T == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(CflViolation):
        time_grid(d, 1.0, dt=1.01 * max_time_step(d.h, sc.medium.alpha_hi))


def test_zero_data_gives_zero(sc):
    d = sc.discretization(32)
    th = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    op = build_trace_operator(d, th)
    st = solve_forward(ScenarioData(), d, None, T=1.0, traces={"g": op})
    assert np.all(st.u == 0) and np.all(st.traces["g"] == 0)
    assert energy(st, 5) == 0.0


def test_bessel_standing_wave():
    d = concentric(256)
    k = jn_zeros(0, 1)[0]
    data = ScenarioData(u0=lambda x: j0(k * np.hypot(x[..., 0], x[..., 1])))
    tg = time_grid(d, 1.0)
    st = solve_forward(data, d, None, T=1.0, store_stride=tg.nt)
    xa = d.xy_active()
    exact = np.cos(k * tg.T) * j0(k * np.hypot(xa[:, 0], xa[:, 1]))
    assert np.linalg.norm(st.u[-1] - exact) / np.linalg.norm(exact) <= 0.02


def test_radial_transmission_mode_and_uniform_trace():
    d = concentric(128, a1=2.0)
    k, U = radial_transmission_mode(2.0, 1.0, 0.5, 1.0)
    op = build_trace_operator(d, np.linspace(0, 2 * np.pi, 64, endpoint=False))
    tg = time_grid(d, 1.0)
    st = solve_forward(ScenarioData(u0=U), d, None, T=1.0, store_stride=tg.nt, traces={"g": op})
    tr = st.traces["g"]
    mean = tr.mean(axis=1)
    assert np.max(np.abs(tr - mean[:, None])) <= 0.01 * np.max(np.abs(mean))
    exact = np.cos(k * tg.T) * U(d.xy_active())
    assert np.linalg.norm(st.u[-1] - exact) / np.linalg.norm(exact) <= 0.02


def test_manufactured_orders():
    _, _, orders = convergence_orders(smooth_case())
    assert np.all(orders >= 1.8)
    _, _, orders = convergence_orders(jump_case())
    assert np.all(orders >= 0.9)


def test_manufactured_trace_converges():
    # the embedded Dirichlet closure is first order, so the flux trace converges at first order
    case = smooth_case()
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    errs = []
    for n in (32, 64, 128):
        d = Discretization.build(Grid.covering(case.outer, n), case.outer, case.body, case.medium)
        st = solve_forward(case.scenario(), d, None, T=1.0, store_stride=1,
                           traces={"g": build_trace_operator(d, th)})
        bt = flux_trace(st, build_trace_operator(d, th))
        np.testing.assert_array_equal(bt.values, st.traces["g"])
        exact = -2.0 * np.cos(st.tgrid.times())[:, None]
        errs.append(np.max(np.abs(st.traces["g"] - exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9)


def test_trace_operator_exact_on_quadratics():
    case = smooth_case()
    d = Discretization.build(Grid.covering(case.outer, 64), case.outer, case.body, case.medium)
    op = build_trace_operator(d, np.linspace(0, 2 * np.pi, 32, endpoint=False))
    assert np.max(np.abs(op.apply(case.U(d.xy_active())) + 2.0)) <= 1e-3
    with pytest.raises(ArcOutsideBoundary):
        build_trace_operator(concentric(32), [0.0], depth_cells=40.0)


def test_energy_conservation(sc):
    d = sc.discretization(128)
    data = ScenarioData(u0=lambda x: (1.0 - np.sum(x**2, axis=-1) / 1.44) ** 2)
    _, E = energy_history(data, d, None, T=sc.T)
    assert (E.max() - E.min()) / E[0] <= 1e-3


def test_modified_energy_with_potential(sc):
    d = sc.discretization(128)
    data = ScenarioData(u0=lambda x: (1.0 - np.sum(x**2, axis=-1) / 1.44) ** 2)
    pot = make_potential({"c0": 0.2, "bumps": [[0.4, 0.25, 0.1, 0.3]]})
    _, E = energy_history(data, d, pot, T=10.0)
    assert (E.max() - E.min()) / E[0] <= 1e-3
    d = sc.discretization(32)
    _, E = energy_history(data, d, pot, T=1.0)
    st = solve_forward(data, d, pot, T=1.0)
    assert energy(st, 3, pot) == pytest.approx(E[2], rel=1e-14)


def test_finite_speed(sc):
    d = sc.discretization(128)
    st = solve_forward(ScenarioData(u0=compact_bump((0.0, 0.0), 0.6)), d, None, T=0.4)
    dist = np.maximum(np.linalg.norm(d.xy_active(), axis=1) - 0.6, 0.0)
    c = np.sqrt(sc.medium.alpha_hi)
    worst = 0.0
    for k, n in enumerate(st.steps):
        far = dist > c * n * st.tgrid.dt + 3 * d.h
        worst = max(worst, float(np.max(np.abs(st.u[k][far]), initial=0.0)))
    assert worst <= 1e-8


def test_linearity(sc):
    d = sc.discretization(48)
    pot = make_potential({"c0": 0.1, "bumps": [[0.3, 0.2, 0.0, 0.4]]})
    f1 = compact_bump((0.1, 0.0), 0.5)
    f2 = lambda x: np.sin(x[..., 0]) * np.cos(2 * x[..., 1])
    s1 = solve_forward(ScenarioData(u0=f1, g=lambda t, x: f1(x)), d, pot, T=2.0).u
    s2 = solve_forward(ScenarioData(u0=f2, u1=f1, g=lambda t, x: f2(x) + t * f1(x)), d, pot, T=2.0).u
    s3 = solve_forward(ScenarioData(u0=lambda x: 2 * f1(x) - 3 * f2(x), u1=lambda x: -3 * f1(x),
                                    g=lambda t, x: 2 * f1(x) - 3 * (f2(x) + t * f1(x))), d, pot, T=2.0).u
    assert np.max(np.abs(s3 - (2 * s1 - 3 * s2))) <= 1e-10 * max(1.0, np.max(np.abs(s3)))


def test_compatibility_check(sc):
    ScenarioData(u0=1.0, g=1.0).check_compatibility(sc.outer)
    with pytest.raises(CompatibilityError):
        ScenarioData(u0=1.0, g=0.5).check_compatibility(sc.outer)


def test_difference_system_identities(sc):
    d = sc.discretization(48)
    data = ScenarioData(u0=1.0, g=1.0)
    th, w = sc.gamma0.quadrature(d.outer)
    op = build_trace_operator(d, th, w)
    p = make_potential({"c0": 0.0, "bumps": [[0.4, 0.25, 0.1, 0.3]]})
    q = make_potential({"c0": 0.0, "bumps": [[0.45, 0.2, 0.1, 0.3]]})
    same = solve_difference_system(data, d, p, p, 2.0, op, store_y_stride=1)
    assert np.all(same.trace == 0) and np.all(same.y == 0)
    res = solve_difference_system(data, d, p, q, 2.0, op, store_y_stride=1)
    t, v = res.odd_extension()
    np.testing.assert_array_equal(v[::-1], -v)
    np.testing.assert_array_equal(t[::-1], -t)
    ty, y = res.y_odd_extension()
    np.testing.assert_array_equal(y[::-1], -y)
    # trace from y matches the trace from the stored-or-not code paths
    res2 = solve_difference_system(data, d, p, q, 2.0, op)
    np.testing.assert_allclose(res2.trace, res.trace, rtol=0, atol=1e-12 * np.abs(res.trace).max())


def test_initial_velocity_of_difference(sc):
    errs = []
    for n in (32, 64, 128):
        d = sc.discretization(n)
        u0 = lambda x: 1.0 + 0.3 * np.cos(x[..., 0]) * np.cos(x[..., 1])
        data = ScenarioData(u0=u0, g=lambda t, x: u0(x))
        op = build_trace_operator(d, np.linspace(0, 2 * np.pi, 8, endpoint=False))
        # potentials agree near the boundary, where y vanishes
        p = make_potential({"c0": 0.0, "bumps": [[0.4, 0.25, 0.1, 0.12]]})
        q = make_potential({"c0": 0.0, "bumps": [[0.3, -0.2, 0.0, 0.12]]})
        res = solve_difference_system(data, d, p, q, 0.5, op, store_y_stride=1)
        dty0 = res.y[1] / res.tgrid.dt
        exact = (d.restrict(q) - d.restrict(p)) * d.restrict(u0)
        errs.append(np.max(np.abs(dty0 - exact)) / np.max(np.abs(exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert errs[-1] <= 0.01 and np.all(orders >= 0.9), (errs, orders)


def test_snapshot_round_trip(sc):
    d = sc.discretization(16)
    buf = io.BytesIO()
    vals = np.arange((d.grid.ny + 1) * (d.grid.nx + 1), dtype=float).reshape(d.grid.ny + 1, d.grid.nx + 1)
    write_snapshot(buf, d.grid, 0.25, vals)
    write_snapshot(buf, d.grid, 0.5, 2 * vals)
    import tempfile, os
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "s.bin")
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())
        snaps = read_snapshots(path)
    assert len(snaps) == 2
