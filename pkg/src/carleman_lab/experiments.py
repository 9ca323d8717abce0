"""End-to-end runs shared by the command line and the acceptance suite."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .config import Auto, ScenarioConfig
from .scenario import Scenario, build_scenario, make_potential
from .solver import build_trace_operator, energy, solve_forward, time_grid
from .stability import (ForwardMap, StabilityExperiment, arc_around, check_hypotheses, constant_data,
                        experiment_sweep, gradient_check, perturbation_family, reconstruct_potential)
from .verifier import default_s_grid, make_setup, sweep_s, time_stride, wave_field_family


def carleman_sweep(sc: Scenario, n_cells=None, n_fields=None, threads=1, center_index=0):
    """Sweep s over the seeded wave-solution family (raw and theta-truncated copies)."""
    v = sc.cfg.verifier
    disc = sc.discretization(n_cells)
    q = make_potential(v.potential)
    w = sc.weights[center_index]
    mu_sup_probe = float(np.max(w.mu.value(disc.xy_inside())))
    s_grid = default_s_grid(mu_sup_probe, v.n_s, v.s_min, v.s_max)
    setup = make_setup(disc, w, s_grid, q, sc.gamma_plus[center_index], n_interface=v.n_interface)
    tg = time_grid(disc, sc.T, sc.cfg.solver.cfl_safety)
    fam = wave_field_family(disc, tg, q, v.n_fields if n_fields is None else n_fields, v.seed)
    theta = sc.theta(disc.h, center_index) if v.theta else None
    return sweep_s(fam, setup, time_stride(tg.nt, v.time_nodes), threads, theta, include_raw=v.raw)


def negative_control_config(cfg: ScenarioConfig) -> ScenarioConfig:
    """Same scenario with the two coefficients exchanged, so that a1 < a2 and no gamma exists."""
    neg = copy.deepcopy(cfg)
    neg.medium.a1, neg.medium.a2 = copy.deepcopy(cfg.medium.a2), copy.deepcopy(cfg.medium.a1)
    return neg


def negative_control(cfg: ScenarioConfig, gamma, n_cells=None, n_fields=None, threads=1):
    sc = build_scenario(negative_control_config(cfg), force_gamma=gamma)
    return sc, carleman_sweep(sc, n_cells, n_fields, threads)


def stability_experiment(sc: Scenario, n_cells=None, n_perturbations=None) -> StabilityExperiment:
    st = sc.cfg.stability
    disc = sc.discretization(n_cells)
    p = make_potential(st.p)
    fam = perturbation_family(p, sc.outer, st.n_perturbations if n_perturbations is None else n_perturbations,
                              st.amplitude, sc.cfg.medium.m, st.seed, st.max_bumps)
    arcs = sc.gamma0
    # shrunk observation: a small arc inside Gamma_0 centred on its first interval
    a, b = arcs.intervals[0]
    small = arc_around(0.5 * (a + b) if not arcs.is_full else 0.0, min(st.tiny_arc, b - a))
    return StabilityExperiment(disc, constant_data(st.u0), p, fam, arcs, sc.T, sc.budget.T0, sc.cfg.medium.m,
                               st.delta, small, sc.cfg.solver.cfl_safety, sc.admissibility.passed,
                               sc.eps < sc.eps_constraints.eps_max)


def stability_run(sc: Scenario, n_cells=None, n_perturbations=None, threads=1):
    exp = stability_experiment(sc, n_cells, n_perturbations)
    hyp = check_hypotheses(exp)
    return exp, hyp, experiment_sweep(exp, threads)


@dataclass
class ReconstructionRun:
    forward: ForwardMap
    q_true: np.ndarray
    p0: np.ndarray
    gradient_check: list
    result: object


def reconstruction_run(sc: Scenario, iterations=None, n_cells=None):
    r = sc.cfg.reconstruct
    disc = sc.discretization(r.n_cells if n_cells is None else n_cells)
    tg = time_grid(disc, sc.T, sc.cfg.solver.cfl_safety)
    th, w = sc.gamma0.quadrature(disc.outer)
    op = build_trace_operator(disc, th, w)
    fm = ForwardMap(disc, constant_data(sc.cfg.stability.u0), tg, op)
    q_true = disc.restrict(make_potential(r.q_true))
    p0 = disc.restrict(make_potential(r.p0))
    z_obs = fm.observe(fm.states(q_true))
    gc = gradient_check(fm, p0, z_obs, seed=r.seed)
    step = None if r.step == Auto else float(r.step)
    res = reconstruct_potential(fm, z_obs, p0, r.iterations if iterations is None else iterations, step,
                                r.step_scale, q_true, seed=r.seed)
    return ReconstructionRun(fm, q_true, p0, gc, res)


def forward_run(sc: Scenario, observers=()):
    s = sc.cfg.solve
    disc = sc.discretization()
    data = constant_data(s.u0)
    T = sc.T if s.T == Auto else float(s.T)
    th, w = sc.gamma0.quadrature(disc.outer) if sc.gamma_plus else (np.linspace(0, 2 * np.pi, 256,
                                                                                 endpoint=False), None)
    op = build_trace_operator(disc, th, w)
    pot = make_potential(s.potential)
    st = solve_forward(data, disc, pot, T, sc.cfg.solver.cfl_safety, store_stride=s.trace_stride,
                       traces={"gamma0": op}, observers=observers, n_extra_steps=1)
    return st, op, pot
