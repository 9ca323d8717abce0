"""Assemble every derived object of a scenario (geometry, medium, weights, horizon) from a config."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import Auto, ScenarioConfig, ValidationError
from .geometry import ConvexBody, Ellipse, GeometryConstants, OuterDomain, estimate_constants, make_body
from .medium import AdmissibilityReport, BumpPotential, MediumSpec, field_from_spec, verify_admissibility
from .solver import Discretization, Grid
from .weights import (ArcSet, BetaBudget, CutoffTheta, EpsilonConstraints, SpaceTimeWeight, TransmissionReport,
                      WeightMu, build_mu, build_theta, choose_horizon, compute_beta_budget,
                      epsilon_constraints, gamma_plus, verify_transmission)


def make_outer(spec: dict) -> OuterDomain:
    c = tuple(map(float, spec.get("center", (0.0, 0.0))))
    if spec.get("kind", "disk") == "disk":
        return OuterDomain.disk(float(spec["radius"]), c)
    return OuterDomain(c, tuple(map(float, spec["semi_axes"])))


def make_potential(spec: dict) -> BumpPotential:
    return BumpPotential(float(spec.get("c0", 0.0)), tuple(tuple(map(float, b)) for b in spec.get("bumps", ())),
                         spec.get("clip"))


@dataclass
class Scenario:
    cfg: ScenarioConfig
    body: ConvexBody
    outer: OuterDomain
    centers: tuple
    eps_constraints: EpsilonConstraints
    eps: float
    eps1: float
    medium: MediumSpec
    admissibility: AdmissibilityReport
    gamma: float | None = None
    M1: float | None = None
    mus: tuple = ()
    constants: tuple = ()
    budget: BetaBudget | None = None
    T: float | None = None
    beta: float | None = None
    weights: tuple = ()
    transmission: tuple = ()
    gamma_plus: tuple = ()
    eps_tilde: float | None = None
    notes: list = field(default_factory=list)
    _disc: dict = field(default_factory=dict, repr=False)

    @property
    def gamma0(self) -> ArcSet:
        return self.gamma_plus[0].union(self.gamma_plus[1])

    @property
    def complete(self):
        return self.budget is not None

    def discretization(self, n_cells=None) -> Discretization:
        n = self.cfg.solver.n_cells if n_cells is None else int(n_cells)
        if n not in self._disc:
            self._disc[n] = Discretization.build(Grid.covering(self.outer, n), self.outer, self.body, self.medium)
        return self._disc[n]

    def theta(self, h, center_index=0) -> CutoffTheta:
        return build_theta(self.weights[center_index], self.eps_tilde, self.cfg.weights.blend_cells * h,
                           self.budget)

    def metadata(self):
        """Derived constants for run metadata sidecars."""
        out = {
            "eps": self.eps, "eps1": self.eps1, "eps_constraints": self.eps_constraints.to_dict(),
            "admissibility": self.admissibility.to_dict(), "gamma": self.gamma, "M1": self.M1,
            "M2": None if self.M1 is None else self.M1 - self.gamma + 1.0,
            "notes": list(self.notes),
        }
        if self.constants:
            out["geometry_constants"] = [dict(k.__dict__) for k in self.constants]
        if self.budget is not None:
            out.update({"beta_budget": self.budget.to_dict(), "T0": self.budget.T0, "L": self.budget.L,
                        "r": self.budget.r, "rho0": [c.rho0 for c in self.budget.centers], "T": self.T,
                        "beta": self.beta, "eps_tilde": self.eps_tilde,
                        "gamma_plus": [g.to_list() for g in self.gamma_plus],
                        "gamma0": self.gamma0.to_list(),
                        "transmission": [t.to_dict() for t in self.transmission]})
        return out


def build_scenario(cfg: ScenarioConfig, force_gamma: float | None = None, require_eps=False) -> Scenario:
    """Build all derived objects; stops after admissibility when no gamma is available.

    `force_gamma` builds the weights even when the admissibility check fails
    (negative-control runs).  `require_eps` turns an epsilon above the
    two-center bound into a ValidationError instead of a note.
    """
    g = cfg.geometry
    body = make_body(g.body)
    outer = make_outer(g.outer)
    outer.check_contains(body)
    x1 = np.asarray(g.x1, dtype=float)
    x2 = np.asarray(g.x2, dtype=float)
    ec = epsilon_constraints(x1, x2, body, outer)
    notes = []
    eps = g.eps_fraction * ec.eps_max if g.eps == Auto else float(g.eps)
    if not eps < ec.eps_max:
        msg = f"eps = {eps:.6g} must be below eps_max = min(d, d1, d2) = {ec.eps_max:.6g}"
        if require_eps:
            raise ValidationError("geometry.eps", msg)
        notes.append(msg)
    eps1 = g.eps1_fraction * eps
    m = cfg.medium
    medium = MediumSpec(field_from_spec(m.a1), field_from_spec(m.a2), m.alpha_lo, m.alpha_hi, m.rho, m.m)
    sd = g.sample_density
    k0 = tuple(estimate_constants(body, outer, c, eps, eps1, sd) for c in (x1, x2))
    w = cfg.weights
    gamma_req = None if w.gamma == Auto else float(w.gamma)
    rep = verify_admissibility(medium, body, outer, (x1, x2), k0, gamma_req, m.n_grid, m.n_interface, sd)
    sc = Scenario(cfg, body, outer, (x1, x2), ec, float(eps), float(eps1), medium, rep, notes=notes)
    gamma = rep.chosen_gamma if force_gamma is None else float(force_gamma)
    if gamma is None:
        return sc
    M1 = gamma if w.M1 == Auto else float(w.M1)
    mus = tuple(build_mu(body, outer, c, gamma, M1, eps, eps1) for c in (x1, x2))
    ks = tuple(estimate_constants(body, outer, c, eps, eps1, sd, grad_mu=mu.grad) for c, mu in zip((x1, x2), mus))
    budget = compute_beta_budget(mus, medium, ks, sd)
    T, beta = choose_horizon(budget, None if w.T == Auto else float(w.T), w.T_factor)
    diam = outer.diam
    eps_tilde = 0.5 * eps**2 / diam**2 if w.eps_tilde == Auto else float(w.eps_tilde)
    weights = tuple(SpaceTimeWeight(mu, beta, T) for mu in mus)
    method = "analytic" if isinstance(body, Ellipse) else "fd"
    trans = tuple(verify_transmission(mu, 512, method) for mu in mus)
    gp = tuple(gamma_plus(mu, outer, w.gamma_plus_samples) for mu in mus)
    sc.gamma, sc.M1, sc.mus, sc.constants, sc.budget = gamma, M1, mus, ks, budget
    sc.T, sc.beta, sc.weights, sc.transmission, sc.gamma_plus = T, beta, weights, trans, gp
    sc.eps_tilde = eps_tilde
    return sc
