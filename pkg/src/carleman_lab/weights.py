"""Carleman weights: the spatial weight mu, phi = mu - beta t^2, cut-offs, beta budget, Gamma+.

The weight of center c is

    mu(x) = eta(x) G(x) + M1   on the closed inner body,
    mu(x) = gamma G(x) + M2    outside it,

with G the squared gauge about c, eta a smooth radial cut-off vanishing on
B_eps1(c) and M2 = M1 - gamma + 1, so both branches equal 1 + M1 on the interface.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ConvexBody, GeometryConstants, OuterDomain, interface_distance, region_samples
from .medium import MediumSpec

SUP_SAFETY = 1.05


class WeightError(ValueError):
    pass


class InvalidConstants(WeightError):
    pass


class NonPositiveBudget(WeightError):
    pass


class BetaOutOfWindow(WeightError):
    pass


class DegenerateCenters(WeightError):
    pass


# ---------------------------------------------------------------------------
# smooth ramp built from exp(-1/t)

def _f(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smoothstep(t):
    """C-infinity monotone ramp: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    a, b = _f(t), _f(1.0 - t)
    return a / (a + b)


def smoothstep_prime(t):
    t = np.asarray(t, dtype=float)
    a, b = _f(t), _f(1.0 - t)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.where(t > 0, a / np.where(t > 0, t * t, 1.0), 0.0)
        s = 1.0 - t
        db = np.where(s > 0, b / np.where(s > 0, s * s, 1.0), 0.0)
    return (da * b + a * db) / (a + b) ** 2


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightMu:
    body: ConvexBody
    outer: OuterDomain
    center: tuple
    gamma: float
    M1: float
    eps: float
    eps1: float

    @property
    def M2(self):
        return self.M1 - self.gamma + 1.0

    @property
    def c(self):
        return np.asarray(self.center, dtype=float)

    def inner(self, x):
        return self.body.level(np.asarray(x, dtype=float)) <= 1.0

    def G(self, x):
        return self.body.gauge(self.c, x) ** 2

    def eta(self, x):
        r = np.linalg.norm(np.asarray(x, dtype=float) - self.c, axis=-1)
        return smoothstep((r - self.eps1) / (self.eps - self.eps1))

    def eta_grad(self, x):
        d = np.asarray(x, dtype=float) - self.c
        r = np.linalg.norm(d, axis=-1)
        sp = smoothstep_prime((r - self.eps1) / (self.eps - self.eps1)) / (self.eps - self.eps1)
        rs = np.where(r > 0, r, 1.0)
        return (sp / rs)[..., None] * d

    def branch1(self, x):
        return self.eta(x) * self.G(x) + self.M1

    def branch2(self, x):
        return self.gamma * self.G(x) + self.M2

    def _gauge_sq_grad(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        flat = x.reshape(-1, 2)
        out = np.zeros_like(flat)
        r = np.linalg.norm(flat - self.c, axis=-1)
        ok = r > self.eps1
        if np.any(ok):
            out[ok] = self.body.gauge_squared_grad_hess(self.c, flat[ok])[1]
        return out.reshape(shape + (2,))

    def grad_branch1(self, x):
        x = np.asarray(x, dtype=float)
        # where eta == 0 (inside B_eps1) the branch is the constant M1
        return self.G(x)[..., None] * self.eta_grad(x) + self.eta(x)[..., None] * self._gauge_sq_grad(x)

    def grad_branch2(self, x):
        return self.gamma * self._gauge_sq_grad(x)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(self.inner(x), self.branch1(x), self.branch2(x))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(self.inner(x)[..., None], self.grad_branch1(x), self.grad_branch2(x))

    __call__ = value


def build_mu(body: ConvexBody, outer: OuterDomain, center, gamma, M1, eps, eps1) -> WeightMu:
    if not gamma > 1.0:
        raise InvalidConstants("gamma must exceed 1")
    if not M1 > gamma - 1.0:
        raise InvalidConstants(f"M1 = {M1} must exceed gamma - 1 = {gamma - 1}")
    if not 0.0 < eps1 < eps:
        raise InvalidConstants("need 0 < eps1 < eps")
    body._check_center(center)
    return WeightMu(body, outer, tuple(map(float, center)), float(gamma), float(M1), float(eps),
                    float(eps1))


@dataclass(frozen=True)
class SpaceTimeWeight:
    mu: WeightMu
    beta: float
    T: float

    def phi(self, t, x):
        return self.mu.value(x) - self.beta * np.asarray(t, dtype=float) ** 2


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransmissionReport:
    continuity: float
    flux: float
    min_dnu1: float
    bound: float
    method: str

    @property
    def passed(self):
        return self.min_dnu1 >= self.bound

    def to_dict(self):
        return {"continuity": self.continuity, "flux": self.flux, "min_dnu1": self.min_dnu1,
                "bound_2_over_diam": self.bound, "method": self.method, "pass": self.passed}


def verify_transmission(mu: WeightMu, n_samples=512, method="analytic", fd_step=1e-4):
    """Continuity, flux transmission and the interface normal-derivative floor.

    method="fd" differentiates each branch numerically along the normal with a
    fourth-order central stencil instead of using the closed-form gradients.
    """
    if n_samples < 128:
        raise WeightError("n_samples must be at least 128")
    th = np.linspace(0, 2 * np.pi, n_samples, endpoint=False)
    pts, nu, _, _ = mu.body.boundary(th)
    cont = float(np.max(np.abs(mu.branch1(pts) - mu.branch2(pts))))
    if method == "analytic":
        d1 = np.sum(mu.grad_branch1(pts) * nu, axis=-1)
        d2 = -np.sum(mu.grad_branch2(pts) * nu, axis=-1)
    elif method == "fd":
        h = fd_step

        def dn(f):
            return (-f(pts + 2 * h * nu) + 8 * f(pts + h * nu) - 8 * f(pts - h * nu)
                    + f(pts - 2 * h * nu)) / (12 * h)

        d1 = dn(mu.branch1)
        d2 = -dn(mu.branch2)
    else:
        raise WeightError(f"unknown method {method!r}")
    flux = float(np.max(np.abs(mu.gamma * d1 + d2)))
    return TransmissionReport(cont, flux, float(d1.min()), 2.0 / mu.outer.diam, method)


# ---------------------------------------------------------------------------
# boundary arcs

@dataclass(frozen=True)
class ArcSet:
    """Union of angular intervals [t0, t1] of the outer-boundary parameter, 0 <= t0 < t1 <= t0 + 2 pi."""

    intervals: tuple

    @classmethod
    def full(cls):
        return cls(((0.0, 2 * np.pi),))

    @property
    def is_full(self):
        return any(b - a >= 2 * np.pi - 1e-14 for a, b in self.intervals)

    def measure_angle(self):
        return float(sum(b - a for a, b in self.intervals))

    def contains(self, theta):
        theta = np.mod(np.asarray(theta, dtype=float), 2 * np.pi)
        out = np.zeros(theta.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (np.mod(theta - a, 2 * np.pi) <= b - a)
        return out

    def union(self, other: "ArcSet") -> "ArcSet":
        if self.is_full or other.is_full:
            return ArcSet.full()
        ivs = sorted(self.intervals + other.intervals)
        # unwrap intervals to a common sweep of the circle
        merged = []
        for a, b in ivs:
            if merged and a <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], b))
            else:
                merged.append((a, b))
        if len(merged) > 1 and merged[-1][1] >= merged[0][0] + 2 * np.pi:
            a0, b0 = merged.pop(0)
            merged[-1] = (merged[-1][0], max(merged[-1][1], b0 + 2 * np.pi))
        if any(b - a >= 2 * np.pi for a, b in merged):
            return ArcSet.full()
        return ArcSet(tuple(merged))

    def quadrature(self, outer: OuterDomain, per_length=64.0, min_nodes=33):
        """Composite Simpson nodes (angles) and arc-length weights."""
        thetas, weights = [], []
        for a, b in self.intervals:
            length = float(np.mean(outer.speed(np.linspace(a, b, 65))) * (b - a))
            n = max(min_nodes, int(np.ceil(length * per_length)) + 1)
            if n % 2 == 0:
                n += 1
            th = np.linspace(a, b, n)
            hth = (b - a) / (n - 1)
            w = np.ones(n)
            w[1:-1:2] = 4.0
            w[2:-1:2] = 2.0
            w *= hth / 3.0
            thetas.append(th)
            weights.append(w * outer.speed(th))
        if not thetas:
            return np.zeros(0), np.zeros(0)
        return np.mod(np.concatenate(thetas), 2 * np.pi), np.concatenate(weights)

    def to_list(self):
        return [[float(a), float(b)] for a, b in self.intervals]


def gamma_plus(mu: WeightMu, outer: OuterDomain, n_samples=1024, refine=48) -> ArcSet:
    """Portion of the outer boundary where the normal derivative of mu is positive."""

    def dnu(theta):
        theta = np.asarray(theta, dtype=float)
        return np.sum(mu.grad(outer.point(theta)) * outer.normal(theta), axis=-1)

    th = np.linspace(0, 2 * np.pi, n_samples, endpoint=False)
    pos = dnu(th) > 0
    if pos.all():
        return ArcSet.full()
    if not pos.any():
        return ArcSet(())
    hstep = 2 * np.pi / n_samples

    def edge(k, rising):
        lo, hi = th[k], th[k] + hstep
        for _ in range(refine):
            mid = 0.5 * (lo + hi)
            if (dnu(mid) > 0) == rising:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)

    nxt = np.roll(pos, -1)
    starts = [edge(k, True) for k in np.nonzero(~pos & nxt)[0]]
    ends = [edge(k, False) for k in np.nonzero(pos & ~nxt)[0]]
    starts.sort()
    ends.sort()
    if ends[0] < starts[0]:
        ends = ends[1:] + [ends[0] + 2 * np.pi]
    return ArcSet(tuple((float(a), float(b)) for a, b in zip(starts, ends)))


# ---------------------------------------------------------------------------
# beta budget

@dataclass(frozen=True)
class CenterBudget:
    b_interface: float
    b_firstorder: float
    b_zeroth_a: float
    b_zeroth_b: float
    rho0: float
    grad_mu_inf: float
    K: float
    beta1: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class BetaBudget:
    centers: tuple
    L: float
    r: float
    grad_a_inf: float
    sup_mu: float
    beta0: float
    T0: float

    def to_dict(self):
        return {"centers": [c.to_dict() for c in self.centers], "L": self.L, "r": self.r,
                "grad_a_inf": self.grad_a_inf, "sup_mu": self.sup_mu, "beta0": self.beta0,
                "T0": self.T0}


def omega_samples(body, outer, sample_density=64):
    return region_samples(body, outer, body.center, 0.0, sample_density)


def compute_beta_budget(mu_pair, medium: MediumSpec, constants_pair, sample_density=64,
                        sup_safety=SUP_SAFETY) -> BetaBudget:
    """The four upper bounds per center, their minima, and the minimal horizon."""
    body, outer = mu_pair[0].body, mu_pair[0].outer
    pts = omega_samples(body, outer, sample_density)
    sup_mu = max(float(np.max(m.value(pts))) for m in mu_pair)
    L = sup_safety * np.sqrt(sup_mu)
    ga = medium.coefficient_grad(body, pts)
    # interface points carry both one-sided gradients
    on_if = np.abs(body.gauge(body.center, pts) - 1.0) <= 1e-12
    ga_norm = np.linalg.norm(ga, axis=-1)
    if np.any(on_if):
        ga_norm = np.concatenate([ga_norm, np.linalg.norm(medium.a2.grad(pts[on_if]), axis=-1)])
    grad_a_inf = sup_safety * float(ga_norm.max())
    a0, rho = medium.alpha_lo, medium.rho
    r = L * grad_a_inf / np.sqrt(a0)
    budgets = []
    for mu, k in zip(mu_pair, constants_pair):
        rp = region_samples(body, outer, mu.c, k.eps, sample_density)
        gmu = sup_safety * float(np.max(np.linalg.norm(mu.grad(rp), axis=-1)))
        b_if = 2.0 * a0 / (k.diam**2 * (1.0 + mu.M1))
        inner = np.sqrt(r * r / 16.0 + k.m1 * rho / 2.0) - r / 2.0
        if r == 0.0:
            b_first = a0 * k.m1 * rho / 2.0   # the square of the root, without rounding
        else:
            b_first = a0 * inner**2 if inner > 0 else 0.0
        b_za = a0 * (2.0 + rho) * k.c1**2 / (4.0 * L * L)
        K = abs(k.c1**2 - L * gmu * r - 2.0 * L * L * k.m1)
        rho0 = (np.sqrt(K * K + 24.0 * L * L * k.m1 * (2.0 + rho) * k.c1**2) - K) / (24.0 * L * L)
        b_zb = a0 * rho0
        bounds = {"b_interface": b_if, "b_firstorder": b_first, "b_zeroth_a": b_za, "b_zeroth_b": b_zb}
        bad = [n for n, v in bounds.items() if not v > 0]
        if bad:
            raise NonPositiveBudget(f"non-positive beta bounds for center {mu.center}: {', '.join(bad)}")
        budgets.append(CenterBudget(b_if, b_first, b_za, b_zb, float(rho0), gmu, float(K),
                                    float(min(bounds.values()))))
    beta0 = min(b.beta1 for b in budgets)
    return BetaBudget(tuple(budgets), float(L), float(r), grad_a_inf, sup_mu, float(beta0),
                      float(L / np.sqrt(beta0)))


def choose_horizon(budget: BetaBudget, T=None, T_factor=1.05):
    """Horizon T (default T_factor * T0) and beta in the middle of (L^2/T^2, beta0)."""
    if T is None:
        T = T_factor * budget.T0
    lo = budget.L**2 / T**2
    if not lo < budget.beta0:
        raise BetaOutOfWindow(f"T = {T:.6g} does not exceed T0 = {budget.T0:.6g}")
    return float(T), float(0.5 * (lo + budget.beta0))


# ---------------------------------------------------------------------------
# cut-off theta

@dataclass
class CutoffTheta:
    """theta(t, x) built from phi; constant in x inside a tube around the interface.

    Inside the tube theta equals its interface foot value S((1 + M1 - M2 - beta t^2)/gamma),
    which does not depend on x because phi is constant on the interface; outside
    the tube the two one-sided level-set ramps are used, blended smoothly.
    """

    weight: SpaceTimeWeight
    eps_tilde: float
    blend_width: float

    def levels(self):
        mu = self.weight.mu
        return (mu.M1, mu.M1 + self.eps_tilde), (mu.M2, mu.M2 + mu.gamma)

    def tube_coordinate(self, x):
        body = self.weight.mu.body
        x = np.asarray(x, dtype=float)
        g = body.gauge(body.center, x)
        r = np.linalg.norm(x - body.center, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            psi = np.where(g > 0, r * (g - 1.0) / np.where(g > 0, g, 1.0), -np.inf)
        return psi

    def blend(self, x):
        w = self.blend_width
        psi = np.abs(self.tube_coordinate(x))
        return 1.0 - smoothstep((psi - 0.5 * w) / (0.5 * w))

    def prepare(self, x):
        """Precompute x-dependent pieces for repeated evaluation at the same points."""
        x = np.asarray(x, dtype=float)
        mu = self.weight.mu
        return {"mu": mu.value(x), "inner": mu.inner(x), "chi": self.blend(x)}

    def interface_value(self, t):
        mu = self.weight.mu
        return smoothstep((1.0 + mu.M1 - mu.M2 - self.weight.beta * np.asarray(t, float) ** 2) / mu.gamma)

    def evaluate(self, t, prepared):
        mu = self.weight.mu
        (l1, h1), (l2, h2) = self.levels()
        phi = prepared["mu"] - self.weight.beta * t * t
        far = np.where(prepared["inner"], smoothstep((phi - l1) / (h1 - l1)),
                       smoothstep((phi - l2) / (h2 - l2)))
        chi = prepared["chi"]
        return chi * self.interface_value(t) + (1.0 - chi) * far

    def value(self, t, x):
        return self.evaluate(t, self.prepare(x))

    __call__ = value


def build_theta(weight: SpaceTimeWeight, eps_tilde, blend_width, budget: BetaBudget | None = None):
    mu = weight.mu
    diam = mu.outer.diam
    if not 0.0 < eps_tilde < mu.eps**2 / diam**2:
        raise WeightError(f"eps_tilde must lie in (0, eps^2/diam^2) = (0, {mu.eps**2 / diam**2:.6g})")
    if budget is not None:
        lo = budget.L**2 / weight.T**2
        if not lo < weight.beta < budget.beta0:
            raise BetaOutOfWindow(f"beta = {weight.beta:.6g} outside ({lo:.6g}, {budget.beta0:.6g})")
    if not blend_width > 0:
        raise WeightError("blend width must be positive")
    return CutoffTheta(weight, float(eps_tilde), float(blend_width))


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpsilonConstraints:
    d: float
    d1: float
    d2: float
    eps_max: float

    def to_dict(self):
        return dict(self.__dict__)


def epsilon_constraints(x1, x2, body: ConvexBody, outer: OuterDomain, n=8192) -> EpsilonConstraints:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if np.allclose(x1, x2):
        raise DegenerateCenters("the two centers coincide")
    body._check_center(x1)
    body._check_center(x2)
    diam = outer.diam
    d = float(np.linalg.norm(x1 - x2) / 2.0)
    dist1, far1 = interface_distance(body, x1, n)
    dist2, far2 = interface_distance(body, x2, n)
    d1 = d / far2 * diam * dist1 / np.sqrt(dist1**2 + diam**2)
    d2 = d / far1 * diam * dist2 / np.sqrt(dist2**2 + diam**2)
    return EpsilonConstraints(d, float(d1), float(d2), float(min(d, d1, d2)))


def epsilon_formula(d, dist_i, far_j, diam):
    """The single-center bound as a plain formula (used by oracles and reports)."""
    return d / far_j * diam * dist_i / np.sqrt(dist_i**2 + diam**2)
