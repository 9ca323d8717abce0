"""Manufactured solutions u* = cos(t) U(x) on a disk, with sources computed in closed form."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Ellipse, OuterDomain
from .medium import Affine, Constant, MediumSpec
from .solver import Discretization, Grid, ScenarioData, solve_forward


@dataclass(frozen=True)
class Manufactured:
    outer: OuterDomain
    body: Ellipse
    medium: MediumSpec
    U: callable
    div_aU: callable  # div(a grad U)

    def scenario(self):
        U, div_aU = self.U, self.div_aU
        return ScenarioData(u0=U, u1=0.0, g=0.0,
                            f=lambda t, x: np.cos(t) * (-U(x) - div_aU(x)))

    def exact(self, t, x):
        return np.cos(t) * self.U(x)


def smooth_case(R_outer=1.0, slope=(0.3, 0.2)):
    """One affine coefficient on the whole disk, U = R^2 - r^2."""
    outer = OuterDomain.disk(R_outer)
    body = Ellipse((0.0, 0.0), (0.5 * R_outer, 0.5 * R_outer))
    a = Affine(1.0, *slope)
    lo = 1.0 - np.hypot(*slope) * R_outer
    hi = 1.0 + np.hypot(*slope) * R_outer
    med = MediumSpec(a, a, lo, hi)

    def U(x):
        return R_outer**2 - x[..., 0] ** 2 - x[..., 1] ** 2

    def div_aU(x):
        return slope[0] * (-2 * x[..., 0]) + slope[1] * (-2 * x[..., 1]) - 4.0 * a.value(x)

    return Manufactured(outer, body, med, U, div_aU)


def jump_case(R_outer=1.0, R_inner=0.5, a1=2.0, a2=1.0):
    """Constant coefficients with a jump on a concentric circle.

    U = R_o^2 - r^2 outside and alpha + beta r^2 inside, with beta = -a2/a1 and alpha
    chosen so that U and a dU/dr are continuous at r = R_inner.
    """
    outer = OuterDomain.disk(R_outer)
    body = Ellipse((0.0, 0.0), (R_inner, R_inner))
    med = MediumSpec(Constant(a1), Constant(a2), min(a1, a2), max(a1, a2))
    beta = -a2 / a1
    alpha = R_outer**2 - R_inner**2 - beta * R_inner**2

    def U(x):
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return np.where(r2 <= R_inner**2, alpha + beta * r2, R_outer**2 - r2)

    def div_aU(x):
        return np.full(x.shape[:-1], -4.0 * a2)

    return Manufactured(outer, body, med, U, div_aU)


def l2l2_error(case: Manufactured, n_cells, T=1.0):
    disc = Discretization.build(Grid.covering(case.outer, n_cells), case.outer, case.body, case.medium)
    st = solve_forward(case.scenario(), disc, None, T=T)
    xa = disc.xy_active()
    t = st.times()
    ex = np.cos(t)[:, None] * case.U(xa)[None, :]
    err2 = np.sum((st.u - ex) ** 2, axis=1) * disc.h**2
    w = np.full(len(t), st.tgrid.dt)
    w[0] = w[-1] = 0.5 * st.tgrid.dt
    return float(np.sqrt(np.sum(w * err2))), disc.h


def convergence_orders(case: Manufactured, levels=(32, 64, 128), T=1.0):
    errs, hs = [], []
    for n in levels:
        e, h = l2l2_error(case, n, T)
        errs.append(e)
        hs.append(h)
    errs, hs = np.array(errs), np.array(hs)
    orders = np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])
    return errs, hs, orders


def compact_bump(center=(0.0, 0.0), radius=0.6, power=2.0):
    """C-infinity bump exp(power - power / (1 - |x - c|^2 / r^2)), supported in the closed r-disk."""
    c = np.asarray(center, dtype=float)

    def u(x):
        s = np.sum((np.asarray(x, dtype=float) - c) ** 2, axis=-1) / radius**2
        out = np.zeros(s.shape)
        m = s < 1.0
        out[m] = np.exp(power - power / (1.0 - s[m]))
        return out

    return u


def radial_transmission_mode(a1=2.0, a2=1.0, r_inner=0.5, R_outer=1.0, k_max=6.0):
    """Lowest radial standing wave cos(k t) U(r) for piecewise-constant a on concentric disks.

    U = J0(k r / sqrt(a1)) inside, B J0(k r / sqrt(a2)) + C Y0(k r / sqrt(a2)) outside,
    with U and a dU/dr continuous at r_inner and U(R_outer) = 0.
    """
    from scipy.optimize import brentq
    from scipy.special import j0, j1, y0, y1

    def coeffs(k):
        k1, k2 = k / np.sqrt(a1), k / np.sqrt(a2)
        M = np.array([[j0(k2 * r_inner), y0(k2 * r_inner)],
                      [a2 * k2 * j1(k2 * r_inner), a2 * k2 * y1(k2 * r_inner)]])
        return np.linalg.solve(M, [j0(k1 * r_inner), a1 * k1 * j1(k1 * r_inner)])

    def edge(k):
        B, C = coeffs(k)
        z = k * R_outer / np.sqrt(a2)
        return B * j0(z) + C * y0(z)

    ks = np.linspace(0.1, k_max, 400)
    vals = np.array([edge(k) for k in ks])
    i = int(np.nonzero(np.diff(np.sign(vals)))[0][0])
    k = brentq(edge, ks[i], ks[i + 1], xtol=1e-14)
    B, C = coeffs(k)

    def U(x):
        r = np.hypot(x[..., 0], x[..., 1])
        z = k * np.maximum(r, 1e-12) / np.sqrt(a2)
        return np.where(r <= r_inner, j0(k * r / np.sqrt(a1)), B * j0(z) + C * y0(z))

    return float(k), U
