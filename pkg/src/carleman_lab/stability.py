"""Empirical Lipschitz stability of potential recovery, and a Landweber reconstruction demonstrator.

The data are ||p - q||_{L2(Omega)} against the boundary observation
||d_nu d_t (u_p - u_q)||_{L2(0,T; Gamma_0)}.  The reconstruction differentiates
the fully discrete forward map exactly (the adjoint is the transposed leapfrog
recursion), so the gradient check compares two evaluations of the same function.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .medium import BumpPotential
from .solver import (Discretization, ScenarioData, TimeGrid, TraceOperator, build_trace_operator,
                     NonFiniteField, forward_trace, leapfrog, solve_difference_system, time_grid)
from .weights import ArcSet


class StabilityError(RuntimeError):
    pass


class DegeneratePair(StabilityError):
    pass


class DivergenceDetected(StabilityError):
    pass


# ---------------------------------------------------------------------------

def constant_data(u0=1.0):
    """u0 constant, u1 = 0, g held at the trace of u0, no source."""
    return ScenarioData(u0=float(u0), u1=0.0, g=float(u0), f=None, delta_floor=0.0)


def perturbation_family(p: BumpPotential, outer, n, amplitude, m, seed, max_bumps=5):
    """Seeded q = clip(p + sum of 1..max_bumps Gaussian bumps, -m, m)."""
    R = 0.5 * outer.diam
    out = []
    for i in range(n):
        rng = np.random.default_rng([int(seed), i])
        k = int(rng.integers(1, max_bumps + 1))
        bumps = list(p.bumps)
        while len(bumps) < len(p.bumps) + k:
            c = outer.c + R * rng.uniform(-1, 1, 2)
            if outer.level(c[None, :])[0] > 0.7:
                continue
            amp = float(amplitude * rng.uniform(-1, 1))
            bumps.append((amp, float(c[0]), float(c[1]), float(R * rng.uniform(0.1, 0.3))))
        out.append(BumpPotential(p.c0, tuple(bumps), clip=float(m)))
    return out


def arc_around(theta_c, width) -> ArcSet:
    lo = (theta_c - 0.5 * width) % (2 * np.pi)
    hi = lo + width
    if hi <= 2 * np.pi:
        return ArcSet(((lo, hi),))
    return ArcSet(((0.0, hi - 2 * np.pi), (lo, 2 * np.pi)))


@dataclass
class RatioRecord:
    q_id: int
    num: float
    den: float
    den_small: float = math.nan

    @property
    def ratio(self):
        return self.num / self.den if self.den > 0 else math.inf

    @property
    def ratio_small(self):
        return self.num / self.den_small if self.den_small > 0 else math.inf


@dataclass
class StabilityExperiment:
    disc: Discretization
    data: ScenarioData
    p: BumpPotential
    family: list
    arcs: ArcSet
    T: float
    T0: float
    m: float
    delta: float
    small_arc: ArcSet | None = None
    cfl_safety: float = 0.9
    admissible: bool = True
    eps_ok: bool = True
    per_length: float = 64.0
    _cache: dict = field(default_factory=dict, repr=False)

    def tgrid(self) -> TimeGrid:
        return time_grid(self.disc, self.T, self.cfl_safety)

    def observation(self):
        """Trace operator on Gamma_0 quadrature nodes followed by the small-arc nodes."""
        if "op" not in self._cache:
            th, w = self.arcs.quadrature(self.disc.outer, self.per_length)
            n0 = len(th)
            if self.small_arc is not None:
                ts, ws = self.small_arc.quadrature(self.disc.outer, self.per_length)
                th, w = np.concatenate([th, ts]), np.concatenate([w, ws])
            self._cache["op"] = (build_trace_operator(self.disc, th, w), n0)
        return self._cache["op"]

    def trace_p(self):
        if "trace_p" not in self._cache:
            op, _ = self.observation()
            self._cache["trace_p"] = forward_trace(self.data, self.disc, self.p, self.tgrid(), op)
        return self._cache["trace_p"]


def potential_l2(disc: Discretization, a, b=None):
    va = disc.restrict(a)
    vb = disc.restrict(b) if b is not None else 0.0
    return float(np.sqrt(np.sum((va - vb) ** 2) * disc.h**2))


def trace_norm(trace, space_weights, dt):
    """L2(0, T; arcs) norm of a (nt + 1, n_points) trace with trapezoid weights in time."""
    tw = np.full(trace.shape[0], dt)
    tw[0] = tw[-1] = 0.5 * dt
    return float(np.sqrt(np.sum(tw[:, None] * space_weights[None, :] * trace * trace)))


def check_hypotheses(exp: StabilityExperiment):
    items = {}
    items["time"] = {"pass": exp.T > exp.T0, "margin": exp.T - exp.T0}
    u0 = exp.disc.restrict(exp.data.u0)
    md = float(np.min(np.abs(u0)))
    items["u0_floor"] = {"pass": md >= exp.delta, "margin": md - exp.delta}
    pn = float(np.max(np.abs(exp.disc.restrict(exp.p))))
    items["p_bound"] = {"pass": pn <= exp.m, "margin": exp.m - pn}
    qn = max((float(np.max(np.abs(exp.disc.restrict(q))))) for q in exp.family) if exp.family else 0.0
    items["q_bound"] = {"pass": qn <= exp.m * (1 + 1e-12), "margin": exp.m - qn}
    items["admissibility"] = {"pass": bool(exp.admissible), "margin": None}
    items["eps"] = {"pass": bool(exp.eps_ok), "margin": None}
    return {"items": items, "pass": all(v["pass"] for v in items.values())}


def lipschitz_ratio(exp: StabilityExperiment, q, q_id=0) -> RatioRecord:
    num = potential_l2(exp.disc, exp.p, q)
    if num == 0.0:
        raise DegeneratePair("q equals p on the grid; the ratio is undefined")
    op, n0 = exp.observation()
    res = solve_difference_system(exp.data, exp.disc, exp.p, q, exp.T, op, exp.cfl_safety,
                                  trace_p=exp.trace_p())
    dt = res.tgrid.dt
    den = trace_norm(res.trace[:, :n0], op.weights[:n0], dt)
    den_s = trace_norm(res.trace[:, n0:], op.weights[n0:], dt) if exp.small_arc is not None else math.nan
    return RatioRecord(q_id, num, den, den_s)


@dataclass
class SweepTable:
    records: list
    C_emp: float
    C_emp_small: float

    def rows(self):
        for r in self.records:
            yield [r.q_id, r.num, r.den, r.ratio, r.den_small, r.ratio_small]

    @staticmethod
    def header():
        return ["q_id", "num", "den", "ratio", "den_small_arc", "ratio_small_arc"]


def experiment_sweep(exp: StabilityExperiment, threads=1) -> SweepTable:
    exp.trace_p()

    def job(iq):
        i, q = iq
        return lipschitz_ratio(exp, q, i)

    items = list(enumerate(exp.family))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            recs = list(ex.map(job, items))
    else:
        recs = [job(it) for it in items]
    C = max((r.ratio for r in recs), default=math.nan)
    Cs = max((r.ratio_small for r in recs), default=math.nan) if exp.small_arc is not None else math.nan
    return SweepTable(recs, C, Cs)


# ---------------------------------------------------------------------------
# reconstruction

@dataclass
class ForwardMap:
    """Discrete map from active-node potential values to the observed d_nu d_t trace."""

    disc: Discretization
    data: ScenarioData
    tg: TimeGrid
    op: TraceOperator

    @property
    def N(self):
        return self.tg.nt + 1

    def time_weights(self):
        tw = np.full(self.tg.nt + 1, self.tg.dt)
        tw[0] = 0.0        # d_t u(0) = u1 is fixed, so the t = 0 slice carries no information
        tw[-1] = 0.5 * self.tg.dt
        return tw

    def states(self, q_act):
        """u^0 .. u^N as an (N + 1, n_active) array."""
        return np.array([u.copy() for _, _, u in leapfrog(self.disc, self.tg, self.data, q_act, self.N)])

    def observe(self, U):
        d = U @ self.op.A.T
        z = np.zeros((self.tg.nt + 1, d.shape[1]))
        z[1:] = (d[2:] - d[:-2]) / (2 * self.tg.dt)
        return z

    def misfit(self, z, z_obs):
        r = z - z_obs
        return 0.5 * float(np.sum(self.time_weights()[:, None] * self.op.weights[None, :] * r * r))

    def residual_weights(self, r):
        return self.time_weights()[:, None] * self.op.weights[None, :] * r

    def tangent(self, q_act, U, dq):
        """Linearized trace for a potential perturbation dq around q (states U)."""
        d, dt = self.disc, self.tg.dt
        x_prev = np.zeros(d.n_active)
        x = -0.5 * dt * dt * dq * U[0]
        X = [x_prev, x]
        for n in range(1, self.N):
            x_next = 2 * x - x_prev - dt * dt * (d.K @ x + q_act * x + dq * U[n])
            x_prev, x = x, x_next
            X.append(x)
        return self.observe(np.array(X))

    def adjoint(self, q_act, U, rw):
        """Gradient (per active node, Euclidean) of sum rw * z(q) for weighted residual rw."""
        d, dt, N = self.disc, self.tg.dt, self.N
        nt = self.tg.nt
        # source e^m = A^T s^m with s^m = (r^{m-1} - r^{m+1}) / (2 dt), r defined for n = 1 .. nt
        R = np.zeros((N + 3, rw.shape[1]))
        R[1:nt + 1] = rw[1:nt + 1]
        KT = d.K.T.tocsr()
        At = self.op.A.T.tocsr()
        lam_next2 = np.zeros(d.n_active)
        lam_next = np.zeros(d.n_active)
        grad = np.zeros(d.n_active)
        for m in range(N, 0, -1):
            s = (R[m - 1] - R[m + 1]) / (2 * dt)
            e = At @ s
            lam = e + 2 * lam_next - dt * dt * (KT @ lam_next + q_act * lam_next) - lam_next2
            if m == 1:
                grad += -0.5 * dt * dt * lam * U[0]
            else:
                grad += -dt * dt * lam * U[m - 1]
            lam_next2, lam_next = lam_next, lam
        return grad

    def gradient(self, q_act, z_obs):
        U = self.states(q_act)
        z = self.observe(U)
        J = self.misfit(z, z_obs)
        g = self.adjoint(q_act, U, self.residual_weights(z - z_obs))
        return J, g / self.disc.h**2, U


def power_norm(fm: ForwardMap, q_act, U, n_iter=12, seed=0):
    """Largest eigenvalue of J'^T J' in the L2(Omega) metric by power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=fm.disc.n_active)
    v /= np.sqrt(np.sum(v * v) * fm.disc.h**2)
    lam = 0.0
    for _ in range(n_iter):
        z = fm.tangent(q_act, U, v)
        w = fm.adjoint(q_act, U, fm.residual_weights(z)) / fm.disc.h**2
        lam = float(np.sum(w * v) * fm.disc.h**2)
        nrm = np.sqrt(np.sum(w * w) * fm.disc.h**2)
        if nrm == 0:
            return 0.0
        v = w / nrm
    return lam


@dataclass
class ReconstructionResult:
    q: np.ndarray
    misfits: list
    errors: list
    step: float
    iterations: int
    converged_zero: bool = False


def reconstruct_potential(fm: ForwardMap, z_obs, p0_act, iterations=200, step=None, step_scale=1.0,
                          q_true_act=None, patience=5, seed=0):
    """Landweber iteration q <- q - step * grad J(q) with the L2 gradient from the discrete adjoint."""
    q = np.array(p0_act, dtype=float)
    h2 = fm.disc.h**2
    err = (lambda v: float(np.sqrt(np.sum((v - q_true_act) ** 2) * h2))) if q_true_act is not None else None
    J, g, U = fm.gradient(q, z_obs)
    misfits = [J]
    errors = [err(q)] if err else []
    if J == 0.0:
        return ReconstructionResult(q, misfits, errors, 0.0, 0, True)
    if step is None:
        lam = power_norm(fm, q, U, seed=seed)
        if not lam > 0:
            raise StabilityError("zero forward sensitivity")
        step = step_scale / lam
    rises = 0
    it = 0
    for it in range(1, iterations + 1):
        q = q - step * g
        try:
            J_new, g, U = fm.gradient(q, z_obs)
        except NonFiniteField as exc:
            raise DivergenceDetected(f"forward solve blew up at iteration {it} (step {step:.3g})") from exc
        if not math.isfinite(J_new):
            raise DivergenceDetected(f"non-finite misfit at iteration {it} (step {step:.3g})")
        rises = rises + 1 if J_new > misfits[-1] else 0
        misfits.append(J_new)
        if err:
            errors.append(err(q))
        if rises >= patience:
            raise DivergenceDetected(f"misfit increased {patience} consecutive iterations (step {step:.3g})")
        if J_new == 0.0:
            break
    return ReconstructionResult(q, misfits, errors, float(step), it)


def gradient_check(fm: ForwardMap, q_act, z_obs, n_pixels=10, fd_step=1e-4, seed=0, pixels=None):
    """Adjoint gradient against central differences of J at random active nodes."""
    J, g, _ = fm.gradient(q_act, z_obs)
    g_euc = g * fm.disc.h**2
    rng = np.random.default_rng(seed)
    if pixels is None:
        pixels = rng.choice(fm.disc.n_active, size=n_pixels, replace=False)
    out = []
    for i in pixels:
        qp = q_act.copy()
        qm = q_act.copy()
        qp[i] += fd_step
        qm[i] -= fd_step
        Jp = fm.misfit(fm.observe(fm.states(qp)), z_obs)
        Jm = fm.misfit(fm.observe(fm.states(qm)), z_obs)
        fd = (Jp - Jm) / (2 * fd_step)
        rel = abs(g_euc[i] - fd) / max(abs(fd), 1e-300)
        out.append((int(i), float(g_euc[i]), float(fd), float(rel)))
    return out
