"""Explicit leapfrog solver for the transmission wave equation on a uniform node grid.

    u_tt - div(a grad u) + p u = f  in Omega,   u = g on the outer boundary.

The divergence form uses face fluxes a_face (u_j - u_i)/h with a_face the
harmonic mean of the nodal coefficients, which enforces continuity of u and
of the normal flux a du/dnu weakly across the interface.  Nodes inside Omega
with a neighbour outside are not updated by the stencil; their value is
assigned by linear interpolation between the boundary crossing (carrying g)
and the next interior node along the same grid line.

Unknowns are the "active" nodes (inside, all four neighbours inside).  The
semi-discrete system reads u'' = -K u - p u + C g(t) + f(t).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .geometry import ConvexBody, OuterDomain, Region, classify
from .medium import MediumSpec


class SolverError(RuntimeError):
    pass


class CflViolation(SolverError):
    pass


class NonFiniteField(SolverError):
    pass


class ArcOutsideBoundary(SolverError):
    pass


class CompatibilityError(SolverError):
    pass


DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))
SNAPSHOT_HEADER = struct.Struct("<qqdd")


@dataclass(frozen=True)
class Grid:
    x0: float
    y0: float
    h: float
    nx: int  # cells; nodes are nx + 1 per row
    ny: int

    @classmethod
    def covering(cls, outer: OuterDomain, n_cells=128, margin_cells=2):
        h = outer.diam / n_cells
        c, ab = outer.c, outer.ab
        nx = int(math.ceil(2 * ab[0] / h)) + 2 * margin_cells
        ny = int(math.ceil(2 * ab[1] / h)) + 2 * margin_cells
        x0 = c[0] - 0.5 * nx * h
        y0 = c[1] - 0.5 * ny * h
        return cls(float(x0), float(y0), float(h), nx, ny)

    @property
    def shape(self):
        return (self.ny + 1, self.nx + 1)

    @property
    def n_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    def xy(self):
        xs = self.x0 + self.h * np.arange(self.nx + 1)
        ys = self.y0 + self.h * np.arange(self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X.ravel(), Y.ravel()], axis=-1)

    def flat(self, ix, iy):
        return iy * (self.nx + 1) + ix


def max_time_step(h, alpha_hi, cfl_safety=0.9):
    return cfl_safety * h / math.sqrt(2.0 * alpha_hi)


def interface_fraction(body: ConvexBody, p, q, iters=52):
    """Fraction t in [0, 1] where the segment p -> q crosses the body boundary.

    The level function is convex along the segment, so one sign change is
    found by bisection; p and q must lie on opposite sides.
    """
    p, q = np.atleast_2d(p), np.atleast_2d(q)
    p_in = body.level(p) <= 1.0
    lo, hi = np.zeros(len(p)), np.ones(len(p))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        m_in = body.level(p + mid[:, None] * (q - p)) <= 1.0
        same = m_in == p_in
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def face_coefficient(body: ConvexBody, a_full, xy, i, j):
    """Harmonic mean of the two node values of a, weighted by where the face crosses the interface.

    Faces that do not cross the interface get the plain harmonic mean.
    """
    ai, aj = a_full[i], a_full[j]
    out = 2.0 * ai * aj / (ai + aj)
    side_i = body.level(xy[i]) <= 1.0
    side_j = body.level(xy[j]) <= 1.0
    cut = side_i != side_j
    if np.any(cut):
        tau = interface_fraction(body, xy[i][cut], xy[j][cut])
        out[cut] = 1.0 / (tau / ai[cut] + (1.0 - tau) / aj[cut])
    return out


@dataclass
class Discretization:
    """Grid plus assembled operators for one geometry and medium."""

    grid: Grid
    outer: OuterDomain
    body: ConvexBody
    medium: MediumSpec
    inside: np.ndarray = field(repr=False)      # flat grid indices of nodes inside Omega
    active: np.ndarray = field(repr=False)      # flat indices of stencil nodes
    snapped: np.ndarray = field(repr=False)     # flat indices of interpolated boundary nodes
    K: sp.csr_matrix = field(repr=False)
    C: sp.csr_matrix = field(repr=False)
    E: sp.csr_matrix = field(repr=False)        # active values -> inside-node values
    Eb: sp.csr_matrix = field(repr=False)       # boundary data at snap points -> inside-node values
    snap_points: np.ndarray = field(repr=False)
    a_nodes: np.ndarray = field(repr=False)     # coefficient at inside nodes
    faces: dict = field(repr=False)
    region: np.ndarray = field(repr=False)      # region tags at inside nodes

    @classmethod
    def build(cls, grid: Grid, outer: OuterDomain, body: ConvexBody, medium: MediumSpec):
        xy = grid.xy()
        n = grid.n_nodes
        W = grid.nx + 1
        ix = np.arange(n) % W
        iy = np.arange(n) // W
        inside_mask = outer.level(xy) < 1.0
        # grid margin guarantees no inside node sits on the box edge
        nb = {}
        for d in DIRS:
            jx, jy = ix + d[0], iy + d[1]
            ok = (jx >= 0) & (jx <= grid.nx) & (jy >= 0) & (jy <= grid.ny)
            j = np.where(ok, jy * W + jx, -1)
            nb[d] = j
        ext = np.zeros(n, dtype=bool)
        for d in DIRS:
            j = nb[d]
            ext |= inside_mask & ((j < 0) | ~inside_mask[np.maximum(j, 0)])
        snapped_mask = inside_mask & ext
        active_mask = inside_mask & ~ext
        inside = np.nonzero(inside_mask)[0]
        active = np.nonzero(active_mask)[0]
        snapped = np.nonzero(snapped_mask)[0]
        pos_in = -np.ones(n, dtype=np.int64)
        pos_in[inside] = np.arange(len(inside))
        pos_act = -np.ones(n, dtype=np.int64)
        pos_act[active] = np.arange(len(active))
        pos_snap = -np.ones(n, dtype=np.int64)
        pos_snap[snapped] = np.arange(len(snapped))
        a_full = np.zeros(n)
        a_full[inside] = medium.coefficient(body, xy[inside])
        if np.any(a_full[inside] <= 0):
            raise SolverError("coefficient must be positive")

        # interpolation rule for each snapped node
        n_s = len(snapped)
        snap_J = -np.ones(n_s, dtype=np.int64)
        snap_w = np.zeros(n_s)
        snap_pts = np.zeros((n_s, 2))
        arms = []  # (snapped node flat index, crossing point, length fraction)
        for k, s in enumerate(snapped):
            best = None
            nearest = None
            for d in DIRS:
                j = nb[d][s]
                if j >= 0 and inside_mask[j]:
                    continue
                q = xy[s] + grid.h * np.array(d, dtype=float)
                th = float(outer.segment_crossing(xy[s], q))
                th = max(th, 1e-12)
                bpt = xy[s] + th * grid.h * np.array(d, dtype=float)
                arms.append((s, bpt, th))
                if nearest is None or th < nearest[0]:
                    nearest = (th, bpt)
                jopp = nb[(-d[0], -d[1])][s]
                if jopp >= 0 and active_mask[jopp] and (best is None or th < best[0]):
                    best = (th, bpt, jopp)
            if best is not None:
                th, bpt, jopp = best
                snap_J[k] = jopp
                snap_w[k] = th / (1.0 + th)
                snap_pts[k] = bpt
            else:
                snap_pts[k] = nearest[1]

        # embedding of active values and boundary data into inside-node values
        n_in, n_a = len(inside), len(active)
        rows = list(pos_in[active])
        cols = list(range(n_a))
        vals = [1.0] * n_a
        has_J = snap_J >= 0
        rows += list(pos_in[snapped[has_J]])
        cols += list(pos_act[snap_J[has_J]])
        vals += list(snap_w[has_J])
        E = sp.csr_matrix((vals, (rows, cols)), shape=(n_in, n_a))
        Eb = sp.csr_matrix((1.0 - snap_w, (pos_in[snapped], np.arange(n_s))), shape=(n_in, n_s))

        # stiffness: rows over active nodes, columns over inside nodes, then fold through E, Eb
        h2 = grid.h**2
        rK, cK, vK = [], [], []
        for d in DIRS:
            j = nb[d][active]
            coef = face_coefficient(body, a_full, xy, active, j) / h2
            rK += [np.arange(n_a), np.arange(n_a)]
            cK += [pos_in[active], pos_in[j]]
            vK += [coef, -coef]
        Kin = sp.csr_matrix((np.concatenate(vK), (np.concatenate(rK), np.concatenate(cK))),
                            shape=(n_a, n_in))
        K = (Kin @ E).tocsr()
        C = (-(Kin @ Eb)).tocsr()
        K.eliminate_zeros()
        C.eliminate_zeros()

        # face structure for gradient energies: interior faces and boundary arms
        fi, fj, flen, fa = [], [], [], []
        for d in ((1, 0), (0, 1)):
            j = nb[d][inside]
            ok = (j >= 0)
            ok[ok] = inside_mask[j[ok]]
            i_in = np.nonzero(ok)[0]
            j_in = pos_in[j[ok]]
            fi.append(i_in)
            fj.append(j_in)
            flen.append(np.full(len(i_in), grid.h))
            fa.append(face_coefficient(body, a_full, xy, inside[ok], j[ok]))
        n_int = sum(len(x) for x in fi)
        arm_node = np.array([pos_in[s] for s, _, _ in arms], dtype=np.int64)
        arm_pts = np.array([p for _, p, _ in arms]).reshape(-1, 2)
        arm_len = np.array([th * grid.h for _, _, th in arms])
        fi = np.concatenate(fi)
        fj = np.concatenate(fj)
        flen_int = np.concatenate(flen)
        fa_int = np.concatenate(fa)
        n_arm = len(arms)
        # difference operator: rows = faces, columns = inside nodes, (u_j - u_i)/len
        D = sp.csr_matrix(
            (np.concatenate([1.0 / flen_int, -1.0 / flen_int, -1.0 / arm_len]),
             (np.concatenate([np.arange(n_int), np.arange(n_int), n_int + np.arange(n_arm)]),
              np.concatenate([fj, fi, arm_node]))),
            shape=(n_int + n_arm, n_in))
        Dg = sp.csr_matrix((1.0 / arm_len, (n_int + np.arange(n_arm), np.arange(n_arm))),
                           shape=(n_int + n_arm, n_arm))
        measure = np.concatenate([flen_int * grid.h, arm_len * grid.h])
        a_face = np.concatenate([fa_int, a_full[inside[arm_node]]])
        # share of each face attributed to its nodes, divided by the node area h^2
        P = sp.csr_matrix(
            (np.concatenate([0.5 * measure[:n_int], 0.5 * measure[:n_int], measure[n_int:]]) / h2,
             (np.concatenate([fi, fj, arm_node]),
              np.concatenate([np.arange(n_int), np.arange(n_int), n_int + np.arange(n_arm)]))),
            shape=(n_in, n_int + n_arm))
        faces = {"D": D, "Dg": Dg, "measure": measure, "a": a_face, "P": P, "arm_points": arm_pts}
        region = classify(outer, body, xy[inside])
        return cls(grid, outer, body, medium, inside, active, snapped, K, C, E, Eb, snap_pts,
                   a_full[inside], faces, np.asarray(region))

    # convenience -----------------------------------------------------------
    @property
    def h(self):
        return self.grid.h

    @property
    def n_active(self):
        return len(self.active)

    @property
    def n_inside(self):
        return len(self.inside)

    def xy_active(self):
        return self.grid.xy()[self.active]

    def xy_inside(self):
        return self.grid.xy()[self.inside]

    def inside_values(self, u_act, g_snap=None):
        v = self.E @ u_act
        if g_snap is not None:
            v = v + self.Eb @ g_snap
        return v

    def to_grid(self, u_act, g_snap=None, fill=0.0):
        out = np.full(self.grid.n_nodes, fill, dtype=float)
        out[self.inside] = self.inside_values(u_act, g_snap)
        return out.reshape(self.grid.shape)

    def restrict(self, values):
        """Active-node values from a callable, a full-grid array or an active-node array."""
        if values is None:
            return np.zeros(self.n_active)
        if callable(values):
            return np.asarray(values(self.xy_active()), dtype=float) * np.ones(self.n_active)
        v = np.asarray(values, dtype=float)
        if v.ndim == 0:
            return np.full(self.n_active, float(v))
        if v.size == self.grid.n_nodes:
            return v.ravel()[self.active]
        if v.size == self.n_active:
            return v.ravel()
        raise SolverError(f"cannot interpret field of size {v.size}")

    def gradient_density(self, v_in, g_arm=None, weighted=True):
        """Per-inside-node density of a|grad v|^2 (or |grad v|^2); integrates with weight h^2."""
        F = self.faces
        df = F["D"] @ v_in
        if g_arm is not None:
            df = df + F["Dg"] @ g_arm
        if weighted:
            return F["P"] @ (F["a"] * df * df)
        return F["P"] @ (df * df)

    def area(self):
        return self.n_inside * self.h**2


def interp_matrix(disc: Discretization, pts, order=3):
    """Sparse map from inside-node values to values at arbitrary points.

    Tensor Lagrange interpolation of the given order (3 = bicubic, 1 =
    bilinear); stencils touching nodes outside Omega fall back to bilinear.
    """
    g = disc.grid
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    pos_in = -np.ones(g.n_nodes, dtype=np.int64)
    pos_in[disc.inside] = np.arange(disc.n_inside)
    rows, cols, vals = [], [], []
    fx = (pts[:, 0] - g.x0) / g.h
    fy = (pts[:, 1] - g.y0) / g.h
    for k in range(len(pts)):
        done = False
        for o in ((order, 1) if order == 3 else (1,)):
            if o == 3:
                bx, by = int(math.floor(fx[k])) - 1, int(math.floor(fy[k])) - 1
                offs = np.arange(4)
            else:
                bx, by = int(math.floor(fx[k])), int(math.floor(fy[k]))
                offs = np.arange(2)
            tx, ty = fx[k] - bx, fy[k] - by
            wx = _lagrange(offs, tx)
            wy = _lagrange(offs, ty)
            idx = [(bx + i, by + j) for j in offs for i in offs]
            if any(not (0 <= a <= g.nx and 0 <= b <= g.ny) for a, b in idx):
                continue
            flat = [g.flat(a, b) for a, b in idx]
            p = pos_in[flat]
            if np.any(p < 0):
                continue
            w = np.outer(wy, wx).ravel()
            rows += [k] * len(p)
            cols += list(p)
            vals += list(w)
            done = True
            break
        if not done:
            raise ArcOutsideBoundary(f"interpolation point {pts[k].tolist()} is not resolved inside the grid")
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(pts), disc.n_inside))


def _lagrange(nodes, t):
    w = np.ones(len(nodes))
    for i, xi in enumerate(nodes):
        for j, xj in enumerate(nodes):
            if i != j:
                w[i] *= (t - xj) / (xi - xj)
    return w


@dataclass
class TraceOperator:
    """Normal derivative at outer-boundary points from a one-sided second-order difference.

    d_nu u(x_b) ~ (3 g(x_b) - 4 u(x_b - delta nu) + u(x_b - 2 delta nu)) / (2 delta)
    as a linear map: trace = A u_act + Ag g_snap + c_b g(x_b).
    """

    theta: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    A: sp.csr_matrix
    Ag: sp.csr_matrix
    cb: float

    def apply(self, u_act, g_snap=None, g_b=None):
        out = self.A @ u_act
        if g_snap is not None:
            out = out + self.Ag @ g_snap
        if g_b is not None:
            out = out + self.cb * g_b
        return out


def build_trace_operator(disc: Discretization, theta, weights=None, depth_cells=3.0):
    theta = np.asarray(theta, dtype=float)
    pts = disc.outer.point(theta)
    if np.any(np.abs(disc.outer.level(pts) - 1.0) > 1e-9):
        raise ArcOutsideBoundary("trace points must lie on the outer boundary")
    nu = disc.outer.normal(theta)
    delta = depth_cells * disc.h
    M1 = interp_matrix(disc, pts - delta * nu)
    M2 = interp_matrix(disc, pts - 2 * delta * nu)
    Min = (-4.0 * M1 + M2) / (2 * delta)
    A = (Min @ disc.E).tocsr()
    Ag = (Min @ disc.Eb).tocsr()
    if weights is None:
        weights = np.zeros(len(theta))
    return TraceOperator(theta, pts, nu, np.asarray(weights, dtype=float), A, Ag, 3.0 / (2 * delta))


# ---------------------------------------------------------------------------

@dataclass
class ScenarioData:
    """Initial data u0, u1 (callables of points), boundary data g(t, pts), source f(t, pts)."""

    u0: Callable | float = 0.0
    u1: Callable | float = 0.0
    g: Callable | float | None = None
    f: Callable | None = None
    delta_floor: float = 0.0

    def g_values(self, t, pts):
        if self.g is None:
            return np.zeros(len(pts))
        if callable(self.g):
            return np.asarray(self.g(t, pts), dtype=float) * np.ones(len(pts))
        return np.full(len(pts), float(self.g))

    @property
    def homogeneous_boundary(self):
        return self.g is None or (not callable(self.g) and float(self.g) == 0.0)

    def check_compatibility(self, outer: OuterDomain, n=256, tol=1e-8):
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        pts = outer.point(th)
        u0 = self.u0(pts) if callable(self.u0) else np.full(n, float(self.u0))
        err = float(np.max(np.abs(self.g_values(0.0, pts) - u0)))
        if err > tol:
            raise CompatibilityError(f"g(0) differs from u0 on the boundary by {err:.3g}")
        return err


@dataclass
class TimeGrid:
    dt: float
    nt: int

    @property
    def T(self):
        return self.dt * self.nt

    def times(self, n_extra=0):
        return self.dt * np.arange(self.nt + 1 + n_extra)


def time_grid(disc: Discretization, T, cfl_safety=0.9, dt=None):
    dt_max = max_time_step(disc.h, disc.medium.alpha_hi, cfl_safety)
    if dt is not None:
        if dt > dt_max * (1 + 1e-12):
            raise CflViolation(f"dt = {dt:.6g} exceeds the stable bound {dt_max:.6g}")
        nt = int(round(T / dt))
        return TimeGrid(float(dt), nt)
    nt = max(1, int(math.ceil(T / dt_max - 1e-12)))
    return TimeGrid(float(T / nt), nt)


def _field_at(val, pts):
    if callable(val):
        return np.asarray(val(pts), dtype=float) * np.ones(len(pts))
    return np.full(len(pts), float(val))


def leapfrog(disc: Discretization, tg: TimeGrid, scenario: ScenarioData, potential=None,
             n_steps=None, check_every=100, source_active=None):
    """Generator over (n, t_n, u_n) for n = 0 .. n_steps (default tg.nt).

    `source_active(n)` may return an extra active-node source at step n.
    """
    xa = disc.xy_active()
    p = disc.restrict(potential)
    dt = tg.dt
    n_steps = tg.nt if n_steps is None else n_steps
    spts = disc.snap_points
    homog = scenario.homogeneous_boundary

    def rhs(n, u):
        t = n * dt
        r = -(disc.K @ u) - p * u
        if not homog:
            r += disc.C @ scenario.g_values(t, spts)
        if scenario.f is not None:
            r += np.asarray(scenario.f(t, xa), dtype=float)
        if source_active is not None:
            r += source_active(n)
        return r

    u0 = _field_at(scenario.u0, xa)
    u1 = _field_at(scenario.u1, xa)
    yield 0, 0.0, u0
    if n_steps == 0:
        return
    u_prev = u0
    u = u0 + dt * u1 + 0.5 * dt * dt * rhs(0, u0)
    yield 1, dt, u
    for n in range(1, n_steps):
        u_next = 2.0 * u - u_prev + dt * dt * rhs(n, u)
        u_prev, u = u, u_next
        if (n + 1) % check_every == 0 and not np.all(np.isfinite(u)):
            raise NonFiniteField(f"non-finite values at step {n + 1}")
        yield n + 1, (n + 1) * dt, u
    if not np.all(np.isfinite(u)):
        raise NonFiniteField("non-finite values at final step")


@dataclass
class WaveState:
    disc: Discretization
    tgrid: TimeGrid
    scenario: ScenarioData
    steps: np.ndarray          # stored step indices
    u: np.ndarray              # (n_stored, n_active)
    traces: dict = field(default_factory=dict)

    @property
    def mask(self):
        return self.disc.region

    def times(self):
        return self.steps * self.tgrid.dt

    def index_of(self, n):
        k = np.searchsorted(self.steps, n)
        if k >= len(self.steps) or self.steps[k] != n:
            raise IndexError(f"step {n} was not stored")
        return int(k)

    def g_snap(self, n):
        return self.scenario.g_values(n * self.tgrid.dt, self.disc.snap_points)

    def field(self, n):
        return self.disc.to_grid(self.u[self.index_of(n)], self.g_snap(n))


def solve_forward(scenario: ScenarioData, disc: Discretization, potential=None, T=1.0,
                  cfl_safety=0.9, dt=None, store_stride=1, traces: dict | None = None,
                  observers: Sequence[Callable] = (), n_extra_steps=0, snapshot=None):
    """Run the leapfrog scheme to time T; store every `store_stride`-th step (0 stores none).

    `traces` maps names to TraceOperator objects evaluated at every step.
    `observers` are called as obs(n, t, u) at every step.
    """
    tg = time_grid(disc, T, cfl_safety, dt)
    steps, store = [], []
    tr_out = {k: [] for k in (traces or {})}
    homog = scenario.homogeneous_boundary
    for n, t, u in leapfrog(disc, tg, scenario, potential, tg.nt + n_extra_steps):
        if store_stride and n % store_stride == 0:
            steps.append(n)
            store.append(u.copy())
        for name, op in (traces or {}).items():
            if homog:
                tr_out[name].append(op.apply(u))
            else:
                tr_out[name].append(op.apply(u, scenario.g_values(t, disc.snap_points),
                                             scenario.g_values(t, op.points)))
        for obs in observers:
            obs(n, t, u)
        if snapshot is not None:
            snapshot(n, t, u)
    u_arr = np.array(store) if store else np.zeros((0, disc.n_active))
    return WaveState(disc, tg, scenario, np.array(steps, dtype=np.int64), u_arr,
                     {k: np.array(v) for k, v in tr_out.items()})


@dataclass
class BoundaryTrace:
    theta: np.ndarray
    weights: np.ndarray
    times: np.ndarray
    values: np.ndarray   # (n_times, n_points)


def flux_trace(state: WaveState, op: TraceOperator) -> BoundaryTrace:
    vals = []
    for k, n in enumerate(state.steps):
        if state.scenario.homogeneous_boundary:
            vals.append(op.apply(state.u[k]))
        else:
            t = n * state.tgrid.dt
            vals.append(op.apply(state.u[k], state.g_snap(n), state.scenario.g_values(t, op.points)))
    return BoundaryTrace(op.theta, op.weights, state.times(), np.array(vals))


def _energy(d: Discretization, scenario: ScenarioData, dt, n, u_prev, u, u_next, p_act=None):
    gs = [scenario.g_values(k * dt, d.snap_points) for k in (n - 1, n, n + 1)]
    ut = (d.inside_values(u_next, gs[2]) - d.inside_values(u_prev, gs[0])) / (2 * dt)
    u_in = d.inside_values(u, gs[1])
    g_arm = None
    if not scenario.homogeneous_boundary:
        g_arm = scenario.g_values(n * dt, d.faces["arm_points"])
    e = float(np.sum(ut * ut) * d.h**2 + np.sum(d.gradient_density(u_in, g_arm)) * d.h**2)
    if p_act is not None:
        p_in = np.zeros(d.n_inside)
        p_in[np.searchsorted(d.inside, d.active)] = p_act
        e += float(np.sum(p_in * u_in * u_in) * d.h**2)
    return e


def energy(state: WaveState, t_index: int, potential=None):
    """Discrete energy at step t_index: ||u_t||^2 + int a|grad u|^2 (+ int p u^2 if p is given).

    u_t is the centred difference, so steps t_index - 1 and t_index + 1 must be stored.
    """
    k0, k1, k2 = (state.index_of(t_index + s) for s in (-1, 0, 1))
    p_act = None if potential is None else state.disc.restrict(potential)
    return _energy(state.disc, state.scenario, state.tgrid.dt, t_index, state.u[k0], state.u[k1],
                   state.u[k2], p_act)


def energy_history(scenario: ScenarioData, disc: Discretization, potential=None, T=1.0, cfl_safety=0.9,
                   include_potential=True):
    """Energies at steps 1 .. nt - 1 computed on the fly (no stored states)."""
    tg = time_grid(disc, T, cfl_safety)
    p_act = disc.restrict(potential) if (potential is not None and include_potential) else None
    out, window = [], []
    for n, _, u in leapfrog(disc, tg, scenario, potential):
        window = (window + [u])[-3:]
        if len(window) == 3:
            out.append(_energy(disc, scenario, tg.dt, n - 1, *window, p_act))
    return tg, np.array(out)


# ---------------------------------------------------------------------------
# difference system y = d/dt (u_p - u_q)

@dataclass
class DifferenceResult:
    tgrid: TimeGrid
    times: np.ndarray           # t_n, n = 0 .. nt
    trace: np.ndarray           # (nt + 1, n_points) normal derivative of y
    op: TraceOperator
    y: np.ndarray | None = None  # (n_stored, n_active) when requested
    steps: np.ndarray | None = None

    def odd_extension(self):
        """Times and traces on (-T, T) by odd reflection (the t = 0 slice is zero)."""
        t = np.concatenate([-self.times[:0:-1], self.times])
        v = np.concatenate([-self.trace[:0:-1], self.trace])
        return t, v

    def y_odd_extension(self):
        if self.y is None:
            raise SolverError("y was not stored")
        t = self.steps * self.tgrid.dt
        return (np.concatenate([-t[:0:-1], t]), np.concatenate([-self.y[:0:-1], self.y]))


def solve_difference_system(scenario: ScenarioData, disc: Discretization, p, q, T, op: TraceOperator,
                            cfl_safety=0.9, store_y_stride=0, trace_p=None):
    """Traces of y = d/dt (u_p - u_q) on the observation points (and y itself if requested).

    `trace_p` may carry precomputed normal traces of u_p (steps 0 .. nt + 1), which
    avoids re-solving the reference problem for every q.  The boundary data of y
    vanish, so only the interior part of the trace operator contributes.  The
    leapfrog start makes (u^1 - u^-1)/(2 dt) = u1 for both potentials, so y(0) = 0.
    """
    tg = time_grid(disc, T, cfl_safety)
    dt = tg.dt
    ys, steps = [np.zeros(disc.n_active)], [0]
    if store_y_stride > 0:
        trp, trq = [], []
        diffs = {}
        for (n, _, up), (_, _, uq) in zip(leapfrog(disc, tg, scenario, p, tg.nt + 1),
                                          leapfrog(disc, tg, scenario, q, tg.nt + 1)):
            trp.append(op.A @ up)
            trq.append(op.A @ uq)
            diffs[n] = up - uq
            m = n - 1
            if m >= 1 and m % store_y_stride == 0:
                steps.append(m)
                ys.append((diffs[n] - diffs[m - 1]) / (2 * dt))
            diffs.pop(n - 2, None)
        trp = np.array(trp) if trace_p is None else trace_p
        trq = np.array(trq)
    else:
        trp = forward_trace(scenario, disc, p, tg, op) if trace_p is None else trace_p
        trq = forward_trace(scenario, disc, q, tg, op)
    d_tr = trp - trq
    trace = np.zeros((tg.nt + 1, d_tr.shape[1]))
    trace[1:] = (d_tr[2:] - d_tr[:-2]) / (2 * dt)
    y = st = None
    if store_y_stride > 0:
        y, st = np.array(ys), np.array(steps, dtype=np.int64)
    return DifferenceResult(tg, tg.times(), trace, op, y, st)


def forward_trace(scenario: ScenarioData, disc: Discretization, potential, tg: TimeGrid,
                  op: TraceOperator):
    """Normal traces (interior part) of u at steps 0 .. nt + 1."""
    out = np.empty((tg.nt + 2, len(op.theta)))
    for n, t, u in leapfrog(disc, tg, scenario, potential, tg.nt + 1):
        out[n] = op.A @ u
    return out


# ---------------------------------------------------------------------------
# snapshots

def write_snapshot(fh, grid: Grid, t: float, values_grid: np.ndarray):
    """Append one snapshot: header (nx, ny, h, t) then (ny+1)(nx+1) float64 row-major."""
    fh.write(SNAPSHOT_HEADER.pack(grid.nx, grid.ny, grid.h, float(t)))
    fh.write(np.ascontiguousarray(values_grid, dtype="<f8").tobytes())


def read_snapshots(path):
    out = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(SNAPSHOT_HEADER.size)
            if not head:
                break
            nx, ny, h, t = SNAPSHOT_HEADER.unpack(head)
            data = np.frombuffer(fh.read(8 * (nx + 1) * (ny + 1)), dtype="<f8").reshape(ny + 1, nx + 1)
            out.append((t, data.copy(), (nx, ny, h)))
    return out
