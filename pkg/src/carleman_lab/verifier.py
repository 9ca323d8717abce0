"""Weighted integral groups of the one-parameter Carleman inequality, evaluated on grid fields.

Integrals over (-T, T) are computed from fields stored on t >= 0 with a known
parity in time; all integrands are squares, hence even, and the symmetric
trapezoid rule folds onto the half grid exactly.

Weights are separable, e^{2 s phi} = e^{2 s (mu(x) - mu_sup)} e^{-2 s beta t^2} e^{2 s mu_sup};
every group is reported without the common factor e^{2 s mu_sup} (recorded as
`log_shift`), which leaves the ratios unchanged and keeps the numbers in range.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .solver import Discretization, TraceOperator, build_trace_operator, interp_matrix
from .weights import ArcSet, CutoffTheta, SpaceTimeWeight

GROUPS = ("lhs_energy", "lhs_kinetic0", "rhs_residual", "rhs_boundary", "rhs_neg_region",
          "rhs_ball", "rhs_timecaps", "rhs_interface_neg", "rhs_interface_caps")
RHS_GROUPS = GROUPS[2:]
KILLED = ("rhs_timecaps", "rhs_neg_region", "rhs_interface_neg", "rhs_interface_caps")


class VerifierError(ValueError):
    pass


class MismatchedGrids(VerifierError):
    pass


# ---------------------------------------------------------------------------
# plain quadratures

def trapezoid_weights(t):
    t = np.asarray(t, dtype=float)
    w = np.zeros_like(t)
    if len(t) > 1:
        d = np.diff(t)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
    return w


def folded_time_weights(t):
    """Weights on 0 = t_0 < ... < t_J = T of the trapezoid rule on the mirrored grid over (-T, T)."""
    t = np.asarray(t, dtype=float)
    if t[0] != 0.0:
        raise VerifierError("folded quadrature needs t_0 = 0")
    w = 2.0 * trapezoid_weights(t)
    return w


def quad_volume(field_values, weight, region, h, time_weights=None):
    """sum_t tau_t sum_i h^2 weight * field over nodes where `region` holds.

    Arrays are (n_times, n_nodes) or (n_nodes,); `region` may be None (all nodes).
    """
    f = np.asarray(field_values, dtype=float)
    w = np.broadcast_to(np.asarray(weight, dtype=float), f.shape)
    if region is not None:
        f = np.where(np.broadcast_to(region, f.shape), f, 0.0)
    per_t = np.sum(w * f, axis=-1) * h * h
    if time_weights is None:
        return float(np.sum(per_t)) if per_t.ndim == 0 else float(np.sum(per_t))
    return float(np.sum(np.asarray(time_weights) * per_t))


def quad_boundary(trace_values, weight, space_weights, time_weights=None):
    """Composite rule: arc-length weights (Simpson) along the arcs times trapezoid in time."""
    f = np.asarray(trace_values, dtype=float)
    w = np.broadcast_to(np.asarray(weight, dtype=float), f.shape)
    per_t = np.sum(w * f * np.asarray(space_weights), axis=-1)
    if time_weights is None:
        return float(np.sum(per_t))
    return float(np.sum(np.asarray(time_weights) * per_t))


def closed_curve_simpson(n):
    """Angles and composite Simpson weights (in the angle) on [0, 2 pi] with n even panels."""
    if n % 2:
        n += 1
    th = np.linspace(0, 2 * np.pi, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= (2 * np.pi / n) / 3.0
    # fold the duplicated endpoint
    w[0] += w[-1]
    return th[:-1], w[:-1]


# ---------------------------------------------------------------------------

@dataclass
class SpaceTimeField:
    """Active-node values v^n for steps n = 0 .. N + 1 and the time parity used below t = 0."""

    disc: Discretization
    dt: float
    values: np.ndarray
    parity: str = "odd"

    @property
    def N(self):
        return self.values.shape[0] - 2

    def __post_init__(self):
        if self.parity not in ("odd", "even"):
            raise VerifierError("parity must be 'odd' or 'even'")
        if self.values.ndim != 2 or self.values.shape[1] != self.disc.n_active:
            raise MismatchedGrids("field does not match the discretization")

    def stream(self):
        for n in range(self.values.shape[0]):
            yield n, self.values[n]


@dataclass
class IntegralGroups:
    values: dict
    includes_kinetic: bool

    def __getitem__(self, k):
        return self.values[k]

    @property
    def lhs(self):
        return self.values["lhs_energy"] + (self.values["lhs_kinetic0"] if self.includes_kinetic else 0.0)

    @property
    def rhs(self):
        return sum(self.values[k] for k in RHS_GROUPS)

    @property
    def ratio(self):
        return self.lhs / self.rhs if self.rhs > 0 else (math.nan if self.lhs == 0 else math.inf)


@dataclass
class VerifierSetup:
    """Everything that depends on the geometry, weight and potential but not on the field."""

    disc: Discretization
    weight: SpaceTimeWeight
    q_act: np.ndarray
    s_values: np.ndarray
    ball_center: np.ndarray
    eps: float
    W: np.ndarray            # (n_s, n_inside) shifted spatial weights
    mu_in: np.ndarray
    mu_sup: float
    act_pos: np.ndarray      # positions of active nodes in the inside list
    ball: np.ndarray         # bool over inside nodes
    trace: TraceOperator     # on Gamma+
    Wb: np.ndarray           # (n_s, n_boundary_points)
    iface_interp: object
    iface_weights: np.ndarray
    Wi: np.ndarray           # (n_s, n_interface_points)
    mu_iface: np.ndarray

    @property
    def log_shift(self):
        return 2.0 * self.s_values * self.mu_sup


def make_setup(disc: Discretization, weight: SpaceTimeWeight, s_values, q=None, gamma_plus_arcs=None,
               eps=None, boundary_per_length=64.0, n_interface=256) -> VerifierSetup:
    mu = weight.mu
    s = np.atleast_1d(np.asarray(s_values, dtype=float))
    xin = disc.xy_inside()
    mu_in = mu.value(xin)
    arcs = gamma_plus_arcs if gamma_plus_arcs is not None else ArcSet.full()
    th_b, w_b = arcs.quadrature(disc.outer, per_length=boundary_per_length)
    op = build_trace_operator(disc, th_b, w_b)
    mu_b = mu.value(op.points)
    th_i, w_i = closed_curve_simpson(n_interface)
    pts_i, _, _, sp_i = mu.body.boundary(th_i)
    mu_i = mu.value(pts_i)
    mu_sup = float(max(mu_in.max(), mu_b.max() if len(mu_b) else -np.inf, mu_i.max()))
    W = np.exp(2.0 * s[:, None] * (mu_in[None, :] - mu_sup))
    Wb = np.exp(2.0 * s[:, None] * (mu_b[None, :] - mu_sup))
    Wi = np.exp(2.0 * s[:, None] * (mu_i[None, :] - mu_sup))
    act_pos = np.searchsorted(disc.inside, disc.active)
    eps = mu.eps if eps is None else eps
    ball = np.linalg.norm(xin - mu.c, axis=-1) < eps
    q_act = disc.restrict(q)
    return VerifierSetup(disc, weight, q_act, s, mu.c, float(eps), W, mu_in, mu_sup, act_pos, ball, op,
                         Wb, interp_matrix(disc, pts_i), w_i * sp_i, Wi, mu_i)


class GroupAccumulator:
    """Streams a field through the nine groups for every s of the setup."""

    def __init__(self, setup: VerifierSetup, dt: float, N: int, parity="odd", stride=1):
        self.S = setup
        self.dt = dt
        self.N = N
        self.parity = parity
        nodes = list(range(0, N + 1, max(1, int(stride))))
        if nodes[-1] != N:
            nodes.append(N)
        self.nodes = np.array(nodes, dtype=np.int64)
        tw = folded_time_weights(self.nodes * dt)
        self.tau = dict(zip(self.nodes.tolist(), tw.tolist()))
        ns = len(setup.s_values)
        # integrals without the s prefactors, completed in `result`
        self.acc = {k: np.zeros(ns) for k in ("vt", "ga", "v2", "res", "bnd", "neg_vt", "neg_ga", "neg_v2",
                                              "ball_vt", "ball_ga", "ball_v2", "cap_vt", "cap_g0", "cap_v2",
                                              "kin0", "ineg", "icap")}
        self.v0_zero = True

    def wanted(self, n):
        return n in self.tau

    def add(self, n, v_prev, v, v_next):
        S, d, dt, h2 = self.S, self.S.disc, self.dt, self.S.disc.h**2
        s = S.s_values
        beta = S.weight.beta
        t = n * dt
        tfac = np.exp(-2.0 * s * beta * t * t)
        tau = self.tau[n]
        vin = d.E @ v
        vt = d.E @ ((v_next - v_prev) / (2 * dt))
        ga = d.gradient_density(vin)
        v2 = vin * vin
        vt2 = vt * vt
        res = (v_next - 2 * v + v_prev) / (dt * dt) + d.K @ v + S.q_act * v
        neg = S.mu_in < beta * t * t
        dens = np.stack([vt2, ga, v2,
                         np.where(neg, vt2, 0.0), np.where(neg, ga, 0.0), np.where(neg, v2, 0.0),
                         np.where(S.ball, vt2, 0.0), np.where(S.ball, ga, 0.0), np.where(S.ball, v2, 0.0)],
                        axis=1)
        I = (S.W @ dens) * h2                            # (n_s, 9)
        Ir = (S.W[:, S.act_pos] @ (res * res)) * h2
        tr = S.trace.A @ v
        Ib = S.Wb @ (S.trace.weights * tr * tr)
        vi = S.iface_interp @ vin
        ineg = S.mu_iface < beta * t * t
        Ii = S.Wi @ np.where(ineg, S.iface_weights * vi * vi, 0.0)
        a = self.acc
        w = tau * tfac
        for k, col in zip(("vt", "ga", "v2", "neg_vt", "neg_ga", "neg_v2", "ball_vt", "ball_ga", "ball_v2"),
                          range(9)):
            a[k] += w * I[:, col]
        a["res"] += w * Ir
        a["bnd"] += w * Ib
        a["ineg"] += w * Ii
        if n == 0:
            self.v0_zero = bool(np.max(np.abs(v), initial=0.0) == 0.0)
            a["kin0"] += I[:, 0]
        if n == self.N:
            # both slices t = +T and t = -T carry the same value
            g0 = d.gradient_density(vin, weighted=False)
            a["cap_vt"] += 2.0 * tfac * I[:, 0]
            a["cap_g0"] += 2.0 * tfac * (S.W @ g0) * h2
            a["cap_v2"] += 2.0 * tfac * I[:, 2]
            a["icap"] += 2.0 * tfac * (S.Wi @ (S.iface_weights * vi * vi))

    def feed(self, stream: Iterable):
        """Consume (n, v^n) for n = 0 .. N + 1 in order."""
        prev = cur = None
        n_cur = -1
        for n, v in stream:
            if n == 0:
                cur, n_cur = v, 0
                continue
            if n == 1:
                v_m1 = -v if self.parity == "odd" else v
                if self.wanted(0):
                    self.add(0, v_m1, cur, v)
                prev, cur, n_cur = cur, v, 1
                continue
            if self.wanted(n_cur):
                self.add(n_cur, prev, cur, v)
            prev, cur, n_cur = cur, v, n
            if n > self.N:
                break
        if n_cur < self.N + 1:
            raise VerifierError(f"stream ended at step {n_cur}, need {self.N + 1}")

    def result(self):
        a, s = self.acc, self.S.s_values
        out = []
        for j in range(len(s)):
            sj = s[j]
            vals = {
                "lhs_energy": sj * (a["vt"][j] + a["ga"][j] + sj * sj * a["v2"][j]),
                "lhs_kinetic0": math.sqrt(sj) * a["kin0"][j],
                "rhs_residual": a["res"][j],
                "rhs_boundary": sj * a["bnd"][j],
                "rhs_neg_region": sj * (a["neg_vt"][j] + a["neg_ga"][j] + sj * sj * a["neg_v2"][j]),
                "rhs_ball": sj * (a["ball_vt"][j] + a["ball_ga"][j] + sj * sj * a["ball_v2"][j]),
                "rhs_timecaps": sj * (a["cap_vt"][j] + a["cap_g0"][j] + sj * sj * a["cap_v2"][j]),
                "rhs_interface_neg": sj**3 * a["ineg"][j],
                "rhs_interface_caps": sj * sj * a["icap"][j],
            }
            out.append(IntegralGroups({k: float(v) for k, v in vals.items()}, self.v0_zero))
        return out


def evaluate_groups(v: SpaceTimeField, weight: SpaceTimeWeight, q, s, setup: VerifierSetup | None = None,
                    stride=1, gamma_plus_arcs=None):
    """All nine groups for a stored field at one s (or a list of s)."""
    scalar = np.ndim(s) == 0
    if setup is None:
        setup = make_setup(v.disc, weight, np.atleast_1d(s), q, gamma_plus_arcs)
    elif setup.disc is not v.disc:
        raise MismatchedGrids("setup built on another discretization")
    acc = GroupAccumulator(setup, v.dt, v.N, v.parity, stride)
    acc.feed(v.stream())
    res = acc.result()
    return res[0] if scalar else res


# ---------------------------------------------------------------------------

def default_s_grid(mu_sup, n=16, s_min=1.0, s_max=200.0):
    return np.geomspace(s_min, s_max, n) / mu_sup


def estimate_s0(ratios, jump=0.2, overshoot=0.05, min_tail=3):
    """Smallest index whose tail changes by < `jump` per step and never exceeds its running max by > `overshoot`."""
    r = np.asarray(ratios, dtype=float)
    n = len(r)
    for k in range(n):
        tail = r[k:]
        if len(tail) < min_tail:
            return None
        if not np.all(np.isfinite(tail)):
            continue
        ok = True
        run = tail[0]
        for j in range(1, len(tail)):
            if tail[j] > (1 + jump) * tail[j - 1] or tail[j] > (1 + overshoot) * run:
                ok = False
                break
            run = max(run, tail[j])
        if ok:
            return k
    return None


@dataclass
class SweepReport:
    s_values: np.ndarray
    log_shift: np.ndarray
    field_ids: list
    variants: list
    groups: list                      # per field, list over s of IntegralGroups
    ratios: np.ndarray                # (n_fields, n_s)
    degenerate: list
    envelope: np.ndarray
    s0_index: int | None
    C_est: float
    flags: list = field(default_factory=list)

    @property
    def s0_est(self):
        return None if self.s0_index is None else float(self.s_values[self.s0_index])

    def killed_fraction(self, variant="theta"):
        """Largest killed-group value relative to lhs_energy over fields of a variant."""
        worst = 0.0
        for gs, var in zip(self.groups, self.variants):
            if var != variant:
                continue
            for g in gs:
                if g["lhs_energy"] > 0:
                    worst = max(worst, max(g[k] for k in KILLED) / g["lhs_energy"])
        return worst

    def rows(self):
        for fid, var, gs, rr in zip(self.field_ids, self.variants, self.groups, self.ratios):
            for s, g, r in zip(self.s_values, gs, rr):
                yield [fid, var, float(s)] + [g[k] for k in GROUPS] + [float(r)]

    @staticmethod
    def header():
        return ["field_id", "variant", "s"] + list(GROUPS) + ["ratio"]


def summarize(s_values, log_shift, field_ids, variants, groups, jump=0.2, overshoot=0.05):
    ratios = np.array([[g.ratio for g in gs] for gs in groups]) if groups else np.zeros((0, len(s_values)))
    degenerate = [bool(np.all(np.isnan(r))) for r in ratios]
    flags = []
    good = [r for r, dg in zip(ratios, degenerate) if not dg]
    if not good:
        flags.append("degenerate family: every field gives 0/0")
        env = np.full(len(s_values), np.nan)
        return SweepReport(np.asarray(s_values), np.asarray(log_shift), field_ids, variants, groups, ratios,
                           degenerate, env, None, math.nan, flags)
    env = np.nanmax(np.array(good), axis=0)
    k = estimate_s0(env, jump, overshoot)
    if k is None:
        flags.append("AllRatiosUnbounded: no s0 with a bounded tail on the grid")
        C = math.inf
    else:
        C = float(np.max(env[k:]))
    return SweepReport(np.asarray(s_values), np.asarray(log_shift), field_ids, variants, groups, ratios,
                       degenerate, env, k, C, flags)


def sweep_s(fields: Sequence[Callable[[], tuple]], setup: VerifierSetup, stride=1, threads=1,
            theta: CutoffTheta | None = None, include_raw=True):
    """Stream every field (and optionally its theta-truncated copy) through the groups.

    Each entry of `fields` is a zero-argument callable returning (field_id, dt, N, stream),
    where `stream` yields (n, v^n) for n = 0 .. N + 1 of an odd-in-time field.
    """
    if len(setup.s_values) < 8 or np.any(np.diff(setup.s_values) <= 0):
        raise VerifierError("s grid must be increasing with at least 8 points")
    prepared = theta.prepare(setup.disc.xy_active()) if theta is not None else None

    def job(make):
        fid, dt, N, stream = make()
        accs = []
        if include_raw:
            accs.append(("raw", GroupAccumulator(setup, dt, N, "odd", stride)))
        if theta is not None:
            accs.append(("theta", GroupAccumulator(setup, dt, N, "odd", stride)))
        _feed_many(accs, stream, prepared, theta, dt, N)
        return [(fid, var, acc.result()) for var, acc in accs]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(job, fields))
    else:
        results = [job(f) for f in fields]
    fids, variants, groups = [], [], []
    for res in results:
        for fid, var, gs in res:
            fids.append(fid)
            variants.append(var)
            groups.append(gs)
    return summarize(setup.s_values, setup.log_shift, fids, variants, groups)


def _feed_many(accs, stream, prepared, theta, dt, N):
    """Feed one raw stream to several accumulators, multiplying by theta(t) where requested.

    theta is even in t, so theta * v keeps the odd parity of v.
    """
    window = {}
    last = -1
    for n, v in stream:
        window[n] = v
        last = n
        m = n - 1
        if m < 0:
            continue
        if m > N:
            break
        vm1 = window[m - 1] if m >= 1 else -window[1]
        th = None
        for var, acc in accs:
            if not acc.wanted(m):
                continue
            if var == "raw":
                acc.add(m, vm1, window[m], window[m + 1])
            else:
                if th is None:
                    th = [theta.evaluate(k * dt, prepared) for k in (m - 1, m, m + 1)]
                acc.add(m, th[0] * vm1, th[1] * window[m], th[2] * window[m + 1])
        window.pop(m - 1, None)
    if last < N + 1:
        raise VerifierError(f"stream ended at step {last}, need {N + 1}")


# ---------------------------------------------------------------------------
# test-field family

def random_velocity(rng, outer, max_bumps=3):
    """Seeded sum of Gaussian bumps centred well inside the outer domain."""
    k = int(rng.integers(1, max_bumps + 1))
    R = 0.5 * outer.diam
    bumps = []
    while len(bumps) < k:
        c = outer.c + R * rng.uniform(-1, 1, 2)
        if outer.level(c[None, :])[0] > 0.45:
            continue
        bumps.append((float(rng.normal()), float(c[0]), float(c[1]), float(R * rng.uniform(0.08, 0.2))))

    def u1(x):
        v = np.zeros(x.shape[:-1])
        for amp, cx, cy, w in bumps:
            v = v + amp * np.exp(-((x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2) / (2 * w * w))
        return v

    return u1, bumps


def wave_field_family(disc, tg, q, n_fields, seed, max_bumps=3):
    """Zero-argument makers of odd-in-time discrete wave solutions y(0) = 0, dt y(0) = u1."""
    from .solver import ScenarioData, leapfrog

    makers = []
    for i in range(n_fields):
        rng = np.random.default_rng([int(seed), i])
        u1, bumps = random_velocity(rng, disc.outer, max_bumps)

        def make(i=i, u1=u1):
            data = ScenarioData(u0=0.0, u1=u1)
            stream = ((n, u) for n, _, u in leapfrog(disc, tg, data, q, tg.nt + 1))
            return i, tg.dt, tg.nt, stream

        makers.append(make)
    return makers


def time_stride(nt, time_nodes):
    return max(1, nt // max(1, int(time_nodes)))
