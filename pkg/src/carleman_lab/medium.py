"""Piecewise-smooth main coefficient, potentials, and admissibility checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ConvexBody, OuterDomain, region_samples


class MediumError(ValueError):
    pass


# ---------------------------------------------------------------------------
# closed-form coefficient catalog

class SmoothField:
    """Closed-form scalar field with an analytic gradient."""

    kind = "abstract"

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.value(x)

    def spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(SmoothField):
    value_: float
    kind = "constant"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], float(self.value_))

    def grad(self, x):
        return np.zeros(np.asarray(x, dtype=float).shape)

    def spec(self):
        return {"kind": "constant", "value": self.value_}


@dataclass(frozen=True)
class Affine(SmoothField):
    c0: float
    gx: float
    gy: float
    kind = "affine"

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.c0 + self.gx * x[..., 0] + self.gy * x[..., 1]

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.array([self.gx, self.gy]), x.shape).copy()

    def spec(self):
        return {"kind": "affine", "c0": self.c0, "gx": self.gx, "gy": self.gy}


@dataclass(frozen=True)
class Gaussian(SmoothField):
    """c0 + amp exp(-|x - center|^2 / (2 width^2))."""

    c0: float
    amp: float
    center: tuple
    width: float
    kind = "gaussian"

    def _e(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)
        return d, np.exp(-np.sum(d * d, axis=-1) / (2 * self.width**2))

    def value(self, x):
        return self.c0 + self.amp * self._e(x)[1]

    def grad(self, x):
        d, e = self._e(x)
        return -(self.amp / self.width**2) * e[..., None] * d

    def spec(self):
        return {"kind": "gaussian", "c0": self.c0, "amp": self.amp,
                "center": list(self.center), "width": self.width}


@dataclass(frozen=True)
class Trig(SmoothField):
    """c0 + amp sin(kx x + ky y + phase)."""

    c0: float
    amp: float
    kx: float
    ky: float
    phase: float = 0.0
    kind = "trig"

    def _arg(self, x):
        x = np.asarray(x, dtype=float)
        return self.kx * x[..., 0] + self.ky * x[..., 1] + self.phase

    def value(self, x):
        return self.c0 + self.amp * np.sin(self._arg(x))

    def grad(self, x):
        c = self.amp * np.cos(self._arg(x))
        return np.stack([self.kx * c, self.ky * c], axis=-1)

    def spec(self):
        return {"kind": "trig", "c0": self.c0, "amp": self.amp, "kx": self.kx,
                "ky": self.ky, "phase": self.phase}


@dataclass(frozen=True)
class AngularHarmonic(SmoothField):
    """c0 + amp Im(e^{i phase} ((z - center)/radius)^n), i.e. amp (r/R)^n sin(n angle + phase).

    Harmonic, so smooth everywhere; on the circle of radius R it is a pure angular mode.
    """

    c0: float
    amp: float
    n: int = 1
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    phase: float = 0.0
    kind = "angular"

    def _z(self, x):
        x = np.asarray(x, dtype=float)
        return ((x[..., 0] - self.center[0]) + 1j * (x[..., 1] - self.center[1])) / self.radius

    def value(self, x):
        f = np.exp(1j * self.phase) * self._z(x) ** self.n
        return self.c0 + self.amp * f.imag

    def grad(self, x):
        z = self._z(x)
        fp = np.exp(1j * self.phase) * self.n * z ** (self.n - 1) / self.radius
        # Cauchy-Riemann: d Im f / dx = Im f', d Im f / dy = Re f'
        return self.amp * np.stack([fp.imag, fp.real], axis=-1)

    def spec(self):
        return {"kind": "angular", "c0": self.c0, "amp": self.amp, "n": self.n,
                "center": list(self.center), "radius": self.radius, "phase": self.phase}


@dataclass(frozen=True)
class SumField(SmoothField):
    terms: tuple
    kind = "sum"

    def value(self, x):
        return sum(t.value(x) for t in self.terms)

    def grad(self, x):
        return sum(t.grad(x) for t in self.terms)

    def spec(self):
        return {"kind": "sum", "terms": [t.spec() for t in self.terms]}


_FIELD_KEYS = {
    "constant": {"value"},
    "affine": {"c0", "gx", "gy"},
    "gaussian": {"c0", "amp", "center", "width"},
    "trig": {"c0", "amp", "kx", "ky", "phase"},
    "angular": {"c0", "amp", "n", "center", "radius", "phase"},
    "sum": {"terms"},
}


def field_from_spec(spec) -> SmoothField:
    """Build a catalog field from a plain mapping, e.g. {"kind": "constant", "value": 2}."""
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _FIELD_KEYS:
        raise MediumError(f"unknown coefficient kind {kind!r}")
    extra = set(spec) - _FIELD_KEYS[kind]
    if extra:
        raise MediumError(f"unknown keys for {kind} field: {sorted(extra)}")
    if kind == "constant":
        return Constant(float(spec["value"]))
    if kind == "affine":
        return Affine(float(spec.get("c0", 0.0)), float(spec.get("gx", 0.0)), float(spec.get("gy", 0.0)))
    if kind == "gaussian":
        return Gaussian(float(spec.get("c0", 0.0)), float(spec["amp"]),
                        tuple(map(float, spec.get("center", (0.0, 0.0)))), float(spec["width"]))
    if kind == "trig":
        return Trig(float(spec.get("c0", 0.0)), float(spec["amp"]), float(spec.get("kx", 0.0)),
                    float(spec.get("ky", 0.0)), float(spec.get("phase", 0.0)))
    if kind == "angular":
        return AngularHarmonic(float(spec.get("c0", 0.0)), float(spec["amp"]), int(spec.get("n", 1)),
                               tuple(map(float, spec.get("center", (0.0, 0.0)))),
                               float(spec.get("radius", 1.0)), float(spec.get("phase", 0.0)))
    return SumField(tuple(field_from_spec(t) for t in spec["terms"]))


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MediumSpec:
    a1: SmoothField
    a2: SmoothField
    alpha_lo: float
    alpha_hi: float
    rho: float = 0.5
    potential_bound: float = 1.0

    def __post_init__(self):
        if not self.alpha_lo > 0:
            raise MediumError("alpha_lo must be positive")
        if self.alpha_hi < self.alpha_lo:
            raise MediumError("alpha_hi must be at least alpha_lo")
        if not 0.0 < self.rho <= 1.0:
            raise MediumError("rho must lie in (0, 1]")
        if self.potential_bound < 0:
            raise MediumError("potential bound m must be nonnegative")

    def coefficient(self, body: ConvexBody, x):
        """a(x): a1 on the closed inner body, a2 elsewhere."""
        x = np.asarray(x, dtype=float)
        inner = body.level(x) <= 1.0
        return np.where(inner, self.a1.value(x), self.a2.value(x))

    def coefficient_grad(self, body: ConvexBody, x):
        x = np.asarray(x, dtype=float)
        inner = (body.level(x) <= 1.0)[..., None]
        return np.where(inner, self.a1.grad(x), self.a2.grad(x))


@dataclass
class Potential:
    """Grid-sampled potential with its declared bound."""

    values: np.ndarray
    bound: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.max(np.abs(self.values), initial=0.0) > self.bound * (1 + 1e-12):
            raise MediumError(f"potential exceeds its bound m = {self.bound}")


@dataclass(frozen=True)
class BumpPotential:
    """Closed-form sum of Gaussian bumps, sampled onto grids on demand."""

    c0: float = 0.0
    bumps: tuple = ()  # (amp, cx, cy, width)
    clip: float | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        v = np.full(x.shape[:-1], float(self.c0))
        for amp, cx, cy, w in self.bumps:
            r2 = (x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2
            v = v + amp * np.exp(-r2 / (2 * w * w))
        if self.clip is not None:
            v = np.clip(v, -self.clip, self.clip)
        return v

    def spec(self):
        return {"c0": self.c0, "bumps": [list(b) for b in self.bumps], "clip": self.clip}


# ---------------------------------------------------------------------------
# admissibility

@dataclass(frozen=True)
class InterfaceProfile:
    theta: np.ndarray
    values: np.ndarray
    min: float
    max: float


def lambda_on_interface(medium: MediumSpec, body: ConvexBody, n_samples=512) -> InterfaceProfile:
    if n_samples < 64:
        raise MediumError("n_samples must be at least 64")
    th = np.linspace(0, 2 * np.pi, n_samples, endpoint=False)
    pts = body.boundary(th)[0]
    lam = medium.a1.value(pts) / medium.a2.value(pts)
    return InterfaceProfile(th, lam, float(lam.min()), float(lam.max()))


@dataclass(frozen=True)
class GammaInterval:
    lo: float
    hi: float

    @property
    def midpoint(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, g):
        return self.lo < g < self.hi


def gamma_interval(lambda_min, lambda_max):
    """Open interval (lambda_max, lambda_min^2), or None when it is empty."""
    if lambda_min > lambda_max:
        raise MediumError("lambda_min must not exceed lambda_max")
    if lambda_max > 1.0 and lambda_max < lambda_min**2:
        return GammaInterval(float(lambda_max), float(lambda_min**2))
    return None


def _region_points(body, outer, center, eps, density):
    pts = region_samples(body, outer, center, eps, density)
    return pts


def check_multiplier(medium: MediumSpec, body: ConvexBody, outer: OuterDomain, gamma, rho, m1,
                     eps, center, sample_density=64):
    """Worst-case slack of (2/γ) a (1-ρ) m1 - ∇a·∇(gauge²) outside B_eps(center)."""
    if not m1 > 0:
        raise MediumError("m1 must be positive")
    pts = _region_points(body, outer, center, eps, sample_density)
    _, gG, _ = body.gauge_squared_grad_hess(center, pts)
    inner = body.level(pts) < 1.0
    on_if = np.abs(body.gauge(body.center, pts) - 1.0) <= 1e-12
    margins = []
    # interface points belong to both closures; test both one-sided coefficients there
    for fld, mask in ((medium.a1, inner | on_if), (medium.a2, ~inner | on_if)):
        p = pts[mask]
        if len(p) == 0:
            continue
        a = fld.value(p)
        ga = fld.grad(p)
        margins.append((2.0 / gamma) * a * (1.0 - rho) * m1 - np.sum(ga * gG[mask], axis=-1))
    return float(np.min(np.concatenate(margins)))


@dataclass
class AdmissibilityReport:
    lambda_min: float
    lambda_max: float
    gamma_interval: GammaInterval | None
    chosen_gamma: float | None
    a1_check: bool
    a1_range: tuple
    a4_margin: float | None
    a4_margins: list = field(default_factory=list)
    passed: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self):
        gi = None if self.gamma_interval is None else [self.gamma_interval.lo, self.gamma_interval.hi]
        return {"lambda_min": self.lambda_min, "lambda_max": self.lambda_max, "gamma_interval": gi,
                "chosen_gamma": self.chosen_gamma, "a1_check": self.a1_check,
                "a1_range": list(self.a1_range), "a2_regularity": "by construction (closed-form catalog)",
                "a4_margin": self.a4_margin, "a4_margins": list(self.a4_margins),
                "pass": self.passed, "notes": list(self.notes)}


def bounds_check(medium: MediumSpec, body: ConvexBody, outer: OuterDomain, n_grid=200,
                 n_interface=512, tol=1e-12):
    """Sampled α0 <= a_j <= α0' on each closed subdomain."""
    c, ab = outer.c, outer.ab
    xs = np.linspace(c[0] - ab[0], c[0] + ab[0], n_grid)
    ys = np.linspace(c[1] - ab[1], c[1] + ab[1], n_grid)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], -1)
    pts = pts[outer.level(pts) <= 1.0]
    iface = body.boundary(np.linspace(0, 2 * np.pi, n_interface, endpoint=False))[0]
    bnd = outer.point(np.linspace(0, 2 * np.pi, n_interface, endpoint=False))
    inner = body.level(pts) < 1.0
    v1 = medium.a1.value(np.concatenate([pts[inner], iface]))
    v2 = medium.a2.value(np.concatenate([pts[~inner], iface, bnd]))
    lo = float(min(v1.min(), v2.min()))
    hi = float(max(v1.max(), v2.max()))
    ok = lo >= medium.alpha_lo - tol and hi <= medium.alpha_hi + tol
    return ok, (lo, hi)


def verify_admissibility(medium: MediumSpec, body: ConvexBody, outer: OuterDomain, centers,
                         constants, gamma=None, n_grid=200, n_interface=512,
                         sample_density=64) -> AdmissibilityReport:
    """Run the four admissibility checks; `constants` holds one GeometryConstants per center."""
    notes = []
    ok1, rng = bounds_check(medium, body, outer, n_grid, n_interface)
    if not ok1:
        notes.append(f"coefficient range {rng} outside [{medium.alpha_lo}, {medium.alpha_hi}]")
    prof = lambda_on_interface(medium, body, n_interface)
    gi = gamma_interval(prof.min, prof.max)
    chosen = None
    if gi is None:
        notes.append("gamma interval empty")
    elif gamma is None:
        chosen = gi.midpoint
    elif gi.contains(gamma):
        chosen = float(gamma)
    else:
        notes.append(f"gamma override {gamma} outside interval ({gi.lo}, {gi.hi})")
    margins = []
    if chosen is not None:
        for c, k in zip(centers, constants):
            margins.append(check_multiplier(medium, body, outer, chosen, medium.rho, k.m1, k.eps, c,
                                            sample_density))
    a4 = min(margins) if margins else None
    if a4 is not None and a4 < 0:
        notes.append(f"multiplier condition violated, margin {a4:.6g}")
    passed = bool(ok1 and chosen is not None and a4 is not None and a4 >= 0)
    return AdmissibilityReport(prof.min, prof.max, gi, chosen, ok1, rng, a4, margins, passed, notes)
