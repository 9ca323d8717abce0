"""Planar convex bodies, their Minkowski gauge, and derived geometric constants.

Points are arrays whose last axis has length 2.  All queries are vectorized
over the leading axes and are pure, so a body may be shared between threads.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SAFETY = 0.95


class GeometryError(ValueError):
    pass


class CenterOutsideBody(GeometryError):
    pass


class EvaluationAtCenter(GeometryError):
    pass


class NonPositiveConstant(GeometryError):
    pass


class Region(enum.IntEnum):
    OMEGA1 = 1
    OMEGA2 = 2
    INTERFACE = 3
    OUTSIDE = 0


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError("points must have a trailing axis of length 2")
    return x


class ConvexBody:
    """Base class: a body {F < 1} with F a smooth strictly convex level function."""

    kind = "abstract"

    def __init__(self, center, semi_axes):
        self.center = np.asarray(center, dtype=float).reshape(2)
        self.semi_axes = np.asarray(semi_axes, dtype=float).reshape(2)
        if np.any(self.semi_axes <= 0):
            raise GeometryError("semi-axes must be positive")

    # level function F and derivatives, in world coordinates
    def level(self, x):
        raise NotImplementedError

    def level_grad(self, x):
        raise NotImplementedError

    def level_hess(self, x):
        raise NotImplementedError

    def contains_strictly(self, c) -> bool:
        return bool(self.level(np.asarray(c, dtype=float)) < 1.0 - 1e-12)

    def _check_center(self, center):
        center = np.asarray(center, dtype=float).reshape(2)
        if not self.contains_strictly(center):
            raise CenterOutsideBody(f"center {center.tolist()} is not strictly inside the body")
        return center

    def gauge(self, center, x):
        raise NotImplementedError

    def gauge_squared_grad_hess(self, center, x):
        raise NotImplementedError

    def bounding_radius(self) -> float:
        return float(np.hypot(*self.semi_axes))

    # boundary parametrization by the polar angle around the body center
    def boundary(self, theta):
        """Boundary points, outward unit normals, curvature and speed |dx/dθ|."""
        theta = np.asarray(theta, dtype=float)
        d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        pts = boundary_hit(self, self.center, d)
        gF = self.level_grad(pts)
        ngF = np.linalg.norm(gF, axis=-1)
        nu = gF / ngF[..., None]
        H = self.level_hess(pts)
        Fx, Fy = gF[..., 0], gF[..., 1]
        curv = (Fy**2 * H[..., 0, 0] - 2 * Fx * Fy * H[..., 0, 1] + Fx**2 * H[..., 1, 1]) / ngF**3
        r = np.linalg.norm(pts - self.center, axis=-1)
        dperp = np.stack([-d[..., 1], d[..., 0]], axis=-1)
        dr = -r * np.sum(gF * dperp, axis=-1) / np.sum(gF * d, axis=-1)
        speed = np.sqrt(r**2 + dr**2)
        return pts, nu, curv, speed

    def perimeter(self, n=4096) -> float:
        th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return float(np.sum(self.boundary(th)[3]) * 2 * np.pi / n)


class Ellipse(ConvexBody):
    """Axis-aligned ellipse; gauge and its derivatives are closed-form for any interior center."""

    kind = "ellipse"

    def __init__(self, center=(0.0, 0.0), semi_axes=(1.0, 1.0)):
        super().__init__(center, semi_axes)
        self._A = np.diag(1.0 / self.semi_axes**2)

    def level(self, x):
        z = (_as_points(x) - self.center) / self.semi_axes
        return np.sum(z * z, axis=-1)

    def level_grad(self, x):
        return 2.0 * (_as_points(x) - self.center) / self.semi_axes**2

    def level_hess(self, x):
        x = _as_points(x)
        return np.broadcast_to(2.0 * self._A, x.shape[:-1] + (2, 2)).copy()

    def _parts(self, center, x):
        e = center - self.center
        A = self._A
        kappa = 1.0 - e @ A @ e
        w = A @ e
        d = _as_points(x) - center
        bet = d @ w
        dAd = np.einsum("...i,ij,...j->...", d, A, d)
        S = np.sqrt(bet**2 + kappa * dAd)
        return e, A, kappa, w, d, bet, S

    def gauge(self, center, x):
        center = self._check_center(center)
        _, _, kappa, _, _, bet, S = self._parts(center, x)
        # positive root of kappa g^2 - 2 bet g - dAd = 0
        return (bet + S) / kappa

    def gauge_squared_grad_hess(self, center, x):
        center = self._check_center(center)
        _, A, kappa, w, d, bet, S = self._parts(center, x)
        if np.any(S == 0.0):
            raise EvaluationAtCenter("gauge squared is not differentiable at the center")
        g = (bet + S) / kappa
        v = bet[..., None] * w + kappa * (d @ A)
        grad_g = (w + v / S[..., None]) / kappa
        ww = np.outer(w, w)
        hess_g = ((ww + kappa * A) / S[..., None, None]
                  - v[..., :, None] * v[..., None, :] / (S**3)[..., None, None]) / kappa
        G = g * g
        gG = 2.0 * g[..., None] * grad_g
        HG = 2.0 * grad_g[..., :, None] * grad_g[..., None, :] + 2.0 * g[..., None, None] * hess_g
        return G, gG, HG

    def ray_hit(self, center, direction):
        d = np.asarray(direction, dtype=float)
        return center + d / self.gauge(center, center + d)[..., None]

    def perimeter(self, n=4096) -> float:
        th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        a, b = self.semi_axes
        return float(np.mean(np.sqrt(a**2 * np.sin(th)**2 + b**2 * np.cos(th)**2)) * 2 * np.pi)


class Superellipse(ConvexBody):
    """Blend of an ellipse and a Lamé curve.

    F = (1 - w) (X^2 + Y^2) + w (X^q + Y^q) with X, Y the scaled offsets.  A pure
    Lamé curve (w = 1) has vanishing curvature at the axis points, so w < 1 is
    required for strict convexity.
    """

    kind = "superellipse"

    def __init__(self, center=(0.0, 0.0), semi_axes=(1.0, 1.0), exponent=4, blend=0.5,
                 n_boundary=1024):
        super().__init__(center, semi_axes)
        q = int(exponent)
        if q != exponent or q < 4 or q % 2:
            raise GeometryError("superellipse exponent must be an even integer >= 4")
        if not 0.0 <= blend < 1.0:
            raise GeometryError("blend weight must lie in [0, 1)")
        self.q = q
        self.w = float(blend)
        self.n_boundary = int(n_boundary)
        self.fd_step = self.perimeter(self.n_boundary) / self.n_boundary / 8.0

    def _scaled(self, x):
        return (_as_points(x) - self.center) / self.semi_axes

    def level(self, x):
        z = self._scaled(x)
        return (1 - self.w) * np.sum(z * z, axis=-1) + self.w * np.sum(z**self.q, axis=-1)

    def level_grad(self, x):
        z = self._scaled(x)
        dz = 2 * (1 - self.w) * z + self.q * self.w * z**(self.q - 1)
        return dz / self.semi_axes

    def level_hess(self, x):
        z = self._scaled(x)
        dd = 2 * (1 - self.w) + self.q * (self.q - 1) * self.w * z**(self.q - 2)
        dd = dd / self.semi_axes**2
        H = np.zeros(z.shape[:-1] + (2, 2))
        H[..., 0, 0] = dd[..., 0]
        H[..., 1, 1] = dd[..., 1]
        return H

    def ray_hit(self, center, direction):
        """Solve F(center + k d) = 1 for k > 0: a few bisection steps, then Newton from above.

        k -> F(center + k d) is convex with F < 1 at k = 0, so Newton started
        at a point with F >= 1 decreases monotonically onto the root.
        """
        d = np.asarray(direction, dtype=float)
        nd = np.linalg.norm(d, axis=-1)
        lo = np.zeros_like(nd)
        # outside the bounding box F > 1, so this bracket always contains the root
        hi = 2.0 * np.sqrt(2.0) * np.max(self.semi_axes) / nd
        for _ in range(8):
            mid = 0.5 * (lo + hi)
            inside = self.level(center + mid[..., None] * d) < 1.0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        k = hi
        for _ in range(60):
            p = center + k[..., None] * d
            step = (self.level(p) - 1.0) / np.sum(self.level_grad(p) * d, axis=-1)
            k = k - step
            if np.all(np.abs(step) <= 1e-15 * np.abs(k)):
                break
        return center + k[..., None] * d

    def gauge(self, center, x):
        center = self._check_center(center)
        x = _as_points(x)
        d = x - center
        r = np.linalg.norm(d, axis=-1)
        safe = np.where(r[..., None] > 0, d, 1.0)
        y = self.ray_hit(center, safe)
        ry = np.linalg.norm(y - center, axis=-1)
        return np.where(r > 0, r / ry, 0.0)

    def gauge_squared_grad_hess(self, center, x):
        center = self._check_center(center)
        x = _as_points(x)
        h = self.fd_step
        if np.any(np.linalg.norm(x - center, axis=-1) <= 2 * h):
            raise EvaluationAtCenter("finite-difference stencil reaches the center")

        def G(p):
            return self.gauge(center, p) ** 2

        ex = np.array([h, 0.0])
        ey = np.array([0.0, h])
        G0 = G(x)
        grad = np.empty(x.shape)
        H = np.empty(x.shape[:-1] + (2, 2))
        for k, e in enumerate((ex, ey)):
            p1, m1 = G(x + e), G(x - e)
            p2, m2 = G(x + 2 * e), G(x - 2 * e)
            grad[..., k] = (-p2 + 8 * p1 - 8 * m1 + m2) / (12 * h)
            H[..., k, k] = (-p2 + 16 * p1 - 30 * G0 + 16 * m1 - m2) / (12 * h * h)
        # mixed derivative: fourth-order tensor of the 1-D first-derivative stencil
        c = {-2: 1.0, -1: -8.0, 1: 8.0, 2: -1.0}
        mixed = 0.0
        for i, ci in c.items():
            for j, cj in c.items():
                mixed = mixed + ci * cj * G(x + i * ex + j * ey)
        mixed = mixed / (144 * h * h)
        H[..., 0, 1] = mixed
        H[..., 1, 0] = mixed
        return G0, grad, H


def gauge(body: ConvexBody, center, x):
    """Minkowski gauge of the body translated to `center`, evaluated at x."""
    return body.gauge(center, x)


def gauge_squared_grad_hess(body: ConvexBody, center, x):
    """Value, gradient and Hessian of the squared gauge."""
    return body.gauge_squared_grad_hess(center, x)


def boundary_hit(body: ConvexBody, center, direction):
    """Point where the open ray from `center` along `direction` leaves the body."""
    center = body._check_center(center)
    d = np.asarray(direction, dtype=float)
    if np.any(np.linalg.norm(d, axis=-1) == 0.0):
        raise GeometryError("direction must be nonzero")
    return body.ray_hit(center, d)


@dataclass(frozen=True)
class OuterDomain:
    """Disk (equal semi-axes) or axis-aligned ellipse containing the body."""

    center: tuple
    semi_axes: tuple

    @classmethod
    def disk(cls, radius, center=(0.0, 0.0)):
        return cls(tuple(map(float, center)), (float(radius), float(radius)))

    @property
    def c(self):
        return np.asarray(self.center, dtype=float)

    @property
    def ab(self):
        return np.asarray(self.semi_axes, dtype=float)

    @property
    def kind(self):
        return "disk" if self.semi_axes[0] == self.semi_axes[1] else "ellipse"

    @property
    def diam(self) -> float:
        return 2.0 * float(max(self.semi_axes))

    def level(self, x):
        z = (_as_points(x) - self.c) / self.ab
        return np.sum(z * z, axis=-1)

    def contains(self, x):
        return self.level(x) < 1.0

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.c + self.ab * np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    def normal(self, theta):
        theta = np.asarray(theta, dtype=float)
        n = np.stack([np.cos(theta) / self.ab[0], np.sin(theta) / self.ab[1]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def speed(self, theta):
        theta = np.asarray(theta, dtype=float)
        a, b = self.ab
        return np.sqrt(a**2 * np.sin(theta)**2 + b**2 * np.cos(theta)**2)

    def angle_of(self, x):
        z = (_as_points(x) - self.c) / self.ab
        return np.mod(np.arctan2(z[..., 1], z[..., 0]), 2 * np.pi)

    def segment_crossing(self, p, q):
        """Fraction t in (0, 1] with level(p + t (q - p)) = 1, for p inside and q outside."""
        p = _as_points(p)
        dq = (_as_points(q) - p) / self.ab
        z = (p - self.c) / self.ab
        A = np.sum(dq * dq, axis=-1)
        B = 2 * np.sum(z * dq, axis=-1)
        C = np.sum(z * z, axis=-1) - 1.0
        disc = np.sqrt(np.maximum(B * B - 4 * A * C, 0.0))
        # C < 0, so the positive root is stable in this form
        t = (-2 * C) / (B + disc)
        return np.clip(t, 0.0, 1.0)

    def perimeter(self, n=4096) -> float:
        th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return float(np.mean(self.speed(th)) * 2 * np.pi)

    def area(self) -> float:
        return float(np.pi * self.ab[0] * self.ab[1])

    def check_contains(self, body: ConvexBody, n=2048):
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        pts = body.boundary(th)[0]
        if np.any(self.level(pts) >= 1.0):
            raise GeometryError("outer domain must strictly contain the body closure")


@dataclass(frozen=True)
class GeometryConstants:
    m1: float
    c1: float
    delta1: float
    diam: float
    eps: float
    eps1: float
    dist_center_interface: float = float("nan")


def interface_distance(body: ConvexBody, x, n=4096):
    """Distance from x to the interface and the farthest interface point distance."""
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    pts = body.boundary(th)[0]
    dist = np.linalg.norm(pts - np.asarray(x, dtype=float), axis=-1)
    return float(dist.min()), float(dist.max())


def region_samples(body: ConvexBody, outer: OuterDomain, center, eps, sample_density=64):
    """Deterministic samples of closure(Omega) minus the open ball B_eps(center).

    A lattice of spacing 1/sample_density plus points on the ball boundary, the
    interface and the outer boundary, so closed-form minima attained there are hit.
    """
    center = np.asarray(center, dtype=float)
    hs = 1.0 / float(sample_density)
    c, ab = outer.c, outer.ab
    xs = np.arange(c[0] - ab[0], c[0] + ab[0] + hs, hs)
    ys = np.arange(c[1] - ab[1], c[1] + ab[1] + hs, hs)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    keep = outer.level(pts) <= 1.0
    keep &= np.linalg.norm(pts - center, axis=-1) >= eps
    pts = pts[keep]
    n_ball = max(64, int(np.ceil(2 * np.pi * eps * sample_density)))
    tb = np.linspace(0, 2 * np.pi, n_ball, endpoint=False)
    ball = center + eps * np.stack([np.cos(tb), np.sin(tb)], axis=-1)
    n_if = max(256, int(np.ceil(body.perimeter() * sample_density)))
    iface = body.boundary(np.linspace(0, 2 * np.pi, n_if, endpoint=False))[0]
    n_out = max(256, int(np.ceil(outer.perimeter() * sample_density)))
    bnd = outer.point(np.linspace(0, 2 * np.pi, n_out, endpoint=False))
    return np.concatenate([pts, ball, iface, bnd], axis=0)


def estimate_constants(body: ConvexBody, outer: OuterDomain, center, eps, eps1,
                       sample_density=64, grad_mu=None) -> GeometryConstants:
    """Sampled convexity, gradient and positivity floors outside B_eps(center).

    `grad_mu` is an optional callback returning the gradient of the spatial
    weight; without it the gradient floor is taken from the squared gauge.
    """
    center = body._check_center(center)
    if sample_density < 64:
        raise GeometryError("sample_density must be at least 64 points per unit length")
    dist_c, _ = interface_distance(body, center)
    if not (0.0 < eps1 < eps < dist_c):
        raise GeometryError(
            f"need 0 < eps1 < eps < dist(center, interface) = {dist_c:.6g}; got eps1={eps1}, eps={eps}")
    pts = region_samples(body, outer, center, eps, sample_density)
    G, gG, HG = body.gauge_squared_grad_hess(center, pts)
    lam_min = np.linalg.eigvalsh(HG)[..., 0]
    if grad_mu is None:
        gmu = gG
    else:
        gmu = np.asarray(grad_mu(pts))
    m1 = SAFETY * float(lam_min.min())
    c1 = SAFETY * float(np.linalg.norm(gmu, axis=-1).min())
    delta1 = SAFETY * float(G.min())
    bad = [name for name, v in (("m1", m1), ("c1", c1), ("delta1", delta1)) if not v > 0]
    if bad:
        raise NonPositiveConstant(f"non-positive geometric constants: {', '.join(bad)}")
    return GeometryConstants(m1=m1, c1=c1, delta1=delta1, diam=outer.diam, eps=float(eps),
                             eps1=float(eps1), dist_center_interface=dist_c)


def classify(outer: OuterDomain, body: ConvexBody, x, tol=1e-9):
    """Region tags (as `Region` integer codes) for an array of points."""
    x = _as_points(x)
    g = body.gauge(body.center, x)
    out = np.full(x.shape[:-1], int(Region.OMEGA2), dtype=np.int8)
    out[g < 1.0] = int(Region.OMEGA1)
    out[np.abs(g - 1.0) <= tol] = int(Region.INTERFACE)
    out[outer.level(x) > 1.0] = int(Region.OUTSIDE)
    return out if out.ndim else Region(int(out))


def make_body(spec: dict) -> ConvexBody:
    kind = spec.get("kind", "ellipse")
    if kind == "ellipse":
        return Ellipse(spec.get("center", (0.0, 0.0)), spec["semi_axes"])
    if kind == "disk":
        r = float(spec["radius"])
        return Ellipse(spec.get("center", (0.0, 0.0)), (r, r))
    if kind == "superellipse":
        return Superellipse(spec.get("center", (0.0, 0.0)), spec["semi_axes"],
                            exponent=spec.get("exponent", 4), blend=spec.get("blend", 0.5))
    raise GeometryError(f"unknown body kind {kind!r}")
