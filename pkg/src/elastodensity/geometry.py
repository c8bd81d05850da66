"""Geodesics of the conformal metrics g = c^{-2} g_E.

Geodesics are integrated in g-arc-length with classical fixed-step RK4 on
the state (x, v), where v is the Cartesian velocity with g(v, v) = 1, i.e.
|v| = c(x).  Parallel-transported vectors can ride along in the same step so
that frames and paths come from one integration.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, TrappedRayError
from .medium import Ball, MediumModel

log = logging.getLogger(__name__)

_EYE = np.eye(3)


@dataclass(frozen=True)
class ConformalMetric:
    model: MediumModel
    mode: str = "S"

    def __post_init__(self):
        if self.mode not in ("P", "S"):
            raise ValueError(f"mode must be 'P' or 'S', got {self.mode!r}")

    @property
    def domain(self) -> Ball:
        return self.model.domain

    def speed(self, x):
        c2, _ = self.model.speed_squared(x, self.mode)
        return np.sqrt(c2)

    def speed_and_dlog(self, x):
        """c(x) and grad log c(x)."""
        c2, g = self.model.speed_squared(x, self.mode)
        return np.sqrt(c2), g / (2 * c2[..., None])

    def tensor(self, x):
        c = self.speed(x)
        return c[..., None, None] ** -2 * _EYE

    def inner(self, x, u, w):
        return np.einsum("...i,...i->...", u, w) / self.speed(x) ** 2


def christoffels(metric: ConformalMetric, x):
    """Gamma[..., k, i, j] of g = c^{-2} g_E in Cartesian coordinates.

    With sigma = -log c:  Gamma^k_ij = d^k_i s_j + d^k_j s_i - d_ij s^k.
    """
    _, dlogc = metric.speed_and_dlog(x)
    s = -dlogc
    return (_EYE[:, :, None] * s[..., None, None, :]
            + _EYE[:, None, :] * s[..., None, :, None]
            - _EYE[None, :, :] * s[..., :, None, None])


def _rhs(metric, x, v, w):
    # geodesic acceleration and parallel-transport derivative, conformal closed form
    _, dl = metric.speed_and_dlog(x)
    vv = np.einsum("...i,...i->...", v, v)
    vd = np.einsum("...i,...i->...", v, dl)
    a = 2 * vd[..., None] * v - vv[..., None] * dl
    if w is None:
        return v, a, None
    # D w / ds = 0  <=>  dw/ds = -Gamma(v, w),  with Gamma(v,w) = -(v (w.dl) + w (v.dl) - (v.w) dl)
    wd = np.einsum("...ki,...i->...k", w, dl)
    vw = np.einsum("...ki,...i->...k", w, v)
    dw = v[..., None, :] * wd[..., None] + w * vd[..., None, None] - vw[..., None] * dl[..., None, :]
    return v, a, dw


def rk4_step(metric, x, v, w, h):
    """One RK4 step of size ``h`` (scalar or per-ray array) for (x, v[, w])."""
    h = np.asarray(h, dtype=float)
    hb = h[..., None] if h.ndim else h
    hw = h[..., None, None] if h.ndim else h
    k1x, k1v, k1w = _rhs(metric, x, v, w)
    x2, v2 = x + 0.5 * hb * k1x, v + 0.5 * hb * k1v
    w2 = None if w is None else w + 0.5 * hw * k1w
    k2x, k2v, k2w = _rhs(metric, x2, v2, w2)
    x3, v3 = x + 0.5 * hb * k2x, v + 0.5 * hb * k2v
    w3 = None if w is None else w + 0.5 * hw * k2w
    k3x, k3v, k3w = _rhs(metric, x3, v3, w3)
    x4, v4 = x + hb * k3x, v + hb * k3v
    w4 = None if w is None else w + hw * k3w
    k4x, k4v, k4w = _rhs(metric, x4, v4, w4)
    xn = x + hb / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
    vn = v + hb / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    wn = None if w is None else w + hw / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)
    return xn, vn, wn


@dataclass
class GeodesicPath:
    """Sampled unit-speed geodesic.

    ``ds`` holds the step actually taken between consecutive samples; all
    steps equal the nominal step except the last, which is cut by the
    boundary bisection.
    """

    s: np.ndarray
    x: np.ndarray
    v: np.ndarray
    ds: np.ndarray
    mode: str = "S"
    frame: np.ndarray | None = field(default=None, repr=False)  # (N, k, 3) transported vectors

    @property
    def travel_time(self) -> float:
        return float(self.s[-1])

    @property
    def start(self):
        return self.x[0]

    @property
    def end(self):
        return self.x[-1]

    def __len__(self):
        return len(self.s)

    def reversed(self) -> "GeodesicPath":
        s = self.travel_time - self.s[::-1]
        return GeodesicPath(s, self.x[::-1].copy(), -self.v[::-1], self.ds[::-1].copy(), self.mode)

    def write_csv(self, fh, ray_id=None):
        w = csv.writer(fh)
        for k in range(len(self.s)):
            row = [repr(float(self.s[k]))] + [repr(float(t)) for t in self.x[k]] + [repr(float(t)) for t in self.v[k]]
            w.writerow(([ray_id] if ray_id is not None else []) + row)


def _boundary_residual(domain: Ball, x):
    return domain.distance(x) - domain.radius


def trace_many(metric: ConformalMetric, x0, v0, step: float = 1e-3, frames0=None,
               max_length: float = 1e3, bisect_iters: int = 60):
    """Trace a batch of geodesics from boundary points until they exit.

    Returns a list with one :class:`GeodesicPath` per ray; rays that exceed
    ``max_length`` come back as ``None`` (the caller decides whether that is
    fatal).  ``frames0`` of shape ``(m, k, 3)`` are parallel transported
    alongside and stored on each path.
    """
    domain = metric.domain
    x = np.array(x0, dtype=float).reshape(-1, 3)
    v = np.array(v0, dtype=float).reshape(-1, 3)
    m = len(x)
    w = None if frames0 is None else np.array(frames0, dtype=float).reshape(m, -1, 3)
    if step <= 0:
        raise ValueError("step must be positive")

    xs, vs, ws = [x.copy()], [v.copy()], [None if w is None else w.copy()]
    nsteps = np.zeros(m, dtype=int)  # number of full steps taken
    last_h = np.zeros(m)
    final_x, final_v = x.copy(), v.copy()
    final_w = None if w is None else w.copy()
    active = np.ones(m, dtype=bool)
    trapped = np.zeros(m, dtype=bool)
    k = 0
    while active.any():
        idx = np.flatnonzero(active)
        xa, va = x[idx], v[idx]
        wa = None if w is None else w[idx]
        xn, vn, wn = rk4_step(metric, xa, va, wa, step)
        out = _boundary_residual(domain, xn) > 0
        exiting = idx[out]
        if len(exiting):
            hb = _bisect_exit(metric, x[exiting], v[exiting], step, bisect_iters)
            xe, ve, we = rk4_step(metric, x[exiting], v[exiting],
                                  None if w is None else w[exiting], hb)
            final_x[exiting], final_v[exiting] = xe, ve
            if w is not None:
                final_w[exiting] = we
            last_h[exiting] = hb
            nsteps[exiting] = k
            active[exiting] = False
        inside = idx[~out]
        x[inside], v[inside] = xn[~out], vn[~out]
        if w is not None:
            w[inside] = wn[~out]
        k += 1
        too_long = inside if k * step > max_length else inside[:0]
        if len(too_long):
            trapped[too_long] = True
            active[too_long] = False
        xs.append(x.copy())
        vs.append(v.copy())
        ws.append(None if w is None else w.copy())

    X, V = np.stack(xs), np.stack(vs)
    W = None if w is None else np.stack(ws)
    paths = []
    for i in range(m):
        if trapped[i]:
            log.warning("ray %d exceeded max length %g; treated as trapped", i, max_length)
            paths.append(None)
            continue
        n = nsteps[i]
        px = np.concatenate([X[: n + 1, i], final_x[i][None]])
        pv = np.concatenate([V[: n + 1, i], final_v[i][None]])
        ds = np.concatenate([np.full(n, float(step)), [last_h[i]]])
        s = np.concatenate([[0.0], np.cumsum(ds)])
        pw = None if W is None else np.concatenate([W[: n + 1, i], final_w[i][None]])
        paths.append(GeodesicPath(s, px, pv, ds, metric.mode, pw))
    return paths


def _bisect_exit(metric, x, v, h, iters):
    """Per-ray step length in (0, h] landing on the boundary.

    The residual |x| - R is negative before the crossing and positive after,
    including for a start point on the boundary, so plain bisection applies.
    """
    domain = metric.domain
    lo = np.zeros(len(x))
    hi = np.full(len(x), float(h))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        out = _boundary_residual(domain, rk4_step(metric, x, v, None, mid)[0]) > 0
        hi = np.where(out, mid, hi)
        lo = np.where(out, lo, mid)
    return 0.5 * (lo + hi)


def trace_geodesic(metric: ConformalMetric, x0, v0, step: float = 1e-3,
                   max_length: float = 1e3, check: bool = True) -> GeodesicPath:
    """Trace one geodesic from the boundary point ``x0`` with unit velocity ``v0``."""
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if check:
        dom = metric.domain
        if abs(float(_boundary_residual(dom, x0))) > 1e-9 * dom.radius:
            raise PreconditionError("x0 must lie on the boundary")
        if abs(float(metric.inner(x0, v0, v0)) - 1) > 1e-9:
            raise PreconditionError("v0 must have unit length in g")
        if float(np.dot(v0, dom.c - x0)) <= 0:
            raise PreconditionError("v0 must point strictly inward")
    path = trace_many(metric, x0[None], v0[None], step, max_length=max_length)[0]
    if path is None:
        raise TrappedRayError(f"geodesic longer than {max_length} without exiting")
    return path


def unit_velocity(metric: ConformalMetric, x, directions):
    """Scale Euclidean directions to unit g-speed at ``x``."""
    d = np.asarray(directions, dtype=float)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return d * metric.speed(x)[..., None]


@dataclass
class ChordSet:
    """Boundary launch points with inward Euclidean unit directions."""

    x0: np.ndarray
    directions: np.ndarray
    seed: int = 0
    n_points: int = 0
    n_dirs: int = 0
    domain: Ball = field(default_factory=Ball)

    def __len__(self):
        return len(self.x0)

    def __iter__(self):
        return iter(zip(self.x0, self.directions))

    def velocities(self, metric: ConformalMetric):
        return unit_velocity(metric, self.x0, self.directions)

    def to_dict(self):
        return {
            "seed": self.seed, "n_points": self.n_points, "n_dirs": self.n_dirs,
            "domain": self.domain.to_dict(),
            "x0": self.x0.tolist(), "directions": self.directions.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc):
        dom = doc.get("domain", {})
        return cls(np.asarray(doc["x0"], dtype=float), np.asarray(doc["directions"], dtype=float),
                   int(doc.get("seed", 0)), int(doc.get("n_points", 0)), int(doc.get("n_dirs", 0)),
                   Ball(tuple(dom.get("center", (0, 0, 0))), float(dom.get("radius", 1.0))))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _tangent_basis(n):
    """Two unit vectors completing ``n`` (unit, shape (..., 3)) to an orthonormal basis."""
    n = np.asarray(n, dtype=float)
    axis = np.argmin(np.abs(n), axis=-1)
    e = _EYE[axis]
    t1 = np.cross(n, e)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(n, t1)
    return t1, t2


def generate_chords(domain: Ball, n_points: int, n_dirs: int, seed: int = 0) -> ChordSet:
    """Fibonacci-sphere launch points, each with a fan of inward directions.

    The fan is a sunflower pattern on the unit disk lifted to the inward
    hemisphere, which samples directions with cosine weighting; that is the
    launch measure giving uniform line density inside the ball.  Each fan is
    rotated about the normal by a seeded random angle.
    """
    if n_points < 1 or n_dirs < 1:
        raise ValueError("n_points and n_dirs must be >= 1")
    rng = np.random.default_rng(seed)
    pts = domain.boundary_points(n_points)
    inward = (domain.c - pts) / domain.radius
    t1, t2 = _tangent_basis(inward)
    j = np.arange(n_dirs) + 0.5
    r = np.sqrt(j / n_dirs)
    theta = np.pi * (3 - np.sqrt(5)) * np.arange(n_dirs)
    offsets = rng.uniform(0, 2 * np.pi, size=n_points)
    ang = theta[None, :] + offsets[:, None]
    dirs = (r * np.cos(ang))[..., None] * t1[:, None] + (r * np.sin(ang))[..., None] * t2[:, None] \
        + np.sqrt(1 - r * r)[None, :, None] * inward[:, None]
    x0 = np.repeat(pts, n_dirs, axis=0)
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return ChordSet(x0, dirs, seed, n_points, n_dirs, domain)


def trace_chords(metric: ConformalMetric, chords: ChordSet, step: float, frames: bool = False,
                 max_length: float = 1e3):
    """Trace every chord; with ``frames`` the start frame of :func:`initial_frame` is transported."""
    v0 = chords.velocities(metric)
    f0 = initial_frame(metric, chords.x0, v0) if frames else None
    return trace_many(metric, chords.x0, v0, step, frames0=f0, max_length=max_length)


def initial_frame(metric: ConformalMetric, x0, v0):
    """g-orthonormal pair (eta1, eta2) orthogonal to ``v0``; shape (..., 2, 3).

    Seeded from the tangent alone: eta1 is built from the coordinate axis least
    aligned with the direction, eta2 completes the right-handed triple.
    """
    v0 = np.asarray(v0, dtype=float)
    u = v0 / np.linalg.norm(v0, axis=-1, keepdims=True)
    t1, t2 = _tangent_basis(u)
    c = metric.speed(x0)[..., None]
    return np.stack([t1 * c, t2 * c], axis=-2)


@dataclass
class SpreadingProfile:
    s: np.ndarray
    J: np.ndarray
    family: str

    @property
    def caustic(self) -> np.ndarray:
        bad = self.J <= 0
        if self.family == "point-source":
            bad[0] = False
        return bad

    def caustic_ranges(self):
        """(start, stop) sample index ranges where J <= 0."""
        bad = self.caustic.astype(int)
        edges = np.flatnonzero(np.diff(np.concatenate([[0], bad, [0]])))
        return list(zip(edges[::2], edges[1::2]))


def _integrate_along(metric, x0, v0, ds, w0=None):
    x, v, w = x0, v0, w0
    xs, vs, ws = [x], [v], [w]
    for h in ds:
        x, v, w = rk4_step(metric, x, v, w, h)
        xs.append(x)
        vs.append(v)
        ws.append(w)
    return np.stack(xs), np.stack(vs), (None if w0 is None else np.stack(ws))


def spreading_jacobian(metric: ConformalMetric, path: GeodesicPath, family: str = "plane-wave",
                       delta: float = 1e-4) -> SpreadingProfile:
    """Ray-tube spreading factor J along ``path`` from central ray perturbations.

    Neighbouring rays are offset by +-delta along each transported frame vector
    (in position for the plane-wave family, in initial velocity for the
    point-source family) and integrated on the same step sequence.  J is the
    determinant of the 2x2 matrix of g-projections of the deviation onto the
    frame.  Plane-wave J is normalised to J(0) = 1; point-source J is left as is
    and behaves like s^2 near the source.
    """
    if family not in ("plane-wave", "point-source"):
        raise ValueError(f"unknown ray family {family!r}")
    x0, v0 = path.x[0], path.v[0]
    eta0 = initial_frame(metric, x0, v0)
    _, _, frame = _integrate_along(metric, x0, v0, path.ds, eta0)
    starts_x, starts_v = [], []
    for a in range(2):
        for sgn in (1.0, -1.0):
            if family == "plane-wave":
                xs = x0 + sgn * delta * eta0[a]
                vs = unit_velocity(metric, xs, v0)
            else:
                xs = x0
                vs = v0 + sgn * delta * eta0[a]
                vs = vs / np.sqrt(metric.inner(x0, vs, vs))
            starts_x.append(xs)
            starts_v.append(vs)
    X, _, _ = _integrate_along(metric, np.stack(starts_x), np.stack(starts_v), path.ds)
    # X: (N, 4, 3) ordered (a=0,+), (a=0,-), (a=1,+), (a=1,-)
    dev = np.stack([(X[:, 0] - X[:, 1]), (X[:, 2] - X[:, 3])], axis=1) / (2 * delta)
    c2 = metric.speed(path.x) ** 2
    D = np.einsum("nai,nbi->nab", dev, frame) / c2[:, None, None]
    J = np.linalg.det(D)
    if family == "plane-wave":
        J = J / J[0]
    return SpreadingProfile(path.s.copy(), J, family)


@dataclass(frozen=True)
class CheckReport:
    name: str
    minimum: float
    where: tuple

    @property
    def passed(self) -> bool:
        return bool(self.minimum > 0)

    def to_dict(self):
        return {"name": self.name, "minimum": self.minimum, "where": list(self.where),
                "passed": self.passed}


def _metric_hessian(metric, x, grad_phi, hess_phi):
    gam = christoffels(metric, x)
    return hess_phi - np.einsum("...kij,...k->...ij", gam, grad_phi)


def check_strict_convexity(domain: Ball, metric: ConformalMetric, n_points: int = 400,
                           n_dirs: int = 16) -> CheckReport:
    """Minimum second fundamental form of the boundary sphere with respect to g.

    The boundary is the level set psi = R^2 of psi = |x - center|^2, and
    II(X, X) = Hess_g psi(X, X) / |d psi|_g for Euclidean-unit tangent X
    (positive means convex as seen from inside).
    """
    pts = domain.boundary_points(n_points)
    d = pts - domain.c
    nrm = d / domain.radius
    t1, t2 = _tangent_basis(nrm)
    th = np.linspace(0, np.pi, n_dirs, endpoint=False)  # II is even in X
    X = np.cos(th)[None, :, None] * t1[:, None] + np.sin(th)[None, :, None] * t2[:, None]
    H = _metric_hessian(metric, pts, 2 * d, np.broadcast_to(2 * _EYE, d.shape + (3,)))
    c = metric.speed(pts)
    dpsi = c * 2 * np.linalg.norm(d, axis=-1)
    vals = np.einsum("pti,pij,ptj->pt", X, H, X) / dpsi[:, None]
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    return CheckReport("strict_convexity", float(vals[i, j]), tuple(float(t) for t in pts[i]))


def check_convex_foliation(metric: ConformalMetric, phi=None, n: int = 21) -> CheckReport:
    """Minimum eigenvalue of the g-Hessian of ``phi`` over an interior lattice.

    ``phi`` is any object with ``evaluate(x) -> (value, grad, hess)``; the
    default is |x - center|^2.  Eigenvalues are those of the Cartesian
    component matrix; only the sign of the minimum is meaningful.
    """
    domain = metric.domain
    pts = domain.lattice(n)
    if phi is None:
        d = pts - domain.c
        g, h = 2 * d, np.broadcast_to(2 * _EYE, d.shape + (3,))
    else:
        _, g, h = phi.evaluate(pts)
    H = _metric_hessian(metric, pts, g, h)
    eig = np.linalg.eigvalsh(H).min(axis=-1)
    i = int(np.argmin(eig))
    return CheckReport("convex_foliation", float(eig[i]), tuple(float(t) for t in pts[i]))


def max_geodesic_length(domain: Ball, metric: ConformalMetric, chords: ChordSet,
                        step: float = 1e-2, max_length: float = 1e3) -> float:
    if len(chords) == 0:
        raise ValueError("chord set is empty")
    paths = trace_chords(metric, chords, step, max_length=max_length)
    if any(p is None for p in paths):
        raise TrappedRayError("a chord exceeded the maximum length")
    return max(p.travel_time for p in paths)
