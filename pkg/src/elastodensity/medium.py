"""Smooth isotropic elastic media with closed-form derivatives.

A medium is three scalar fields (lambda, mu, rho) on a ball.  Every field
returns its value, gradient and Hessian from hand-coded formulas so the
second-order tensor assemblies downstream never rely on numerical
differentiation of the inputs.

All evaluators are vectorised: ``x`` has shape ``(..., 3)`` and results have
shapes ``(...)``, ``(..., 3)`` and ``(..., 3, 3)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateMediumError, DomainError

FIELD_KINDS = ("constant", "gaussian-bump-sum", "radial-polynomial", "exponential")

_EYE = np.eye(3)


class Derivs(NamedTuple):
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f"points must have trailing dimension 3, got shape {x.shape}")
    return x


class ScalarField:
    """Base class for analytic scalar fields on R^3."""

    kind = "abstract"

    def evaluate(self, x) -> Derivs:
        raise NotImplementedError

    def value(self, x):
        return self.evaluate(x).value

    def grad(self, x):
        return self.evaluate(x).grad

    def hess(self, x):
        return self.evaluate(x).hess

    def __call__(self, x):
        return self.value(x)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __add__(self, other):
        if np.isscalar(other):
            other = Constant(other)
        return Sum((self, other))

    __radd__ = __add__

    def __mul__(self, other):
        if np.isscalar(other):
            return Scaled(self, float(other))
        return Product((self, other))

    __rmul__ = __mul__


@dataclass(frozen=True)
class Constant(ScalarField):
    c: float
    kind = "constant"

    def evaluate(self, x):
        x = _as_points(x)
        shape = x.shape[:-1]
        return Derivs(np.full(shape, float(self.c)), np.zeros(shape + (3,)),
                      np.zeros(shape + (3, 3)))

    def to_dict(self):
        return {"kind": self.kind, "value": float(self.c)}


@dataclass(frozen=True)
class GaussianBumps(ScalarField):
    """``base + sum_i A_i exp(-|x - c_i|^2 / (2 w_i^2))``."""

    base: float = 0.0
    amplitudes: tuple = ()
    centers: tuple = ()
    widths: tuple = ()
    kind = "gaussian-bump-sum"

    def __post_init__(self):
        if not (len(self.amplitudes) == len(self.centers) == len(self.widths)):
            raise ValueError("amplitudes, centers and widths must have equal length")
        if any(w <= 0 for w in self.widths):
            raise ValueError("bump widths must be positive")

    def evaluate(self, x):
        x = _as_points(x)
        shape = x.shape[:-1]
        val = np.full(shape, float(self.base))
        grad = np.zeros(shape + (3,))
        hess = np.zeros(shape + (3, 3))
        for a, c, w in zip(self.amplitudes, self.centers, self.widths):
            d = x - np.asarray(c, dtype=float)
            w2 = w * w
            e = a * np.exp(-np.einsum("...i,...i->...", d, d) / (2 * w2))
            val += e
            grad -= (e / w2)[..., None] * d
            hess += e[..., None, None] * (d[..., :, None] * d[..., None, :] / (w2 * w2) - _EYE / w2)
        return Derivs(val, grad, hess)

    def to_dict(self):
        return {
            "kind": self.kind,
            "base": float(self.base),
            "bumps": [
                {"amplitude": float(a), "center": [float(t) for t in c], "width": float(w)}
                for a, c, w in zip(self.amplitudes, self.centers, self.widths)
            ],
        }


@dataclass(frozen=True)
class RadialPolynomial(ScalarField):
    """Polynomial in ``r^2 = |x - center|^2``: ``sum_k coeffs[k] * r^(2k)``."""

    coeffs: tuple = (1.0,)
    center: tuple = (0.0, 0.0, 0.0)
    kind = "radial-polynomial"

    def evaluate(self, x):
        x = _as_points(x)
        d = x - np.asarray(self.center, dtype=float)
        r2 = np.einsum("...i,...i->...", d, d)
        c = np.asarray(self.coeffs, dtype=float)
        k = np.arange(len(c))
        f = np.polynomial.polynomial.polyval(r2, c)
        f1 = np.polynomial.polynomial.polyval(r2, (c * k)[1:]) if len(c) > 1 else np.zeros_like(r2)
        f2 = np.polynomial.polynomial.polyval(r2, (c * k * (k - 1))[2:]) if len(c) > 2 else np.zeros_like(r2)
        grad = 2 * f1[..., None] * d
        hess = 2 * f1[..., None, None] * _EYE + 4 * f2[..., None, None] * d[..., :, None] * d[..., None, :]
        return Derivs(f, grad, hess)

    def to_dict(self):
        return {"kind": self.kind, "coeffs": [float(c) for c in self.coeffs],
                "center": [float(c) for c in self.center]}


@dataclass(frozen=True)
class Exponential(ScalarField):
    """``amplitude * exp(k . (x - center) + q |x - center|^2)``."""

    amplitude: float = 1.0
    k: tuple = (0.0, 0.0, 0.0)
    q: float = 0.0
    center: tuple = (0.0, 0.0, 0.0)
    kind = "exponential"

    def evaluate(self, x):
        x = _as_points(x)
        d = x - np.asarray(self.center, dtype=float)
        k = np.asarray(self.k, dtype=float)
        phi = d @ k + self.q * np.einsum("...i,...i->...", d, d)
        dphi = k + 2 * self.q * d
        f = self.amplitude * np.exp(phi)
        grad = f[..., None] * dphi
        hess = f[..., None, None] * (dphi[..., :, None] * dphi[..., None, :] + 2 * self.q * _EYE)
        return Derivs(f, grad, hess)

    def to_dict(self):
        return {"kind": self.kind, "amplitude": float(self.amplitude),
                "k": [float(t) for t in self.k], "q": float(self.q),
                "center": [float(c) for c in self.center]}


# composite fields, used to build perturbed media and log-density fields


@dataclass(frozen=True)
class Scaled(ScalarField):
    f: ScalarField
    s: float
    kind = "scaled"

    def evaluate(self, x):
        v, g, h = self.f.evaluate(x)
        return Derivs(self.s * v, self.s * g, self.s * h)

    def to_dict(self):
        return {"kind": self.kind, "field": self.f.to_dict(), "scale": self.s}


@dataclass(frozen=True)
class Sum(ScalarField):
    terms: tuple
    kind = "sum"

    def evaluate(self, x):
        parts = [t.evaluate(x) for t in self.terms]
        return Derivs(sum(p.value for p in parts), sum(p.grad for p in parts),
                      sum(p.hess for p in parts))

    def to_dict(self):
        return {"kind": self.kind, "terms": [t.to_dict() for t in self.terms]}


@dataclass(frozen=True)
class Product(ScalarField):
    factors: tuple
    kind = "product"

    def evaluate(self, x):
        v, g, h = self.factors[0].evaluate(x)
        for fac in self.factors[1:]:
            w, gw, hw = fac.evaluate(x)
            h = (h * w[..., None, None] + hw * v[..., None, None]
                 + g[..., :, None] * gw[..., None, :] + gw[..., :, None] * g[..., None, :])
            g = g * w[..., None] + gw * v[..., None]
            v = v * w
        return Derivs(v, g, h)

    def to_dict(self):
        return {"kind": self.kind, "factors": [f.to_dict() for f in self.factors]}


@dataclass(frozen=True)
class ExpOf(ScalarField):
    """``exp(scale * f)``."""

    f: ScalarField
    scale: float = 1.0
    kind = "exp-of"

    def evaluate(self, x):
        v, g, h = self.f.evaluate(x)
        s = self.scale
        e = np.exp(s * v)
        sg = s * g
        return Derivs(e, e[..., None] * sg,
                      e[..., None, None] * (sg[..., :, None] * sg[..., None, :] + s * h))

    def to_dict(self):
        return {"kind": self.kind, "field": self.f.to_dict(), "scale": self.scale}


@dataclass(frozen=True)
class LogOf(ScalarField):
    """``scale * log(f)``; requires ``f > 0`` wherever it is evaluated."""

    f: ScalarField
    scale: float = 1.0
    kind = "log-of"

    def evaluate(self, x):
        v, g, h = self.f.evaluate(x)
        if np.any(v <= 0):
            raise DomainError("log of a non-positive field value")
        s = self.scale
        u = g / v[..., None]
        return Derivs(s * np.log(v), s * u,
                      s * (h / v[..., None, None] - u[..., :, None] * u[..., None, :]))

    def to_dict(self):
        return {"kind": self.kind, "field": self.f.to_dict(), "scale": self.scale}


_FIELD_KEYS = {
    "constant": {"value"}, "gaussian-bump-sum": {"base", "bumps"}, "radial-polynomial": {"coeffs", "center"},
    "exponential": {"amplitude", "k", "q", "center"}, "scaled": {"field", "scale"}, "sum": {"terms"},
    "product": {"factors"}, "exp-of": {"field", "scale"}, "log-of": {"field", "scale"},
}


def field_from_dict(spec, default_kind: str | None = None) -> ScalarField:
    """Build a scalar field from its JSON form.

    A bare number is a constant.  A dict without ``"kind"`` takes
    ``default_kind`` (the enclosing medium's kind).
    """
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    if not isinstance(spec, dict):
        raise ValueError(f"cannot build a field from {spec!r}")
    kind = spec.get("kind", default_kind)
    extra = set(spec) - {"kind"} - _FIELD_KEYS.get(kind, set())
    if extra:
        raise ValueError(f"unexpected keys {sorted(extra)} for field kind {kind!r}")
    if kind == "constant":
        return Constant(float(spec["value"]))
    if kind == "gaussian-bump-sum":
        bumps = spec.get("bumps", [])
        return GaussianBumps(
            base=float(spec.get("base", 0.0)),
            amplitudes=tuple(float(b["amplitude"]) for b in bumps),
            centers=tuple(tuple(float(t) for t in b["center"]) for b in bumps),
            widths=tuple(float(b["width"]) for b in bumps),
        )
    if kind == "radial-polynomial":
        return RadialPolynomial(tuple(float(c) for c in spec["coeffs"]),
                                tuple(float(c) for c in spec.get("center", (0, 0, 0))))
    if kind == "exponential":
        return Exponential(float(spec.get("amplitude", 1.0)),
                           tuple(float(t) for t in spec.get("k", (0, 0, 0))),
                           float(spec.get("q", 0.0)),
                           tuple(float(c) for c in spec.get("center", (0, 0, 0))))
    if kind == "scaled":
        return Scaled(field_from_dict(spec["field"]), float(spec["scale"]))
    if kind == "sum":
        return Sum(tuple(field_from_dict(t) for t in spec["terms"]))
    if kind == "product":
        return Product(tuple(field_from_dict(t) for t in spec["factors"]))
    if kind == "exp-of":
        return ExpOf(field_from_dict(spec["field"]), float(spec.get("scale", 1.0)))
    if kind == "log-of":
        return LogOf(field_from_dict(spec["field"]), float(spec.get("scale", 1.0)))
    raise ValueError(f"unknown field kind {kind!r}")


@dataclass(frozen=True)
class Ball:
    """Closed ball; the computational domain."""

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def distance(self, x):
        d = _as_points(x) - self.c
        return np.sqrt(np.einsum("...i,...i->...", d, d))

    def contains(self, x, tol: float = 1e-9):
        return self.distance(x) <= self.radius * (1 + tol)

    def lattice(self, n: int) -> np.ndarray:
        """Points of an ``n^3`` bounding-box lattice lying in the closed ball."""
        t = np.linspace(-self.radius, self.radius, n)
        pts = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3) + self.c
        return pts[self.contains(pts)]

    def boundary_points(self, n: int) -> np.ndarray:
        """Fibonacci-sphere points on the boundary."""
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        r = np.sqrt(np.clip(1 - z * z, 0, None))
        phi = np.pi * (3 - np.sqrt(5)) * i
        u = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
        return self.c + self.radius * u

    def to_dict(self):
        return {"center": [float(c) for c in self.center], "radius": float(self.radius)}


class WavespeedPair(NamedTuple):
    c_P: np.ndarray
    c_S: np.ndarray


class SpeedSquared(NamedTuple):
    c2: np.ndarray
    grad: np.ndarray


@dataclass(frozen=True)
class MediumModel:
    lam: ScalarField
    mu: ScalarField
    rho: ScalarField
    domain: Ball = field(default_factory=Ball)
    kind: str = "constant"

    @classmethod
    def constant(cls, lam=1.0, mu=1.0, rho=1.0, domain=None):
        return cls(Constant(lam), Constant(mu), Constant(rho), domain or Ball(), "constant")

    def _check_domain(self, x):
        if not np.all(self.domain.contains(x)):
            raise DomainError("evaluation point outside the closed domain")

    def speed_squared(self, x, mode: str) -> SpeedSquared:
        """c^2 and its gradient for ``mode`` in {"P", "S"}; no domain check."""
        lam, mu, rho = self.lam.evaluate(x), self.mu.evaluate(x), self.rho.evaluate(x)
        if mode == "P":
            num, gnum = lam.value + 2 * mu.value, lam.grad + 2 * mu.grad
        elif mode == "S":
            num, gnum = mu.value, mu.grad
        else:
            raise ValueError(f"mode must be 'P' or 'S', got {mode!r}")
        c2 = num / rho.value
        grad = gnum / rho.value[..., None] - (num / rho.value**2)[..., None] * rho.grad
        return SpeedSquared(c2, grad)

    def wavespeeds(self, x) -> WavespeedPair:
        self._check_domain(x)
        lam, mu, rho = self.lam(x), self.mu(x), self.rho(x)
        return WavespeedPair(np.sqrt((lam + 2 * mu) / rho), np.sqrt(mu / rho))

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": {"lambda": self.lam.to_dict(), "mu": self.mu.to_dict(), "rho": self.rho.to_dict()},
            "domain": self.domain.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "MediumModel":
        kind = doc.get("kind", "constant")
        params = doc["params"]
        dom = doc.get("domain", {})
        domain = Ball(tuple(float(c) for c in dom.get("center", (0, 0, 0))), float(dom.get("radius", 1.0)))
        return cls(
            field_from_dict(params["lambda"], kind),
            field_from_dict(params["mu"], kind),
            field_from_dict(params["rho"], kind),
            domain,
            kind,
        )

    @classmethod
    def from_json(cls, text: str) -> "MediumModel":
        return cls.from_dict(json.loads(text))


def wavespeeds(model: MediumModel, x) -> WavespeedPair:
    return model.wavespeeds(x)


@dataclass(frozen=True)
class PositivityReport:
    min_mu: float
    min_3lam_2mu: float
    min_rho: float

    @property
    def passed(self) -> bool:
        return self.min_mu > 0 and self.min_3lam_2mu > 0 and self.min_rho > 0

    def to_dict(self):
        return {"min_mu": self.min_mu, "min_3lam_2mu": self.min_3lam_2mu,
                "min_rho": self.min_rho, "passed": self.passed}


def check_positivity(model: MediumModel, grid=None) -> PositivityReport:
    """Minima of mu, 3 lambda + 2 mu and rho over ``grid`` (default: 21^3 ball lattice)."""
    pts = model.domain.lattice(21) if grid is None else _as_points(grid)
    lam, mu, rho = model.lam(pts), model.mu(pts), model.rho(pts)
    return PositivityReport(float(mu.min()), float((3 * lam + 2 * mu).min()), float(rho.min()))


class LogSqrtRho(NamedTuple):
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    laplacian: np.ndarray


def log_sqrt_rho_derivatives(model: MediumModel, x) -> LogSqrtRho:
    """Value, gradient, Hessian and Laplacian of ``log sqrt(rho)`` by the chain rule."""
    rho, g, h = model.rho.evaluate(x)
    if np.any(rho <= 0):
        raise DomainError("density must be positive")
    u = g / (2 * rho[..., None])
    hess = h / (2 * rho[..., None, None]) - 2 * u[..., :, None] * u[..., None, :]
    return LogSqrtRho(0.5 * np.log(rho), u, hess, np.trace(hess, axis1=-2, axis2=-1))


def coupling_ratio(cp2, cs2):
    """``c_P^2 - c_S^2``, raising when it vanishes."""
    diff = cp2 - cs2
    if np.any(np.abs(diff) <= 1e-14 * np.abs(cp2)):
        raise DegenerateMediumError("c_P equals c_S; tensor coefficients are singular")
    return diff


def density_perturbed(background: MediumModel, f: ScalarField) -> MediumModel:
    """Medium with the background wavespeeds and density ``rho_0 exp(2 f)``.

    With c_P and c_S held fixed, lambda and mu scale with the density.
    """
    w = ExpOf(f, 2.0)
    return MediumModel(Product((background.lam, w)), Product((background.mu, w)),
                       Product((background.rho, w)), background.domain, background.kind)
