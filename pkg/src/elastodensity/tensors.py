"""The symmetric 2-tensors carried by the subleading P and S amplitudes.

All differential operators (Laplacian, Hessian, gradient, norms, dots) are
Euclidean in Cartesian coordinates; the metrics g_P and g_S enter only as the
explicit weights c_P^{-2} I and c_S^{-2} I.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import PreconditionError
from .medium import Constant, MediumModel, ScalarField, coupling_ratio, log_sqrt_rho_derivatives

_EYE = np.eye(3)


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


def sym_outer(a, b):
    """``a (x)^s b = (a (x) b + b (x) a) / 2``."""
    return 0.5 * (_outer(a, b) + _outer(b, a))


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _s(x):
    return np.asarray(x)[..., None, None]


@dataclass(frozen=True)
class SymTensorField:
    """x -> symmetric 3x3 matrix, vectorised over leading point dimensions."""

    evaluator: Callable
    tag: str = "custom"

    def __call__(self, x):
        return self.evaluator(np.asarray(x, dtype=float))

    def __add__(self, other):
        return SymTensorField(lambda x: self(x) + other(x), "custom")

    def __rmul__(self, a):
        return SymTensorField(lambda x: a * self(x), self.tag)

    def sample(self, points):
        """(points, 6 independent components xx, yy, zz, xy, xz, yz)."""
        T = self(points)
        comps = np.stack([T[..., 0, 0], T[..., 1, 1], T[..., 2, 2],
                          T[..., 0, 1], T[..., 0, 2], T[..., 1, 2]], axis=-1)
        return np.asarray(points), comps


def constant_tensor(T, tag="custom") -> SymTensorField:
    T = np.asarray(T, dtype=float)
    return SymTensorField(lambda x: np.broadcast_to(T, x.shape[:-1] + (3, 3)).copy(), tag)


def metric_tensor_field(model: MediumModel, mode: str) -> SymTensorField:
    """g_P or g_S as a Cartesian component field c^{-2} I."""
    return SymTensorField(lambda x: _s(1 / model.speed_squared(x, mode).c2) * _EYE, f"g_{mode}")


def _medium_terms(model, x):
    cp2, gcp2 = model.speed_squared(x, "P")
    cs2, gcs2 = model.speed_squared(x, "S")
    diff = coupling_ratio(cp2, cs2)
    return cp2, gcp2, cs2, gcs2, diff, log_sqrt_rho_derivatives(model, x)


def assemble_M(model: MediumModel, x, factor4: bool = False, symmetrize: bool = False):
    """The P-wave tensor M, evaluated term by term.

    The last term ``c_P^{-2} grad log sqrt(rho) (x) (...)`` is not symmetric;
    pass ``symmetrize=True`` for Sym(M).  ``factor4`` multiplies the
    ``grad log sqrt(rho) (x) grad log sqrt(rho)`` coefficient by 4, the value
    that appears in the unsimplified ray-coordinate expression.
    """
    x = np.asarray(x, dtype=float)
    cp2, gcp2, cs2, gcs2, diff, L = _medium_terms(model, x)
    u, H, lap = L.grad, L.hess, L.laplacian
    gP = _s(1 / cp2) * _EYE
    k4 = 4.0 if factor4 else 1.0
    M = (-_s((cp2 - 4 * cs2) * lap) * gP
         + _s((2 * cp2 - 4 * cs2) / cp2) * H
         + _s((cp2 - 4 * cs2 + 4 * cs2**2 / diff) * _dot(u, u)) * gP
         + _s(k4 * cs2 / cp2 * (cp2 - 2 * cs2) / diff) * _outer(u, u)
         + _s(_dot(u, -gcp2 + (8 * cs2 / diff)[..., None] * gcs2)) * gP
         + _s(1 / cp2) * _outer(u, 2 * gcp2 - (8 * cs2 / diff)[..., None] * gcs2))
    if symmetrize:
        M = 0.5 * (M + np.swapaxes(M, -1, -2))
    return M


def _swave_vector(cp2, gcp2, cs2, gcs2, diff):
    # 2 (c_P^2 - c_S^2)/c_S^4 grad c_S^2 + c_S^{-2} grad c_P^2 - 12/(c_P^2 - c_S^2) grad c_S^2
    return ((2 * diff / cs2**2)[..., None] * gcs2 + (1 / cs2)[..., None] * gcp2
            - (12 / diff)[..., None] * gcs2)


def assemble_sym_N(model: MediumModel, x):
    """Sym(N) in Cartesian coordinates."""
    x = np.asarray(x, dtype=float)
    cp2, gcp2, cs2, gcs2, diff, L = _medium_terms(model, x)
    u, H, lap = L.grad, L.hess, L.laplacian
    V = _swave_vector(cp2, gcp2, cs2, gcs2, diff)
    return (_s(lap) * _EYE + 2 * H + _s(_dot(u, u)) * _EYE
            + _s(4 * (cp2 - 2 * cs2) / diff) * _outer(u, u)
            + _s(_dot(u, gcs2) / cs2) * _EYE
            + sym_outer(u, V))


def coordinate_free_N(model: MediumModel, x):
    """N with g_S = c_S^{-2} I and the unsymmetrised last product."""
    x = np.asarray(x, dtype=float)
    cp2, gcp2, cs2, gcs2, diff, L = _medium_terms(model, x)
    u, H, lap = L.grad, L.hess, L.laplacian
    gS = _s(1 / cs2) * _EYE
    V = _swave_vector(cp2, gcp2, cs2, gcs2, diff)
    return (_s(cs2 * lap) * gS + 2 * H + _s(cs2 * _dot(u, u)) * gS
            + _s(4 * (cp2 - 2 * cs2) / diff) * _outer(u, u)
            + _s(_dot(u, gcs2)) * gS + _outer(u, V))


def M_field(model: MediumModel, factor4: bool = False) -> SymTensorField:
    return SymTensorField(lambda x: assemble_M(model, x, factor4, symmetrize=True), "M")


def sym_N_field(model: MediumModel) -> SymTensorField:
    return SymTensorField(lambda x: assemble_sym_N(model, x), "SymN")


def _require_constant_density(model: MediumModel):
    if isinstance(model.rho, Constant):
        return
    pts = model.domain.lattice(9)
    if np.any(np.abs(model.rho.grad(pts)) > 1e-14):
        raise PreconditionError("background density must be constant")


class LinearCoefficients:
    """Background-dependent pieces of the linearised Sym(N).

    ``L[f] = lap f I + 2 hess f + c_S^{-2}(grad f . grad c_S^2) I + grad f (x)^s V``
    so a contraction with eta (x) eta is linear in (hess f, grad f) with the
    coefficients returned by :meth:`contraction`.
    """

    def __init__(self, background: MediumModel):
        _require_constant_density(background)
        self.background = background

    def at(self, x):
        cp2, gcp2 = self.background.speed_squared(x, "P")
        cs2, gcs2 = self.background.speed_squared(x, "S")
        diff = coupling_ratio(cp2, cs2)
        return gcs2 / cs2[..., None], _swave_vector(cp2, gcp2, cs2, gcs2, diff)

    def contraction(self, x, eta):
        """(A, b) with ``eta^T L[f] eta = sum_ij A_ij d_ij f + sum_i b_i d_i f``."""
        w, V = self.at(x)
        ee = _dot(eta, eta)
        A = _s(ee) * _EYE + 2 * _outer(eta, eta)
        # grad f (x)^s V contracted twice with eta gives (grad f . eta)(V . eta)
        b = ee[..., None] * w + _dot(V, eta)[..., None] * eta
        return A, b


def linearize_N(background: MediumModel, f: ScalarField) -> SymTensorField:
    """First-order part of Sym(N) for density rho_0 exp(2 f) at fixed wavespeeds."""
    coef = LinearCoefficients(background)

    def ev(x):
        _, g, H = f.evaluate(x)
        w, V = coef.at(x)
        lap = np.trace(H, axis1=-2, axis2=-1)
        return _s(lap) * _EYE + 2 * H + _s(_dot(g, w)) * _EYE + sym_outer(g, V)

    return SymTensorField(ev, "linearized")


def double_divergence(field, x, h: float = 1e-3):
    """sum_ij d_i d_j T_ij at ``x`` by central differences (exact on quadratics)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for i in range(3):
        ei = h * _EYE[i]
        out += (field(x + ei)[..., i, i] - 2 * field(x)[..., i, i] + field(x - ei)[..., i, i]) / h**2
        for j in range(3):
            if j == i:
                continue
            ej = h * _EYE[j]
            out += (field(x + ei + ej)[..., i, j] - field(x + ei - ej)[..., i, j]
                    - field(x - ei + ej)[..., i, j] + field(x - ei - ej)[..., i, j]) / (4 * h * h)
    return out
