"""Parallel polarisation frames and amplitude transport along geodesics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CausticError, PreconditionError
from .geometry import ConformalMetric, GeodesicPath, SpreadingProfile, initial_frame, rk4_step
from .medium import MediumModel
from .quadrature import cumulative_integral


@dataclass
class ParallelFrame:
    eta1: np.ndarray
    eta2: np.ndarray

    def __getitem__(self, pol):
        """Polarisation 1 or 2."""
        if pol == 1:
            return self.eta1
        if pol == 2:
            return self.eta2
        raise IndexError("polarisation index must be 1 or 2")

    def rotated(self, theta):
        c, s = np.cos(theta), np.sin(theta)
        return ParallelFrame(c * self.eta1 + s * self.eta2, -s * self.eta1 + c * self.eta2)


def _transport(metric, path, w0):
    x, v, w = path.x[0], path.v[0], np.asarray(w0, dtype=float)
    ws = [w]
    for h in path.ds:
        x, v, w = rk4_step(metric, x, v, w, h)
        ws.append(w)
    return np.stack(ws)


def parallel_transport(metric: ConformalMetric, path: GeodesicPath, eta0, tol: float = 1e-9):
    """Solve D eta / ds = 0 along ``path``; returns eta at every sample, shape (N, 3).

    The integration re-runs the path's own RK4 steps with eta riding along, so
    the samples line up with the path exactly.
    """
    eta0 = np.asarray(eta0, dtype=float)
    x0, v0 = path.x[0], path.v[0]
    if abs(float(metric.inner(x0, eta0, v0))) > tol:
        raise PreconditionError("eta0 must be g-orthogonal to the initial tangent")
    if abs(float(metric.inner(x0, eta0, eta0)) - 1) > tol:
        raise PreconditionError("eta0 must have unit g-length")
    return _transport(metric, path, eta0[None])[:, 0]


def transport_frame(metric: ConformalMetric, path: GeodesicPath) -> ParallelFrame:
    """Transport the deterministic start frame of :func:`initial_frame`."""
    if path.frame is not None and path.frame.shape[1] == 2:
        return ParallelFrame(path.frame[:, 0], path.frame[:, 1])
    w = _transport(metric, path, initial_frame(metric, path.x[0], path.v[0]))
    return ParallelFrame(w[:, 0], w[:, 1])


def gram_defect(metric: ConformalMetric, path: GeodesicPath, frame: ParallelFrame) -> float:
    """max |G - I| over samples, G the g-Gram matrix of (v, eta1, eta2)."""
    B = np.stack([path.v, frame.eta1, frame.eta2], axis=1)
    G = np.einsum("nai,nbi->nab", B, B) / metric.speed(path.x)[:, None, None] ** 2
    return float(np.abs(G - np.eye(3)).max())


@dataclass
class AmplitudeProfile:
    s: np.ndarray
    A: np.ndarray
    mode: str
    c_amp: float


def _mode_speed(model, x, mode):
    return np.sqrt(model.speed_squared(x, mode).c2)


def amplitude(model: MediumModel, path: GeodesicPath, spreading: SpreadingProfile,
              mode: str = "P", c_amp: float = 1.0) -> AmplitudeProfile:
    """Leading amplitude c_amp J^{-1/2} c^{-1/2} rho^{-1/2} sampled along ``path``."""
    J = np.asarray(spreading.J)
    if np.any(J <= 0):
        raise CausticError("spreading factor J <= 0 on the path")
    c = _mode_speed(model, path.x, mode)
    rho = model.rho(path.x)
    return AmplitudeProfile(path.s.copy(), c_amp * J**-0.5 * c**-0.5 * rho**-0.5, mode, c_amp)


def conserved_product(model: MediumModel, path: GeodesicPath, spreading: SpreadingProfile,
                      profile: AmplitudeProfile):
    """A J^{1/2} c^{-1/2} (stiffness)^{1/2}; constant along the ray.

    Stiffness is lambda + 2 mu for P and mu for S.
    """
    c = _mode_speed(model, path.x, profile.mode)
    lam, mu = model.lam(path.x), model.mu(path.x)
    stiff = lam + 2 * mu if profile.mode == "P" else mu
    return profile.A * np.sqrt(spreading.J) * c**-0.5 * np.sqrt(stiff)


@dataclass
class TransportScalar:
    """Running subleading scalar relative to its value at the path start."""

    s: np.ndarray
    values: np.ndarray
    C: float = 0.0

    @property
    def increment(self) -> complex:
        return complex(self.values[-1] - self.values[0])


def transport_scalar_P(path: GeodesicPath, M_field, C: float = 0.0) -> TransportScalar:
    """B(s) - B(a) from 2i dB/ds = M(v, v) + C."""
    M = M_field(path.x)
    q = np.einsum("ni,nij,nj->n", path.v, M, path.v) + C
    return TransportScalar(path.s.copy(), cumulative_integral(q, path.ds) / 2j, C)


def transport_scalar_S(path: GeodesicPath, N_field, frame, pol: int = 1, C: float = 0.0) -> TransportScalar:
    """<xi, eta>(s) - <xi, eta>(a) = (i/2) int (N(eta, eta) + C) ds."""
    eta = frame[pol] if isinstance(frame, ParallelFrame) else np.asarray(frame)
    N = N_field(path.x)
    q = np.einsum("ni,nij,nj->n", eta, N, eta) + C
    return TransportScalar(path.s.copy(), 0.5j * cumulative_integral(q, path.ds), C)
