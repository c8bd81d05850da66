"""Longitudinal and transverse geodesic ray transforms of 2-tensor fields."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AlignmentError
from .geometry import ChordSet, ConformalMetric, GeodesicPath, trace_chords
from .medium import MediumModel, ScalarField
from .quadrature import path_integral
from .tensors import LinearCoefficients, linearize_N

log = logging.getLogger(__name__)

MIN_CHORD_STEPS = 4


def longitudinal_transform(field, path: GeodesicPath) -> float:
    """int T(v, v) ds with v the unit-speed tangent in Cartesian components."""
    T = field(path.x)
    q = np.einsum("ni,nij,nj->n", path.v, T, path.v)
    return float(path_integral(q, path.ds))


def transverse_transform(field, path: GeodesicPath, eta) -> float:
    """int T(eta, eta) ds with plain component contraction."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != path.x.shape:
        raise AlignmentError(f"eta has shape {eta.shape}, path samples {path.x.shape}")
    T = field(path.x)
    q = np.einsum("ni,nij,nj->n", eta, T, eta)
    return float(path_integral(q, path.ds))


@dataclass
class Measurement:
    ray_id: int
    mode: str
    pol: int
    value: float
    step: float
    x0: tuple
    v0: tuple


def traced_rays(background: MediumModel, chords: ChordSet, step: float, mode: str = "S"):
    """(ray_id, path) for every usable chord, with transported frames.

    Trapped rays and chords shorter than ``MIN_CHORD_STEPS`` steps are
    dropped with a log message.  Ordering follows the chord set.
    """
    metric = ConformalMetric(background, mode)
    out = []
    for i, p in enumerate(trace_chords(metric, chords, step, frames=True)):
        if p is None:
            log.warning("ray %d trapped; skipped", i)
            continue
        if p.travel_time < MIN_CHORD_STEPS * step:
            log.info("ray %d grazes the boundary (length %.3g); skipped", i, p.travel_time)
            continue
        out.append((i, p))
    return out


def forward_dataset(background: MediumModel, chords: ChordSet, f: ScalarField, step: float = 0.02,
                    rays=None) -> list[Measurement]:
    """Transverse transforms of the linearised Sym(N) of ``f``, two polarisations per ray.

    ``rays`` may pass pre-traced output of :func:`traced_rays`.
    """
    if rays is None:
        rays = traced_rays(background, chords, step)
    field = linearize_N(background, f)
    out = []
    for rid, p in rays:
        T = field(p.x)
        for pol in (1, 2):
            eta = p.frame[:, pol - 1]
            q = np.einsum("ni,nij,nj->n", eta, T, eta)
            out.append(Measurement(rid, "transverse", pol, float(path_integral(q, p.ds)), step,
                                   tuple(map(float, p.x[0])), tuple(map(float, p.v[0]))))
    return out


def contraction_coefficients(background: MediumModel, path: GeodesicPath, pol: int):
    """Per-sample (A, b) of the linearised integrand; see :class:`LinearCoefficients`."""
    return LinearCoefficients(background).contraction(path.x, path.frame[:, pol - 1])


DATASET_HEADER = ["ray_id", "pol", "x0_1", "x0_2", "x0_3", "v0_1", "v0_2", "v0_3", "value"]


def write_dataset(measurements, csv_path, meta_path=None, metadata=None):
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for m in measurements:
            w.writerow([m.ray_id, m.pol] + [repr(t) for t in m.x0] + [repr(t) for t in m.v0] + [repr(m.value)])
    if meta_path is not None:
        with open(meta_path, "w") as fh:
            json.dump(metadata or {}, fh, indent=2, sort_keys=True)


def read_dataset(csv_path, step: float = float("nan"), mode: str = "transverse"):
    out = []
    with open(csv_path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames != DATASET_HEADER:
            raise ValueError(f"unexpected dataset header {r.fieldnames}")
        for row in r:
            out.append(Measurement(int(row["ray_id"]), mode, int(row["pol"]), float(row["value"]), step,
                                   tuple(float(row[f"x0_{i}"]) for i in (1, 2, 3)),
                                   tuple(float(row[f"v0_{i}"]) for i in (1, 2, 3))))
    return out


def measurement_dicts(measurements):
    return [asdict(m) for m in measurements]
