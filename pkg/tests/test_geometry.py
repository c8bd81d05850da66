import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicHermiteSpline

from elastodensity.errors import PreconditionError, TrappedRayError
from elastodensity.geometry import (
    ChordSet, ConformalMetric, check_convex_foliation, check_strict_convexity, christoffels,
    generate_chords, initial_frame, max_geodesic_length, spreading_jacobian, trace_chords,
    trace_geodesic, trace_many, unit_velocity,
)
from elastodensity.medium import Ball, Constant, Exponential, MediumModel, RadialPolynomial

from conftest import bump_medium, radial_medium


def metric_for_speed(c_field, mode="S"):
    """Conformal metric whose shear speed is sqrt(c_field)."""
    return ConformalMetric(MediumModel(Constant(1.0), c_field, Constant(1.0)), mode)


def exp_quadratic_metric(k):
    # c_S = exp(k |x|^2)  <=>  mu = exp(2 k |x|^2) with rho = 1
    return metric_for_speed(Exponential(1.0, (0, 0, 0), 2 * k))


def diameter(metric, step=1e-3):
    c = float(metric.speed(np.array([-1.0, 0, 0])))
    return trace_geodesic(metric, [-1.0, 0, 0], [c, 0, 0], step)


@pytest.mark.parametrize("mu,expected", [(1.0, 2.0), (4.0, 1.0)])
def test_constant_speed_chord(mu, expected):
    p = diameter(ConformalMetric(MediumModel.constant(1.0, mu, 1.0), "S"))
    assert abs(p.travel_time - expected) < 1e-10
    assert np.allclose(p.end, [1, 0, 0], atol=1e-10)
    assert np.abs(p.x[:, 1:]).max() < 1e-14


def test_conformal_scaling():
    """Scaling c by k scales travel time by 1/k and keeps the Euclidean trace."""
    x0 = np.array([0.0, -0.6, -0.8])
    d = np.array([0.2, 0.7, 0.5])
    paths = []
    for k in (1.0, 2.5):
        m = ConformalMetric(MediumModel.constant(1.0, k * k, 1.0), "S")
        paths.append(trace_geodesic(m, x0, unit_velocity(m, x0, d), 1e-3))
    assert paths[1].travel_time == pytest.approx(paths[0].travel_time / 2.5, abs=1e-12)
    assert np.allclose(paths[0].end, paths[1].end, atol=1e-12)
    chord = paths[0].end - x0
    assert np.allclose(np.cross(chord, d), 0, atol=1e-12)


def test_christoffels_vanish_for_constant_speed():
    m = ConformalMetric(MediumModel.constant(1.0, 3.0, 2.0), "P")
    assert np.all(christoffels(m, np.zeros((5, 3))) == 0)


def test_christoffels_symmetric_and_metric_compatible(interior_points):
    m = ConformalMetric(radial_medium(), "S")
    G = christoffels(m, interior_points)
    assert np.allclose(G, np.swapaxes(G, -1, -2), atol=0)
    h = 1e-5
    for x, Gx in zip(interior_points[:10], G[:10]):
        dg = np.stack([(m.tensor(x + e) - m.tensor(x - e)) / (2 * h) for e in np.eye(3) * h])
        g = m.tensor(x)
        # d_k g_ij - Gamma^m_ki g_mj - Gamma^m_kj g_mi
        res = dg - np.einsum("mki,mj->kij", Gx, g) - np.einsum("mkj,mi->kij", Gx, g)
        assert np.abs(res).max() < 1e-6


def test_unit_speed_and_boundary_endpoints():
    m = ConformalMetric(bump_medium(), "S")
    chords = generate_chords(m.domain, 6, 4, seed=2)
    for p in trace_chords(m, chords, 1e-3):
        assert np.abs(m.inner(p.x, p.v, p.v) - 1).max() < 1e-8
        assert abs(np.linalg.norm(p.end) - 1) < 1e-9
        assert abs(np.linalg.norm(p.start) - 1) < 1e-12
        assert np.all(np.diff(p.s) > 0)


def _endpoint(metric, x0, v0, h):
    return trace_geodesic(metric, x0, v0, h).end


def test_rk4_step_halving_order():
    # c = 1 + |x|^2: errors stay well above rounding over the whole decade of steps
    m = ConformalMetric(MediumModel(Constant(1.0), RadialPolynomial((1.0, 2.0, 1.0)), Constant(1.0)), "S")
    x0 = np.array([-1.0, 0.0, 0.0])
    v0 = unit_velocity(m, x0, [1.0, 0.45, 0.1])
    ref = _endpoint(m, x0, v0, 5e-4)
    hs = np.array([0.04, 0.02, 0.01, 0.005, 0.004])
    errs = np.array([np.linalg.norm(_endpoint(m, x0, v0, h) - ref) for h in hs])
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 3.8, (errs, order)


def test_fixed_arclength_order_mild_medium():
    m = ConformalMetric(radial_medium(), "S")
    x0 = np.array([-1.0, 0.0, 0.0])
    v0 = unit_velocity(m, x0, [1.0, 0.45, 0.1])

    def at_one(h):
        return trace_geodesic(m, x0, v0, h).x[int(round(1.0 / h))]

    ref = at_one(5e-4)
    errs = [np.linalg.norm(at_one(h) - ref) for h in (0.04, 0.02, 0.01)]
    assert np.log2(errs[0] / errs[1]) > 3.9 and np.log2(errs[1] / errs[2]) > 3.9


def test_half_step_reference_radial():
    m = ConformalMetric(radial_medium(), "S")
    x0 = np.array([-1.0, 0.0, 0.0])
    v0 = unit_velocity(m, x0, [1.0, 0.45, 0.1])
    p, q = trace_geodesic(m, x0, v0, 1e-2), trace_geodesic(m, x0, v0, 5e-3)
    assert np.linalg.norm(p.end - q.end) < 1e-8
    assert np.abs(p.x[:-1] - q.x[:-1:2][: len(p) - 1]).max() < 1e-8


def test_time_reversal():
    m = ConformalMetric(bump_medium(), "S")
    x0 = np.array([0.0, 0.0, -1.0])
    p = trace_geodesic(m, x0, unit_velocity(m, x0, [0.3, -0.2, 1.0]), 1e-3)
    back = trace_geodesic(m, p.end, -p.v[-1], 1e-3)
    assert back.travel_time == pytest.approx(p.travel_time, abs=1e-9)
    spline = CubicHermiteSpline(p.s, p.x, p.v, axis=0)
    expected = spline(p.travel_time - back.s)
    assert np.abs(back.x - expected).max() < 1e-7
    # the stored reversal of the path is its own inverse
    rr = p.reversed().reversed()
    assert np.allclose(rr.x, p.x) and np.allclose(rr.s, p.s)


def test_trace_preconditions():
    m = ConformalMetric(MediumModel.constant(), "S")
    with pytest.raises(PreconditionError):
        trace_geodesic(m, [0.5, 0, 0], [1, 0, 0])
    with pytest.raises(PreconditionError):
        trace_geodesic(m, [-1, 0, 0], [2, 0, 0])
    with pytest.raises(PreconditionError):
        trace_geodesic(m, [-1, 0, 0], [-1, 0, 0])


def test_trapped_ray_guard():
    m = ConformalMetric(MediumModel.constant(), "S")
    with pytest.raises(TrappedRayError):
        trace_geodesic(m, [-1, 0, 0], [1, 0, 0], 0.01, max_length=0.5)
    out = trace_many(m, [[-1, 0, 0], [0, -1, 0]], [[1, 0, 0], [0.0, 1, 0]], 0.01, max_length=0.5)
    assert out == [None, None]


def test_generate_chords_basic():
    dom = Ball()
    one = generate_chords(dom, 1, 1)
    assert len(one) == 1
    c = generate_chords(dom, 30, 7, seed=4)
    assert len(c) == 210
    inward = np.einsum("ni,ni->n", c.directions, dom.c - c.x0)
    assert np.all(inward > 0)
    assert np.allclose(np.linalg.norm(c.directions, axis=1), 1)
    again = generate_chords(dom, 30, 7, seed=4)
    assert np.array_equal(again.directions, c.directions)
    assert not np.array_equal(generate_chords(dom, 30, 7, seed=5).directions, c.directions)
    with pytest.raises(ValueError):
        generate_chords(dom, 0, 3)


def test_chordset_json_round_trip():
    c = generate_chords(Ball((0.1, 0, 0), 1.5), 5, 3, seed=9)
    back = ChordSet.from_json(c.to_json())
    assert np.array_equal(back.x0, c.x0) and np.array_equal(back.directions, c.directions)
    assert back.domain == c.domain and back.seed == 9


def _slab_hits(x0, d, lo, hi):
    """Boolean (rays, cells): straight segment x0 + t d, t in [0, 2|d.n|], meets the box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d[:, None, :]
        t1 = (lo[None] - x0[:, None]) * inv
        t2 = (hi[None] - x0[:, None]) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    tlen = -2 * np.einsum("ni,ni->n", x0, d)  # chord length of the unit ball
    return (tmax >= np.maximum(tmin, 0)) & (tmin <= tlen[:, None])


def test_chord_coverage_of_interior_cells():
    c = generate_chords(Ball(), 100, 20, seed=0)
    edges = np.linspace(-1, 1, 9)
    lo = np.stack(np.meshgrid(edges[:-1], edges[:-1], edges[:-1], indexing="ij"), -1).reshape(-1, 3)
    hi = lo + 0.25
    corners = np.stack([np.where(np.array(b)[None], hi, lo) for b in np.ndindex(2, 2, 2)], 1)
    interior = np.all(np.linalg.norm(corners, axis=-1) < 1, axis=1)
    assert interior.sum() > 100
    hits = _slab_hits(c.x0, c.directions, lo[interior], hi[interior]).sum(axis=0)
    assert hits.min() >= 1


def test_plane_wave_spreading_constant_speed():
    m = ConformalMetric(MediumModel.constant(1.0, 2.0, 1.0), "S")
    x0 = np.array([0.0, -1.0, 0.0])
    p = trace_geodesic(m, x0, unit_velocity(m, x0, [0.2, 1.0, 0.1]), 1e-2)
    sp = spreading_jacobian(m, p, "plane-wave")
    assert np.abs(sp.J - 1).max() < 1e-8
    assert not sp.caustic.any() and sp.caustic_ranges() == []


def test_point_source_spreading_constant_speed():
    m = ConformalMetric(MediumModel.constant(), "S")
    p = diameter(m, 1e-2)
    J = spreading_jacobian(m, p, "point-source").J
    s = p.s
    k0 = 10
    ratio = J[k0 + 1:] / J[k0]
    assert np.allclose(ratio, (s[k0 + 1:] / s[k0]) ** 2, rtol=1e-7)


def test_spreading_delta_halving_bump():
    m = ConformalMetric(bump_medium(0.2), "S")
    x0 = np.array([-1.0, 0.0, 0.0])
    p = trace_geodesic(m, x0, unit_velocity(m, x0, [1.0, 0.1, 0.05]), 1e-2)
    for fam in ("plane-wave", "point-source"):
        a = spreading_jacobian(m, p, fam, delta=1e-4).J[1:]
        b = spreading_jacobian(m, p, fam, delta=5e-5).J[1:]
        assert np.abs(a / b - 1).max() < 1e-4
    assert np.all(spreading_jacobian(m, p, "plane-wave").J > 0)


def test_spreading_rejects_unknown_family():
    m = ConformalMetric(MediumModel.constant(), "S")
    with pytest.raises(ValueError):
        spreading_jacobian(m, diameter(m, 0.1), "cylindrical")


def test_initial_frame_orthonormal(rng):
    m = ConformalMetric(bump_medium(), "P")
    x = Ball().boundary_points(20)
    v = unit_velocity(m, x, -x + 0.3 * rng.normal(size=x.shape))
    F = initial_frame(m, x, v)
    B = np.concatenate([v[:, None], F], axis=1)
    G = np.einsum("nai,nbi->nab", B, B) / m.speed(x)[:, None, None] ** 2
    assert np.abs(G - np.eye(3)).max() < 1e-14


@pytest.mark.parametrize("mu", [1.0, 4.0, 0.25])
def test_strict_convexity_constant_speed(mu):
    m = ConformalMetric(MediumModel.constant(1.0, mu, 1.0), "S")
    rep = check_strict_convexity(m.domain, m)
    assert rep.passed
    assert rep.minimum == pytest.approx(1 / math.sqrt(mu), rel=1e-12)


def test_strict_convexity_exponential_sign_change():
    # For c = exp(k|x|^2) the boundary form is (1 - 2k) exp(-k); it flips at k = 1/2.
    ks = np.linspace(0.1, 1.0, 19)
    mins = np.array([check_strict_convexity(Ball(), exp_quadratic_metric(k), 50, 8).minimum for k in ks])
    assert np.allclose(mins, (1 - 2 * ks) * np.exp(-ks), atol=1e-12)
    flip = ks[np.argmax(mins <= 0)]
    assert 0.5 - 0.05 <= flip <= 0.5 + 0.05
    assert not check_strict_convexity(Ball(), exp_quadratic_metric(0.8)).passed


@pytest.mark.parametrize("k", [0.3, 0.8])
def test_strict_convexity_sign_stable_under_refinement(k):
    m = exp_quadratic_metric(k)
    coarse = check_strict_convexity(m.domain, m, 100, 4)
    fine = check_strict_convexity(m.domain, m, 800, 32)
    assert coarse.passed == fine.passed


def test_convex_foliation_constant_and_mild_bump():
    rep = check_convex_foliation(ConformalMetric(MediumModel.constant(1.0, 4.0, 1.0), "S"))
    assert rep.passed and rep.minimum == pytest.approx(2.0)
    assert check_convex_foliation(ConformalMetric(bump_medium(0.2), "S")).passed
    assert check_convex_foliation(ConformalMetric(bump_medium(0.2), "P")).passed


def test_convex_foliation_decreases_with_contrast():
    mins = [check_convex_foliation(ConformalMetric(bump_medium(a, width=0.3), "S"), n=15).minimum
            for a in (0.0, 0.2, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(mins) < 0), mins


def test_convex_foliation_custom_phi_fails_for_concave_candidate():
    m = ConformalMetric(MediumModel.constant(), "S")
    rep = check_convex_foliation(m, phi=Exponential(1.0, (0, 0, 0), -1.0), n=9)
    assert not rep.passed


@pytest.mark.parametrize("mu,expected", [(1.0, 2.0), (4.0, 1.0)])
def test_max_geodesic_length_constant(mu, expected):
    m = ConformalMetric(MediumModel.constant(1.0, mu, 1.0), "S")
    diam = ChordSet(np.array([[-1.0, 0, 0]]), np.array([[1.0, 0, 0]]))
    assert max_geodesic_length(m.domain, m, diam, 1e-2) == pytest.approx(expected, abs=1e-10)
    # the steepest fan direction sits at disk radius sqrt(0.5 / n_dirs) from the normal
    n_dirs = 10
    fan = max_geodesic_length(m.domain, m, generate_chords(m.domain, 20, n_dirs), 1e-2)
    assert fan == pytest.approx(expected * math.sqrt(1 - 0.5 / n_dirs), abs=1e-10)


def test_max_geodesic_length_refinement_bump():
    m = ConformalMetric(bump_medium(0.2), "S")
    a = max_geodesic_length(m.domain, m, generate_chords(m.domain, 100, 20, 1), 2e-2)
    b = max_geodesic_length(m.domain, m, generate_chords(m.domain, 200, 40, 1), 2e-2)
    assert abs(a - b) / b < 0.01


def test_max_geodesic_length_empty():
    m = ConformalMetric(MediumModel.constant(), "S")
    with pytest.raises(ValueError):
        max_geodesic_length(m.domain, m, ChordSet(np.zeros((0, 3)), np.zeros((0, 3))))


def test_path_csv_rows():
    m = ConformalMetric(MediumModel.constant(), "S")
    p = diameter(m, 0.5)
    buf = io.StringIO()
    p.write_csv(buf, ray_id=3)
    rows = [r.split(",") for r in buf.getvalue().strip().splitlines()]
    assert len(rows) == len(p) and len(rows[0]) == 8
    assert float(rows[-1][1]) == p.travel_time


@given(st.floats(-1, 1), st.floats(0, 2 * np.pi), st.floats(0.05, 0.95))
@settings(max_examples=30, deadline=None)
def test_chord_length_formula_constant_speed(z, phi, r):
    """Straight chord from x0 along d has Euclidean length -2 x0.d; travel time divides by c."""
    x0 = np.array([math.sqrt(1 - z * z) * math.cos(phi), math.sqrt(1 - z * z) * math.sin(phi), z])
    n = -x0
    t = np.cross(n, [0.3, 0.5, 0.8])
    t /= np.linalg.norm(t)
    d = math.sqrt(1 - r * r) * n + r * t
    m = ConformalMetric(MediumModel.constant(1.0, 2.25, 1.0), "S")
    p = trace_geodesic(m, x0, unit_velocity(m, x0, d), 0.05)
    assert p.travel_time == pytest.approx(-2 * x0 @ d / 1.5, abs=1e-10)
