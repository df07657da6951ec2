import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adscone.fixtures import cone_sphere, flat_torus, icosphere
from adscone.mesh import FaceGeometry
from adscone.quaddiff import (
    PoleOrderError,
    QuadDiff,
    check_pole_orders,
    conformal_part,
    det_h,
    divergence_residual,
    format_quaddiff,
    holomorphicity_residual,
    parse_quaddiff,
    pole_growth_exponent,
    pole_mass,
    real_part,
    sample_analytic,
    tensor_norm,
    tensor_to_quaddiff,
)
from conftest import sphere_fixture


def test_zero():
    s = icosphere(1)
    q = sample_analytic(lambda z: 0 * z, s)
    assert not np.any(q.coeffs)
    assert np.array_equal(QuadDiff.zero(s.mesh, s.metric).coeffs, q.coeffs)


def test_constant_on_torus_chart():
    s = flat_torus(6)
    c = 0.7 - 0.2j
    q = sample_analytic(lambda z: c + 0 * z, s)
    lay = FaceGeometry.build(s.mesh, s.metric).layout
    a = conformal_part(lay, s.chart.coords)
    assert np.allclose(q.coeffs / a**2, c, rtol=0, atol=1e-14)
    assert np.allclose(np.abs(q.coeffs), abs(c), rtol=0, atol=1e-14)


def test_simple_pole_growth():
    s = cone_sphere(3, n_cones=3)
    v = int(s.mesh.marked[0])
    p = s.marked_coordinates()[v]
    q = sample_analytic(lambda z: 1 / (z - p), s, poles={v: 1})
    assert pole_growth_exponent(q, s.mesh, v) == pytest.approx(-1.0, abs=0.2)
    check_pole_orders(q, s.mesh)
    undeclared = QuadDiff(q.coeffs, q.frame_lengths, {})
    with pytest.raises(PoleOrderError):
        check_pole_orders(undeclared, s.mesh)
    assert np.isfinite(pole_mass(q, s.mesh, v))


def test_double_pole_rejected():
    with pytest.raises(PoleOrderError):
        QuadDiff(np.zeros(4, dtype=complex), np.ones(6), {0: 2})


def test_real_part_examples():
    L = np.ones(3)
    h = real_part(QuadDiff(np.array([1.0 + 0j]), L))
    assert np.array_equal(h.mats[0], [[1, 0], [0, -1]])
    h = real_part(QuadDiff(np.array([1j]), L))
    assert np.array_equal(h.mats[0], [[0, -1], [-1, 0]])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_real_part_trace_free_and_invertible(cs):
    q = QuadDiff(np.array(cs, dtype=complex), np.ones(3))
    h = real_part(q)
    assert np.all(h.trace() == 0)
    assert np.array_equal(tensor_to_quaddiff(h).coeffs, q.coeffs)


def test_det_h(rng):
    s = flat_torus(4)
    f = rng.standard_normal(s.mesh.n_faces) + 1j * rng.standard_normal(s.mesh.n_faces)
    q = QuadDiff(f, s.metric.lengths(s.mesh))
    d = det_h(s.mesh, s.metric, q)
    assert np.allclose(d, np.linalg.det(real_part(q).mats), rtol=0, atol=1e-12)
    assert np.allclose(d, -np.abs(f) ** 2, rtol=0, atol=1e-12)
    assert np.allclose(tensor_norm(s.mesh, s.metric, q), 2 * np.abs(f))
    two = QuadDiff(np.full(s.mesh.n_faces, 2.0 + 0j), q.frame_lengths)
    assert np.allclose(det_h(s.mesh, s.metric, two), -4.0)
    assert not np.any(det_h(s.mesh, s.metric, QuadDiff.zero(s.mesh, s.metric)))


def test_constant_is_holomorphic():
    s = flat_torus(6, cones={0: math.pi / 2})
    q = sample_analytic(lambda z: (1.2 + 0.3j) + 0 * z, s)
    assert holomorphicity_residual(q, s.mesh, s.metric) < 1e-12
    assert divergence_residual(s.mesh, s.metric, real_part(q)) < 1e-12


def test_non_holomorphic_detected():
    # periodic and real: not holomorphic
    s = flat_torus(8)
    q = sample_analytic(lambda z: np.cos(2 * np.pi * z.real) + 0j, s)
    hol = holomorphicity_residual(q, s.mesh, s.metric)
    div = divergence_residual(s.mesh, s.metric, real_part(q))
    assert hol > 0.1
    assert div > 0.05
    assert div == pytest.approx(2 * hol, rel=1e-12)


def test_holomorphic_refinement_sweep():
    res = []
    for lev in (2, 3, 4):
        s, q = sphere_fixture(lev, 1.0)
        res.append(holomorphicity_residual(q, s.mesh, s.metric, exclude=0.3))
    assert res[0] > res[1] > res[2]


def test_frame_change_is_a_squared_rotation():
    s = icosphere(1)
    q = sample_analytic(lambda z: 1 + z, s)
    u = np.linspace(-0.1, 0.1, s.mesh.n_vertices)
    q2 = q.in_frames(s.mesh, s.metric.with_u(u))
    # |f| scales like exp(-u) under a conformal change, up to the change of face shape
    assert np.allclose(np.abs(q2.coeffs), np.abs(q.coeffs), rtol=0.2)


def test_file_round_trip(tmp_path):
    s, q = sphere_fixture(1)
    q2 = parse_quaddiff(format_quaddiff(q), s.mesh, s.metric)
    assert np.array_equal(q.coeffs, q2.coeffs)
    assert q.poles == q2.poles
    with pytest.raises(ValueError):
        parse_quaddiff("q 0 1 0\n", s.mesh, s.metric)
