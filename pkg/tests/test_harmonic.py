import numpy as np
import pytest

from adscone.fixtures import cone_sphere, flat_torus
from adscone.germ import solve_modified_gauss
from adscone.harmonic import (
    FaceFlipError,
    VertexMap,
    class_distance,
    displaced_metric,
    find_middle,
    format_map,
    harmonic_map,
    hopf_differential,
    middle_comparison,
    middle_residuals,
    parse_map,
    relative_error,
    smooth_displacement,
    tension,
)
from adscone.mesh import DiscreteMetric
from adscone.quaddiff import QuadDiff, sample_analytic
from conftest import forward


def stretched(s, sx, sy):
    """Lengths of the flat torus after the linear map (x, y) -> (sx x, sy y)."""
    c = s.chart.coords
    c = sx * c.real + 1j * sy * c.imag
    fl = np.abs(c[:, [2, 0, 1]] - c[:, [1, 2, 0]])
    out = np.zeros(s.mesh.n_edges)
    out[s.mesh.face_edges.ravel()] = fl.ravel()
    return DiscreteMetric.from_lengths(s.mesh, out)


def test_identity_map_for_equal_metrics():
    s = flat_torus(6)
    m, rep = harmonic_map(s.mesh, s.metric, s.metric)
    assert rep.iterations == 0 and np.all(m.delta == 0)
    assert np.abs(hopf_differential(s.mesh, s.metric, m).coeffs).max() < 1e-14


def test_linear_stretch_hopf_constant():
    s = flat_torus(6)
    tgt = stretched(s, 2.0, 0.5)
    m, rep = harmonic_map(s.mesh, s.metric, tgt)
    assert np.abs(m.delta).max() < 1e-12
    assert np.abs(tension(s.mesh, s.metric, m)).max() < 1e-10
    phi = hopf_differential(s.mesh, s.metric, m)
    want = sample_analytic(lambda z: np.full_like(z, 15 / 16), s)
    assert relative_error(s.mesh, phi, want) < 1e-12


def test_harmonic_map_undoes_remarking():
    s = flat_torus(8, cones={0: np.pi / 2})
    g = stretched(s, 1.3, 1 / 1.3)
    moved = displaced_metric(s.mesh, g, smooth_displacement(s.mesh, g, 0.2, seed=3))
    m0, _ = harmonic_map(s.mesh, s.metric, g)
    m1, rep = harmonic_map(s.mesh, s.metric, moved)
    assert rep.converged
    p0 = hopf_differential(s.mesh, s.metric, m0)
    p1 = hopf_differential(s.mesh, s.metric, m1)
    assert relative_error(s.mesh, p1, p0) < 0.05


def test_forward_pair_middle_residuals_converge():
    r = []
    for lev in (1, 2):
        s, germ, field, pair, m1, m2 = forward("torus", lev)
        _, _, p1, p2, ratio = middle_residuals(s.mesh, germ.g0, m1, m2)
        r.append(ratio)
        assert relative_error(s.mesh, p1.scaled(1j), germ.q0) < 0.05
    assert r[0] < 0.05
    assert r[1] < 0.6 * r[0]


def test_find_middle_on_forward_pair():
    s, germ, field, pair, m1, m2 = forward("torus", 1)
    res = find_middle(s.mesh, m1, m2)
    assert res.converged and res.outer == 1
    cerr, qerr = middle_comparison(s.mesh, res, germ.g0, germ.q0)
    assert cerr < 0.05 and qerr < 0.05
    assert class_distance(s.mesh, res.conformal, germ.g0) < 0.05


def test_swap_negates_q():
    s, germ, field, pair, m1, m2 = forward("torus", 1)
    a = find_middle(s.mesh, m1, m2)
    b = find_middle(s.mesh, m2, m1)
    assert np.array_equal(a.conformal.lengths(s.mesh), b.conformal.lengths(s.mesh))
    qa = a.q.coeffs
    qb = b.q.coefficients_in(s.mesh, a.conformal)
    assert np.abs(qa + qb).max() < 0.05 * np.abs(qa).max()


def test_fuchsian_middle_is_zero():
    s = cone_sphere(2, n_cones=3)
    germ, _ = solve_modified_gauss(s.mesh, s.metric, QuadDiff.zero(s.mesh, s.metric))
    res = find_middle(s.mesh, germ.g0, germ.g0)
    assert res.converged and res.outer == 1
    assert np.abs(res.q.coeffs).max() < 1e-12
    cerr, qerr = middle_comparison(s.mesh, res, germ.g0, germ.q0)
    assert cerr < 1e-12 and qerr < 1e-12


def test_remarked_roundtrip_within_tolerance():
    s, germ, field, pair, m1, m2 = forward("torus", 1)
    m2r = displaced_metric(s.mesh, m2, smooth_displacement(s.mesh, m2, 0.3, seed=0))
    res = find_middle(s.mesh, m1, m2r)
    cerr, qerr = middle_comparison(s.mesh, res, germ.g0, germ.q0)
    assert cerr < 0.05 and qerr < 0.05


def test_smooth_displacement_pins_marked():
    s, *_ = forward("torus", 0)
    d = smooth_displacement(s.mesh, s.metric, 0.3, seed=1)
    assert np.all(d[s.mesh.is_marked] == 0)
    assert np.isclose(np.abs(d).max(), 0.3 * s.metric.lengths(s.mesh).mean())
    assert np.array_equal(d, smooth_displacement(s.mesh, s.metric, 0.3, seed=1))


def test_face_flip_rejected():
    s = flat_torus(6)
    delta = np.zeros(s.mesh.n_vertices, dtype=complex)
    delta[7] = 0.5  # farther than a neighbour: folds its star
    with pytest.raises(FaceFlipError):
        harmonic_map(s.mesh, s.metric, s.metric, init=VertexMap(s.mesh, s.metric, delta))


def test_map_file_round_trip():
    s, germ, field, pair, m1, m2 = forward("torus", 0)
    m, _ = harmonic_map(s.mesh, germ.g0, m1)
    back = parse_map(format_map(m), s.mesh, m1)
    assert np.array_equal(back.delta, m.delta)
    with pytest.raises(ValueError):
        parse_map("m 1 2 0 0\n", s.mesh, m1)
    with pytest.raises(ValueError):
        parse_map("m 0 0 0.1 0\n", s.mesh, m1)
