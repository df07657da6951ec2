import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adscone.fixtures import cone_sphere
from adscone.germ import solve_modified_gauss
from adscone.mess import (
    E,
    J,
    CurvatureBoundError,
    MorphismError,
    algebra_residuals,
    check_morphism,
    codazzi_residual,
    curvature_weak_error,
    field_from_matrices,
    format_pair,
    identity_checks,
    mess_metrics,
    mess_transform,
    min_lagrangian_morphism,
    pair_metrics,
    parse_pair,
    reconstruct_from_b,
    shape_operator,
)
from adscone.quaddiff import QuadDiff
from conftest import forward


def random_B(rng, n, kmax=0.95):
    k = rng.uniform(0, kmax, n)
    a = rng.uniform(0, 2 * np.pi, n)
    B = np.empty((n, 2, 2))
    B[:, 0, 0] = k * np.cos(a)
    B[:, 1, 1] = -k * np.cos(a)
    B[:, 0, 1] = B[:, 1, 0] = k * np.sin(a)
    return B


def test_J():
    assert np.array_equal(J @ J, -E)
    assert np.array_equal(J.T @ J, E)
    assert np.linalg.det(J) == 1


def test_single_face_k_half():
    B = np.array([[0.5, 0.0], [0.0, -0.5]])
    f = min_lagrangian_morphism(field_from_matrices(B))
    assert np.allclose(f.JB[0], [[0, 0.5], [0.5, 0]], rtol=0, atol=0)
    pair = mess_metrics(f)
    assert np.allclose(pair.g1[0], [[1.25, 1.0], [1.0, 1.25]], rtol=0, atol=1e-15)
    k = 0.5
    want = np.array([[1 + k * k, -2 * k], [-2 * k, 1 + k * k]]) / (1 - k * k)
    assert np.allclose(f.b[0], want, rtol=0, atol=1e-15)
    assert np.allclose(np.sort(np.linalg.eigvals(f.b[0]).real), [1 / 3, 3], rtol=0, atol=1e-14)
    I, B2 = reconstruct_from_b(pair.g1, f.b)
    assert np.allclose(I[0], E, rtol=0, atol=1e-15)
    assert np.allclose(B2[0], B, rtol=0, atol=1e-15)


def test_fuchsian_frame():
    f = min_lagrangian_morphism(field_from_matrices(np.zeros((3, 2, 2))))
    pair = mess_metrics(f)
    assert np.array_equal(pair.g1, pair.g2)
    assert np.array_equal(pair.g1, np.broadcast_to(E, (3, 2, 2)))
    assert np.array_equal(f.b, np.broadcast_to(E, (3, 2, 2)))
    I, B = reconstruct_from_b(pair.g1, f.b)
    assert np.array_equal(I, pair.g1)
    assert not np.any(B)


def test_algebra_suite_random_frames():
    rng = np.random.default_rng(7)
    B = random_B(rng, 100)
    f = min_lagrangian_morphism(field_from_matrices(B))
    res = algebra_residuals(f, mess_metrics(f))
    for name, v in res.items():
        tol = 1e-10 if name == "reconstruct" else 1e-12
        assert v <= tol, name
    assert np.allclose(np.linalg.det(f.JB), -f.k**2, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 0.95), st.floats(0.0, 2 * np.pi))
def test_b_positive_and_det_one(k, a):
    B = np.array([[k * np.cos(a), k * np.sin(a)], [k * np.sin(a), -k * np.cos(a)]])
    f = min_lagrangian_morphism(field_from_matrices(B))
    pair = mess_metrics(f)
    check_morphism(f.b, pair.g1, tol=1e-12)
    assert np.all(np.linalg.eigvals(f.b).real > 0)


def test_bound_and_symmetry_errors():
    with pytest.raises(CurvatureBoundError):
        field_from_matrices(np.diag([1.0, -1.0]))
    with pytest.raises(MorphismError):
        field_from_matrices(np.array([[0.0, 0.1], [0.2, 0.0]]))
    with pytest.raises(MorphismError):
        check_morphism(np.array([[[2.0, 0.0], [0.0, 1.0]]]), np.array([E]))


def test_fuchsian_germ_identities():
    s = cone_sphere(2, n_cones=3)
    germ, _ = solve_modified_gauss(s.mesh, s.metric, QuadDiff.zero(s.mesh, s.metric))
    field, pair = mess_transform(germ)
    assert not np.any(shape_operator(germ).B)
    res = identity_checks(germ, field, pair)
    assert res["codazzi"] == 0.0
    for name, v in res.items():
        assert v <= (1e-8 if name.startswith("curvature") else 1e-12), name
    m1, m2 = pair_metrics(s.mesh, pair)
    assert np.abs(m1.lengths(s.mesh) - germ.g0.lengths(s.mesh)).max() < 1e-14


def test_forward_germ_algebra_and_swap():
    s, germ, field, pair, m1, m2 = forward("torus", 0)
    res = identity_checks(germ, field, pair)
    assert max(res[k] for k in ("det_b", "eig_b", "g2_pullback", "sum_identity", "self_adjoint")) <= 1e-12
    assert res["reconstruct"] <= 1e-10
    sw = pair.swapped()
    assert np.array_equal(sw.g1, pair.g2)
    I, B = reconstruct_from_b(pair.g1, field.b)
    assert np.abs(B - field.B).max() < 1e-10


@pytest.mark.parametrize("kind,levels", [("torus", (0, 1, 2)), ("sphere", (2, 3, 4))])
def test_hyperbolicity_and_codazzi_improve(kind, levels):
    curv, cod = [], []
    for lev in levels:
        s, germ, field, pair, m1, m2 = forward(kind, lev)
        curv.append(max(curvature_weak_error(s.mesh, m1), curvature_weak_error(s.mesh, m2)))
        cod.append(codazzi_residual(s.mesh, field))
    assert curv[0] > curv[1] > curv[2]
    assert cod[0] > cod[1] > cod[2]


def test_pair_file_round_trip():
    s, germ, field, pair, m1, m2 = forward("torus", 0)
    b, p2 = parse_pair(format_pair(field, pair), s.mesh.n_faces, pair.frame_lengths)
    assert np.array_equal(b, field.b)
    assert np.array_equal(p2.g1, pair.g1) and np.array_equal(p2.g2, pair.g2)
    with pytest.raises(ValueError):
        parse_pair("g1 0 1 0 0 1\n", s.mesh.n_faces, pair.frame_lengths)
