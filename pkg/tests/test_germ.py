import math

import numpy as np
import pytest

from adscone.fixtures import cone_sphere, flat_torus, refine_times
from adscone.germ import (
    MaxGerm,
    face_det,
    gauss_field,
    germ_residuals,
    particle_degeneracy,
    solve_modified_gauss,
    vertex_qsq,
)
from adscone.liouville import InadmissibleError, UniformizationProblem, uniformize
from adscone.quaddiff import QuadDiff, real_part, sample_analytic
from conftest import sphere_fixture, torus_fixture


def test_fuchsian_germ_matches_uniformization():
    s = cone_sphere(2, n_cones=3)
    q = QuadDiff.zero(s.mesh, s.metric)
    germ, rep = solve_modified_gauss(s.mesh, s.metric, q)
    c, _ = uniformize(UniformizationProblem(s.mesh, s.metric))
    assert np.abs(germ.g0.u - c.u).max() < 1e-10
    assert not np.any(germ.h.mats)
    r = germ_residuals(germ)
    assert r.trace <= 1e-10 and r.divergence <= 1e-10 and r.gauss <= 1e-10


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_constant_solution_on_flat_torus(seed):
    # |q| = 2 |f| = 2: K = 0 and -1 - det h = -1 + 1 = 0
    s = flat_torus(8)
    q = sample_analytic(lambda z: 1.0 + 0 * z, s)
    rng = np.random.default_rng(seed)
    germ, rep = solve_modified_gauss(s.mesh, s.metric, q, u0=0.1 * rng.standard_normal(s.mesh.n_vertices))
    assert rep.converged
    assert np.abs(germ.g0.u).max() < 1e-10


def test_torus_without_cones_needs_q():
    s = flat_torus(6)
    with pytest.raises(InadmissibleError):
        solve_modified_gauss(s.mesh, s.metric, QuadDiff.zero(s.mesh, s.metric))


def test_cone_angle_must_be_below_pi():
    s = cone_sphere(1, theta=1.2 * math.pi, n_cones=4)
    with pytest.raises(InadmissibleError):
        solve_modified_gauss(s.mesh, s.metric, QuadDiff.zero(s.mesh, s.metric))


def test_residuals_at_solver_tolerance():
    s, q = torus_fixture(1)
    germ, _ = solve_modified_gauss(s.mesh, s.metric, q, tol=1e-10)
    r = germ_residuals(germ)
    assert r.trace == 0.0
    assert r.gauss <= 1e-8
    assert np.abs(gauss_field(germ)[~s.mesh.is_marked]).max() <= 1e-8


def test_corruption_detected():
    s, q = torus_fixture(0)
    germ, _ = solve_modified_gauss(s.mesh, s.metric, q)
    u = germ.g0.u.copy()
    v = int(np.flatnonzero(~s.mesh.is_marked)[3])
    u[v] += 0.1
    g0 = germ.g0.with_u(u)
    h = real_part(germ.source_q.in_frames(s.mesh, g0))
    bad = MaxGerm(germ.mesh, germ.reference, g0, h, germ.source_q)
    assert germ_residuals(bad).gauss > 0.01


def test_perturbation_is_second_order():
    s, base = sphere_fixture(2, 1.0)
    c, _ = uniformize(UniformizationProblem(s.mesh, s.metric))
    d = []
    for eps in (0.05, 0.025):
        germ, _ = solve_modified_gauss(s.mesh, s.metric, base.scaled(eps))
        assert germ_residuals(germ).gauss <= 1e-8
        d.append(np.abs(germ.g0.u - c.u).max())
    assert math.log2(d[0] / d[1]) == pytest.approx(2.0, abs=0.2)


def test_curvature_sign_structure():
    # K = -1 - det h = -1 + |f|^2 >= -1 at unmarked vertices
    s, q = sphere_fixture(2)
    germ, _ = solve_modified_gauss(s.mesh, s.metric, q)
    K = gauss_field(germ) - 1.0 + vertex_qsq(s.mesh, germ.reference, germ.source_q) * np.exp(-4 * germ.g0.u)
    assert np.all(K[~s.mesh.is_marked] >= -1 - 1e-8)
    assert np.all(face_det(germ) <= 1e-15)


def test_particle_degeneracy_decreases():
    vals = []
    for lev in (2, 3, 4):
        s, q = sphere_fixture(lev)
        germ, _ = solve_modified_gauss(s.mesh, s.metric, q)
        vals.append(particle_degeneracy(germ))
    assert vals[0] > vals[1] > vals[2]


def test_h_lives_in_g0_frames():
    s, q = torus_fixture(0)
    germ, _ = solve_modified_gauss(s.mesh, s.metric, q)
    assert np.array_equal(germ.h.frame_lengths, germ.g0.lengths(s.mesh))
    assert np.allclose(germ.h.mats[:, 0, 0], germ.q0.coeffs.real)
