import math

import numpy as np
import pytest

from adscone.fixtures import cone_sphere, flat_torus, refine, refine_times
from adscone.liouville import (
    InadmissibleError,
    NonConvergenceError,
    UniformizationProblem,
    curvature_residual,
    euclidean_area,
    expected_area,
    hyperbolic_area,
    pointwise_curvature,
    uniformize,
)
from adscone.mesh import gauss_bonnet_residual


def _area_error(surface):
    c, rep = uniformize(UniformizationProblem(surface.mesh, surface.metric))
    assert rep.converged
    exp = expected_area(surface.mesh)
    return abs(hyperbolic_area(surface.mesh, c) - exp) / exp, c


def test_expected_areas():
    assert expected_area(cone_sphere(0, n_cones=3).mesh) == pytest.approx(math.pi / 2)
    assert expected_area(flat_torus(4, cones={0: math.pi / 2}).mesh) == pytest.approx(3 * math.pi / 2)


def test_sphere_area_and_refinement():
    s = cone_sphere(2, n_cones=3)
    e0, c = _area_error(s)
    e1, _ = _area_error(refine(s))
    assert e0 < 0.02
    assert e1 < e0


def test_torus_area_and_refinement():
    s = refine_times(flat_torus(8, cones={0: math.pi / 2}), 1)
    e0, _ = _area_error(s)
    e1, _ = _area_error(refine(s))
    assert e0 < 0.02
    assert e1 < e0


def test_solution_satisfies_equation():
    s = cone_sphere(2, n_cones=3)
    c, rep = uniformize(UniformizationProblem(s.mesh, s.metric), tol=1e-10)
    assert curvature_residual(s.mesh, c) <= 1e-8
    assert abs(gauss_bonnet_residual(s.mesh, c)) < 1e-10
    # Euclidean area of the realized triangles equals the Gauss-Bonnet value
    assert euclidean_area(s.mesh, c) == pytest.approx(expected_area(s.mesh), rel=1e-8)
    K = pointwise_curvature(s.mesh, c)
    assert np.abs(K[~s.mesh.is_marked] + 1).max() < 1e-8


def test_reference_metric_has_large_residual():
    s = cone_sphere(2, n_cones=3)
    assert curvature_residual(s.mesh, s.metric) > 0.1


def test_inadmissible():
    s = cone_sphere(1, theta=7 * math.pi / 4, n_cones=3)
    with pytest.raises(InadmissibleError):
        uniformize(UniformizationProblem(s.mesh, s.metric))


def test_bad_arguments():
    s = cone_sphere(0, n_cones=3)
    with pytest.raises(ValueError):
        uniformize(UniformizationProblem(s.mesh, s.metric), tol=0.0)
    with pytest.raises(ValueError):
        UniformizationProblem(s.mesh, s.metric, target_curvature=0.0)


def test_non_convergence_reports():
    s = cone_sphere(2, n_cones=3)
    with pytest.raises(NonConvergenceError) as ei:
        uniformize(UniformizationProblem(s.mesh, s.metric), max_iter=1)
    assert ei.value.report is not None
    assert not ei.value.report.converged


def test_independent_of_initial_guess():
    s = cone_sphere(1, n_cones=3)
    p = UniformizationProblem(s.mesh, s.metric)
    a, _ = uniformize(p)
    rng = np.random.default_rng(3)
    b, _ = uniformize(p, u0=0.3 * rng.standard_normal(s.mesh.n_vertices))
    assert np.abs(a.u - b.u).max() < 1e-8
