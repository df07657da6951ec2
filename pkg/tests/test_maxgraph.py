import math

import numpy as np
import pytest

from adscone.maxgraph import (
    GraphProblem,
    PolarGrid,
    SpacelikeError,
    format_solution,
    gradient_decay_profile,
    imbalance,
    induced_cone_angle,
    max_principle_gap,
    parse_boundary,
    solve_maximal_graph,
)

FOURIER = "fourier:0,0,0.1,0"


def solve(theta=math.pi / 2, radius=1.0, spec="const:0", **kw):
    return solve_maximal_graph(GraphProblem(theta, radius, parse_boundary(spec), **kw))


def test_grid_grading_and_area():
    g = PolarGrid.graded(1.0, 1.0, n_rho=10, ratio=0.8)
    w = np.diff(g.faces)
    assert g.faces[0] == 0 and np.isclose(g.faces[-1], 1.0)
    assert np.allclose(w[:-1] / w[1:], 0.8)
    assert np.isclose(g.cell_areas().sum(), 1.0 * (math.cosh(1.0) - 1.0))
    with pytest.raises(ValueError):
        PolarGrid.graded(1.0, 1.0, n_phi=50)


def test_zero_data_gives_totally_geodesic_disk():
    sol, rep = solve()
    assert rep.iterations == 0
    assert not np.any(sol.u)
    assert np.all(sol.grad_norm == 0)


def test_constant_data_max_principle():
    sol, _ = solve(spec="const:0.3")
    assert max_principle_gap(sol) <= 0
    assert sol.u.min() > 0
    assert sol.grad_norm.max() < 1


@pytest.mark.parametrize("theta", [0.5, math.pi / 2, 2.5])
def test_cone_angle_recovered_zero_data(theta):
    sol, _ = solve(theta=theta)
    assert abs(induced_cone_angle(sol) - theta) / theta < 0.01


@pytest.mark.parametrize("theta", [1.5, 2.0, 2.5])
def test_cone_angle_recovered_perturbed(theta):
    sol, _ = solve(theta=theta, spec=FOURIER)
    assert abs(induced_cone_angle(sol) - theta) / theta < 0.02


def test_gradient_decays_toward_apex():
    inner = []
    for n in (24, 32, 40):
        sol, _ = solve(spec="const:0.3", n_rho=n)
        prof, _ = gradient_decay_profile(sol)
        assert prof[0, 1] < prof[n // 2, 1]
        inner.append(prof[0, 1])
    assert inner[0] > inner[1] > inner[2]


def test_fourier_regression_pin():
    sol, rep = solve(spec=FOURIER)
    assert rep.iterations <= 5
    assert sol.residual <= 1e-10
    assert abs(sol.u[-1, 0] - 0.04466501261625112) < 1e-12
    assert abs(sol.u[0, 0]) < 1e-12
    assert imbalance(sol.grid, sol.u, sol.problem.boundary_values()) == sol.residual


def test_spacelike_checks():
    with pytest.raises(SpacelikeError):
        solve(radius=0.5, spec=FOURIER)
    with pytest.raises(SpacelikeError):
        solve(spec="const:1.6")
    with pytest.raises(ValueError):
        GraphProblem(3.5, 1.0, parse_boundary("const:0"))


def test_parse_boundary():
    f = parse_boundary("fourier:1,0,0,2")
    phi = np.array([0.0, math.pi / 4])
    assert np.allclose(f(phi), np.cos(phi) + 2 * np.sin(2 * phi))
    assert np.all(parse_boundary("const:0.2")(phi) == 0.2)
    for bad in ("fourier:1,2,3", "spline:1", "const:x"):
        with pytest.raises(ValueError):
            parse_boundary(bad)


def test_solution_csv():
    sol, _ = solve(n_rho=6, n_phi=12)
    lines = format_solution(sol).splitlines()
    assert lines[0] == "rho,phi,u,gradNorm"
    assert len(lines) == 1 + 6 * 12
