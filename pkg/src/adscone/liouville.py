"""Hyperbolic cone metrics in a fixed discrete conformal class.

The unknown is the per-vertex conformal factor ``u`` of a vertex-scaled metric
``l_ij = exp((u_i + u_j)/2) * ref_ij``.  At every vertex the realized angle
sum ``Theta_i(u)`` must make the integrated curvature equal ``K_i * A_i(u)``::

    F_i(u) = target_i - Theta_i(u) - K_i(u) * A_i(u) = 0,
    K_i(u) = -1 + c_i * exp(-4 u_i),

where ``target_i`` is ``2*pi`` or the cone angle and ``A_i`` the barycentric
area.  ``c = 0`` is the uniformization problem; ``c_i > 0`` adds the
``-det(h)`` term of the modified Gauss equation.  The angle-sum Jacobian is the
cotangent Laplacian of the current metric, so Newton steps cost one sparse
solve each.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import (
    ConeMesh,
    DiscreteMetric,
    FaceGeometry,
    TriangleInequalityError,
    TWO_PI,
    cone_gauss_bonnet_total,
    discrete_curvature,
    face_lengths,
    laplacian_from_weights,
    cotan_weights_from_angles,
    troyanov_admissible,
    vertex_areas,
)


class InadmissibleError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, msg: str, report: "SolverReport | None" = None):
        super().__init__(msg)
        self.report = report


@dataclass
class SolverReport:
    iterations: int = 0
    residual: float = math.inf
    wall_time: float = 0.0
    converged: bool = False
    history: list[float] = field(default_factory=list)
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residual": self.residual,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "note": self.note,
        }


@dataclass(frozen=True, eq=False)
class UniformizationProblem:
    mesh: ConeMesh
    reference: DiscreteMetric
    target_curvature: float = -1.0

    def __post_init__(self):
        if self.target_curvature != -1.0:
            raise ValueError("only hyperbolic targets (curvature -1) are supported")

    @property
    def cone_angles(self) -> dict[int, float]:
        return dict(self.mesh.cones)

    def admissibility(self) -> float:
        m = self.mesh
        return m.euler_characteristic + sum(t / TWO_PI - 1.0 for t in m.cones.values())


def _area_jacobian(mesh: ConeMesh, g: FaceGeometry) -> sp.csr_matrix:
    """d A_i / d u_j for barycentric vertex areas."""
    l2cot = g.lengths ** 2 * g.cot
    # d(area_f)/d(u at corner k): edges k+1 and k+2 both touch corner k
    da = 0.25 * (np.roll(l2cot, -1, axis=1) + np.roll(l2cot, -2, axis=1))
    f = mesh.faces
    rows = np.repeat(f, 3, axis=1).ravel()
    cols = np.tile(f, (1, 3)).ravel()
    vals = np.tile(da, (1, 3)).ravel() / 3.0
    n = mesh.n_vertices
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _residual_parts(mesh: ConeMesh, ref: DiscreteMetric, u: np.ndarray, csq: np.ndarray):
    g = FaceGeometry.build(mesh, ref.with_u(u))
    theta = np.bincount(mesh.faces.ravel(), weights=g.angles.ravel(), minlength=mesh.n_vertices)
    area = np.bincount(mesh.faces.ravel(), weights=np.repeat(g.areas / 3.0, 3), minlength=mesh.n_vertices)
    damp = csq * np.exp(-4.0 * u)
    F = mesh.target_angles - theta + (1.0 - damp) * area
    return F, g, area, damp


def conformal_residual(mesh: ConeMesh, ref: DiscreteMetric, u, csq=None) -> np.ndarray:
    csq = np.zeros(mesh.n_vertices) if csq is None else np.asarray(csq, dtype=float)
    return _residual_parts(mesh, ref, np.asarray(u, dtype=float), csq)[0]


def solve_conformal(
    mesh: ConeMesh,
    ref: DiscreteMetric,
    csq: np.ndarray | None = None,
    u0: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> tuple[np.ndarray, SolverReport]:
    """Damped Newton on ``F(u) = 0`` with an Armijo test on ``|F|^2 / 2``.

    Convergence is measured pointwise: ``max |F_i| / A_i`` is a curvature error.
    """
    t0 = time.perf_counter()
    n = mesh.n_vertices
    csq = np.zeros(n) if csq is None else np.asarray(csq, dtype=float)
    u = np.zeros(n) if u0 is None else np.array(u0, dtype=float)
    rep = SolverReport()
    F, g, area, damp = _residual_parts(mesh, ref, u, csq)
    for it in range(max_iter + 1):
        res = float(np.max(np.abs(F) / area))
        rep.history.append(res)
        rep.iterations = it
        if res <= tol:
            rep.converged = True
            break
        if it == max_iter:
            break
        L = laplacian_from_weights(mesh, cotan_weights_from_angles(mesh, g.angles))
        J = -L + sp.diags(1.0 - damp) @ _area_jacobian(mesh, g) + sp.diags(4.0 * damp * area)
        step = spla.spsolve(J.tocsc(), -F)
        merit = 0.5 * float(F @ F)
        t = 1.0
        while True:
            try:
                Fn, gn, an, dn = _residual_parts(mesh, ref, u + t * step, csq)
                if 0.5 * float(Fn @ Fn) <= (1.0 - 2e-4 * t) * merit:
                    break
            except TriangleInequalityError:
                pass
            t *= 0.5
            if t < 1e-12:
                rep.residual = res
                rep.wall_time = time.perf_counter() - t0
                raise NonConvergenceError("line search failed; the metric left the triangle inequality", rep)
        u = u + t * step
        F, g, area, damp = Fn, gn, an, dn
    rep.residual = rep.history[-1]
    rep.wall_time = time.perf_counter() - t0
    if rep.iterations > 30 and rep.converged:
        rep.note = "slow convergence"
    if not rep.converged:
        raise NonConvergenceError(f"no convergence in {max_iter} Newton steps (residual {rep.residual:.3e})", rep)
    return u, rep


def uniformize(
    problem: UniformizationProblem,
    tol: float = 1e-10,
    max_iter: int = 100,
    u0: np.ndarray | None = None,
) -> tuple[DiscreteMetric, SolverReport]:
    """Hyperbolic cone metric in the conformal class of ``problem.reference``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not troyanov_admissible(problem.mesh):
        raise InadmissibleError(
            f"cone angles are not admissible: chi + sum(theta/2pi - 1) = {problem.admissibility():.6g} >= 0"
        )
    u, rep = solve_conformal(problem.mesh, problem.reference, None, u0, tol, max_iter)
    return problem.reference.with_u(u), rep


def curvature_residual(mesh: ConeMesh, metric: DiscreteMetric, target: np.ndarray | float = -1.0) -> float:
    """Worst mismatch ``|defect_i - K_i * A_i|`` over unmarked plus over marked vertices."""
    d = discrete_curvature(mesh, metric)
    a = vertex_areas(mesh, metric)
    r = np.abs(d - np.asarray(target) * a)
    mk = mesh.is_marked
    out = float(r[~mk].max()) if (~mk).any() else 0.0
    if mk.any():
        out += float(r[mk].max())
    return out


def pointwise_curvature(mesh: ConeMesh, metric: DiscreteMetric) -> np.ndarray:
    return discrete_curvature(mesh, metric) / vertex_areas(mesh, metric)


def hyperbolic_area(mesh: ConeMesh, metric: DiscreteMetric) -> float:
    """Sum of the areas of hyperbolic triangles with the realized side lengths."""
    fl = face_lengths(mesh, metric)
    ch, sh = np.cosh(fl), np.sinh(fl)
    ang = []
    for k in range(3):
        a, b, c = k, (k + 1) % 3, (k + 2) % 3
        cosv = (ch[:, b] * ch[:, c] - ch[:, a]) / (sh[:, b] * sh[:, c])
        ang.append(np.arccos(np.clip(cosv, -1.0, 1.0)))
    return float(np.sum(np.pi - ang[0] - ang[1] - ang[2]))


def euclidean_area(mesh: ConeMesh, metric: DiscreteMetric) -> float:
    return float(vertex_areas(mesh, metric).sum())


def expected_area(mesh: ConeMesh) -> float:
    """Gauss-Bonnet area of a hyperbolic cone metric: ``-2*pi*chi - sum(theta_i - 2*pi)``."""
    return -cone_gauss_bonnet_total(mesh)
