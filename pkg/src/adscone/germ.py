"""Maximal-surface germs: the metric ``g0`` solving the modified Gauss equation.

Given a conformal class (a reference metric ``g_ref``) and a quadratic
differential ``q``, look for ``g0 = exp(2u) g_ref`` with

    K_{g0} = -1 - det_{g0}(h),   h = Re(q).

Reduction to one scalar equation.  For ``g0 = exp(2u) g_ref``,

    K_{g0} = exp(-2u) (K_ref - Lap_ref u).

``h`` is a fixed symmetric 2-tensor, and raising both indices with ``g0``
instead of ``g_ref`` divides its determinant by ``exp(4u)``::

    det_{g0} h = exp(-4u) det_ref h = -exp(-4u) |f_ref|^2,

where ``f_ref`` is the coefficient of ``q`` in a ``g_ref``-orthonormal frame
(``|q|_ref = 2|f_ref|`` is the tensor norm).  Substituting and multiplying by
``exp(2u)``::

    Lap_ref u = K_ref + exp(2u) - |f_ref|^2 exp(-2u)
              = K_ref + exp(2u) - (|q|_ref^2 / 4) exp(-2u).

The right-hand side is strictly increasing in ``u``, which gives uniqueness.
The discrete solve (see :mod:`adscone.liouville`) imposes the same balance on
the realized vertex-scaled metric: integrated curvature ``K_i A_i(u)`` with
``K_i = -1 + c_i exp(-4 u_i)``, ``c_i`` the area-weighted vertex average of
``|f_ref|^2`` over the incident faces.  ``c_i`` is frozen during the solve;
only the ``exp(-4u)`` factor moves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .liouville import InadmissibleError, SolverReport, solve_conformal
from .mesh import ConeMesh, DiscreteMetric, FaceGeometry, discrete_curvature, troyanov_admissible
from .quaddiff import QuadDiff, SymmetricTwoTensor, divergence_residual, real_part


@dataclass(frozen=True, eq=False)
class MaxGerm:
    mesh: ConeMesh
    reference: DiscreteMetric
    g0: DiscreteMetric
    h: SymmetricTwoTensor  # in g0 frames
    source_q: QuadDiff  # in reference frames

    @property
    def q0(self) -> QuadDiff:
        """``q`` in the frames of ``g0``."""
        return self.source_q.in_frames(self.mesh, self.g0)


def vertex_qsq(mesh: ConeMesh, ref: DiscreteMetric, q: QuadDiff) -> np.ndarray:
    """Area-weighted vertex average of ``|f_ref|^2``, i.e. ``|q|_ref^2 / 4``."""
    g = FaceGeometry.build(mesh, ref)
    f = q.coefficients_in(mesh, ref)
    w = np.repeat(g.areas / 3.0, 3)
    num = np.bincount(mesh.faces.ravel(), weights=w * np.repeat(np.abs(f) ** 2, 3), minlength=mesh.n_vertices)
    den = np.bincount(mesh.faces.ravel(), weights=w, minlength=mesh.n_vertices)
    return num / den


def check_germ_angles(mesh: ConeMesh) -> None:
    for v, t in mesh.cones.items():
        if not 0.0 < t < math.pi:
            raise InadmissibleError(f"cone angle {t:.6g} at vertex {v} is outside (0, pi)")


def solve_modified_gauss(
    mesh: ConeMesh,
    reference: DiscreteMetric,
    q: QuadDiff,
    tol: float = 1e-10,
    max_iter: int = 100,
    u0: np.ndarray | None = None,
) -> tuple[MaxGerm, SolverReport]:
    """Newton solve of the modified Gauss equation in the class of ``reference``.

    The cone-angle admissibility inequality is only required when ``q = 0``;
    a nonzero ``q`` makes the nonlinearity onto and the equation solvable on
    its own (e.g. the flat torus with constant ``q``).
    """
    check_germ_angles(mesh)
    q_ref = q.in_frames(mesh, reference)
    if not np.any(q_ref.coeffs) and not troyanov_admissible(mesh):
        raise InadmissibleError("cone angles are not admissible for a hyperbolic metric")
    csq = vertex_qsq(mesh, reference, q_ref)
    u, rep = solve_conformal(mesh, reference, csq, u0, tol, max_iter)
    g0 = reference.with_u(u)
    h = real_part(q_ref.in_frames(mesh, g0))
    return MaxGerm(mesh, reference, g0, h, q_ref), rep


def gauss_field(germ: MaxGerm) -> np.ndarray:
    """``K_i + 1 + det_i`` per vertex with ``det_i = -c_i exp(-4 u_i)``."""
    mesh = germ.mesh
    g = FaceGeometry.build(mesh, germ.g0)
    area = np.bincount(mesh.faces.ravel(), weights=np.repeat(g.areas / 3.0, 3), minlength=mesh.n_vertices)
    K = discrete_curvature(mesh, germ.g0) / area
    det = -vertex_qsq(mesh, germ.reference, germ.source_q) * np.exp(-4.0 * germ.g0.u)
    return K + 1.0 + det


@dataclass(frozen=True)
class GermResiduals:
    trace: float
    divergence: float
    gauss: float


def germ_residuals(germ: MaxGerm) -> GermResiduals:
    mesh = germ.mesh
    unmarked = ~mesh.is_marked
    return GermResiduals(
        trace=float(np.max(np.abs(germ.h.trace()))),
        divergence=divergence_residual(mesh, germ.g0, germ.h),
        gauss=float(np.max(np.abs(gauss_field(germ)[unmarked]))),
    )


def face_det(germ: MaxGerm) -> np.ndarray:
    """``det_{g0}(h)`` per face."""
    return np.linalg.det(germ.h.mats)


def particle_degeneracy(germ: MaxGerm) -> float:
    """Mean ``|det_{g0}(h)|`` over faces touching a marked vertex."""
    mesh = germ.mesh
    near = np.isin(mesh.faces, mesh.marked).any(axis=1)
    if not near.any():
        return 0.0
    return float(np.mean(np.abs(face_det(germ)[near])))
