"""From a germ ``(I, B)`` to the pair ``(g1, g2)`` and the morphism ``b``.

Everything is per face in the orthonormal frames of ``g0 = I``, so ``I`` is the
identity matrix there and a symmetric 2-tensor is its own matrix.  With
``J`` the rotation by ``+pi/2``::

    g1 = (E + JB)^T (E + JB),   g2 = (E - JB)^T (E - JB),
    b  = (E + JB)^{-1} (E - JB),   III = B^T B.

Only curvature and Codazzi statements need the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .germ import MaxGerm
from .mesh import (
    ConeMesh,
    DiscreteMetric,
    FaceGeometry,
    cotan_laplacian,
    discrete_curvature,
    face_areas,
    vertex_areas,
)
from .stars import star_frames

J = np.array([[0.0, -1.0], [1.0, 0.0]])
E = np.eye(2)


class CurvatureBoundError(ValueError):
    """Principal curvature ``k >= 1``: the germ is not space-like maximal."""


class MorphismError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MorphismField:
    B: np.ndarray  # (F, 2, 2)
    frame_lengths: np.ndarray
    b: np.ndarray | None = None

    @property
    def J(self) -> np.ndarray:
        return np.broadcast_to(J, self.B.shape)

    @property
    def JB(self) -> np.ndarray:
        return J @ self.B

    @property
    def k(self) -> np.ndarray:
        return np.sqrt(np.maximum(-np.linalg.det(self.B), 0.0))

    @property
    def III(self) -> np.ndarray:
        return np.swapaxes(self.B, 1, 2) @ self.B


@dataclass(frozen=True, eq=False)
class MetricPair:
    g1: np.ndarray  # (F, 2, 2) forms in the frames of frame_lengths
    g2: np.ndarray
    frame_lengths: np.ndarray

    def swapped(self) -> "MetricPair":
        return MetricPair(self.g2, self.g1, self.frame_lengths)


def _check_k(B: np.ndarray) -> None:
    k = np.sqrt(np.maximum(-np.linalg.det(B), 0.0))
    if k.size and k.max() >= 1.0:
        f = int(np.argmax(k))
        raise CurvatureBoundError(f"principal curvature {k[f]:.4g} >= 1 on face {f}")


def shape_operator(germ: MaxGerm) -> MorphismField:
    """``B = g0^{-1} h``; in orthonormal frames this is the matrix of ``h``."""
    B = np.array(germ.h.mats)
    _check_k(B)
    return MorphismField(B, germ.h.frame_lengths)


def field_from_matrices(B) -> MorphismField:
    """Morphism field on bare frames (no mesh), for algebra checks."""
    B = np.asarray(B, dtype=float).reshape(-1, 2, 2)
    if not np.allclose(B, np.swapaxes(B, 1, 2), atol=1e-14):
        raise MorphismError("B must be symmetric in an orthonormal frame")
    _check_k(B)
    return MorphismField(B, np.zeros(0))


def mess_metrics(field: MorphismField, germ: MaxGerm | None = None) -> MetricPair:
    _check_k(field.B)
    Ap = E + field.JB
    Am = E - field.JB
    g1 = np.swapaxes(Ap, 1, 2) @ Ap
    g2 = np.swapaxes(Am, 1, 2) @ Am
    for name, g in (("g1", g1), ("g2", g2)):
        if np.any(np.linalg.eigvalsh(g)[:, 0] <= 0):
            raise MorphismError(f"{name} is not positive definite")
    return MetricPair(g1, g2, field.frame_lengths)


def min_lagrangian_morphism(field: MorphismField) -> MorphismField:
    _check_k(field.B)
    b = np.linalg.solve(E + field.JB, E - field.JB)
    return MorphismField(field.B, field.frame_lengths, b)


def complex_structure(g: np.ndarray) -> np.ndarray:
    """Rotation by ``+pi/2`` for the metric ``g`` in oriented coordinates."""
    d = np.sqrt(np.linalg.det(g))
    out = np.empty_like(g)
    out[:, 0, 0] = -g[:, 0, 1] / d
    out[:, 0, 1] = -g[:, 1, 1] / d
    out[:, 1, 0] = g[:, 0, 0] / d
    out[:, 1, 1] = g[:, 0, 1] / d
    return out


def check_morphism(b: np.ndarray, g1: np.ndarray, tol: float = 1e-8) -> None:
    det = np.linalg.det(b)
    if np.max(np.abs(det - 1.0)) > tol:
        raise MorphismError(f"det(b) deviates from 1 by {np.max(np.abs(det - 1.0)):.3e}")
    g1b = g1 @ b
    if np.max(np.abs(g1b - np.swapaxes(g1b, 1, 2))) > tol * max(1.0, np.abs(g1b).max()):
        raise MorphismError("b is not self-adjoint for g1")
    if np.any(np.trace(b, axis1=1, axis2=2) <= 0):
        raise MorphismError("b has non-positive eigenvalues")


def reconstruct_from_b(g1: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(I, B)`` from ``g1`` and ``b``.

    ``I = g1((E+b)., (E+b).) / 4`` and ``B = -J_I (E+b)^{-1} (E-b)``, with
    ``J_I`` the complex structure of ``I``.
    """
    g1 = np.asarray(g1, dtype=float).reshape(-1, 2, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2, 2)
    check_morphism(b, g1)
    P = E + b
    I = 0.25 * np.swapaxes(P, 1, 2) @ g1 @ P
    B = -complex_structure(I) @ np.linalg.solve(P, E - b)
    return I, B


# -- discrete metrics from per-face forms ----------------------------------------


def _edge_vectors(mesh: ConeMesh, frame_lengths: np.ndarray) -> np.ndarray:
    """(F, 3, 2) edge vectors opposite each corner, in face frames."""
    lay = FaceGeometry.build(mesh, frame_lengths).layout
    v = np.roll(lay, -2, axis=1) - np.roll(lay, -1, axis=1)  # p_{k+2} - p_{k+1}
    return np.stack([v.real, v.imag], axis=-1)


def form_lengths(mesh: ConeMesh, forms: np.ndarray, frame_lengths: np.ndarray) -> np.ndarray:
    """Per-face ``(F, 3)`` lengths of each edge measured by the face's form."""
    ev = _edge_vectors(mesh, frame_lengths)
    return np.sqrt(np.einsum("fki,fij,fkj->fk", ev, forms, ev))


def metric_from_forms(mesh: ConeMesh, forms: np.ndarray, frame_lengths: np.ndarray) -> DiscreteMetric:
    """Edge lengths averaged over the two incident faces."""
    fl = form_lengths(mesh, forms, frame_lengths)
    acc = np.bincount(mesh.face_edges.ravel(), weights=fl.ravel(), minlength=mesh.n_edges)
    cnt = np.bincount(mesh.face_edges.ravel(), minlength=mesh.n_edges)
    return DiscreteMetric.from_lengths(mesh, acc / cnt)


def pair_metrics(mesh: ConeMesh, pair: MetricPair) -> tuple[DiscreteMetric, DiscreteMetric]:
    return (
        metric_from_forms(mesh, pair.g1, pair.frame_lengths),
        metric_from_forms(mesh, pair.g2, pair.frame_lengths),
    )


def curvature_error(mesh: ConeMesh, metric: DiscreteMetric) -> float:
    """Max over unmarked vertices of ``|defect / area + 1|``.

    Pointwise curvature of lengths extracted from per-face forms does not
    converge (the extraction is only consistent to first order in the
    lengths), so this is reported as data; :func:`curvature_weak_error` is
    the quantity that is expected to decrease.
    """
    fl = metric.lengths(mesh)[mesh.face_edges]
    area = np.bincount(mesh.faces.ravel(), weights=np.repeat(face_areas(fl) / 3.0, 3), minlength=mesh.n_vertices)
    K = discrete_curvature(mesh, metric) / area
    return float(np.max(np.abs(K + 1.0)[~mesh.is_marked]))


def curvature_weak_error(mesh: ConeMesh, metric: DiscreteMetric) -> float:
    """Dual Sobolev norm of the curvature measure's deviation from ``-dA``.

    With ``r_i = defect_i + A_i`` (cone vertices use their prescribed angle),
    returns ``sqrt(r0^T (-L)^+ r0) + |sum r| / sqrt(total area)`` where ``r0``
    is ``r`` with its mean removed and ``L`` the cotan Laplacian.
    """
    A = vertex_areas(mesh, metric)
    r = discrete_curvature(mesh, metric) + A
    r0 = r - r.mean()
    L = cotan_laplacian(mesh, metric)
    n = mesh.n_vertices
    x = spla.spsolve((-L + 1e-12 * sp.eye(n)).tocsc(), r0)
    return float(np.sqrt(max(r0 @ x, 0.0)) + abs(r.sum()) / np.sqrt(A.sum()))


# -- Codazzi -------------------------------------------------------------------


def codazzi_field(mesh: ConeMesh, field: MorphismField) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex circulation of ``b - E`` in the unfolded ``g1`` stars.

    ``g1`` is laid out per face as the image of the ``g0`` layout under
    ``A = E + JB``, where ``g1`` is Euclidean; there ``b`` becomes
    ``(E - JB)(E + JB)^{-1}``, a symmetric matrix.  Stokes turns the Codazzi
    equation into a vanishing circulation of the vector-valued 1-form ``b``
    around every dual cell; subtracting ``E`` removes the part of the
    circulation that is due to curvature alone.  Returns ``(circulation, area)``.
    """
    if field.b is None:
        raise MorphismError("morphism b is not populated")
    A = E + field.JB
    lay0 = FaceGeometry.build(mesh, field.frame_lengths).layout
    xy = np.stack([lay0.real, lay0.imag], axis=-1)  # (F, 3, 2)
    xy1 = np.einsum("fij,fkj->fki", A, xy)
    lay1 = xy1[..., 0] + 1j * xy1[..., 1]
    fl = np.abs(np.roll(lay1, -2, axis=1) - np.roll(lay1, -1, axis=1))
    ang = np.angle((np.roll(lay1, -1, axis=1) - lay1) / (np.roll(lay1, -2, axis=1) - lay1))
    geom = SimpleNamespace(layout=lay1, angles=np.abs(ang))
    t, rot, d = star_frames(mesh, geom)
    b1 = np.swapaxes(np.linalg.solve(np.swapaxes(A, 1, 2), np.swapaxes(E - field.JB, 1, 2)), 1, 2)
    m = b1[t.face] - E
    bd = (m[:, 0, 0] * d.real + m[:, 0, 1] * d.imag) + 1j * (m[:, 1, 0] * d.real + m[:, 1, 1] * d.imag)
    circ = t.vertex_sum(rot * bd, mesh.n_vertices)
    area = np.bincount(mesh.faces.ravel(), weights=np.repeat(face_areas(fl) / 3.0, 3), minlength=mesh.n_vertices)
    return circ, area


def codazzi_residual(mesh: ConeMesh, field: MorphismField) -> float:
    circ, area = codazzi_field(mesh, field)
    mask = ~mesh.is_marked
    return float(np.sqrt(np.sum(np.abs(circ[mask]) ** 2 / area[mask])))


# -- identity report -------------------------------------------------------------


def algebra_residuals(field: MorphismField, pair: MetricPair) -> dict[str, float]:
    """Per-face identities, max norm over faces."""
    B, b, k = field.B, field.b, field.k
    g1, g2 = pair.g1, pair.g2
    bt = np.swapaxes(b, 1, 2)
    lam = np.sort(np.linalg.eigvals(b).real, axis=1)
    expect = np.stack([(1 - k) / (1 + k), (1 + k) / (1 - k)], axis=1)
    g1b = g1 @ b
    I2, B2 = reconstruct_from_b(g1, b)
    out = {
        "trace_B": np.abs(np.trace(B, axis1=1, axis2=2)),
        "det_b": np.abs(np.linalg.det(b) - 1.0),
        "eig_b": np.abs(lam - expect).max(axis=1) / expect[:, 1],
        "g2_pullback": np.abs(bt @ g1 @ b - g2).max(axis=(1, 2)),
        "sum_identity": np.abs(g1 + g2 - 2.0 * (E + field.III)).max(axis=(1, 2)),
        "self_adjoint": np.abs(g1b - np.swapaxes(g1b, 1, 2)).max(axis=(1, 2)),
        "det_E_plus_JB": np.abs(np.linalg.det(E + field.JB) - (1 - k**2)),
        "det_E_minus_JB": np.abs(np.linalg.det(E - field.JB) - (1 - k**2)),
        "reconstruct": np.maximum(np.abs(I2 - E).max(axis=(1, 2)), np.abs(B2 - B).max(axis=(1, 2))),
    }
    return {name: float(v.max(initial=0.0)) for name, v in out.items()}


def identity_checks(germ: MaxGerm, field: MorphismField, pair: MetricPair) -> dict[str, float]:
    if field.b is None:
        field = min_lagrangian_morphism(field)
    out = algebra_residuals(field, pair)
    m1, m2 = pair_metrics(germ.mesh, pair)
    out["curvature_g1"] = curvature_weak_error(germ.mesh, m1)
    out["curvature_g2"] = curvature_weak_error(germ.mesh, m2)
    out["curvature_g1_max"] = curvature_error(germ.mesh, m1)
    out["curvature_g2_max"] = curvature_error(germ.mesh, m2)
    out["codazzi"] = codazzi_residual(germ.mesh, field)
    return out


def mess_transform(germ: MaxGerm) -> tuple[MorphismField, MetricPair]:
    field = min_lagrangian_morphism(shape_operator(germ))
    return field, mess_metrics(field, germ)


# -- pair file -------------------------------------------------------------------


def format_pair(field: MorphismField, pair: MetricPair) -> str:
    lines = [f"# metric pair and morphism, {len(pair.g1)} faces, germ frames"]
    for name, arr in (("g1", pair.g1), ("g2", pair.g2), ("b", field.b)):
        for i, m in enumerate(arr):
            lines.append(f"{name} {i} " + " ".join(f"{x:.17g}" for x in m.ravel()))
    return "\n".join(lines) + "\n"


def parse_pair(text: str, n_faces: int, frame_lengths: np.ndarray) -> tuple[np.ndarray, MetricPair]:
    data = {k: np.full((n_faces, 2, 2), np.nan) for k in ("g1", "g2", "b")}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] not in data or len(tok) != 6:
            raise ValueError(f"line {lineno}: cannot parse {raw!r}")
        data[tok[0]][int(tok[1])] = np.array([float(x) for x in tok[2:]]).reshape(2, 2)
    for k, v in data.items():
        if np.isnan(v).any():
            raise ValueError(f"missing {k} entries")
    return data["b"], MetricPair(data["g1"], data["g2"], frame_lengths)
