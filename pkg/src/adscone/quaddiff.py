"""Quadratic differentials stored per face, and the trace-free tensors they define.

``q = f dz^2`` is kept as one complex coefficient per face, ``f`` being the
value in the face's canonical orthonormal frame of some metric.  Moving to the
frames of another metric in the same conformal class uses the complex-linear
part ``a`` of the face map between the two layouts: ``f' = f / a**2``.

Norm convention: ``|q|_g`` is the tensor norm, ``2 |f|`` in an orthonormal
frame, so ``det_g Re(q) = -|q|_g^2 / 4 = -|f|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.sparse.csgraph import dijkstra
import scipy.sparse as sp

from .fixtures import Surface
from .mesh import ConeMesh, DiscreteMetric, FaceGeometry
from .stars import star_frames


class PoleOrderError(ValueError):
    pass


def conformal_part(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Per face, ``a`` in ``w = a z + b conj(z) + c`` mapping corners ``src`` to ``dst``."""
    z1, z2 = src[:, 1] - src[:, 0], src[:, 2] - src[:, 0]
    w1, w2 = dst[:, 1] - dst[:, 0], dst[:, 2] - dst[:, 0]
    return (w1 * np.conj(z2) - w2 * np.conj(z1)) / (z1 * np.conj(z2) - z2 * np.conj(z1))


def anticonformal_part(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    z1, z2 = src[:, 1] - src[:, 0], src[:, 2] - src[:, 0]
    w1, w2 = dst[:, 1] - dst[:, 0], dst[:, 2] - dst[:, 0]
    return (w1 * z2 - w2 * z1) / (np.conj(z1) * z2 - np.conj(z2) * z1)


@dataclass(frozen=True, eq=False)
class QuadDiff:
    coeffs: np.ndarray  # (F,) complex, in the frames of frame_lengths
    frame_lengths: np.ndarray  # (E,) edge lengths whose canonical face layouts are the frames
    poles: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for v, order in self.poles.items():
            if order > 1:
                raise PoleOrderError(f"pole of order {order} at vertex {v}; at most simple poles are allowed")
            if order < 0:
                raise PoleOrderError("pole orders are non-negative")

    @classmethod
    def zero(cls, mesh: ConeMesh, metric: DiscreteMetric) -> "QuadDiff":
        return cls(np.zeros(mesh.n_faces, dtype=complex), metric.lengths(mesh))

    def scaled(self, s: complex) -> "QuadDiff":
        return QuadDiff(self.coeffs * s, self.frame_lengths, dict(self.poles))

    def in_frames(self, mesh: ConeMesh, metric: DiscreteMetric | np.ndarray) -> "QuadDiff":
        lengths = metric.lengths(mesh) if isinstance(metric, DiscreteMetric) else np.asarray(metric)
        if lengths is self.frame_lengths or np.array_equal(lengths, self.frame_lengths):
            return self
        src = FaceGeometry.build(mesh, self.frame_lengths).layout
        dst = FaceGeometry.build(mesh, lengths).layout
        a = conformal_part(src, dst)
        return QuadDiff(self.coeffs / a**2, lengths, dict(self.poles))

    def coefficients_in(self, mesh: ConeMesh, metric) -> np.ndarray:
        return self.in_frames(mesh, metric).coeffs


@dataclass(frozen=True, eq=False)
class SymmetricTwoTensor:
    mats: np.ndarray  # (F, 2, 2) in the face frames of frame_lengths
    frame_lengths: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mats, dtype=float)
        if m.ndim != 3 or m.shape[1:] != (2, 2):
            raise ValueError("expected an (F, 2, 2) array")
        if not np.allclose(m, np.swapaxes(m, 1, 2), rtol=0, atol=1e-14 * max(1.0, np.abs(m).max(initial=0))):
            raise ValueError("tensor is not symmetric")
        object.__setattr__(self, "mats", m)

    def trace(self) -> np.ndarray:
        """Trace against the frame metric (orthonormal frames)."""
        return self.mats[:, 0, 0] + self.mats[:, 1, 1]

    def det(self) -> np.ndarray:
        return np.linalg.det(self.mats)


def sample_analytic(
    expr: Callable[[np.ndarray], np.ndarray],
    surface: Surface,
    metric: DiscreteMetric | None = None,
    poles: dict[int, int] | None = None,
) -> QuadDiff:
    """Evaluate ``q = expr(z) dz^2`` at face barycenters, in the frames of ``metric``.

    ``expr`` takes the primary chart coordinate.  Faces stored in a secondary
    chart pick up the squared derivative of the transition map.
    """
    mesh = surface.mesh
    metric = surface.metric if metric is None else metric
    ch = surface.chart
    w = ch.barycenters()
    z, dz = ch.to_primary(w, ch.chart_id)
    with np.errstate(all="ignore"):
        fw = np.asarray(expr(z), dtype=complex) * dz**2
    bad = ~np.isfinite(fw)
    if bad.any():
        raise ValueError(f"expression is singular inside face {int(np.flatnonzero(bad)[0])}")
    lengths = metric.lengths(mesh)
    lay = FaceGeometry.build(mesh, lengths).layout
    a = conformal_part(lay, ch.coords)
    return QuadDiff(fw * a**2, lengths, dict(poles or {}))


def real_part(q: QuadDiff) -> SymmetricTwoTensor:
    a, b = q.coeffs.real, q.coeffs.imag
    m = np.empty((len(a), 2, 2))
    m[:, 0, 0] = a
    m[:, 1, 1] = -a
    m[:, 0, 1] = m[:, 1, 0] = -b
    return SymmetricTwoTensor(m, q.frame_lengths)


def tensor_to_quaddiff(h: SymmetricTwoTensor) -> QuadDiff:
    """Trace-free part of ``h`` as the quadratic differential whose real part it is."""
    m = h.mats
    return QuadDiff(0.5 * (m[:, 0, 0] - m[:, 1, 1]) - 1j * m[:, 0, 1], h.frame_lengths)


def det_h(mesh: ConeMesh, metric: DiscreteMetric, q: QuadDiff) -> np.ndarray:
    """``det_g Re(q) = -|q|_g^2 / 4`` per face."""
    f = q.coefficients_in(mesh, metric)
    return -np.abs(f) ** 2


def tensor_norm(mesh: ConeMesh, metric: DiscreteMetric, q: QuadDiff) -> np.ndarray:
    return 2.0 * np.abs(q.coefficients_in(mesh, metric))


def _l2(mesh: ConeMesh, per_vertex: np.ndarray, area: np.ndarray, mask: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(per_vertex[mask]) ** 2 / area[mask])))


def holomorphicity_field(mesh: ConeMesh, metric: DiscreteMetric, q: QuadDiff) -> np.ndarray:
    """Per-vertex circulation ``oint f dz`` around the dual cell, in the star frame."""
    lengths = metric.lengths(mesh)
    g = FaceGeometry.build(mesh, lengths)
    f = q.coefficients_in(mesh, lengths)
    t, rot, d = star_frames(mesh, g)
    return t.vertex_sum(f[t.face] * d / rot, mesh.n_vertices)


def _vertex_area(mesh: ConeMesh, g: FaceGeometry) -> np.ndarray:
    return np.bincount(mesh.faces.ravel(), weights=np.repeat(g.areas / 3.0, 3), minlength=mesh.n_vertices)


def _away_from_poles(mesh: ConeMesh, lengths: np.ndarray, poles, radius: float) -> np.ndarray:
    keep = ~mesh.is_marked
    if radius > 0 and poles:
        e = mesh.edges
        n = mesh.n_vertices
        graph = sp.coo_matrix((lengths, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
        dist = dijkstra(graph, directed=False, indices=sorted(poles)).min(axis=0)
        keep &= dist > radius
    return keep


def holomorphicity_residual(q: QuadDiff, mesh: ConeMesh, metric: DiscreteMetric, exclude: float = 0.0) -> float:
    """L2 norm of the discrete d-bar of the coefficient over unmarked vertices.

    Stokes: ``oint f dz = 2i * integral of df/dzbar``.  The circulation is the sum
    over the star's edges of the coefficient jump across the edge times the
    edge vector, so it only sees mismatches of transported coefficients.

    Near a simple pole the discrete d-bar of ``1/z`` does not shrink with the
    mesh; ``exclude`` drops vertices within that graph distance of a pole.
    """
    g = FaceGeometry.build(mesh, metric)
    c = holomorphicity_field(mesh, metric, q)
    keep = _away_from_poles(mesh, metric.lengths(mesh), q.poles, exclude)
    return _l2(mesh, c / 2.0, _vertex_area(mesh, g), keep)


def divergence_field(mesh: ConeMesh, metric: DiscreteMetric, h: SymmetricTwoTensor) -> np.ndarray:
    """Per-vertex flux ``oint h(n) ds`` through the dual cell, as a complex vector."""
    lengths = metric.lengths(mesh)
    if not np.array_equal(lengths, h.frame_lengths):
        raise ValueError("tensor is not stored in the frames of this metric")
    g = FaceGeometry.build(mesh, lengths)
    t, rot, d = star_frames(mesh, g)
    n = -1j * d  # outward normal times length of the dual boundary piece
    m = h.mats[t.face]
    hn = (m[:, 0, 0] * n.real + m[:, 0, 1] * n.imag) + 1j * (m[:, 1, 0] * n.real + m[:, 1, 1] * n.imag)
    return t.vertex_sum(rot * hn, mesh.n_vertices)


def divergence_residual(mesh: ConeMesh, metric: DiscreteMetric, h: SymmetricTwoTensor) -> float:
    g = FaceGeometry.build(mesh, metric)
    flux = divergence_field(mesh, metric, h)
    return _l2(mesh, flux, _vertex_area(mesh, g), ~mesh.is_marked)


def _face_distances(mesh: ConeMesh, lengths: np.ndarray, vertex: int) -> np.ndarray:
    e = mesh.edges
    n = mesh.n_vertices
    graph = sp.coo_matrix((lengths, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    dist = dijkstra(graph, directed=False, indices=vertex)
    return dist[mesh.faces].mean(axis=1)


def pole_growth_exponent(q: QuadDiff, mesh: ConeMesh, vertex: int, rings: int = 3) -> float:
    """Least-squares slope of ``log|f|`` against ``log(distance)`` near ``vertex``.

    A pole of order ``n`` gives a slope close to ``-n``.  Distances are graph
    distances in the frame metric, averaged over the face corners.
    """
    near = {vertex}
    faces = set()
    for _ in range(rings):
        fs = np.flatnonzero(np.isin(mesh.faces, list(near)).any(axis=1))
        faces.update(fs.tolist())
        near.update(mesh.faces[fs].ravel().tolist())
    fs = np.array(sorted(faces))
    d = _face_distances(mesh, q.frame_lengths, vertex)[fs]
    y = np.log(np.abs(q.coeffs[fs]))
    x = np.log(d)
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def check_pole_orders(q: QuadDiff, mesh: ConeMesh, slack: float = 0.5) -> dict[int, float]:
    """Validate declared pole orders against the measured growth; returns the exponents."""
    out = {}
    for v in mesh.marked:
        v = int(v)
        s = pole_growth_exponent(q, mesh, v)
        declared = q.poles.get(v, 0)
        if s < -(declared + slack):
            raise PoleOrderError(f"coefficients grow like r^{s:.2f} at vertex {v}, declared order {declared}")
        out[v] = s
    return out


def pole_mass(q: QuadDiff, mesh: ConeMesh, vertex: int) -> float:
    """``sum |f| * area`` over the faces around ``vertex``; finite mass means integrable."""
    g = FaceGeometry.build(mesh, q.frame_lengths)
    fs = np.flatnonzero((mesh.faces == vertex).any(axis=1))
    return float(np.sum(np.abs(q.coeffs[fs]) * g.areas[fs]))


# -- file format ---------------------------------------------------------------


def format_quaddiff(q: QuadDiff) -> str:
    lines = [f"# quadratic differential, {len(q.coeffs)} faces, reference frames"]
    lines += [f"q {i} {c.real:.17g} {c.imag:.17g}" for i, c in enumerate(q.coeffs)]
    lines += [f"pole {v} {o}" for v, o in sorted(q.poles.items())]
    return "\n".join(lines) + "\n"


def parse_quaddiff(text: str, mesh: ConeMesh, metric: DiscreteMetric) -> QuadDiff:
    coeffs = np.zeros(mesh.n_faces, dtype=complex)
    seen = np.zeros(mesh.n_faces, dtype=bool)
    poles = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "q" and len(tok) == 4:
            i = int(tok[1])
            coeffs[i] = float(tok[2]) + 1j * float(tok[3])
            seen[i] = True
        elif tok[0] == "pole" and len(tok) == 3:
            poles[int(tok[1])] = int(tok[2])
        else:
            raise ValueError(f"line {lineno}: cannot parse {raw!r}")
    if not seen.all():
        raise ValueError(f"missing coefficients for {int((~seen).sum())} faces")
    return QuadDiff(coeffs, metric.lengths(mesh), poles)


def load_quaddiff(path, mesh: ConeMesh, metric: DiscreteMetric) -> QuadDiff:
    return parse_quaddiff(Path(path).read_text(), mesh, metric)


def save_quaddiff(q: QuadDiff, path) -> None:
    Path(path).write_text(format_quaddiff(q))
