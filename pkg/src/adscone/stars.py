"""Vertex stars unfolded into a common plane.

Each vertex star is cut along one spoke and laid out counter-clockwise, so
per-face quantities living in the faces' canonical frames can be rotated into
a single frame at the vertex.  Adjacent faces are glued by the rotation that
aligns their shared spoke, which is the discrete Levi-Civita transport.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .mesh import ConeMesh, FaceGeometry

_CACHE: "weakref.WeakKeyDictionary[ConeMesh, StarTable]" = weakref.WeakKeyDictionary()


@dataclass(frozen=True, eq=False)
class StarTable:
    """Flat arrays over all ``(vertex, face, corner)`` star entries, in star order."""

    vertex: np.ndarray
    face: np.ndarray
    corner: np.ndarray
    start: np.ndarray  # index of the first entry of each vertex's star

    @classmethod
    def build(cls, mesh: ConeMesh) -> "StarTable":
        hit = _CACHE.get(mesh)
        if hit is not None:
            return hit
        v, f, k = [], [], []
        for vi, star in enumerate(mesh.vertex_stars):
            for fi, ki in star:
                v.append(vi)
                f.append(fi)
                k.append(ki)
        v = np.array(v, dtype=np.int64)
        start = np.searchsorted(v, np.arange(mesh.n_vertices))
        out = cls(v, np.array(f, dtype=np.int64), np.array(k, dtype=np.int64), start)
        _CACHE[mesh] = out
        return out

    def group_cumsum(self, x: np.ndarray) -> np.ndarray:
        """Exclusive cumulative sum of ``x`` within each star."""
        c = np.cumsum(x) - x
        return c - c[self.start[self.vertex]]

    def vertex_sum(self, x: np.ndarray, n: int) -> np.ndarray:
        if np.iscomplexobj(x):
            return np.bincount(self.vertex, weights=x.real, minlength=n) + 1j * np.bincount(
                self.vertex, weights=x.imag, minlength=n
            )
        return np.bincount(self.vertex, weights=x, minlength=n)


def star_frames(mesh: ConeMesh, geom: FaceGeometry, rescale: bool = False):
    """Unfold every star.

    Returns ``(table, rot, spoke)``: ``rot[s]`` is the unit complex number
    rotating face ``table.face[s]``'s frame into the star frame of
    ``table.vertex[s]``, and ``spoke[s]`` is the half-edge vector from the
    vertex to corner ``k+2`` minus the one to ``k+1``, halved, in face frame.
    This is the displacement of the dual-cell boundary crossing the face.

    With ``rescale`` the sector angles are scaled by ``2*pi/total`` so the star
    closes up; the rotation then matches sector bisectors instead of spokes.
    """
    t = StarTable.build(mesh)
    lay = geom.layout
    f, k = t.face, t.corner
    p0 = lay[f, k]
    p1 = lay[f, (k + 1) % 3]
    p2 = lay[f, (k + 2) % 3]
    alpha = geom.angles[f, k]
    gamma = np.angle(p1 - p0)
    phi = t.group_cumsum(alpha)
    if rescale:
        total = np.bincount(t.vertex, weights=alpha, minlength=mesh.n_vertices)
        s = 2 * np.pi / total[t.vertex]
        rot = np.exp(1j * ((phi + 0.5 * alpha) * s - (gamma + 0.5 * alpha)))
    else:
        rot = np.exp(1j * (phi - gamma))
    return t, rot, 0.5 * (p2 - p1)
