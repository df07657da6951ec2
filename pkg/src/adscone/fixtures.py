"""Test surfaces with their reference metrics and conformal charts.

A :class:`Surface` bundles a mesh, the reference metric that fixes its conformal
class, and a :class:`Chart` giving complex coordinates of every face corner, so
analytic quadratic differentials can be sampled on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import ConeMesh, DiscreteMetric


@dataclass(frozen=True, eq=False)
class Chart:
    """Per-face complex coordinates of the three corners.

    ``chart_id`` selects which coordinate patch a face lives in; ``to_primary``
    maps patch coordinates ``w`` to the primary coordinate ``z`` and returns
    ``(z, dz/dw)`` so differentials can be pulled back.
    """

    coords: np.ndarray
    chart_id: np.ndarray
    to_primary: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

    def barycenters(self) -> np.ndarray:
        return self.coords.mean(axis=1)


def _identity_chart(w, ids):
    return w, np.ones_like(w)


def _sphere_chart(w, ids):
    z = np.where(ids == 0, w, 1.0 / np.where(ids == 0, 1.0, w))
    dz = np.where(ids == 0, 1.0, -1.0 / np.where(ids == 0, 1.0, w) ** 2)
    return z, dz


def stereographic(x: np.ndarray) -> np.ndarray:
    """Orientation-preserving coordinate from the north pole (outward normals)."""
    return (x[..., 0] - 1j * x[..., 1]) / (1.0 - x[..., 2])


def stereographic_south(x: np.ndarray) -> np.ndarray:
    """The complementary patch, ``w = 1/z``."""
    return (x[..., 0] + 1j * x[..., 1]) / (1.0 + x[..., 2])


@dataclass(frozen=True, eq=False)
class Surface:
    mesh: ConeMesh
    metric: DiscreteMetric
    chart: Chart
    kind: str
    level: int = 0

    def with_cones(self, cones: dict[int, float]) -> "Surface":
        return Surface(self.mesh.with_cones(cones), self.metric, self.chart, self.kind, self.level)

    def marked_coordinates(self) -> dict[int, complex]:
        """Primary-chart coordinate of each marked vertex."""
        out = {}
        f = self.mesh.faces
        for v in self.mesh.cones:
            fi, k = np.argwhere(f == v)[0]
            w = self.chart.coords[fi, k]
            z, _ = self.chart.to_primary(np.array([w]), self.chart.chart_id[[fi]])
            out[v] = complex(z[0])
        return out


# -- icosphere ---------------------------------------------------------------

_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_V = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=float,
)
_ICO_F = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)

# Icosahedron vertices used as particles; none sits near the north pole.
SPHERE_CONES_3 = (1, 2, 10)
SPHERE_CONES_4 = (1, 2, 10, 8)


def midpoint_subdivide(vertices: np.ndarray, faces: np.ndarray):
    """Split every triangle into four; old vertex indices are kept.

    Returns the new vertices, faces and, for each new face, the barycentric
    weights (3x3) expressing its corners in the parent's corners.
    """
    nv = len(vertices)
    edge_mid: dict[tuple[int, int], int] = {}
    new_v = [v for v in vertices]

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in edge_mid:
            edge_mid[key] = nv + len(edge_mid)
            new_v.append(0.5 * (vertices[a] + vertices[b]))
        return edge_mid[key]

    out_f, weights = [], []
    h = 0.5
    for a, b, c in faces:
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        out_f += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        weights += [
            [[1, 0, 0], [h, h, 0], [h, 0, h]],
            [[h, h, 0], [0, 1, 0], [0, h, h]],
            [[h, 0, h], [0, h, h], [0, 0, 1]],
            [[h, h, 0], [0, h, h], [h, 0, h]],
        ]
    return np.array(new_v), np.array(out_f), np.array(weights, dtype=float)


def _sphere_chart_for(x: np.ndarray, faces: np.ndarray) -> Chart:
    bary_z = x[faces].mean(axis=1)[:, 2]
    ids = (bary_z > 0).astype(np.int64)
    corners = x[faces]
    with np.errstate(divide="ignore", invalid="ignore"):
        coords = np.where(ids[:, None] == 0, stereographic(corners), stereographic_south(corners))
    return Chart(coords, ids, _sphere_chart)


def icosphere(level: int = 2, cones: dict[int, float] | None = None) -> Surface:
    """Unit sphere, icosahedron refined ``level`` times with projection."""
    x = _ICO_V / np.linalg.norm(_ICO_V, axis=1, keepdims=True)
    f = _ICO_F.copy()
    for _ in range(level):
        x, f, _w = midpoint_subdivide(x, f)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
    mesh = ConeMesh(x, f, cones or {})
    return Surface(mesh, DiscreteMetric.from_positions(mesh), _sphere_chart_for(x, f), "sphere", level)


def cone_sphere(level: int, theta: float = math.pi / 2, n_cones: int = 3) -> Surface:
    ids = SPHERE_CONES_3 if n_cones == 3 else SPHERE_CONES_4[:n_cones]
    return icosphere(level, {v: theta for v in ids})


# -- flat torus --------------------------------------------------------------


def _torus_embed(p: np.ndarray, big: float = 2.0, small: float = 0.7) -> np.ndarray:
    a = 2 * np.pi * p.real
    b = 2 * np.pi * p.imag
    return np.stack([(big + small * np.cos(b)) * np.cos(a), (big + small * np.cos(b)) * np.sin(a), small * np.sin(b)], axis=1)


def flat_torus(n: int = 8, cones: dict[int, float] | None = None, period: complex = 1j) -> Surface:
    """Square-grid torus ``C / (Z + period*Z)`` with its flat reference metric.

    Vertex positions are a ring-torus embedding (only used for file output);
    lengths come from the flat chart.
    """
    if n < 3:
        raise ValueError("need n >= 3 for a simplicial torus")
    idx = np.arange(n * n).reshape(n, n)  # idx[i, j] at (i + j*period)/n
    faces, coords = [], []
    for i in range(n):
        for j in range(n):
            a, b = idx[i, j], idx[(i + 1) % n, j]
            c, d = idx[(i + 1) % n, (j + 1) % n], idx[i, (j + 1) % n]
            pa = (i + j * period) / n
            pb, pc, pd = pa + 1 / n, pa + (1 + period) / n, pa + period / n
            faces += [[a, b, c], [a, c, d]]
            coords += [[pa, pb, pc], [pa, pc, pd]]
    faces = np.array(faces)
    coords = np.array(coords)
    grid = np.array([(i + j * period) / n for i in range(n) for j in range(n)])
    mesh = ConeMesh(_torus_embed(grid), faces, cones or {})
    fl = np.abs(coords[:, [2, 0, 1]] - coords[:, [1, 2, 0]])
    lengths = np.zeros(mesh.n_edges)
    lengths[mesh.face_edges.ravel()] = fl.ravel()
    chart = Chart(coords, np.zeros(len(faces), dtype=np.int64), _identity_chart)
    return Surface(mesh, DiscreteMetric.from_lengths(mesh, lengths), chart, "torus", 0)


# -- refinement --------------------------------------------------------------


def refine(surface: Surface) -> Surface:
    """One midpoint subdivision; marked vertices keep their indices."""
    mesh = surface.mesh
    if surface.kind == "sphere":
        x, f, _ = midpoint_subdivide(mesh.vertices, mesh.faces)
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        new = ConeMesh(x, f, mesh.cones)
        return Surface(new, DiscreteMetric.from_positions(new), _sphere_chart_for(x, f), "sphere", surface.level + 1)
    if surface.kind == "torus":
        _, f, w = midpoint_subdivide(mesh.vertices, mesh.faces)
        parent = np.repeat(np.arange(mesh.n_faces), 4)
        coords = np.einsum("fij,fj->fi", w, surface.chart.coords[parent])
        nv = f.max() + 1
        param = np.zeros(nv, dtype=complex)
        param[f.ravel()] = coords.ravel()
        new = ConeMesh(_torus_embed(param), f, mesh.cones)
        fl = np.abs(coords[:, [2, 0, 1]] - coords[:, [1, 2, 0]])
        lengths = np.zeros(new.n_edges)
        lengths[new.face_edges.ravel()] = fl.ravel()
        chart = Chart(coords, np.zeros(len(f), dtype=np.int64), _identity_chart)
        return Surface(new, DiscreteMetric.from_lengths(new, lengths), chart, "torus", surface.level + 1)
    raise ValueError(f"cannot refine surface of kind {surface.kind!r}")


def refine_times(surface: Surface, n: int) -> Surface:
    for _ in range(n):
        surface = refine(surface)
    return surface
