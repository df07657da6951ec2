"""Triangulated cone surfaces, intrinsic metrics and the discrete operators built on them.

A :class:`ConeMesh` is a closed oriented triangulation with a few marked vertices,
each carrying a prescribed cone angle.  Geometry never comes from the vertex
positions directly: every operator takes a :class:`DiscreteMetric`, i.e. edge
lengths of the form ``exp((u_i + u_j) / 2) * ref_ij``.

Conventions
-----------
* Faces are stored as oriented triples ``(i0, i1, i2)``.
* Quantities indexed per face corner use the corner order of the face; the edge
  "opposite corner k" of face ``(i0, i1, i2)`` is ``(i1, i2)``, ``(i2, i0)``,
  ``(i0, i1)`` for ``k = 0, 1, 2``.
* The canonical layout of a face puts corner 0 at the origin, corner 1 on the
  positive real axis and corner 2 in the upper half plane.  Its axes are the
  orthonormal frame used for every per-face tensor in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

TWO_PI = 2.0 * math.pi


class MeshError(ValueError):
    """Base class for invalid mesh input."""


class MeshParseError(MeshError):
    pass


class TopologyError(MeshError):
    pass


class ConeAngleError(MeshError):
    pass


class TriangleInequalityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConeMesh:
    vertices: np.ndarray
    faces: np.ndarray
    cones: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "cones", {int(k): float(t) for k, t in dict(self.cones).items()})
        v.setflags(write=False)
        f.setflags(write=False)
        self._validate()

    def _validate(self):
        f = self.faces
        nv = len(self.vertices)
        if f.ndim != 2 or f.shape[1] != 3 or len(f) == 0:
            raise TopologyError("faces must be a non-empty (F, 3) array")
        if f.min() < 0 or f.max() >= nv:
            raise TopologyError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0])):
            raise TopologyError("degenerate face with repeated vertex")
        half = self._half_edges
        keys = half[:, 0] * nv + half[:, 1]
        uniq, counts = np.unique(keys, return_counts=True)
        if np.any(counts > 1):
            raise TopologyError("half-edge used twice: inconsistent orientation or non-manifold edge")
        twins = half[:, 1] * nv + half[:, 0]
        if not np.all(np.isin(twins, uniq)):
            raise TopologyError("open boundary: some edge has a single incident face")
        used = np.zeros(nv, dtype=bool)
        used[f.ravel()] = True
        if not used.all():
            raise TopologyError("isolated vertex")
        for vid, theta in self.cones.items():
            if not 0 <= vid < nv:
                raise ConeAngleError(f"cone vertex {vid} out of range")
            if not 0.0 < theta < TWO_PI:
                raise ConeAngleError(f"cone angle {theta} at vertex {vid} outside (0, 2*pi)")
        # a vertex star must be a single disk
        star_sizes = np.bincount(f.ravel(), minlength=nv)
        ring = self.vertex_stars
        if any(len(r) != n for r, n in zip(ring, star_sizes)):
            raise TopologyError("vertex link is not a single cycle")

    # -- combinatorics -------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def _half_edges(self) -> np.ndarray:
        f = self.faces
        # half-edge opposite corner k: (corner k+1 -> corner k+2)
        tails = f[:, [1, 2, 0]]
        heads = f[:, [2, 0, 1]]
        return np.stack([tails.ravel(), heads.ravel()], axis=1)

    @cached_property
    def _edge_data(self):
        nv = self.n_vertices
        half = self._half_edges
        lo = np.minimum(half[:, 0], half[:, 1])
        hi = np.maximum(half[:, 0], half[:, 1])
        edges, inverse = np.unique(lo * nv + hi, return_inverse=True)
        edges = np.stack([edges // nv, edges % nv], axis=1)
        face_edges = inverse.reshape(-1, 3)
        edge_faces = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_corner = np.full((len(edges), 2), -1, dtype=np.int64)
        for slot, (fi, k) in enumerate(np.ndindex(self.n_faces, 3)):
            e = face_edges[fi, k]
            # slot 0: face in which the half-edge runs lo -> hi
            s = 0 if half[slot, 0] < half[slot, 1] else 1
            edge_faces[e, s] = fi
            edge_corner[e, s] = k
        return edges, face_edges, edge_faces, edge_corner

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges ``(i, j)`` with ``i < j``."""
        return self._edge_data[0]

    @property
    def face_edges(self) -> np.ndarray:
        """``face_edges[f, k]`` is the index of the edge opposite corner ``k``."""
        return self._edge_data[1]

    @property
    def edge_faces(self) -> np.ndarray:
        """The two faces of each edge; slot 0 traverses it as ``i -> j``."""
        return self._edge_data[2]

    @property
    def edge_corners(self) -> np.ndarray:
        """Corner opposite the edge in each of the two faces of ``edge_faces``."""
        return self._edge_data[3]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def genus(self) -> int:
        return (2 - self.euler_characteristic) // 2

    @property
    def marked(self) -> np.ndarray:
        return np.array(sorted(self.cones), dtype=np.int64)

    @cached_property
    def is_marked(self) -> np.ndarray:
        out = np.zeros(self.n_vertices, dtype=bool)
        out[list(self.cones)] = True
        return out

    @cached_property
    def target_angles(self) -> np.ndarray:
        """Total angle each vertex should carry: 2*pi, or the cone angle."""
        out = np.full(self.n_vertices, TWO_PI)
        for v, t in self.cones.items():
            out[v] = t
        return out

    @cached_property
    def vertex_stars(self) -> list[list[tuple[int, int]]]:
        """Counter-clockwise ``(face, corner)`` cycle around every vertex.

        Consecutive entries share the spoke ending at the last corner of the
        earlier face, so face ``s`` spans the angular sector between the spoke
        to its corner ``k+1`` and the spoke to its corner ``k+2``.
        """
        f = self.faces
        nxt = {}
        for fi in range(self.n_faces):
            for k in range(3):
                nxt[(int(f[fi, k]), int(f[fi, (k + 1) % 3]))] = (fi, k)
        stars: list[list[tuple[int, int]]] = [[] for _ in range(self.n_vertices)]
        seen = set()
        for fi in range(self.n_faces):
            for k in range(3):
                v = int(f[fi, k])
                if stars[v]:
                    continue
                cycle = []
                cur = (fi, k)
                while cur not in seen:
                    seen.add(cur)
                    cycle.append(cur)
                    cf, ck = cur
                    spoke_end = int(f[cf, (ck + 2) % 3])
                    cur = nxt.get((v, spoke_end))
                    if cur is None:
                        break
                stars[v] = cycle
        return stars

    def with_cones(self, cones: dict[int, float]) -> "ConeMesh":
        return ConeMesh(self.vertices, self.faces, cones)


@dataclass(frozen=True, eq=False)
class DiscreteMetric:
    """Edge lengths ``exp((u_i + u_j)/2) * ref_lengths`` on a fixed mesh."""

    ref_lengths: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        ref = np.array(self.ref_lengths, dtype=float)
        u = np.array(self.u, dtype=float)
        if np.any(~np.isfinite(ref)) or np.any(ref <= 0):
            raise ValueError("reference lengths must be positive and finite")
        ref.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "ref_lengths", ref)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_lengths(cls, mesh: ConeMesh, lengths) -> "DiscreteMetric":
        return cls(np.asarray(lengths, dtype=float), np.zeros(mesh.n_vertices))

    @classmethod
    def from_positions(cls, mesh: ConeMesh, positions=None) -> "DiscreteMetric":
        x = mesh.vertices if positions is None else np.asarray(positions, dtype=float)
        e = mesh.edges
        return cls.from_lengths(mesh, np.linalg.norm(x[e[:, 1]] - x[e[:, 0]], axis=1))

    def lengths(self, mesh: ConeMesh) -> np.ndarray:
        e = mesh.edges
        return np.exp(0.5 * (self.u[e[:, 0]] + self.u[e[:, 1]])) * self.ref_lengths

    def with_u(self, u) -> "DiscreteMetric":
        return DiscreteMetric(self.ref_lengths, u)

    def flattened(self, mesh: ConeMesh) -> "DiscreteMetric":
        """Same metric with the conformal factor folded into the reference lengths."""
        return DiscreteMetric.from_lengths(mesh, self.lengths(mesh))

    def hash(self) -> str:
        import hashlib

        h = hashlib.sha256(np.ascontiguousarray(self.ref_lengths).tobytes())
        return h.hexdigest()[:16]


# -- per-face geometry ---------------------------------------------------


def face_lengths(mesh: ConeMesh, metric: DiscreteMetric | np.ndarray) -> np.ndarray:
    """(F, 3) lengths; column k is the edge opposite corner k."""
    lengths = metric.lengths(mesh) if isinstance(metric, DiscreteMetric) else np.asarray(metric)
    return lengths[mesh.face_edges]


def check_triangle_inequality(fl: np.ndarray, strict_margin: float = 0.0) -> None:
    a, b, c = fl[:, 0], fl[:, 1], fl[:, 2]
    slack = np.minimum.reduce([b + c - a, c + a - b, a + b - c]) / fl.max(axis=1)
    bad = np.flatnonzero(~(slack > strict_margin))
    if len(bad):
        raise TriangleInequalityError(f"{len(bad)} face(s) violate the triangle inequality, e.g. face {bad[0]}")


def corner_angles(fl: np.ndarray) -> np.ndarray:
    """Interior angles by the law of cosines; column k is the angle at corner k."""
    check_triangle_inequality(fl)
    a, b, c = fl[:, 0], fl[:, 1], fl[:, 2]
    cos0 = (b * b + c * c - a * a) / (2 * b * c)
    cos1 = (c * c + a * a - b * b) / (2 * c * a)
    cos2 = (a * a + b * b - c * c) / (2 * a * b)
    return np.arccos(np.clip(np.stack([cos0, cos1, cos2], axis=1), -1.0, 1.0))


def face_areas(fl: np.ndarray) -> np.ndarray:
    # Kahan's stable Heron formula
    s = np.sort(fl, axis=1)[:, ::-1]
    a, b, c = s[:, 0], s[:, 1], s[:, 2]
    prod = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    return 0.25 * np.sqrt(np.maximum(prod, 0.0))


def face_layouts(fl: np.ndarray) -> np.ndarray:
    """(F, 3) complex corner positions in each face's canonical frame."""
    ang = corner_angles(fl)
    out = np.zeros(fl.shape, dtype=complex)
    out[:, 1] = fl[:, 2]
    out[:, 2] = fl[:, 1] * np.exp(1j * ang[:, 0])
    return out


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    """Everything per-face that the solvers need, computed once from lengths."""

    lengths: np.ndarray
    angles: np.ndarray
    areas: np.ndarray
    layout: np.ndarray

    @classmethod
    def build(cls, mesh: ConeMesh, metric: DiscreteMetric | np.ndarray) -> "FaceGeometry":
        fl = face_lengths(mesh, metric)
        ang = corner_angles(fl)
        lay = np.zeros(fl.shape, dtype=complex)
        lay[:, 1] = fl[:, 2]
        lay[:, 2] = fl[:, 1] * np.exp(1j * ang[:, 0])
        return cls(fl, ang, face_areas(fl), lay)

    @property
    def cot(self) -> np.ndarray:
        return 1.0 / np.tan(self.angles)


def vertex_areas(mesh: ConeMesh, metric: DiscreteMetric | np.ndarray) -> np.ndarray:
    """Barycentric (one third) vertex areas."""
    a = face_areas(face_lengths(mesh, metric))
    return np.bincount(mesh.faces.ravel(), weights=np.repeat(a / 3.0, 3), minlength=mesh.n_vertices)


def angle_sums(mesh: ConeMesh, metric: DiscreteMetric | np.ndarray) -> np.ndarray:
    ang = corner_angles(face_lengths(mesh, metric))
    return np.bincount(mesh.faces.ravel(), weights=ang.ravel(), minlength=mesh.n_vertices)


def cotan_weights_from_angles(mesh: ConeMesh, angles: np.ndarray) -> np.ndarray:
    """Per-edge weight: half the sum of the cotangents of the two opposite angles."""
    w = np.zeros(mesh.n_edges)
    np.add.at(w, mesh.face_edges.ravel(), 0.5 / np.tan(angles.ravel()))
    return w


def laplacian_from_weights(mesh: ConeMesh, w: np.ndarray) -> sp.csr_matrix:
    e = mesh.edges
    n = mesh.n_vertices
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    vals = np.concatenate([w, w])
    off = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    diag = np.asarray(off.sum(axis=1)).ravel()
    return (off - sp.diags(diag)).tocsr()


def cotan_laplacian(mesh: ConeMesh, metric: DiscreteMetric | np.ndarray) -> sp.csr_matrix:
    """Symmetric cotangent Laplacian; ``(L f)_i = sum_j w_ij (f_j - f_i)``."""
    ang = corner_angles(face_lengths(mesh, metric))
    return laplacian_from_weights(mesh, cotan_weights_from_angles(mesh, ang))


def discrete_curvature(mesh: ConeMesh, metric: DiscreteMetric | np.ndarray) -> np.ndarray:
    """Integrated curvature per vertex: target angle (2*pi or theta) minus angle sum."""
    return mesh.target_angles - angle_sums(mesh, metric)


def cone_gauss_bonnet_total(mesh: ConeMesh) -> float:
    """``2*pi*chi + sum(theta_i - 2*pi)``, the total curvature of a cone metric."""
    return TWO_PI * mesh.euler_characteristic + sum(t - TWO_PI for t in mesh.cones.values())


def gauss_bonnet_residual(mesh: ConeMesh, metric: DiscreteMetric | np.ndarray) -> float:
    return float(discrete_curvature(mesh, metric).sum() - cone_gauss_bonnet_total(mesh))


def troyanov_admissible(mesh: ConeMesh) -> bool:
    value = mesh.euler_characteristic + sum(t / TWO_PI - 1.0 for t in mesh.cones.values())
    return value < 0.0


# -- mesh file I/O -----------------------------------------------------------


def parse_mesh(text: str) -> ConeMesh:
    verts, faces, cones = [], [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "v" and len(tok) in (3, 4):
                xyz = [float(t) for t in tok[1:]] + ([0.0] if len(tok) == 3 else [])
                verts.append(xyz)
            elif tok[0] == "f" and len(tok) == 4:
                faces.append([int(t) - 1 for t in tok[1:]])
            elif tok[0] == "cone" and len(tok) == 3:
                vid = int(tok[1]) - 1
                if vid in cones:
                    raise ConeAngleError(f"line {lineno}: vertex {vid + 1} marked twice")
                cones[vid] = float(tok[2])
            else:
                raise MeshParseError(f"line {lineno}: cannot parse {raw!r}")
        except ValueError as exc:
            if isinstance(exc, MeshError):
                raise
            raise MeshParseError(f"line {lineno}: {exc}") from None
    if not verts or not faces:
        raise TopologyError("mesh needs at least one vertex and one face")
    return ConeMesh(np.array(verts), np.array(faces), cones)


def load_mesh(path) -> ConeMesh:
    return parse_mesh(Path(path).read_text())


def format_mesh(mesh: ConeMesh) -> str:
    lines = [f"# {mesh.n_vertices} vertices, {mesh.n_faces} faces, chi = {mesh.euler_characteristic}"]
    lines += [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    lines += [f"cone {v + 1} {t:.17g}" for v, t in sorted(mesh.cones.items())]
    return "\n".join(lines) + "\n"


def save_mesh(mesh: ConeMesh, path) -> None:
    Path(path).write_text(format_mesh(mesh))
