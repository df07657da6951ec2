"""Discrete harmonic maps isotopic to the identity, Hopf differentials, middle class.

A map is stored as one displacement ``delta_v`` per vertex, written in the
flattened star of ``v`` in the target metric (sector angles rescaled to sum to
``2*pi``).  In each target face the image triangle has corners
``layout[f, k] + delta_v / rot``, so the differential ``w = a z + b conj(z)``
of every face map is affine in the displacements.

The solver minimizes the anticonformal energy ``E_c = 2 sum_f A_f |b_f|^2``
(``A_f`` the source face area).  It differs from the Dirichlet energy
``sum_f A_f (|a_f|^2 + |b_f|^2)`` by the image area; the two have the same
critical points for maps between closed surfaces, and ``E_c`` vanishes with
zero gradient face by face on the identity between equal metrics.  Because
``E_c`` is quadratic in the displacements, Newton converges in one step
unless the line search has to back off a face flip.

The Hopf differential of a face map is ``a * conj(b) dz^2``: the ``dz^2``
part of ``|a dz + b dzbar|^2``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .liouville import NonConvergenceError, SolverReport
from .mesh import ConeMesh, DiscreteMetric, FaceGeometry
from .quaddiff import QuadDiff, anticonformal_part, conformal_part
from .stars import star_frames


class FaceFlipError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class VertexMap:
    """Per-vertex displacement in the target's star charts; marked vertices stay put."""

    mesh: ConeMesh
    target: DiscreteMetric
    delta: np.ndarray  # (V,) complex

    @classmethod
    def identity(cls, mesh: ConeMesh, target: DiscreteMetric) -> "VertexMap":
        return cls(mesh, target, np.zeros(mesh.n_vertices, dtype=complex))

    def image_layout(self) -> np.ndarray:
        """(F, 3) image corners in the target faces' canonical frames."""
        g = FaceGeometry.build(self.mesh, self.target)
        t, rot, _ = star_frames(self.mesh, g, rescale=True)
        out = g.layout.copy()
        out[t.face, t.corner] += self.delta[t.vertex] / rot
        return out


@dataclass(frozen=True)
class _Linear:
    """``b = b0 + M delta`` and ``a = a0 + P delta`` per face."""

    a0: np.ndarray
    b0: np.ndarray
    P: sp.csr_matrix
    M: sp.csr_matrix
    area: np.ndarray  # source face areas
    vertex_area: np.ndarray


def _corner_coeffs(src: np.ndarray):
    """Complex weights with ``a = sum_k ca_k w_k`` and ``b = sum_k cb_k w_k``."""
    z1, z2 = src[:, 1] - src[:, 0], src[:, 2] - src[:, 0]
    da = z1 * np.conj(z2) - z2 * np.conj(z1)
    db = np.conj(z1) * z2 - np.conj(z2) * z1
    ca = np.stack([np.zeros_like(z1), np.conj(z2) / da, -np.conj(z1) / da], axis=1)
    cb = np.stack([np.zeros_like(z1), z2 / db, -z1 / db], axis=1)
    ca[:, 0] = -(ca[:, 1] + ca[:, 2])
    cb[:, 0] = -(cb[:, 1] + cb[:, 2])
    return ca, cb


def _linearize(mesh: ConeMesh, source: DiscreteMetric, m: VertexMap) -> _Linear:
    gs = FaceGeometry.build(mesh, source)
    gt = FaceGeometry.build(mesh, m.target)
    t, rot, _ = star_frames(mesh, gt, rescale=True)
    img = m.image_layout()
    a0 = conformal_part(gs.layout, img)
    b0 = anticonformal_part(gs.layout, img)
    ca, cb = _corner_coeffs(gs.layout)
    n = mesh.n_vertices
    shape = (mesh.n_faces, n)
    P = sp.coo_matrix((ca[t.face, t.corner] / rot, (t.face, t.vertex)), shape=shape).tocsr()
    M = sp.coo_matrix((cb[t.face, t.corner] / rot, (t.face, t.vertex)), shape=shape).tocsr()
    va = np.bincount(mesh.faces.ravel(), weights=np.repeat(gs.areas / 3.0, 3), minlength=n)
    return _Linear(a0, b0, P, M, gs.areas, va)


def anticonformal_energy(lin: _Linear) -> float:
    return float(2.0 * np.sum(lin.area * np.abs(lin.b0) ** 2))


def dirichlet_energy(lin: _Linear) -> float:
    return float(np.sum(lin.area * (np.abs(lin.a0) ** 2 + np.abs(lin.b0) ** 2)))


def _gradient(lin: _Linear) -> np.ndarray:
    """``dE_c/dx + i dE_c/dy`` per vertex."""
    return 4.0 * (lin.M.conj().T @ (lin.area * lin.b0))


def tension(mesh: ConeMesh, source: DiscreteMetric, m: VertexMap) -> np.ndarray:
    """Discrete tension field, zero on pinned vertices."""
    lin = _linearize(mesh, source, m)
    out = -_gradient(lin) / lin.vertex_area
    out[mesh.is_marked] = 0.0
    return out


def face_jacobians(lin: _Linear) -> np.ndarray:
    return np.abs(lin.a0) ** 2 - np.abs(lin.b0) ** 2


@dataclass
class HarmonicReport(SolverReport):
    energy: list[float] = field(default_factory=list)
    dirichlet: float = 0.0


def harmonic_map(
    mesh: ConeMesh,
    source: DiscreteMetric,
    target: DiscreteMetric,
    init: VertexMap | None = None,
    tol: float = 1e-9,
    max_iter: int = 20,
) -> tuple[VertexMap, HarmonicReport]:
    """Energy-minimizing map from ``(mesh, [source])`` to ``target`` isotopic to the identity."""
    t0 = time.perf_counter()
    m = VertexMap.identity(mesh, target) if init is None else VertexMap(mesh, target, np.asarray(init.delta, dtype=complex))
    free = np.flatnonzero(~mesh.is_marked)
    rep = HarmonicReport()
    lin = _linearize(mesh, source, m)
    if np.any(face_jacobians(lin) <= 0):
        raise FaceFlipError("initial map is not locally injective")
    scale = np.sqrt(lin.area.sum())
    for it in range(max_iter + 1):
        g = _gradient(lin)
        res = float(np.max(np.abs(g[free]) / lin.vertex_area[free])) / scale if len(free) else 0.0
        e = anticonformal_energy(lin)
        rep.history.append(res)
        rep.energy.append(e)
        rep.iterations = it
        if res <= tol:
            rep.converged = True
            break
        if it == max_iter:
            break
        Mf = lin.M[:, free]
        W = sp.diags(lin.area)
        H = (Mf.conj().T @ W @ Mf).tocsc()
        rhs = -(Mf.conj().T @ (lin.area * lin.b0))
        step = np.zeros(mesh.n_vertices, dtype=complex)
        step[free] = spla.spsolve(H, rhs)
        s = 1.0
        while True:
            trial = VertexMap(mesh, target, m.delta + s * step)
            tl = _linearize(mesh, source, trial)
            if np.all(face_jacobians(tl) > 0) and anticonformal_energy(tl) <= e * (1 + 1e-12) + 1e-300:
                break
            s *= 0.5
            if s < 1e-8:
                rep.wall_time = time.perf_counter() - t0
                raise FaceFlipError("every step along the Newton direction flips a face")
        m, lin = trial, tl
    rep.residual = rep.history[-1]
    rep.dirichlet = dirichlet_energy(lin)
    rep.wall_time = time.perf_counter() - t0
    if not rep.converged:
        raise NonConvergenceError(f"harmonic map not converged (tension {rep.residual:.3e})", rep)
    return m, rep


def face_differentials(mesh: ConeMesh, source: DiscreteMetric, m: VertexMap) -> tuple[np.ndarray, np.ndarray]:
    """``(a, b)`` per face, source frames to target frames."""
    src = FaceGeometry.build(mesh, source).layout
    img = m.image_layout()
    return conformal_part(src, img), anticonformal_part(src, img)


def hopf_differential(mesh: ConeMesh, source: DiscreteMetric, m: VertexMap) -> QuadDiff:
    a, b = face_differentials(mesh, source, m)
    if np.any(np.abs(a) ** 2 - np.abs(b) ** 2 <= 0):
        raise FaceFlipError("degenerate face differential")
    return QuadDiff(a * np.conj(b), source.lengths(mesh))


def pullback_forms(mesh: ConeMesh, source: DiscreteMetric, m: VertexMap) -> np.ndarray:
    """``D^T D`` per face in source frames, ``D`` the face map's real Jacobian."""
    a, b = face_differentials(mesh, source, m)
    D = np.empty((len(a), 2, 2))
    D[:, 0, 0] = (a + b).real
    D[:, 0, 1] = (-a + b).imag
    D[:, 1, 0] = (a + b).imag
    D[:, 1, 1] = (a - b).real
    return np.swapaxes(D, 1, 2) @ D


def area_ratio(mesh: ConeMesh, source: DiscreteMetric, m1: VertexMap, m2: VertexMap) -> np.ndarray:
    """Per-face ``det`` of ``u2 o u1^{-1}`` measured from ``g1`` to ``g2``."""
    a1, b1 = face_differentials(mesh, source, m1)
    a2, b2 = face_differentials(mesh, source, m2)
    return (np.abs(a2) ** 2 - np.abs(b2) ** 2) / (np.abs(a1) ** 2 - np.abs(b1) ** 2)


# -- norms and comparisons ---------------------------------------------------------


def l2_norm(mesh: ConeMesh, q: QuadDiff) -> float:
    """``sqrt(sum_f A_f |f|^2)`` in the frames the differential is stored in."""
    a = FaceGeometry.build(mesh, q.frame_lengths).areas
    return float(np.sqrt(np.sum(a * np.abs(q.coeffs) ** 2)))


def relative_error(mesh: ConeMesh, q: QuadDiff, ref: QuadDiff) -> float:
    """``|q - ref| / |ref|`` in the frames of ``ref``; the plain norm when ``ref = 0``."""
    d = QuadDiff(q.coefficients_in(mesh, ref.frame_lengths) - ref.coeffs, ref.frame_lengths)
    n = l2_norm(mesh, ref)
    return l2_norm(mesh, d) / n if n > 0 else l2_norm(mesh, d)


def beltrami(mesh: ConeMesh, src: DiscreteMetric | np.ndarray, dst: DiscreteMetric | np.ndarray) -> np.ndarray:
    """Per-face Beltrami coefficient of the identity map between two metrics."""
    ls = FaceGeometry.build(mesh, src).layout
    ld = FaceGeometry.build(mesh, dst).layout
    return anticonformal_part(ls, ld) / conformal_part(ls, ld)


def class_distance(mesh: ConeMesh, c: DiscreteMetric, ref: DiscreteMetric) -> float:
    """Area-weighted RMS of the Beltrami coefficient from ``ref`` to ``c``."""
    a = FaceGeometry.build(mesh, ref).areas
    mu = beltrami(mesh, ref, c)
    return float(np.sqrt(np.sum(a * np.abs(mu) ** 2) / a.sum()))


def _affine_inverse_apply(src: np.ndarray, dst: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Per face, apply the inverse of the affine map ``src -> dst`` to ``pts``."""
    a = conformal_part(src, dst)
    b = anticonformal_part(src, dst)
    t = dst[:, :1] - a[:, None] * src[:, :1] - b[:, None] * np.conj(src[:, :1])
    w = pts - t
    det = np.abs(a) ** 2 - np.abs(b) ** 2
    return (np.conj(a)[:, None] * w - b[:, None] * np.conj(w)) / det[:, None]


def middle_comparison(
    mesh: ConeMesh, res: "MiddleResult", g0: DiscreteMetric, q0: QuadDiff
) -> tuple[float, float]:
    """Class and differential errors of a recovered middle point against ``(g0, q0)``.

    The recovered class is only determined up to isotopy, so it is compared
    through the map ``chi = id^{-1} o u1`` from the recovered structure to
    ``g0``, where ``id`` is the face-wise identity from ``g0`` to ``g1``: the
    class error is the RMS Beltrami coefficient of ``chi`` and the
    differential is pushed through ``chi`` before comparing with ``q0``.
    """
    src = FaceGeometry.build(mesh, res.conformal).layout
    lay0 = FaceGeometry.build(mesh, g0).layout
    lay1 = FaceGeometry.build(mesh, res.map1.target).layout
    chi = _affine_inverse_apply(lay0, lay1, res.map1.image_layout())
    a = conformal_part(src, chi)
    mu = anticonformal_part(src, chi) / a
    area = FaceGeometry.build(mesh, g0).areas
    cerr = float(np.sqrt(np.sum(area * np.abs(mu) ** 2) / area.sum()))
    q_pushed = QuadDiff(res.q.coeffs / a**2, g0.lengths(mesh))
    return cerr, relative_error(mesh, q_pushed, q0.in_frames(mesh, g0))


def forms_to_metric(mesh: ConeMesh, forms: np.ndarray, frame_lengths: np.ndarray) -> DiscreteMetric:
    from .mess import metric_from_forms

    return metric_from_forms(mesh, forms, frame_lengths)


# -- middle point ----------------------------------------------------------------


@dataclass
class MiddleResult:
    conformal: DiscreteMetric
    q: QuadDiff  # i * Phi(u1), in the frames of ``conformal``
    map1: VertexMap
    map2: VertexMap
    ratio: float  # |Phi1 + Phi2| / |Phi1|
    outer: int
    converged: bool
    history: list[float] = field(default_factory=list)


def middle_residuals(mesh, source, g1, g2, tol=1e-9, max_iter=20):
    m1, _ = harmonic_map(mesh, source, g1, tol=tol, max_iter=max_iter)
    m2, _ = harmonic_map(mesh, source, g2, tol=tol, max_iter=max_iter)
    p1 = hopf_differential(mesh, source, m1)
    p2 = hopf_differential(mesh, source, m2)
    n1 = l2_norm(mesh, p1)
    s = l2_norm(mesh, QuadDiff(p1.coeffs + p2.coeffs, p1.frame_lengths))
    # below the roundoff floor both differentials vanish and the ratio is meaningless
    ratio = s / n1 if n1 > _hopf_floor(mesh, source) else s
    return m1, m2, p1, p2, ratio


def _hopf_floor(mesh: ConeMesh, source: DiscreteMetric) -> float:
    return 1e-10 * float(np.sqrt(FaceGeometry.build(mesh, source).areas.sum()))


def find_middle(
    mesh: ConeMesh,
    g1: DiscreteMetric,
    g2: DiscreteMetric,
    tol: float = 0.05,
    max_outer: int = 10,
    harmonic_tol: float = 1e-9,
) -> MiddleResult:
    """Fixed-point search for the class where the two Hopf differentials cancel.

    Starts from ``[g1 + g2]`` (squared lengths added) and replaces the class
    by ``[u1^* g1 + u2^* g2]`` until ``|Phi1 + Phi2| / |Phi1| <= tol``.
    Failure to converge is reported in the result, not raised.
    """
    l1, l2 = g1.lengths(mesh), g2.lengths(mesh)
    c = DiscreteMetric.from_lengths(mesh, np.sqrt(l1**2 + l2**2))
    hist = []
    for outer in range(1, max_outer + 1):
        m1, m2, p1, p2, ratio = middle_residuals(mesh, c, g1, g2, harmonic_tol)
        hist.append(ratio)
        if ratio <= tol or l2_norm(mesh, p1) <= _hopf_floor(mesh, c):
            return MiddleResult(c, p1.scaled(1j), m1, m2, ratio, outer, True, hist)
        if outer == max_outer:
            break
        forms = pullback_forms(mesh, c, m1) + pullback_forms(mesh, c, m2)
        c = forms_to_metric(mesh, forms, c.lengths(mesh))
    return MiddleResult(c, p1.scaled(1j), m1, m2, ratio, outer, False, hist)


# -- re-marking ------------------------------------------------------------------


def displaced_metric(mesh: ConeMesh, metric: DiscreteMetric, delta: np.ndarray) -> DiscreteMetric:
    """Pull ``metric`` back by the vertex self-map ``v -> v + delta_v`` (star charts).

    Each edge is measured in both incident faces between the displaced
    endpoints and the two lengths are averaged.
    """
    img = VertexMap(mesh, metric, np.asarray(delta, dtype=complex)).image_layout()
    fl = np.abs(np.roll(img, -2, axis=1) - np.roll(img, -1, axis=1))
    acc = np.bincount(mesh.face_edges.ravel(), weights=fl.ravel(), minlength=mesh.n_edges)
    return DiscreteMetric.from_lengths(mesh, acc / 2.0)


def smooth_displacement(mesh: ConeMesh, metric: DiscreteMetric, amplitude: float, seed: int = 0) -> np.ndarray:
    """Random smooth displacement vanishing at marked vertices.

    White noise smoothed twice by an implicit heat step whose length scale
    is a fifth of the surface's diameter scale ``sqrt(area)``, then scaled so
    its largest entry is ``amplitude`` times the mean edge length.
    """
    from .mesh import cotan_laplacian, vertex_areas

    rng = np.random.default_rng(seed)
    n = mesh.n_vertices
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    L = cotan_laplacian(mesh, metric)
    va = vertex_areas(mesh, metric)
    A = sp.diags(va)
    ell2 = 0.04 * va.sum()
    solve = spla.factorized((A - ell2 * L).tocsc())
    for _ in range(2):
        x = solve(A @ x.real) + 1j * solve(A @ x.imag)
        x[mesh.is_marked] = 0.0
    h = np.mean(metric.lengths(mesh))
    return amplitude * h * x / np.abs(x).max()


# -- map file --------------------------------------------------------------------


def format_map(m: VertexMap) -> str:
    lines = ["# vertex map: displacement in the target star chart of each vertex"]
    lines += [f"m {v} {v} {d.real:.17g} {d.imag:.17g}" for v, d in enumerate(m.delta)]
    return "\n".join(lines) + "\n"


def parse_map(text: str, mesh: ConeMesh, target: DiscreteMetric) -> VertexMap:
    delta = np.zeros(mesh.n_vertices, dtype=complex)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] != "m" or len(tok) != 5:
            raise ValueError(f"line {lineno}: cannot parse {raw!r}")
        v, chart = int(tok[1]), int(tok[2])
        if chart != v:
            raise ValueError(f"line {lineno}: only vertex star charts are supported")
        delta[v] = float(tok[3]) + 1j * float(tok[4])
    if np.any(delta[mesh.is_marked] != 0):
        raise ValueError("marked vertices must map to themselves")
    return VertexMap(mesh, target, delta)


def save_map(m: VertexMap, path) -> None:
    Path(path).write_text(format_map(m))
