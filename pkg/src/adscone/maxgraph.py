"""Maximal graphs over a disk of the hyperbolic cone inside ``-dt^2 + cos^2 t h_theta``.

The graph ``t = u(rho, phi)`` has induced metric ``cos^2 u h - du^2`` and area
density ``cos u sqrt(W)`` with ``W = cos^2 u - |grad u|_h^2``.  Its
Euler-Lagrange equation, in divergence form, is::

    div_h(cos u grad u / sqrt(W)) = sin u (W + cos^2 u) / sqrt(W).

``u = 0`` solves it; nonzero constants do not.  The graph is space-like iff
``|grad u|_h < cos u``, and ``v = (1 - |grad u|^2 / cos^2 u)^{-1/2}``.

Finite volumes on a polar grid: cells are annular sectors, the radial faces
are graded geometrically towards the cone point, and the innermost cell
reaches ``rho = 0`` where the circumference, hence the flux, vanishes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .liouville import NonConvergenceError, SolverReport

TWO_PI = 2.0 * math.pi


class SpacelikeError(RuntimeError):
    pass


def parse_boundary(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """``const:c`` or ``fourier:a1,b1,a2,b2,...`` (``sum a_k cos k phi + b_k sin k phi``)."""
    kind, _, rest = spec.partition(":")
    if kind == "const":
        c = float(rest)
        return lambda phi: np.full_like(np.asarray(phi, dtype=float), c)
    if kind == "fourier":
        coef = [float(x) for x in rest.split(",") if x.strip()]
        if len(coef) % 2:
            raise ValueError("fourier boundary data needs (a_k, b_k) pairs")
        pairs = list(zip(coef[::2], coef[1::2]))

        def f(phi):
            phi = np.asarray(phi, dtype=float)
            out = np.zeros_like(phi)
            for k, (a, b) in enumerate(pairs, 1):
                out += a * np.cos(k * phi) + b * np.sin(k * phi)
            return out

        return f
    raise ValueError(f"unknown boundary spec {spec!r}")


@dataclass(frozen=True, eq=False)
class PolarGrid:
    faces: np.ndarray  # (N+1,) radial cell faces, faces[0] = 0, faces[-1] = R
    rho: np.ndarray  # (N,) cell centers
    phi: np.ndarray  # (M,)
    theta: float

    @classmethod
    def graded(cls, theta: float, radius: float, n_rho: int = 24, n_phi: int = 48, ratio: float = 0.8) -> "PolarGrid":
        if n_phi % 3:
            raise ValueError("n_phi must be a multiple of 3")
        w = ratio ** np.arange(n_rho)[::-1]  # innermost cell is the thinnest
        faces = np.concatenate([[0.0], np.cumsum(w)])
        faces *= radius / faces[-1]
        rho = 0.5 * (faces[1:] + faces[:-1])
        phi = TWO_PI * np.arange(n_phi) / n_phi
        return cls(faces, rho, phi, theta)

    @property
    def dphi(self) -> float:
        return TWO_PI / len(self.phi)

    @property
    def radius(self) -> float:
        return float(self.faces[-1])

    def s(self, rho):
        return self.theta / TWO_PI * np.sinh(rho)

    def cell_areas(self) -> np.ndarray:
        ring = self.theta / TWO_PI * (np.cosh(self.faces[1:]) - np.cosh(self.faces[:-1])) * self.dphi
        return np.repeat(ring[:, None], len(self.phi), axis=1)


@dataclass(frozen=True, eq=False)
class GraphProblem:
    theta: float
    radius: float
    boundary: Callable[[np.ndarray], np.ndarray]
    n_rho: int = 24
    n_phi: int = 48
    ratio: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.theta < math.pi:
            raise ValueError("theta must lie in (0, pi)")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def grid(self) -> PolarGrid:
        return PolarGrid.graded(self.theta, self.radius, self.n_rho, self.n_phi, self.ratio)

    def boundary_values(self) -> np.ndarray:
        return np.asarray(self.boundary(self.grid.phi), dtype=float)

    def check_boundary(self) -> float:
        """Space-like margin of the data: ``1 - Lip`` w.r.t. ``h_theta`` on the rim."""
        phi = np.linspace(0.0, TWO_PI, 2049)
        b = np.asarray(self.boundary(phi), dtype=float)
        if np.max(np.abs(b)) >= math.pi / 2:
            raise SpacelikeError("boundary data leaves (-pi/2, pi/2)")
        lip = np.max(np.abs(np.diff(b)) / np.diff(phi)) / (self.theta / TWO_PI * math.sinh(self.radius))
        if lip >= 1.0:
            raise SpacelikeError(f"boundary data has Lipschitz constant {lip:.3g} >= 1")
        return 1.0 - lip


@dataclass(frozen=True, eq=False)
class GraphSolution:
    problem: GraphProblem
    u: np.ndarray  # (N, M)
    grad_norm: np.ndarray  # |grad u|_h / cos u
    tilt: np.ndarray
    residual: float

    @property
    def grid(self) -> PolarGrid:
        return self.problem.grid


def _derivatives(grid: PolarGrid, u: np.ndarray, b: np.ndarray):
    """Cell-center ``u_rho`` and ``u_phi``; the rim value closes the outer stencil."""
    rho = grid.rho
    ext = np.vstack([u, b[None, :]])
    r_ext = np.concatenate([rho, [grid.radius]])
    ur = np.empty_like(u)
    # non-uniform three-point derivative at interior rings
    hm = r_ext[1:-1] - r_ext[:-2]
    hp = r_ext[2:] - r_ext[1:-1]
    um, u0, up = ext[:-2], ext[1:-1], ext[2:]
    ur[1:] = ((up - u0) * (hm / hp)[:, None] + (u0 - um) * (hp / hm)[:, None]) / (hm + hp)[:, None]
    ur[0] = (ext[1] - ext[0]) / (r_ext[1] - r_ext[0])
    uphi = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2 * grid.dphi)
    return ur, uphi


def _balance(grid: PolarGrid, u: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell flux balance ``div - source`` and the sum of the magnitudes of its terms."""
    dphi = grid.dphi
    s_c = grid.s(grid.rho)[:, None]
    ur, uphi = _derivatives(grid, u, b)

    # radial faces 1..N (face 0 sits on the cone point and carries no flux)
    ext = np.vstack([u, b[None, :]])
    r_ext = np.concatenate([grid.rho, [grid.radius]])
    bphi = (np.roll(b, -1) - np.roll(b, 1)) / (2 * dphi)
    uphi_ext = np.vstack([uphi, bphi[None, :]])
    uf = 0.5 * (ext[1:] + ext[:-1])
    uf[-1] = b
    urf = (ext[1:] - ext[:-1]) / (r_ext[1:] - r_ext[:-1])[:, None]
    upf = 0.5 * (uphi_ext[1:] + uphi_ext[:-1])
    upf[-1] = bphi
    sf = grid.s(grid.faces[1:])[:, None]
    Wf = np.cos(uf) ** 2 - urf**2 - (upf / sf) ** 2
    if np.any(Wf <= 0):
        raise SpacelikeError("graph is not space-like on a radial face")
    fr = np.cos(uf) * urf / np.sqrt(Wf) * sf * dphi
    flux_r = np.vstack([np.zeros((1, u.shape[1])), fr])  # (N+1, M)

    # angular faces j + 1/2
    un = np.roll(u, -1, axis=1)
    ua = 0.5 * (u + un)
    upa = (un - u) / dphi
    ura = 0.5 * (ur + np.roll(ur, -1, axis=1))
    Wa = np.cos(ua) ** 2 - ura**2 - (upa / s_c) ** 2
    if np.any(Wa <= 0):
        raise SpacelikeError("graph is not space-like on an angular face")
    drho = (grid.faces[1:] - grid.faces[:-1])[:, None]
    fa = np.cos(ua) * (upa / s_c) / np.sqrt(Wa) * drho

    div = flux_r[1:] - flux_r[:-1] + fa - np.roll(fa, 1, axis=1)
    Wc = np.cos(u) ** 2 - ur**2 - (uphi / s_c) ** 2
    if np.any(Wc <= 0):
        raise SpacelikeError("graph is not space-like at a cell center")
    area = grid.cell_areas()
    src = np.sin(u) * (Wc + np.cos(u) ** 2) / np.sqrt(Wc) * area
    scale = np.abs(flux_r[1:]) + np.abs(flux_r[:-1]) + np.abs(fa) + np.abs(np.roll(fa, 1, axis=1)) + np.abs(src)
    return div - src, scale


def residual(grid: PolarGrid, u: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise residual (flux balance per unit area), shape (N, M)."""
    return _balance(grid, u, b)[0] / grid.cell_areas()


def imbalance(grid: PolarGrid, u: np.ndarray, b: np.ndarray) -> float:
    """Max flux imbalance relative to the largest flux term.

    Dividing by cell areas instead would amplify roundoff in the tiny cells at
    the cone point far beyond any useful tolerance.
    """
    g, scale = _balance(grid, u, b)
    top = float(scale.max())
    return float(np.max(np.abs(g)) / top) if top > 0 else 0.0


def gradient_norm(grid: PolarGrid, u: np.ndarray, b: np.ndarray) -> np.ndarray:
    ur, uphi = _derivatives(grid, u, b)
    s_c = grid.s(grid.rho)[:, None]
    return np.sqrt(ur**2 + (uphi / s_c) ** 2) / np.cos(u)


def _jacobian(grid: PolarGrid, u: np.ndarray, b: np.ndarray, h: float = 1e-7) -> sp.csr_matrix:
    """Central-difference Jacobian, 9 colors for the 3x3 stencil."""
    N, M = u.shape
    ii, jj = np.meshgrid(np.arange(N), np.arange(M), indexing="ij")
    rows, cols, vals = [], [], []
    for a in range(3):
        for c in range(3):
            mask = ((ii % 3) == a) & ((jj % 3) == c)
            d = np.where(mask, h, 0.0)
            dF = (_balance(grid, u + d, b)[0] - _balance(grid, u - d, b)[0]) / (2 * h)
            di = (a - ii + 1) % 3 - 1
            dj = (c - jj + 1) % 3 - 1
            ci = ii + di
            cj = (jj + dj) % M
            ok = (ci >= 0) & (ci < N)
            rows.append((ii * M + jj)[ok])
            cols.append((ci * M + cj)[ok])
            vals.append(dF[ok])
    n = N * M
    J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return J.tocsr()


def solve_maximal_graph(
    problem: GraphProblem,
    tol: float = 1e-10,
    max_iter: int = 50,
    clip: float = 0.99,
) -> tuple[GraphSolution, SolverReport]:
    """Damped Newton on the flux balance.

    Stops when the relative flux imbalance drops below ``tol``.  Steps that push
    ``|grad u| / cos u`` past ``clip`` are shortened.
    """
    t0 = time.perf_counter()
    problem.check_boundary()
    grid = problem.grid
    b = problem.boundary_values()
    N, M = len(grid.rho), len(grid.phi)
    # start from the rim data extended radially (space-like by the Lipschitz check)
    u = np.repeat(b[None, :], N, axis=0) * (grid.rho / grid.radius)[:, None] ** 2
    rep = SolverReport()
    F = _balance(grid, u, b)[0]
    for it in range(max_iter + 1):
        res = imbalance(grid, u, b)
        rep.history.append(res)
        rep.iterations = it
        if res <= tol:
            rep.converged = True
            break
        if it == max_iter:
            break
        J = _jacobian(grid, u, b)
        step = spla.spsolve(J.tocsc(), -F.ravel()).reshape(N, M)
        t = 1.0
        merit = float(np.sum(F * F))
        while True:
            trial = u + t * step
            try:
                if np.max(gradient_norm(grid, trial, b)) <= clip:
                    Ft = _balance(grid, trial, b)[0]
                    if float(np.sum(Ft * Ft)) <= (1 - 1e-4 * t) * merit:
                        break
            except SpacelikeError:
                pass
            t *= 0.5
            if t < 1e-10:
                rep.residual = res
                rep.wall_time = time.perf_counter() - t0
                raise SpacelikeError("no admissible step keeps the graph space-like")
        u, F = trial, Ft
    rep.residual = rep.history[-1]
    rep.wall_time = time.perf_counter() - t0
    gn = gradient_norm(grid, u, b)
    rep.note = f"space-like margin {1.0 - float(gn.max()):.4g}"
    if not rep.converged:
        raise NonConvergenceError(f"maximal graph not converged (residual {rep.residual:.3e})", rep)
    sol = GraphSolution(problem, u, gn, 1.0 / np.sqrt(1.0 - gn**2), rep.residual)
    return sol, rep


def gradient_decay_profile(sol: GraphSolution) -> tuple[np.ndarray, float]:
    """Rows ``(rho, max_phi |grad u|)`` and the log-log slope over the inner third.

    The slope is ``nan`` when the gradient vanishes identically.
    """
    grid = sol.grid
    g = sol.grad_norm * np.cos(sol.u)
    prof = np.column_stack([grid.rho, g.max(axis=1)])
    k = max(3, len(grid.rho) // 3)
    y = prof[:k, 1]
    if np.all(y > 0):
        slope = float(np.polyfit(np.log(prof[:k, 0]), np.log(y), 1)[0])
    else:
        slope = float("nan")
    return prof, slope


def ring_ratios(sol: GraphSolution) -> tuple[np.ndarray, np.ndarray]:
    """Induced circumference over induced radial length, per ring."""
    grid = sol.grid
    u = sol.u
    b = sol.problem.boundary_values()
    ur, uphi = _derivatives(grid, u, b)
    s_c = grid.s(grid.rho)[:, None]
    circ = np.sum(np.sqrt(np.maximum(np.cos(u) ** 2 * s_c**2 - uphi**2, 0.0)), axis=1) * grid.dphi
    speed = np.sqrt(np.maximum(np.cos(u) ** 2 - ur**2, 0.0)).mean(axis=1)
    # radial length: the first cell center is reached from rho = 0, then trapezoids
    radial = np.empty(len(grid.rho))
    radial[0] = grid.rho[0] * speed[0]
    radial[1:] = radial[0] + np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(grid.rho))
    return grid.rho, circ / radial


def induced_cone_angle(sol: GraphSolution, rings: int = 3) -> float:
    """Extrapolate the ring ratio to ``rho = 0`` by a fit in ``rho^2``."""
    rho, ratio = ring_ratios(sol)
    x = rho[:rings] ** 2
    coef = np.polyfit(x, ratio[:rings], 1)
    return float(coef[1])


def max_principle_gap(sol: GraphSolution) -> float:
    """How far interior values exceed ``[min(0, min b), max(0, max b)]``; <= 0 means satisfied."""
    b = sol.problem.boundary_values()
    hi = max(0.0, float(b.max()))
    lo = min(0.0, float(b.min()))
    return float(max(sol.u.max() - hi, lo - sol.u.min()))


def format_solution(sol: GraphSolution) -> str:
    grid = sol.grid
    lines = ["rho,phi,u,gradNorm"]
    for i, r in enumerate(grid.rho):
        for j, p in enumerate(grid.phi):
            lines.append(f"{r:.17g},{p:.17g},{sol.u[i, j]:.17g},{sol.grad_norm[i, j]:.17g}")
    return "\n".join(lines) + "\n"
