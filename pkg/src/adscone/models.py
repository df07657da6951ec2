"""Closed-form model geometries: the hyperbolic cone, the AdS cone and a smoothed cap.

Angular coordinates run over ``[0, 2*pi)`` and carry the factor
``(theta / 2*pi)^2``, in every chart.

The smoothed cap is a surface of revolution ``x = (r cos phi, r sin phi, f(r))``
in the projective (Klein) model of hyperbolic 3-space.  Lines through the
origin are geodesics there, so the linear tail ``f = -m r`` is a hyperbolic
cone whose angle is ``2*pi / sqrt(1 + m^2)``; ``m = sqrt((2*pi/theta)^2 - 1)``
makes it ``theta``.  On ``[0, eps]`` the slope is ``f' = -m g(x/eps)`` with
``g(t) = (1 - exp(-lam t)) / (1 - exp(-lam))``, which rises from 0 to 1, so
the profile is C^1, strictly concave, flat on the axis, and ``lam`` is fixed
by ``f(0) = -eps^2 m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    pass


def _check_theta(theta: float) -> None:
    if not 0.0 < theta < TWO_PI:
        raise DomainError(f"theta = {theta} is outside (0, 2*pi)")


def eval_h_theta(theta: float, rho: float, phi: float = 0.0) -> np.ndarray:
    """Metric of the hyperbolic cone in geodesic polar coordinates ``(rho, phi)``."""
    if theta <= 0.0 or theta > TWO_PI:
        raise DomainError(f"theta = {theta} is outside (0, 2*pi]")
    if not rho > 0.0:
        raise DomainError("rho must be positive")
    s = theta / TWO_PI * math.sinh(rho)
    return np.array([[1.0, 0.0], [0.0, s * s]])


def circumference_ratio(theta: float, rho: float) -> float:
    """``length(C_rho) / rho``; tends to ``theta`` as ``rho -> 0``."""
    g = eval_h_theta(theta, rho)
    return TWO_PI * math.sqrt(g[1, 1]) / rho


def eval_g_theta(theta: float, t: float, rho: float, phi: float = 0.0, form: str = "slab") -> np.ndarray:
    """AdS cone metric in coordinates ``(t, rho, phi)``.

    ``slab``:   ``-cosh^2 rho dt^2 + drho^2 + (theta/2pi)^2 sinh^2 rho dphi^2``
    ``warped``: ``-dt^2 + cos^2 t (drho^2 + (theta/2pi)^2 sinh^2 rho dphi^2)``, ``|t| < pi/2``
    """
    h = eval_h_theta(theta, rho, phi)
    g = np.zeros((3, 3))
    if form == "slab":
        g[0, 0] = -math.cosh(rho) ** 2
        g[1:, 1:] = h
    elif form == "warped":
        if not abs(t) < math.pi / 2:
            raise DomainError("the warped chart needs |t| < pi/2")
        g[0, 0] = -1.0
        g[1:, 1:] = math.cos(t) ** 2 * h
    else:
        raise DomainError(f"unknown chart form {form!r}")
    return g


# -- curvature by finite differences ---------------------------------------------


def _d(fn: Callable, x: np.ndarray, i: int, h: float):
    """Fourth-order central difference of ``fn`` along coordinate ``i``."""
    e = np.zeros_like(x)
    e[i] = h
    return (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)


def christoffel(metric: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """``Gamma[a, b, c] = Gamma^a_{bc}``."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    dg = np.stack([_d(metric, x, i, h) for i in range(n)])  # dg[c, a, b] = d_c g_ab
    gi = np.linalg.inv(metric(x))
    low = 0.5 * (np.einsum("cab->abc", dg) + np.einsum("bac->abc", dg) - dg)  # Gamma_{a b c}
    return np.einsum("ad,dbc->abc", gi, low)


def riemann(metric: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Fully covariant ``R_{abcd}`` with ``R(X,Y)Z = nabla_X nabla_Y Z - ...``.

    For constant sectional curvature ``K``: ``R_abcd = K (g_ad g_bc - g_ac g_bd)``.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    G = christoffel(metric, x, h * 0.1)
    dG = np.stack([_d(lambda y: christoffel(metric, y, h * 0.1), x, i, h) for i in range(n)])  # dG[e, a, b, c]
    # R^a_{bcd} = d_c G^a_{db} - d_d G^a_{cb} + G^a_{ce} G^e_{db} - G^a_{de} G^e_{cb}
    R = (
        np.einsum("cadb->abcd", dG)
        - np.einsum("dacb->abcd", dG)
        + np.einsum("ace,edb->abcd", G, G)
        - np.einsum("ade,ecb->abcd", G, G)
    )
    low = np.einsum("ae,ebcd->abcd", metric(x), R)
    # R_{abcd} above is g(R(c,d)b, a); reorder to R(X=a, Y=b, Z=c, W=d) = g(R(a,b)c, d)
    return np.einsum("dcab->abcd", low)


def constant_curvature_defect(metric: Callable, x, K: float = -1.0, h: float = 1e-3) -> float:
    """Max over components of ``|R_abcd - K (g_ad g_bc - g_ac g_bd)|``."""
    x = np.asarray(x, dtype=float)
    g = metric(x)
    R = riemann(metric, x, h)
    model = K * (np.einsum("ad,bc->abcd", g, g) - np.einsum("ac,bd->abcd", g, g))
    return float(np.max(np.abs(R - model)))


def sectional_curvatures(metric: Callable, x, h: float = 1e-3) -> dict[tuple[int, int], float]:
    """Sectional curvature of each coordinate plane."""
    x = np.asarray(x, dtype=float)
    g = metric(x)
    R = riemann(metric, x, h)
    n = len(x)
    out = {}
    for i in range(n):
        for j in range(i + 1, n):
            den = g[i, i] * g[j, j] - g[i, j] ** 2
            out[(i, j)] = float(R[i, j, j, i] / den)
    return out


def g_theta_fn(theta: float, form: str = "slab") -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: eval_g_theta(theta, x[0], x[1], x[2], form)


# -- smoothing profile -------------------------------------------------------------


def cone_slope(theta: float) -> float:
    """Slope of the Klein-model cone with hyperbolic cone angle ``theta``."""
    return math.sqrt((TWO_PI / theta) ** 2 - 1.0)


def _g_integral(lam: float) -> float:
    # integral of g over [0, 1]; -> 1/2 as lam -> 0 and -> 1 as lam -> infinity
    if lam < 1e-6:
        return 0.5 + lam / 12.0
    return 1.0 / -math.expm1(-lam) - 1.0 / lam


@dataclass(frozen=True)
class SmoothingProfile:
    theta: float
    epsilon: float
    slope: float
    lam: float

    def _g(self, t):
        return np.expm1(-self.lam * t) / math.expm1(-self.lam)

    def _G(self, t):
        # integral of g from 0 to t
        lam = self.lam
        return (t + np.expm1(-lam * t) / lam) / -math.expm1(-lam)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        eps, m = self.epsilon, self.slope
        t = np.clip(x / eps, 0.0, 1.0)
        inner = -eps * eps * m - m * eps * self._G(t)
        return np.where(x >= eps, -m * x, inner)

    def d1(self, x):
        x = np.asarray(x, dtype=float)
        t = np.clip(x / self.epsilon, 0.0, 1.0)
        return np.where(x >= self.epsilon, -self.slope, -self.slope * self._g(t))

    def d2(self, x):
        x = np.asarray(x, dtype=float)
        eps, lam = self.epsilon, self.lam
        t = np.clip(x / eps, 0.0, 1.0)
        gp = lam * np.exp(-lam * t) / -math.expm1(-lam)
        return np.where(x >= eps, 0.0, -self.slope * gp / eps)

    @property
    def rho_eps(self) -> float:
        """Hyperbolic distance from the apex to the circle ``r = eps`` on the tail."""
        return math.atanh(self.epsilon * math.sqrt(1.0 + self.slope**2))


def smoothing_profile(theta: float, epsilon: float) -> SmoothingProfile:
    _check_theta(theta)
    if not 0.0 < epsilon < 1.0:
        raise DomainError("epsilon must lie in (0, 1)")
    if epsilon >= 0.5:
        raise DomainError("epsilon must be below 1/2 for a concave C^1 cap with f(0) = -eps^2 m")
    if epsilon >= theta / TWO_PI:
        raise DomainError("epsilon must be below theta/(2 pi) so the cap stays inside the model")
    target = 1.0 - epsilon
    hi = 1.0
    while _g_integral(hi) < target:
        hi *= 2.0
    lam = brentq(lambda s: _g_integral(s) - target, 1e-9, hi, xtol=1e-15, rtol=1e-15)
    return SmoothingProfile(theta, epsilon, cone_slope(theta), lam)


def cap_metric(p: SmoothingProfile, r):
    """``(E, G)`` of the cap in coordinates ``(r, phi)``, and their ``r``-derivatives.

    Klein model: ``ds^2 = |dx|^2 / D + (x.dx)^2 / D^2`` with ``D = 1 - |x|^2``.
    """
    r = np.asarray(r, dtype=float)
    f, f1, f2 = p(r), p.d1(r), p.d2(r)
    D = 1.0 - r * r - f * f
    P = r + f * f1
    P1 = 1.0 + f1 * f1 + f * f2
    D1 = -2.0 * P
    D2 = -2.0 * P1
    E = (1.0 + f1 * f1) / D + P * P / D**2
    G = r * r / D
    E1 = 2.0 * f1 * f2 / D - (1.0 + f1 * f1) * D1 / D**2 + 2.0 * P * P1 / D**2 - 2.0 * P * P * D1 / D**3
    G1 = 2.0 * r / D - r * r * D1 / D**2
    G2 = 2.0 / D - 4.0 * r * D1 / D**2 - r * r * D2 / D**2 + 2.0 * r * r * D1 * D1 / D**3
    return E, G, E1, G1, G2


def cap_curvature(p: SmoothingProfile, r):
    """Gauss curvature of ``E dr^2 + G dphi^2`` (functions of ``r`` only)."""
    E, G, E1, G1, G2 = cap_metric(p, r)
    W = np.sqrt(E * G)
    return -(G2 / W - G1 * (E1 * G + E * G1) / (2.0 * W**3)) / (2.0 * W)


def cap_integrated_curvature(p: SmoothingProfile) -> float:
    """Curvature of the cap in excess of the ``-1`` background, by quadrature.

    Integrates ``K dA`` over ``r <= eps`` and adds back the area of the model
    cone disk of the same boundary circle; Gauss-Bonnet makes this ``2*pi - theta``.
    """

    def density(r):
        E, G, *_ = cap_metric(p, r)
        return float(cap_curvature(p, r) * np.sqrt(E * G))

    inner, _ = quad(density, 0.0, p.epsilon, epsabs=1e-13, epsrel=1e-12, limit=200)
    return TWO_PI * inner + p.theta * (math.cosh(p.rho_eps) - 1.0)


def cap_annulus_curvature(p: SmoothingProfile, r0: float, r1: float) -> float:
    """``integral K dA`` over ``r0 <= r <= r1`` of the cap."""

    def density(r):
        E, G, *_ = cap_metric(p, r)
        return float(cap_curvature(p, r) * np.sqrt(E * G))

    pts = [p.epsilon] if r0 < p.epsilon < r1 else None
    val, _ = quad(density, r0, r1, epsabs=1e-13, epsrel=1e-12, limit=200, points=pts)
    return TWO_PI * val


def projected_rho(p: SmoothingProfile, r):
    """Radial coordinate ``artanh |x|``: distance from the model's origin."""
    r = np.asarray(r, dtype=float)
    return np.arctanh(np.sqrt(r * r + p(r) ** 2))


def smoothed_h(p: SmoothingProfile, rho: float) -> np.ndarray:
    """The cap metric in projected polar coordinates ``(rho, phi)``.

    Beyond ``rho_eps`` the cap is the exact cone and this returns
    :func:`eval_h_theta` itself.
    """
    if not rho > 0.0:
        raise DomainError("rho must be positive")
    if rho >= p.rho_eps:
        return eval_h_theta(p.theta, rho)
    return _smoothed_h_generic(p, rho)


def _smoothed_h_generic(p: SmoothingProfile, rho: float) -> np.ndarray:
    """Pull ``E dr^2 + G dphi^2`` to the coordinate ``rho = artanh |x(r)|``."""
    hi = p.epsilon
    while projected_rho(p, hi) < rho:
        hi *= 1.5
    r = brentq(lambda s: float(projected_rho(p, s)) - rho, 0.0, hi, xtol=1e-16, rtol=1e-15)
    E, G, *_ = cap_metric(p, r)
    f, f1 = float(p(r)), float(p.d1(r))
    n = math.sqrt(r * r + f * f)
    drho_dr = (r + f * f1) / (n * (1.0 - n * n))
    return np.array([[float(E) / drho_dr**2, 0.0], [0.0, float(G)]])
