import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adscone.models import (
    DomainError,
    cap_annulus_curvature,
    cap_curvature,
    cap_integrated_curvature,
    circumference_ratio,
    cone_slope,
    constant_curvature_defect,
    eval_g_theta,
    eval_h_theta,
    g_theta_fn,
    riemann,
    sectional_curvatures,
    smoothed_h,
    smoothing_profile,
)


def test_smooth_plane():
    assert np.allclose(eval_h_theta(2 * math.pi, 1.0), np.diag([1.0, math.sinh(1.0) ** 2]), rtol=0, atol=1e-15)


def test_circumference_ratio():
    assert abs(circumference_ratio(math.pi / 2, 1e-3) - math.pi / 2) < 1e-6


def test_h_domain():
    with pytest.raises(DomainError):
        eval_h_theta(math.pi / 2, 0.0)
    with pytest.raises(DomainError):
        eval_h_theta(-1.0, 1.0)


def test_slab_form():
    th = 1.3
    for t in (-2.0, 0.0, 5.0):
        g = eval_g_theta(th, t, 1.0)
        want = np.diag([-math.cosh(1) ** 2, 1.0, (th / (2 * math.pi)) ** 2 * math.sinh(1) ** 2])
        assert np.allclose(g, want, rtol=0, atol=1e-15)


def test_warped_form_at_zero():
    g = eval_g_theta(1.0, 0.0, 0.7, form="warped")
    assert g[0, 0] == -1.0
    assert np.array_equal(g[1:, 1:], eval_h_theta(1.0, 0.7))
    with pytest.raises(DomainError):
        eval_g_theta(1.0, 2.0, 0.7, form="warped")
    with pytest.raises(DomainError):
        eval_g_theta(1.0, 0.0, 0.7, form="polar")


@pytest.mark.parametrize("form", ["slab", "warped"])
def test_sectional_curvatures_minus_one(form):
    sec = sectional_curvatures(g_theta_fn(1.0, form), np.array([0.2, 0.7, 0.3]))
    assert all(abs(k + 1) < 1e-6 for k in sec.values())
    assert constant_curvature_defect(g_theta_fn(1.0, form), np.array([0.2, 0.7, 0.3])) < 1e-6


def test_riemann_sign_on_round_sphere():
    # g = diag(1, sin^2 x): K = +1, so R_0101 = K (g_01 g_10 - g_00 g_11) = -sin^2 x
    fn = lambda x: np.diag([1.0, math.sin(x[0]) ** 2])
    R = riemann(fn, np.array([0.8, 0.1]))
    assert abs(R[0, 1, 0, 1] + math.sin(0.8) ** 2) < 1e-6


def test_profile_values():
    th, eps = math.pi / 2, 0.1
    p = smoothing_profile(th, eps)
    m = cone_slope(th)
    assert float(p(0.0)) == pytest.approx(-eps * eps * m, rel=1e-14)
    assert float(p(2 * eps)) == pytest.approx(-2 * eps * m, rel=1e-14)
    assert float(p(eps)) == pytest.approx(-eps * m, rel=1e-12)
    # C^1 with a flat top
    assert abs(float(p.d1(0.0))) < 1e-12
    assert float(p.d1(eps)) == pytest.approx(-m, rel=1e-12)


def test_profile_domain():
    with pytest.raises(DomainError):
        smoothing_profile(math.pi / 2, 0.6)
    with pytest.raises(DomainError):
        smoothing_profile(0.3, 0.1)  # eps above theta / 2 pi
    with pytest.raises(DomainError):
        smoothing_profile(7.0, 0.1)


@pytest.mark.parametrize("theta", [math.pi / 4, math.pi / 2, 3 * math.pi / 4])
@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_cap_gauss_bonnet(theta, eps):
    p = smoothing_profile(theta, eps)
    assert abs(cap_integrated_curvature(p) - (2 * math.pi - theta)) < 1e-6


def test_cap_tail_is_hyperbolic():
    p = smoothing_profile(math.pi / 2, 0.1)
    r = np.linspace(0.11, 0.2, 7)
    assert np.abs(cap_curvature(p, r) + 1).max() < 1e-9


def test_cap_curvature_bounded_below():
    # the concave profile only adds curvature to the -1 background
    p = smoothing_profile(math.pi / 2, 0.1)
    r = np.linspace(0.005, 0.1, 40)
    K = cap_curvature(p, r)
    assert np.all(K >= -1 - 1e-9)
    assert K[0] > 0
    assert cap_annulus_curvature(p, 0.0, 0.05) > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 2.0))
def test_smoothed_h_matches_cone_outside(rho):
    p = smoothing_profile(math.pi / 2, 0.1)
    if rho >= p.rho_eps:
        assert np.array_equal(smoothed_h(p, rho), eval_h_theta(math.pi / 2, rho))


def test_smoothed_h_continuous_across_rho_eps():
    p = smoothing_profile(math.pi / 2, 0.1)
    a = smoothed_h(p, p.rho_eps * (1 - 1e-9))
    b = eval_h_theta(math.pi / 2, p.rho_eps)
    assert np.allclose(a, b, rtol=1e-6, atol=0)
