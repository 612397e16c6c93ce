import itertools
import math

import mpmath
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from yamabe_af.geometry import (ConformalData, DimensionalConstants, GeometryDomainError,
                                conformal_laplace_beltrami, conformal_laplacian,
                                conformal_laplacian_covariant, flat_radial_laplacian,
                                ricci_eigenvalues, riemann_norm_lcf, scalar_curvature,
                                volume_element)
from yamabe_af.grid import GridError, RadialGrid

rs = sp.symbols("r", positive=True)


def sym_laplacian(expr, n):
    return sp.diff(expr, rs, 2) + (n - 1) / rs * sp.diff(expr, rs)


def grid(M=800, h0=0.02, r_max=60.0):
    return RadialGrid.stretched(M, h0, r_max)


def order_of(errors):
    return [math.log2(a / b) for a, b in zip(errors, errors[1:])]


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_constants_relations(n):
    c = DimensionalConstants(n)
    assert c.c_n * (n - 2) == pytest.approx((n - 1) * (n + 2), rel=1e-15)
    assert 4 * c.a * (n - 1) == pytest.approx(n - 2, rel=1e-15)
    assert c.N * (n - 2) == pytest.approx(n + 2, rel=1e-15)
    exact = 2 * mpmath.pi ** (mpmath.mpf(n) / 2) / mpmath.gamma(mpmath.mpf(n) / 2)
    assert c.omega == pytest.approx(float(exact), rel=1e-12)
    assert c.N > 1 and c.a > 0


def test_constants_reject_low_dimension():
    with pytest.raises(ValueError):
        DimensionalConstants(2)


def test_laplacian_of_constant_is_zero():
    g, c = grid(), DimensionalConstants(3)
    assert np.max(np.abs(flat_radial_laplacian(np.ones(g.size), g, c))) == 0.0


def test_laplacian_rejects_short_grid():
    with pytest.raises(GridError):
        RadialGrid(np.array([0.1, 0.2, 0.3]))


@pytest.mark.parametrize("n", [3, 4, 5])
def test_laplacian_gaussian_second_order(n):
    c = DimensionalConstants(n)
    exact = sp.lambdify(rs, sym_laplacian(sp.exp(-rs**2), n), "numpy")
    errs = []
    for M in (400, 800, 1600):
        g = RadialGrid.stretched(M, 4.0 / M, 40.0)
        lap = flat_radial_laplacian(np.exp(-g.r**2), g, c)
        errs.append(np.max(np.abs(lap - exact(g.r))))
    assert min(order_of(errs)) >= 1.9


def test_laplacian_origin_limit():
    # at the first node the stencil tends to n f''(0) = -2n for exp(-r^2)
    for n in (3, 4, 5):
        c = DimensionalConstants(n)
        g = RadialGrid.stretched(4000, 1e-3, 40.0)
        lap = flat_radial_laplacian(np.exp(-g.r**2), g, c)
        assert lap[0] == pytest.approx(-2 * n, rel=1e-4)


def test_gaussian_value_at_one():
    # closed form e^{-r^2}(4r^2 - 6) at r = 1, evaluated to 30 digits
    mpmath.mp.dps = 30
    ref = float(mpmath.e ** -1 * (4 - 6))
    assert ref == pytest.approx(-0.735758882, abs=1e-9)
    c = DimensionalConstants(3)
    g = RadialGrid.stretched(4000, 0.005, 40.0)
    lap = flat_radial_laplacian(np.exp(-g.r**2), g, c)
    val = np.interp(1.0, g.r, lap)
    assert val == pytest.approx(ref, abs=2e-4)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_laplacian_harmonic_tail_second_order(n):
    c = DimensionalConstants(n)
    errs = []
    for M in (400, 800, 1600):
        g = RadialGrid.stretched(M, 4.0 / M, 40.0)
        lap = flat_radial_laplacian(g.r ** (2 - n), g, c)
        inner = (g.r > 1.0) & (g.r < g.r_max * 0.9)
        # relative to the size of the individual terms f'' ~ r^{-n}
        errs.append(np.max(np.abs(lap[inner]) * g.r[inner] ** n))
    assert min(order_of(errs)) >= 1.9


def test_laplace_beltrami_identity_and_constants():
    g, c = grid(), DimensionalConstants(3)
    f = np.exp(-g.r**2)
    np.testing.assert_allclose(conformal_laplace_beltrami(f, np.ones(g.size), g, c),
                               flat_radial_laplacian(f, g, c), rtol=0, atol=1e-13)
    phi = 1 + 0.5 / g.r
    assert np.max(np.abs(conformal_laplace_beltrami(np.full(g.size, 3.0), phi, g, c))) < 1e-12
    with pytest.raises(GeometryDomainError):
        conformal_laplace_beltrami(f, -phi, g, c)


def test_laplace_beltrami_divergence_form_oracle():
    # (1/sqrt g) d_i (sqrt g g^{ij} d_j f) for g = phi^4 delta, n = 3, f = r
    n = 3
    phi = 1 + 1 / (2 * rs)
    f = rs
    p = 4 / sp.Integer(n - 2)
    sqrtg = phi ** (p * n / 2)
    div = sp.diff(sqrtg * phi ** (-p) * rs ** (n - 1) * sp.diff(f, rs), rs)
    oracle = sp.lambdify(rs, sp.simplify(div / (sqrtg * rs ** (n - 1))), "numpy")
    c = DimensionalConstants(n)
    errs = []
    for M in (400, 800, 1600):
        g = RadialGrid.stretched(M, 4.0 / M, 40.0)
        got = conformal_laplace_beltrami(g.r, 1 + 0.5 / g.r, g, c)
        m = (g.r > 1.0) & (g.r < 20.0)
        errs.append(np.max(np.abs(got[m] - oracle(g.r[m]))))
    assert min(order_of(errs)) >= 1.9


def test_scalar_curvature_flat_and_schwarzschild():
    c = DimensionalConstants(3)
    g = grid()
    assert np.max(np.abs(scalar_curvature(np.ones(g.size), g, c))) == 0.0
    errs = []
    for M in (400, 800, 1600):
        g = RadialGrid.stretched(M, 4.0 / M, 40.0)
        R = scalar_curvature(1 + 0.5 / g.r, g, c)
        m = g.r > 1.0
        errs.append(np.max(np.abs(R[m] * g.r[m] ** 3)))
    assert errs[-1] < 1e-3
    assert min(order_of(errs)) >= 1.9


def test_scalar_curvature_closed_form():
    mpmath.mp.dps = 30
    e = mpmath.e ** -1
    ref = float(16 * e * (1 + e) ** -5)
    c = DimensionalConstants(3)
    g = RadialGrid.stretched(4000, 0.005, 40.0)
    R = scalar_curvature(1 + np.exp(-g.r**2), g, c)
    assert np.interp(1.0, g.r, R) == pytest.approx(ref, rel=2e-4)


def test_scalar_curvature_rejects_nonpositive():
    g, c = grid(), DimensionalConstants(3)
    phi = np.ones(g.size)
    phi[5] = 0.0
    with pytest.raises(GeometryDomainError):
        scalar_curvature(phi, g, c)


def test_conformal_laplacian_trivial_cases():
    g, c = grid(), DimensionalConstants(3)
    f = np.exp(-g.r**2)
    np.testing.assert_allclose(conformal_laplacian(f, np.ones(g.size), g, c),
                               flat_radial_laplacian(f, g, c), atol=1e-15)
    w0 = 1 + np.exp(-g.r**2)
    R0 = scalar_curvature(w0, g, c)
    np.testing.assert_allclose(conformal_laplacian(np.ones(g.size), w0, g, c), -c.a * R0,
                               atol=1e-15)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_conformal_covariance_converges(n):
    c = DimensionalConstants(n)
    errs = []
    for M in (500, 1000, 2000):
        g = RadialGrid.stretched(M, 5.0 / M, 500.0)
        w0 = 1 + 0.5 / g.r ** (n - 2)
        f = np.exp(-g.r)
        a = conformal_laplacian(f, w0, g, c)
        b = conformal_laplacian_covariant(f, w0, g, c)
        m = (g.r > 1.0) & (g.r < 500.0)
        errs.append(np.max(np.abs(a - b)[m]))
    assert min(order_of(errs)) >= 1.9


def test_conformal_data_flux_form_matches_covariant_form():
    c = DimensionalConstants(3)
    g = grid()
    w0 = 1 + 0.3 * np.exp(-g.r**2)
    d = ConformalData(g, w0, 1 - 0.1 * np.exp(-g.r))
    f = np.cos(g.r) * np.exp(-g.r**2)
    np.testing.assert_allclose(d.conformal_laplacian(f, c),
                               conformal_laplacian_covariant(f, w0, g, c), atol=1e-12)


def test_conformal_data_product_and_excess():
    g = grid()
    w0 = 1 + 1e-3 / g.r
    u = 1 - 1e-4 * np.exp(-g.r)
    d = ConformalData(g, w0, u)
    np.testing.assert_array_equal(d.U, u * w0)
    np.testing.assert_allclose(d.U_excess, d.U - 1, atol=1e-15)
    d2 = d.with_v(d.v)
    np.testing.assert_array_equal(d2.u, d.u)
    with pytest.raises(GeometryDomainError):
        ConformalData(g, w0, -u)


def test_product_curvature_transformation_law():
    # R(U) U^N = -(1/a) Delta_0 U with U = u w0, against the u-route
    c = DimensionalConstants(3)
    g = grid()
    w0 = 1 + 0.2 * np.exp(-g.r**2)
    u = 1 - 0.05 * np.exp(-0.5 * g.r**2)
    d = ConformalData(g, w0, u)
    lhs = scalar_curvature(d.U, g, c) * d.U**c.N
    np.testing.assert_allclose(lhs, -flat_radial_laplacian(d.U, g, c) / c.a, atol=1e-12)
    np.testing.assert_allclose(d.scalar_curvature(c), scalar_curvature(d.U, g, c), atol=1e-10)


def test_ricci_flat():
    g, c = grid(), DimensionalConstants(3)
    rr, rt = ricci_eigenvalues(np.ones(g.size), g, c)
    assert np.max(np.abs(rr)) < 1e-12 and np.max(np.abs(rt)) < 1e-12


@pytest.mark.parametrize("n,profile", [(3, "schw"), (4, "gauss"), (5, "gauss")])
def test_ricci_trace_matches_scalar_curvature(n, profile):
    c = DimensionalConstants(n)
    errs = []
    for M in (400, 800, 1600):
        g = RadialGrid.stretched(M, 4.0 / M, 40.0)
        phi = 1 + 0.5 / g.r if profile == "schw" else 1 + np.exp(-g.r**2)
        rr, rt = ricci_eigenvalues(phi, g, c)
        R = scalar_curvature(phi, g, c)
        m = (g.r > (1.0 if profile == "schw" else 0.0)) & (g.r < 20)
        errs.append(np.max(np.abs(rr + (n - 1) * rt - R)[m]))
    assert min(order_of(errs)) >= 1.8


def _kulkarni_nomizu_norm(p, n):
    """Brute-force |P (KN) g| over all index quadruples in an orthonormal frame."""
    P = np.diag(p)
    g = np.eye(n)
    total = 0.0
    for i, j, k, l in itertools.product(range(n), repeat=4):
        Rijkl = P[i, k] * g[j, l] + P[j, l] * g[i, k] - P[i, l] * g[j, k] - P[j, k] * g[i, l]
        total += Rijkl**2
    return math.sqrt(total)


@pytest.mark.parametrize("n", [3, 4, 5])
def test_riemann_norm_index_loop_oracle(n):
    c = DimensionalConstants(n)
    rng = np.random.default_rng(3)
    for _ in range(5):
        lr, lt = rng.normal(size=2)
        R = lr + (n - 1) * lt
        shift = R / (2 * (n - 1))
        p = [(lr - shift) / (n - 2)] + [(lt - shift) / (n - 2)] * (n - 1)
        got = riemann_norm_lcf(np.array([lr]), np.array([lt]), np.array([R]), c)[0]
        assert got == pytest.approx(_kulkarni_nomizu_norm(p, n), rel=1e-12)
    # Einstein case
    lam = 0.7
    got = riemann_norm_lcf(np.array([lam]), np.array([lam]), np.array([n * lam]), c)[0]
    shift = n * lam / (2 * (n - 1))
    assert got == pytest.approx(_kulkarni_nomizu_norm([(lam - shift) / (n - 2)] * n, n),
                                rel=1e-12)


def test_riemann_norm_flat_homogeneous_and_shapes():
    c = DimensionalConstants(4)
    z = np.zeros(3)
    assert np.all(riemann_norm_lcf(z, z, z, c) == 0)
    a, b = np.array([0.3, -1.0]), np.array([0.2, 0.5])
    R = a + 3 * b
    np.testing.assert_allclose(riemann_norm_lcf(2 * a, 2 * b, 2 * R, c),
                               2 * riemann_norm_lcf(a, b, R, c), rtol=1e-14)
    with pytest.raises(GridError):
        riemann_norm_lcf(a, b, np.zeros(3), c)


def test_volume_element_euclidean_ball():
    c = DimensionalConstants(3)
    g = RadialGrid.stretched(2000, 0.005, 10.0)
    vol = g.integrate(volume_element(np.ones(g.size), g, c), method="spline")
    assert vol == pytest.approx(4 * math.pi / 3 * 1000, rel=1e-9)
    k = 1.7
    vol_k = g.integrate(volume_element(np.full(g.size, k), g, c), method="spline")
    assert vol_k == pytest.approx(k**6 * vol, rel=1e-13)


def test_volume_element_schwarzschild_ball_quadrature():
    c = DimensionalConstants(3)
    mpmath.mp.dps = 25
    # the integrand is singular like r^-4 at 0; compare on [1, 10]
    ref = float(mpmath.quad(lambda r: 4 * mpmath.pi * (1 + 1 / (2 * r)) ** 6 * r**2, [1, 10]))
    g = RadialGrid.stretched(2000, 0.004, 10.0)
    dens = volume_element(1 + 0.5 / g.r, g, c)
    assert g.integrate(dens, lo=1.0, hi=10.0, method="spline") == pytest.approx(ref, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(0.3, 3.0), st.integers(3, 6))
def test_kernels_exact_on_constants(amp, scale, n):
    c = DimensionalConstants(n)
    g = RadialGrid.stretched(200, 0.05, 100.0)
    w0 = 1 + amp * np.exp(-(g.r / scale) ** 2)
    lap = flat_radial_laplacian(np.full(g.size, amp), g, c)
    assert np.max(np.abs(lap)) <= 1e-13 * amp
    lb = conformal_laplace_beltrami(np.full(g.size, amp), w0, g, c)
    assert np.max(np.abs(lb)) <= 1e-13 * amp


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.5, 3.0), st.integers(3, 6))
def test_riemann_norm_nonnegative(amp, scale, n):
    c = DimensionalConstants(n)
    g = RadialGrid.stretched(200, 0.05, 100.0)
    phi = 1 + amp * np.exp(-(g.r / scale) ** 2)
    rr, rt = ricci_eigenvalues(phi, g, c)
    out = riemann_norm_lcf(rr, rt, scalar_curvature(phi, g, c), c)
    assert np.all(out >= 0)
