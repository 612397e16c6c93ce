import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yamabe_af.grid import MAX_STRETCH, GridError, RadialGrid


def test_stretched_grid_contract():
    g = RadialGrid.stretched(2000, 0.05, 1000.0)
    assert g.size == 2000
    assert g.r[0] > 0 and g.r[-1] == pytest.approx(1000.0, rel=1e-14)
    assert np.all(np.diff(g.r) > 0)
    assert 1.0 <= g.stretch <= MAX_STRETCH
    assert g.h0 == pytest.approx(0.05, rel=0.01)


def test_refined_halves_the_map_spacing():
    g = RadialGrid.stretched(500, 0.2, 1000.0)
    f = g.refined()
    assert f.size == 1000 and f.r_max == pytest.approx(g.r_max, rel=1e-14)
    assert f.h0 == pytest.approx(g.h0 / 2, rel=0.01)


def test_invalid_grids_are_rejected():
    with pytest.raises(GridError):
        RadialGrid(np.array([0.0, 1.0, 2.0, 3.0]))
    with pytest.raises(GridError):
        RadialGrid(np.array([1.0, 3.0, 2.0, 4.0]))
    with pytest.raises(GridError):
        RadialGrid.stretched(10, 0.1, 100.0)
    with pytest.raises(GridError):
        RadialGrid.stretched(100, 0.1, 1e5)  # would need a stretch above 1.1


def test_control_volumes_sum_to_ball_volume():
    g = RadialGrid.stretched(300, 0.05, 50.0)
    for n in (3, 4, 5):
        assert np.sum(g.control_volumes(n)) == pytest.approx(50.0**n / n, rel=1e-13)


def test_derivatives_exact_on_quadratics():
    g = RadialGrid.stretched(300, 0.05, 50.0)
    d1, d2 = g.derivatives(3.0 + 2.0 * g.r**2)
    np.testing.assert_allclose(d1, 4.0 * g.r, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(d2, 4.0, rtol=1e-9)


def test_node_flux_exact_on_harmonic_profiles():
    g = RadialGrid.stretched(400, 0.05, 1000.0)
    for n in (3, 4, 5):
        flux = g.node_flux(0.7 * g.r ** (2 - n), n)
        np.testing.assert_allclose(flux[1:], 0.7 * (2 - n), rtol=1e-10)
        assert np.all(g.node_flux(np.full(g.size, 2.0), n) == 0)


def test_integrate_rules():
    g = RadialGrid.stretched(400, 0.02, 10.0)
    assert g.integrate(np.ones(g.size)) == pytest.approx(10.0, rel=1e-14)
    assert g.integrate(g.r**2, method="spline") == pytest.approx(1000 / 3, rel=1e-8)
    with pytest.raises(ValueError):
        g.integrate(g.r, method="simpson")


def test_truncated_grid_ends_near_radius():
    g = RadialGrid.stretched(1000, 0.05, 1000.0)
    t = g.truncated(250.0)
    assert abs(t.r_max - 250.0) <= np.max(np.diff(g.r))
    np.testing.assert_array_equal(t.r, g.r[: t.size])


@settings(max_examples=40, deadline=None)
@given(st.integers(16, 3000), st.floats(1e-3, 1.0), st.floats(10.0, 1e4))
def test_stretched_grid_properties(M, h0, r_max):
    try:
        g = RadialGrid.stretched(M, h0, r_max)
    except GridError:
        return
    assert g.r[0] > 0 and np.all(np.diff(g.r) > 0)
    assert g.stretch <= MAX_STRETCH
    assert g.r[-1] == pytest.approx(r_max, rel=1e-12)
