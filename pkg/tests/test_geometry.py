import numpy as np
import pytest
from hypothesis import given, strategies as st

from extremeregions.distance import km_per_degree, project_local, unproject_local
from extremeregions.geometry import (
    chi2_radius, level_curve, median_center, overlap_fraction, overlap_matrix, shoelace_area,
    sigma_km_to_deg, upper_cholesky,
)


@st.composite
def spd(draw):
    s11 = draw(st.floats(0.01, 100))
    s22 = draw(st.floats(0.01, 100))
    rho = draw(st.floats(-0.95, 0.95))
    s12 = rho * np.sqrt(s11 * s22)
    return np.array([[s11, s12], [s12, s22]])


def test_chi2_radius_value():
    assert chi2_radius(0.99) == pytest.approx(3.0348542587702727, abs=1e-12)
    assert chi2_radius(1 - np.exp(-0.5)) == pytest.approx(1.0)
    for p in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            chi2_radius(p)


@given(spd())
def test_upper_cholesky_reconstructs(s):
    M = upper_cholesky(s)
    assert M[1, 0] == 0
    np.testing.assert_allclose(M.T @ M, s, rtol=1e-12, atol=1e-12 * np.abs(s).max())


def test_upper_cholesky_rejects():
    with pytest.raises(ValueError):
        upper_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        upper_cholesky(np.array([[1.0, 0.1], [0.2, 1.0]]))


@given(spd(), st.floats(0.5, 0.999), st.floats(-50, 50), st.floats(-50, 50))
def test_level_curve_on_quadratic_form(s, p, x0, y0):
    r = chi2_radius(p)
    e = level_curve(s, (x0, y0), r, 180)
    assert e.boundary.shape == (181, 2)
    np.testing.assert_array_equal(e.boundary[0], e.boundary[-1])
    q = e.quadratic_form(e.boundary)
    np.testing.assert_allclose(q, r**2, rtol=1e-9)


@given(spd())
def test_polygon_area_approaches_ellipse_area(s):
    e = level_curve(s, (0, 0), 2.0, 2000)
    assert shoelace_area(e.boundary) == pytest.approx(np.pi * 4 * np.sqrt(np.linalg.det(s)), rel=1e-5)


def test_lens_overlap_closed_form():
    a = level_curve(np.eye(2), (0.0, 0.0), 1.0)
    b = level_curve(np.eye(2), (1.0, 0.0), 1.0)
    lens = (2 * np.pi / 3 - np.sqrt(3) / 2) / np.pi
    assert lens == pytest.approx(0.3910, abs=1e-4)
    assert overlap_fraction(a, b) == pytest.approx(lens, abs=0.01)


def test_overlap_limits_and_symmetry():
    a = level_curve(np.eye(2), (0, 0), 1.0)
    inner = level_curve(np.eye(2) * 0.25, (0.1, 0), 1.0)
    far = level_curve(np.eye(2), (5, 0), 1.0)
    assert overlap_fraction(a, inner) == 1.0
    assert overlap_fraction(a, far) == 0.0
    b = level_curve(np.array([[2, 0.5], [0.5, 1]]), (0.7, 0.3), 1.0)
    assert overlap_fraction(a, b, seed=3) == overlap_fraction(b, a, seed=3)
    m = overlap_matrix([a, b, far])
    np.testing.assert_array_equal(m, m.T)
    assert np.all(np.diag(m) == 1)


def test_median_center():
    assert median_center([[0, 0], [1, 5], [10, 2]]) == (1.0, 2.0)
    assert median_center([[0, 0], [2, 4]]) == (1.0, 2.0)
    with pytest.raises(ValueError):
        median_center(np.zeros((0, 2)))


@given(spd(), st.floats(-60, 60))
def test_km_to_degree_conversion_consistent_with_projection(s, lat0):
    # boundary drawn in km then unprojected equals boundary drawn in degrees
    r = chi2_radius(0.9)
    km = level_curve(s, (0, 0), r, 64)
    deg = level_curve(sigma_km_to_deg(s, lat0), (140.0, lat0), r, 64)
    back = unproject_local(km.boundary, (140.0, lat0))
    np.testing.assert_allclose(back, deg.boundary, atol=1e-9)
    np.testing.assert_allclose(project_local(back, (140.0, lat0)), km.boundary, atol=1e-6)
    kx, ky = km_per_degree(lat0)
    assert sigma_km_to_deg(s, lat0)[1, 1] == pytest.approx(s[1, 1] / ky**2)
