import numpy as np
import pytest

from conftest import random_rotation
from lcic import kernels
from lcic._accel import USE_NUMBA

pytestmark = pytest.mark.skipif(not USE_NUMBA, reason="numba disabled")


def _case(rng, n=60):
    u = rng.normal(scale=8.0, size=(n, 3))
    u[::7] = 0.0                       # exercise the small-angle series
    return u, 0.003, rng.normal(size=3), random_rotation(rng)


def test_integrate_matches_numpy(rng):
    u, ds, p0, R0 = _case(rng)
    pj, Rj = kernels.integrate_jit(u, ds, p0, R0)
    pn, Rn = kernels.integrate_np(u, ds, p0, R0)
    np.testing.assert_allclose(pj, pn, atol=1e-14)
    np.testing.assert_allclose(Rj, Rn, atol=1e-13)


def test_segment_moments_match_numpy(rng):
    u, ds, p0, R0 = _case(rng)
    p, R = kernels.integrate_np(u, ds, p0, R0)
    Aj, Bj = kernels.segment_moments_jit(u, ds, p0, R0, p, R, kernels.GAUSS_X, kernels.GAUSS_W)
    An, Bn = kernels.segment_moments_np(u, ds, p0, R0, p, R)
    np.testing.assert_allclose(Aj, An, atol=1e-15)
    np.testing.assert_allclose(Bj, Bn, atol=1e-15)


def test_nearest_index_matches_exhaustive_scan(rng):
    poly = np.cumsum(rng.normal(size=(80, 3)), axis=0)
    pts = rng.normal(scale=5.0, size=(200, 3))
    got = kernels.nearest_index_jit(pts, poly)
    for i, p in enumerate(pts):
        d = np.linalg.norm(poly - p, axis=1)
        assert got[i] == int(np.flatnonzero(d == d.min())[0])
    np.testing.assert_array_equal(got, kernels.nearest_index_np(pts, poly))


def test_nearest_index_ties_pick_lower_index():
    poly = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    assert kernels.nearest_index_jit(np.zeros((1, 3)), poly)[0] == 0
    assert kernels.nearest_index_np(np.zeros((1, 3)), poly)[0] == 0


def test_footprint_matches_geometry(rng):
    from lcic.geometry import MIN_AXIS_RATIO, contact_ellipse, tangent_projection
    M = np.empty((3, 3))
    for _ in range(300):
        a = rng.normal(size=3)
        a /= np.linalg.norm(a)
        b = a + rng.normal(scale=rng.choice([0.0, 0.1, 1.0, 3.0]), size=3)
        b /= np.linalg.norm(b)
        el = contact_ellipse(a, b, 2.0, 0.5, clamp=True)
        st = kernels.footprint_jit(a, b, 2.0, 0.5, MIN_AXIS_RATIO, M)
        assert bool(st) == el.clamped
        P = tangent_projection(a)
        np.testing.assert_allclose(M, P @ el.Q @ P, atol=1e-12 * np.abs(M).max())
