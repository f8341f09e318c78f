import numpy as np
import pytest

from conftest import random_unit
from lcic.errors import DegenerateEllipse, NonUnitTangent
from lcic.geometry import (contact_ellipse, ellipse_constraint_value, hat, orthonormalize,
                           rot_axis, tangent_projection)


def test_hat_matches_cross(rng):
    for _ in range(100):
        v, w = rng.normal(size=(2, 3))
        np.testing.assert_allclose(hat(v) @ w, np.cross(v, w), atol=1e-14)
    np.testing.assert_allclose(hat(v), -hat(v).T)


def test_rot_axis_is_rotation(rng):
    R = rot_axis(rng.normal(size=3), 0.7)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-14)
    assert np.linalg.det(R) == pytest.approx(1.0)
    np.testing.assert_allclose(rot_axis([0, 0, 1], np.pi / 2) @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_orthonormalize_keeps_proper_rotation(rng):
    R = orthonormalize(rot_axis([1, 2, 3], 1.0) + 1e-3 * rng.normal(size=(3, 3)))
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-13)
    assert np.linalg.det(R) > 0


def test_tangent_projection_idempotent(rng):
    for _ in range(100):
        t = random_unit(rng)
        P = tangent_projection(t)
        assert np.max(np.abs(P @ P - P)) < 1e-12
        np.testing.assert_allclose(P @ t, 0.0, atol=1e-15)


def test_tangent_projection_rejects_non_unit():
    with pytest.raises(NonUnitTangent):
        tangent_projection([0, 0, 2.0])


def test_parallel_tangents_give_circle():
    e = contact_ellipse([0, 0, 1], [0, 0, 1], 2.0, 0.5)
    assert e.d1 == pytest.approx(1.5) and e.d2 == pytest.approx(1.5)
    assert e.theta == 0.0


def test_ellipse_eigenvalues(rng):
    for _ in range(100):
        t_out = random_unit(rng)
        tilt = rng.uniform(0, 0.6)
        t_in = rot_axis(np.cross(t_out, random_unit(rng)), tilt) @ t_out
        e = contact_ellipse(t_out, t_in, 2.0, 0.5)
        ev = np.sort(np.linalg.eigvalsh(e.Q))
        np.testing.assert_allclose(ev, np.sort([0.0, 1 / e.d1**2, 1 / e.d2**2]),
                                   atol=1e-12 * ev.max())
        assert e.d1 == pytest.approx(1.5)
        assert e.d2 == pytest.approx(2.0 - 0.5 / np.cos(e.theta))
        np.testing.assert_allclose(e.Q @ t_out, 0.0, atol=1e-10)


def test_steep_crossing_raises_or_clamps():
    t_in = np.array([np.sin(1.4), 0, np.cos(1.4)])
    with pytest.raises(DegenerateEllipse):
        contact_ellipse([0, 0, 1], t_in, 1.0, 0.9)
    e = contact_ellipse([0, 0, 1], t_in, 1.0, 0.9, clamp=True)
    assert e.clamped and e.d2 > 0


def test_bore_too_small():
    with pytest.raises(DegenerateEllipse):
        contact_ellipse([0, 0, 1], [0, 0, 1], 1.0, 1.0)


def test_ellipse_sign_matches_sampling(rng):
    t_out = np.array([0.0, 0.0, 1.0])
    t_in = rot_axis([0, 1, 0], 0.4) @ t_out
    e = contact_ellipse(t_out, t_in, 2.0, 0.5)
    P = tangent_projection(t_out)
    # boundary by parametric sampling: a point is inside iff its radius along its
    # direction is below the boundary radius in that direction
    for _ in range(500):
        off = rng.uniform(-2, 2, size=2)
        a, b = off @ [e.q1[0], e.q1[1]], off @ [e.q2[0], e.q2[1]]
        phi = np.arctan2(b / e.d2, a / e.d1)
        boundary = np.hypot(e.d1 * np.cos(phi), e.d2 * np.sin(phi))
        inside = np.hypot(a, b) < boundary
        p_in = np.array([off[0], off[1], 0.3])
        h = ellipse_constraint_value(p_in, np.zeros(3), P, e.Q)
        if abs(np.hypot(a, b) - boundary) > 1e-9:
            assert (h < 0) == inside
