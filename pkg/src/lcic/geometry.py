"""Frame algebra and the admissible-offset ellipse of a tube crossing a cross-section."""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEllipse, NonUnitTangent

EPS_GEOM = 1e-9
MIN_AXIS_RATIO = 1e-3    # smallest d2 / d1 kept when the crossing angle is clamped
E3 = np.array([0.0, 0.0, 1.0])


def hat(v):
    """Skew-symmetric matrix with ``hat(v) @ w == cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def rot_axis(axis, angle):
    """Rotation by ``angle`` about the unit vector ``axis`` (Rodrigues)."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    H = hat(axis)
    return np.eye(3) + np.sin(angle) * H + (1.0 - np.cos(angle)) * H @ H


def rot_z(angle):
    return rot_axis(E3, angle)


def orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def tangent_projection(t):
    t = np.asarray(t, dtype=float)
    if abs(np.linalg.norm(t) - 1.0) > 1e-6:
        raise NonUnitTangent(f"tangent norm {np.linalg.norm(t):.3g} is not 1")
    return np.eye(3) - np.outer(t, t)


def perpendicular_unit(t):
    """A unit vector normal to ``t``: projected global x, or global y if x is parallel."""
    for ref in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        q = ref - np.dot(ref, t) * t
        nq = np.linalg.norm(q)
        if nq > 1e-6:
            return q / nq
    raise NonUnitTangent("tangent is degenerate")  # pragma: no cover


@dataclass
class ContactEllipse:
    q1: np.ndarray
    q2: np.ndarray
    d1: float
    d2: float
    Q: np.ndarray
    theta: float
    clamped: bool = field(default=False)


def contact_ellipse(t_out, t_in, r_in_outer, r_out_inner, clamp=False, ref=None):
    """Ellipse bounding the inner centerline in the outer tube's cross-section.

    The inner tube of outer radius ``r_out_inner`` crosses the outer tube's
    cross-section (bore radius ``r_in_outer``) at angle ``theta``; its elliptical
    footprint leaves the semi-axes ``d1 = r_in_outer - r_out_inner`` along the
    in-plane projection of ``t_in`` and ``d2 = r_in_outer - r_out_inner sec(theta)``
    across it.

    With ``clamp=True`` theta is limited below the angle at which ``d2``
    vanishes and ``clamped`` is set on the result instead of raising.
    ``ref`` overrides the minor-axis reference used when the tangents are parallel.
    """
    t_out = np.asarray(t_out, dtype=float)
    t_in = np.asarray(t_in, dtype=float)
    for t in (t_out, t_in):
        if abs(np.linalg.norm(t) - 1.0) > 1e-6:
            raise NonUnitTangent(f"tangent norm {np.linalg.norm(t):.3g} is not 1")
    if r_in_outer <= r_out_inner:
        raise DegenerateEllipse("inner tube does not fit in the bore")
    cos_t = np.clip(np.dot(t_out, t_in), -1.0, 1.0)
    # a tube crossing backwards has the same footprint
    theta = float(np.arccos(abs(cos_t)))
    d1 = r_in_outer - r_out_inner
    theta_max = float(np.arccos(r_out_inner / (r_in_outer - MIN_AXIS_RATIO * d1)))
    clamped = False
    if theta > theta_max:
        if not clamp:
            raise DegenerateEllipse(
                f"crossing angle {np.degrees(theta):.2f} deg leaves no room "
                f"(limit {np.degrees(theta_max):.2f} deg)")
        theta = theta_max
        clamped = True

    q1 = t_in - np.dot(t_in, t_out) * t_out
    nq = np.linalg.norm(q1)
    if nq < 1e-12:
        q1 = perpendicular_unit(t_out) if ref is None else _proj_unit(ref, t_out)
    else:
        q1 = q1 / nq
    q2 = np.cross(q1, t_out)
    q2 /= np.linalg.norm(q2)
    d2 = r_in_outer - r_out_inner / np.cos(theta)
    if d2 <= EPS_GEOM:
        raise DegenerateEllipse(f"minor semi-axis {d2:.3g} m is degenerate")
    Q = np.outer(q1, q1) / d1**2 + np.outer(q2, q2) / d2**2
    return ContactEllipse(q1, q2, d1, d2, Q, theta, clamped)


def _proj_unit(ref, t):
    q = np.asarray(ref, float) - np.dot(ref, t) * t
    return q / np.linalg.norm(q)


def ellipse_constraint_value(p_in, p_out, P, Q):
    """``h <= 0`` iff the inner centerline point is inside the admissible ellipse."""
    w = P @ (np.asarray(p_out, float) - np.asarray(p_in, float))
    return float(w @ Q @ w - 1.0)
