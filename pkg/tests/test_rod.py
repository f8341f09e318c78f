import numpy as np
import pytest

from conftest import random_rotation
from lcic.errors import DimensionMismatch, RigidTube
from lcic.geometry import hat
from lcic.rod import (RodState, TubeSpec, elastic_energy, integrate_shape, shape_jacobian,
                      stacked_stiffness, stiffness_matrix)


def _rk4_shape(u, ds, p0, R0, sub=100):
    """Fine-step RK4 on p' = R e3, R' = R hat(u) across every segment."""
    def f(y, uk):
        R = y[3:].reshape(3, 3)
        return np.concatenate([R[:, 2], (R @ hat(uk)).ravel()])

    y = np.concatenate([p0, R0.ravel()])
    h = ds / sub
    out = []
    for uk in u:
        for _ in range(sub):
            k1 = f(y, uk)
            k2 = f(y + 0.5 * h * k1, uk)
            k3 = f(y + 0.5 * h * k2, uk)
            k4 = f(y + h * k3, uk)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out.append(y[:3].copy())
    return np.array(out)


def test_stiffness_eigenvalues():
    spec = TubeSpec(0.0005, 0.0007, 0.2, bending_stiffness=3.0, poisson_ratio=0.25)
    K = stacked_stiffness(spec, 4)
    ev = np.sort(np.linalg.eigvalsh(K))
    np.testing.assert_allclose(ev, np.sort(np.tile([3.0, 3.0, 3.0 / 1.25], 4)))


def test_rigid_tube_has_no_stiffness():
    with pytest.raises(RigidTube):
        stiffness_matrix(TubeSpec(0.001, 0.002, 0.1, rigid=True, bending_stiffness=0.0))


def test_straight_rod():
    p, R = integrate_shape(np.zeros((10, 3)), (np.zeros(3), np.eye(3)), 0.01)
    np.testing.assert_allclose(p[:, 2], 0.01 * np.arange(1, 11))
    np.testing.assert_allclose(R, np.tile(np.eye(3), (10, 1, 1)))


def test_constant_curvature_is_a_circle():
    k, n, ds = 5.0, 40, 0.005
    p, _ = integrate_shape(np.tile([0.0, k, 0.0], (n, 1)), (np.zeros(3), np.eye(3)), ds)
    s = ds * np.arange(1, n + 1)
    np.testing.assert_allclose(p[:, 0], (1 - np.cos(k * s)) / k, atol=1e-14)
    np.testing.assert_allclose(p[:, 2], np.sin(k * s) / k, atol=1e-14)


def test_integration_matches_fine_rk4(rng):
    for _ in range(3):
        u = rng.normal(scale=10.0, size=(12, 3))
        p0, R0 = rng.normal(size=3), random_rotation(rng)
        p, R = integrate_shape(u, (p0, R0), 0.01)
        np.testing.assert_allclose(p, _rk4_shape(u, 0.01, p0, R0), atol=1e-7)
        np.testing.assert_allclose(np.einsum("kij,kil->kjl", R, R), np.tile(np.eye(3), (12, 1, 1)),
                                   atol=1e-12)


def test_energy_is_sum_of_segment_forms(rng):
    spec = TubeSpec(0.0005, 0.0007, 0.2, bending_stiffness=2.0)
    K3 = stiffness_matrix(spec)
    u, uh = rng.normal(size=(2, 7, 3))
    direct = sum(0.5 * 0.01 * (a - b) @ K3 @ (a - b) for a, b in zip(u, uh))
    assert elastic_energy(u, uh, K3, 0.01) == pytest.approx(direct, rel=1e-13)
    assert elastic_energy(u, uh, stacked_stiffness(K3, 7), 0.01) == pytest.approx(direct, rel=1e-13)
    with pytest.raises(DimensionMismatch):
        elastic_energy(u, uh, np.eye(6))


def test_piecewise_precurvature():
    spec = TubeSpec(0.0005, 0.0007, 0.1, precurvature=[(0.05, (0, 0, 0)), (0.1, (0, 7.0, 0))])
    u = spec.precurvature_on(np.linspace(0.01, 0.1, 10))
    np.testing.assert_array_equal(u[:5, 1], 0.0)
    np.testing.assert_array_equal(u[5:, 1], 7.0)


def fd_jacobian_error(state, rng, eps=1e-6):
    """Relative error of J delta against a central difference of the shape.

    Positions are differenced relative to the base point so that a far-off
    base does not cost digits to cancellation.
    """
    J = shape_jacobian(state)
    d = rng.normal(size=3 * state.n)
    plus = state.with_u(state.u + eps * d.reshape(-1, 3)).p - state.base_p
    minus = state.with_u(state.u - eps * d.reshape(-1, 3)).p - state.base_p
    fd = (plus - minus).ravel() / (2 * eps)
    lin = J @ d
    return np.linalg.norm(fd - lin) / np.linalg.norm(lin)


def random_state(rng, n=None):
    n = n or int(rng.integers(5, 40))
    u = rng.normal(scale=rng.uniform(0.1, 20.0), size=(n, 3))
    return RodState.from_u(u, rng.uniform(0.001, 0.01), rng.normal(size=3), random_rotation(rng))


def test_jacobian_finite_difference(rng):
    for _ in range(10):
        assert fd_jacobian_error(random_state(rng), rng) <= 1e-4


def test_jacobian_is_lower_block_triangular(rng):
    st = random_state(rng, 6)
    J = shape_jacobian(st)
    for k in range(6):
        for j in range(k + 1, 6):
            assert not J[3 * k:3 * k + 3, 3 * j:3 * j + 3].any()


def test_endpoint_rule_is_first_order(rng):
    u = np.tile([0.0, 20.0, 5.0], (8, 1))
    errs = []
    for n in (8, 16):
        st = RodState.from_u(np.repeat(u, n // 8, axis=0), 0.04 / n)
        Je, Jx = shape_jacobian(st, "endpoint"), shape_jacobian(st)
        errs.append(np.abs(Je - Jx).max() / np.abs(Jx).max())
    assert errs[1] < 0.7 * errs[0]
