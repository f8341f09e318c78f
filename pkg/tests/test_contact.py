import numpy as np
import pytest

from lcic.channel import straight_channel
from lcic.clearance_solver import build_qcqp
from lcic.contact import ContactModel, build_rows
from lcic.geometry import ellipse_constraint_value
from lcic.rod import TubeSpec, shape_jacobian
from lcic.scene import Scene


def two_tube_scene(n=12):
    inner = TubeSpec(0.0004, 0.0005, 0.06, 0.02, precurvature=(0, 15.0, 0), name="inner")
    outer = TubeSpec(0.0015, 0.0018, 0.06, 0.2, precurvature=(3.0, 0, 0), name="outer")
    return Scene([inner, outer], n=n)


def _linearized(sc, u):
    st = sc.state(u)
    jac, rot = zip(*[shape_jacobian(r, rotation=True) for r in st.rods])
    rows = build_rows(st, sc.pairs(), model=ContactModel(), jacobians=jac, rotations=rot)
    return rows, build_qcqp(rows, sc.k_diag, u, sc.u_hat)


def test_quadratic_model_matches_nonlinear_rows(rng):
    sc = two_tube_scene()
    for _ in range(5):
        u = sc.u_hat + rng.normal(scale=2.0, size=sc.dim)
        rows, prob = _linearized(sc, u)
        du = rng.normal(size=sc.dim)
        du *= 1e-4 / np.linalg.norm(du)
        rows2 = build_rows(sc.state(u + du), sc.pairs(), model=ContactModel())
        same = [m["match"] for m in rows.meta] == [m["match"] for m in rows2.meta]
        assert same
        assert np.max(np.abs(prob.constraint_values(du) - rows2.values())) < 1e-6


def test_frozen_footprint_matches_direct_evaluation(rng):
    sc = two_tube_scene()
    u = sc.u_hat + rng.normal(scale=2.0, size=sc.dim)
    rows, _ = _linearized(sc, u)
    st = sc.state(u)
    for i, meta in enumerate(rows.meta):
        p_in = st.rods[0].p[meta["sample"]]
        p_out = st.rods[1].points_with_base()[meta["match"]]
        h = ellipse_constraint_value(p_in, p_out, np.eye(3), rows.M[i])
        assert rows.quad_values[i] == pytest.approx(h, abs=1e-12)


def test_row_gradients_include_the_tangent(rng):
    sc = two_tube_scene()
    u = sc.u_hat + rng.normal(scale=2.0, size=sc.dim)
    rows, _ = _linearized(sc, u)
    h, grads, _ = rows.linearize()
    d = rng.normal(size=sc.dim)
    for eps in (1e-5, 1e-6):
        h2 = build_rows(sc.state(u + eps * d), sc.pairs(), model=ContactModel()).values()
        err = np.abs(h2 - h - eps * grads @ d)
        assert err.max() <= 1e3 * eps**2 * max(1.0, np.abs(grads @ d).max())


def test_rows_vanish_for_a_wide_channel():
    tube = TubeSpec(0.0004, 0.0005, 0.05, 0.02)
    sc = Scene([tube], straight_channel(0.1, 0.01, 0.001), n=20)
    rows = build_rows(sc.state(sc.u_hat), sc.pairs(), sc.channel)
    assert rows.values().max() < -0.99


def test_linear_rows_taylor(rng):
    from test_channel import elbow_channel
    c = elbow_channel(90.0, r=0.01, legs=(0.1, 0.1), ds=0.001)
    tube = TubeSpec(0.0004, 0.0005, 0.105, 0.02, precurvature=(0, 0.5, 0))
    sc = Scene([tube], c, n=105)
    st = sc.state(sc.u_hat)
    rows = build_rows(st, sc.pairs(), c, jacobians=[shape_jacobian(st.rods[0])])
    h0, grads, _ = rows.linearize()
    planes = [r for r, L in enumerate(rows.logical) if L[0] == "l"]
    assert planes
    for eps in (1e-5,):
        d = rng.normal(size=sc.dim)
        st2 = sc.state(sc.u_hat + eps * d)
        rows2 = build_rows(st2, sc.pairs(), c)
        h1 = rows2.values()
        if [m["sample"] for m in rows2.meta] != [m["sample"] for m in rows.meta]:
            pytest.skip("row set changed under the perturbation")
        err = np.abs(h1[planes] - (h0[planes] + eps * grads[planes] @ d))
        assert err.max() <= 1e3 * eps**2
