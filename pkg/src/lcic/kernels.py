"""Hot numeric kernels.

Each kernel has a loop version compiled with numba and a vectorised numpy
version. ``USE_NUMBA`` picks the one exported under the public name; both
are importable for cross-checking (``*_jit`` / ``*_np``).
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# 5-point Gauss-Legendre on [-1, 1]
GAUSS_X, GAUSS_W = np.polynomial.legendre.leggauss(5)

_SMALL = 1e-4


# ---------------------------------------------------------------- numba path

@njit
def _exp_coeffs(theta):
    if theta < _SMALL:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        s = np.sin(theta)
        co = np.cos(theta)
        a = s / theta
        b = (1.0 - co) / (theta * theta)
        c = (theta - s) / (theta * theta * theta)
    return a, b, c


@njit
def _mm3(A, B, out):
    """``out = A @ B`` for 3x3 blocks without BLAS call overhead."""
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]


@njit
def _hat3(v, out):
    out[0, 0] = 0.0
    out[0, 1] = -v[2]
    out[0, 2] = v[1]
    out[1, 0] = v[2]
    out[1, 1] = 0.0
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    out[2, 2] = 0.0


@njit
def _twist_exp(w, length, E, t):
    """Rotation ``E`` and translation ``t`` after ``length`` of constant curvature ``w``."""
    px = w[0] * length
    py = w[1] * length
    pz = w[2] * length
    theta = np.sqrt(px * px + py * py + pz * pz)
    a, b, c = _exp_coeffs(theta)
    # hat(phi) and hat(phi)^2, written out
    h01, h02, h12 = -pz, py, -px
    H = ((0.0, h01, h02), (-h01, 0.0, h12), (-h02, -h12, 0.0))
    for i in range(3):
        for j in range(3):
            h2 = H[i][0] * H[0][j] + H[i][1] * H[1][j] + H[i][2] * H[2][j]
            E[i, j] = a * H[i][j] + b * h2
        E[i, i] += 1.0
    # t = length * V e3
    for i in range(3):
        h2 = H[i][0] * H[0][2] + H[i][1] * H[1][2] + H[i][2] * H[2][2]
        t[i] = length * (b * H[i][2] + c * h2)
    t[2] += length


@njit
def integrate_jit(u, ds, p0, R0):
    n = u.shape[0]
    p = np.empty((n, 3))
    R = np.empty((n, 3, 3))
    E = np.empty((3, 3))
    t = np.empty(3)
    pc = p0.copy()
    Rc = R0.copy()
    for k in range(n):
        _twist_exp(u[k], ds, E, t)
        for i in range(3):
            pc[i] += Rc[i, 0] * t[0] + Rc[i, 1] * t[1] + Rc[i, 2] * t[2]
        _mm3(Rc, E, R[k])
        Rc[:, :] = R[k]
        p[k] = pc
    return p, R


@njit
def nearest_index_jit(points, poly):
    m = points.shape[0]
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        best = np.inf
        bk = 0
        for k in range(poly.shape[0]):
            dx = poly[k, 0] - points[i, 0]
            dy = poly[k, 1] - points[i, 1]
            dz = poly[k, 2] - points[i, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best:
                best = d2
                bk = k
        out[i] = bk
    return out


@njit
def segment_moments_jit(u, ds, p0, R0, p, R, gx, gw):
    """Per-segment integrals B_j = int R ds and A_j = int [p]x R ds."""
    n = u.shape[0]
    A = np.empty((n, 3, 3))
    B = np.empty((n, 3, 3))
    E = np.empty((3, 3))
    t = np.empty(3)
    T = np.empty((3, 3))
    TE = np.empty((3, 3))
    Bl = np.empty((3, 3))
    Cl = np.empty((3, 3))
    Ph = np.empty((3, 3))
    W = np.empty((3, 3))
    for j in range(n):
        ps = p0 if j == 0 else p[j - 1]
        Rs = R0 if j == 0 else R[j - 1]
        Bl[:, :] = 0.0
        Cl[:, :] = 0.0
        for g in range(gx.shape[0]):
            sig = 0.5 * ds * (gx[g] + 1.0)
            wg = 0.5 * ds * gw[g]
            _twist_exp(u[j], sig, E, t)
            _hat3(t, T)
            _mm3(T, E, TE)
            for a in range(3):
                for b in range(3):
                    Bl[a, b] += wg * E[a, b]
                    Cl[a, b] += wg * TE[a, b]
        _mm3(Rs, Bl, B[j])
        _hat3(ps, Ph)
        _mm3(Ph, B[j], A[j])
        _mm3(Rs, Cl, W)
        for a in range(3):
            for b in range(3):
                A[j, a, b] += W[a, b]
    return A, B


@njit
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit
def footprint_jit(t_out, t_in, r_in, r_o, ratio, M):
    """Elliptical footprint form ``M`` (see ``geometry.contact_ellipse``, clamped).

    Returns 0, 1 when the crossing angle was clamped, -1 for a degenerate
    minor axis and -2 for a non-unit tangent.
    """
    n_out = np.sqrt(t_out[0] ** 2 + t_out[1] ** 2 + t_out[2] ** 2)
    n_in = np.sqrt(t_in[0] ** 2 + t_in[1] ** 2 + t_in[2] ** 2)
    if abs(n_out - 1.0) > 1e-6 or abs(n_in - 1.0) > 1e-6:
        return -2
    c = t_out[0] * t_in[0] + t_out[1] * t_in[1] + t_out[2] * t_in[2]
    c = min(max(c, -1.0), 1.0)
    theta = np.arccos(abs(c))
    d1 = r_in - r_o
    theta_max = np.arccos(r_o / (r_in - ratio * d1))
    status = 0
    if theta > theta_max:
        theta = theta_max
        status = 1
    q1 = np.empty(3)
    q2 = np.empty(3)
    for i in range(3):
        q1[i] = t_in[i] - c * t_out[i]
    nq = np.sqrt(q1[0] ** 2 + q1[1] ** 2 + q1[2] ** 2)
    if nq < 1e-12:
        # projected global x, or global y when x is parallel
        for ax in range(2):
            for i in range(3):
                q1[i] = -t_out[ax] * t_out[i]
            q1[ax] += 1.0
            nq = np.sqrt(q1[0] ** 2 + q1[1] ** 2 + q1[2] ** 2)
            if nq > 1e-6:
                break
    for i in range(3):
        q1[i] /= nq
    _cross(q1, t_out, q2)
    n2 = np.sqrt(q2[0] ** 2 + q2[1] ** 2 + q2[2] ** 2)
    d2 = r_in - r_o / np.cos(theta)
    if d2 <= 1e-9:
        return -1
    a = 1.0 / (d1 * d1)
    b = 1.0 / (d2 * d2 * n2 * n2)
    for i in range(3):
        for j in range(3):
            M[i, j] = a * q1[i] * q1[j] + b * q2[i] * q2[j]
    return status


@njit
def footprint_slope_jit(t_out, t_in, r_in, r_o, ratio, v, eps, wrt_out, out):
    """Central-difference gradient of ``v^T M v`` with respect to one tangent.

    Differentiates through ``t_in`` (or ``t_out`` when ``wrt_out``), within the
    plane normal to that tangent.
    """
    t_var = t_out if wrt_out else t_in
    e1 = np.empty(3)
    e2 = np.empty(3)
    ex = np.zeros(3)
    ex[0] = 1.0
    _cross(t_var, ex, e1)
    if np.sqrt(e1[0] ** 2 + e1[1] ** 2 + e1[2] ** 2) < 0.5:
        ex[0] = 0.0
        ex[1] = 1.0
        _cross(t_var, ex, e1)
    ne = np.sqrt(e1[0] ** 2 + e1[1] ** 2 + e1[2] ** 2)
    for i in range(3):
        e1[i] /= ne
    _cross(t_var, e1, e2)
    M = np.empty((3, 3))
    t = np.empty(3)
    out[:] = 0.0
    for k in range(2):
        e = e1 if k == 0 else e2
        vals = np.zeros(2)
        for s in range(2):
            sgn = 1.0 if s == 0 else -1.0
            for i in range(3):
                t[i] = t_var[i] + sgn * eps * e[i]
            nt = np.sqrt(t[0] ** 2 + t[1] ** 2 + t[2] ** 2)
            for i in range(3):
                t[i] /= nt
            if wrt_out:
                st = footprint_jit(t, t_in, r_in, r_o, ratio, M)
            else:
                st = footprint_jit(t_out, t, r_in, r_o, ratio, M)
            if st < 0:
                return -1
            acc = 0.0
            for i in range(3):
                for j in range(3):
                    acc += v[i] * M[i, j] * v[j]
            vals[s] = acc
        g = (vals[0] - vals[1]) / (2.0 * eps)
        for i in range(3):
            out[i] += g * e[i]
    return 0


# ---------------------------------------------------------------- numpy path

def hat_many(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def twist_exp_np(w, length):
    """Vectorised ``_twist_exp`` over leading axes of ``w`` (and ``length``)."""
    phi = np.asarray(w, dtype=float) * np.asarray(length, dtype=float)[..., None]
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < _SMALL
    ts = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(ts) / ts)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(ts)) / ts**2)
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
                 (ts - np.sin(ts)) / ts**3)
    H = hat_many(phi)
    H2 = H @ H
    E = np.eye(3) + a[..., None, None] * H + b[..., None, None] * H2
    t = b[..., None] * H[..., :, 2] + c[..., None] * H2[..., :, 2]
    t[..., 2] += 1.0
    t = t * np.asarray(length, dtype=float)[..., None]
    return E, t


def integrate_np(u, ds, p0, R0):
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    E, t = twist_exp_np(u, np.full(n, ds))
    p = np.empty((n, 3))
    R = np.empty((n, 3, 3))
    pc = np.array(p0, dtype=float)
    Rc = np.array(R0, dtype=float)
    for k in range(n):
        pc = pc + Rc @ t[k]
        Rc = Rc @ E[k]
        p[k] = pc
        R[k] = Rc
    return p, R


def nearest_index_np(points, poly):
    points = np.atleast_2d(points)
    d2 = ((points[:, None, :] - poly[None, :, :]) ** 2).sum(-1)
    # argmin returns the first minimum, i.e. the smaller index on ties
    return np.argmin(d2, axis=1).astype(np.int64)


def segment_moments_np(u, ds, p0, R0, p, R, gx=GAUSS_X, gw=GAUSS_W):
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    ps = np.vstack([np.asarray(p0, float)[None], p[:-1]])
    Rs = np.concatenate([np.asarray(R0, float)[None], R[:-1]])
    sig = 0.5 * ds * (gx + 1.0)
    wg = 0.5 * ds * gw
    E, t = twist_exp_np(u[:, None, :], np.broadcast_to(sig, (n, sig.size)))
    Bl = np.einsum("g,ngab->nab", wg, E)
    Cl = np.einsum("g,ngab->nab", wg, hat_many(t) @ E)
    B = Rs @ Bl
    A = hat_many(ps) @ B + Rs @ Cl
    return A, B


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


if USE_NUMBA:
    def integrate(u, ds, p0, R0):
        return integrate_jit(_c(u), float(ds), _c(p0), _c(R0))

    def nearest_index(points, poly):
        return nearest_index_jit(_c(np.atleast_2d(points)), _c(poly))

    def segment_moments(u, ds, p0, R0, p, R):
        return segment_moments_jit(_c(u), float(ds), _c(p0), _c(R0), _c(p), _c(R),
                                   GAUSS_X, GAUSS_W)
else:
    integrate = integrate_np
    nearest_index = nearest_index_np
    segment_moments = segment_moments_np
