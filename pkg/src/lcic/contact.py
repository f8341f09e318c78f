"""Contact constraint assembly shared by the clearance, elbow and baseline solvers.

A row is either quadratic in the sample offset,
``h = (v + G du)^T M (v + G du) - 1`` with ``v = p_inner - c`` and
``M = P^T Q P``, or linear (corner cut planes). Overlap samples at an elbow get
one disjunctive row ``min(h_blue, h_red)`` plus two plane rows.
"""
from dataclasses import dataclass

import numpy as np

from . import channel as chmod
from . import kernels
from .geometry import MIN_AXIS_RATIO, contact_ellipse, tangent_projection

NEAREST, ARCLENGTH = "nearest", "arclength"


@dataclass
class Pair:
    """Inner elastic tube ``inner`` against ``outer`` (tube index or ``"channel"``)."""
    inner: int
    outer: object
    r_in_outer: float
    r_out_inner: float


@dataclass
class ContactModel:
    correspondence: str = NEAREST   # f by nearest neighbour, or arclength for SCM
    corners: str = "lcic"           # "lcic": disjunction + cut planes, "scm": split at l_m
    margin: float = None            # overlap band; defaults to the inner tube's ds
    metric: str = "ellipse"         # "ellipse": projected footprint, "ball": |offset| <= d1
    tangent_terms: bool = True      # differentiate the footprint through the inner tangent


@dataclass
class Rows:
    """Constraint rows at one shape. ``G``/``A`` are absent when built without Jacobians."""
    V: np.ndarray            # (mq, 3) offsets p_inner - c
    M: np.ndarray            # (mq, 3, 3)
    G: np.ndarray            # (mq, 3, n) or None
    A: np.ndarray            # (ml, n) or None, linear rows: a.du + b
    b: np.ndarray            # (ml,)
    logical: list            # ("q", i) | ("l", i) | ("min", i_blue, i_red)
    meta: list               # per logical row: dict(tube, sample, tag, ...)
    clamped: int = 0
    T: np.ndarray = None     # (mq, n) gradient through the footprint's tangent, or None

    @property
    def quad_values(self):
        return np.einsum("mi,mij,mj->m", self.V, self.M, self.V) - 1.0

    def values(self):
        hq = self.quad_values
        out = np.empty(len(self.logical))
        for r, L in enumerate(self.logical):
            if L[0] == "q":
                out[r] = hq[L[1]]
            elif L[0] == "l":
                out[r] = self.b[L[1]]
            else:
                out[r] = min(hq[L[1]], hq[L[2]])
        return out

    def branches(self):
        """Active quad row per logical row (ties to Blue), -1 for linear rows."""
        hq = self.quad_values
        br = []
        for L in self.logical:
            if L[0] == "q":
                br.append(L[1])
            elif L[0] == "l":
                br.append(-1)
            else:
                br.append(L[1] if hq[L[1]] <= hq[L[2]] else L[2])
        return np.array(br, dtype=int)

    def quad_grad(self):
        """Gradients of the quadratic rows w.r.t. u at du = 0, shape (mq, n)."""
        g = 2.0 * np.einsum("mi,mij,mjn->mn", self.V, self.M, self.G)
        return g if self.T is None else g + self.T

    def linearize(self):
        """Values, gradients (rows x n) and the quad row behind each logical row."""
        h = self.values()
        br = self.branches()
        gq = self.quad_grad() if len(self.V) else np.zeros((0, self.n))
        grads = np.zeros((len(self.logical), self.n))
        for r, L in enumerate(self.logical):
            if L[0] == "l":
                grads[r] = self.A[L[1]]
            else:
                grads[r] = gq[br[r]]
        return h, grads, br

    @property
    def n(self):
        if self.G is not None and len(self.G):
            return self.G.shape[2]
        if self.A is not None and len(self.A):
            return self.A.shape[1]
        return self._n

    _n: int = 0


@dataclass
class _Target:
    point: np.ndarray
    tangent: np.ndarray
    jrows: object  # (tube index, sample index) of the outer point, or None if fixed


def _ellipse_M(t_out, t_in, r_in_outer, r_out_inner, metric="ellipse"):
    if metric == "ball":
        return np.eye(3) / (r_in_outer - r_out_inner) ** 2, False
    if kernels.USE_NUMBA:
        M = np.empty((3, 3))
        st = kernels.footprint_jit(t_out, t_in, float(r_in_outer), float(r_out_inner),
                                   MIN_AXIS_RATIO, M)
        if st >= 0:
            return M, bool(st)
        # fall through for the exception with its message
    el = contact_ellipse(t_out, t_in, r_in_outer, r_out_inner, clamp=True)
    P = tangent_projection(t_out)
    return P @ el.Q @ P, el.clamped


def _footprint_slope(t_out, t_in, r_in_outer, r_out_inner, v, wrt_out=False, eps=1e-7):
    """Gradient of ``v^T M v`` with respect to ``t_in`` (or ``t_out``), by central differences.

    Only the component normal to the differentiated tangent is meaningful.
    """
    t_out = np.asarray(t_out, float)
    t_in = np.asarray(t_in, float)
    if kernels.USE_NUMBA:
        out = np.empty(3)
        if kernels.footprint_slope_jit(t_out, t_in, float(r_in_outer), float(r_out_inner),
                                       MIN_AXIS_RATIO, v, eps, wrt_out, out) == 0:
            return out
    t_var = t_out if wrt_out else t_in
    e1 = np.cross(t_var, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 0.5:
        e1 = np.cross(t_var, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(t_var, e1)
    out = np.zeros(3)
    for e in (e1, e2):
        vals = []
        for sgn in (1.0, -1.0):
            t = t_var + sgn * eps * e
            t = t / np.linalg.norm(t)
            M, _ = _ellipse_M(t, t_in, r_in_outer, r_out_inner) if wrt_out else \
                _ellipse_M(t_out, t, r_in_outer, r_out_inner)
            vals.append(v @ M @ v)
        out += (vals[0] - vals[1]) / (2.0 * eps) * e
    return out


def _tube_polyline(rod):
    pts = np.vstack([rod.base_p[None], rod.p])
    tan = np.vstack([rod.base_R[:, 2][None], rod.R[:, :, 2]])
    return pts, tan


def build_rows(stacked, pairs, channel=None, model=None, jacobians=None, rotations=None):
    """Assemble every contact row at the current shape.

    ``jacobians`` is the list of per-tube shape Jacobians (3N x 3N); without it only
    values are available (enough for merit evaluation and residual checks).
    ``rotations`` holds the matching angular Jacobians; with them the elliptical
    rows also carry their dependence on the inner tangent.
    """
    model = model or ContactModel()
    n = stacked.dim
    offs = stacked.offsets
    V, Ms, Gs, Ts, A, b, logical, meta = [], [], [], [], [], [], [], []
    clamped = 0
    tangent_terms = (rotations is not None and jacobians is not None
                     and model.metric == "ellipse" and model.tangent_terms)

    def jrow(tube, k):
        # rows of the stacked Jacobian for sample k (1-based; 0 is the fixed base)
        g = np.zeros((3, n))
        if k > 0:
            J = jacobians[tube]
            g[:, offs[tube]:offs[tube] + J.shape[1]] = J[3 * (k - 1):3 * k]
        return g

    def add_quad(tube, m, p_in, t_in, target, r_in, r_o, meta_row):
        nonlocal clamped
        M, cl = _ellipse_M(target.tangent, t_in, r_in, r_o, model.metric)
        clamped += int(cl)
        V.append(p_in - target.point)
        Ms.append(M)
        if jacobians is not None:
            g = jrow(tube, m)
            if target.jrows is not None:
                g = g - jrow(*target.jrows)
            Gs.append(g)
        if tangent_terms:
            # a tangent moves as dt = omega x t with omega = JR du, so
            # dh = (t x dh/dt) . omega
            tr = np.zeros(n)
            if m > 0:
                slope = _footprint_slope(target.tangent, t_in, r_in, r_o, V[-1])
                JR = rotations[tube][3 * (m - 1):3 * m]
                tr[offs[tube]:offs[tube] + JR.shape[1]] += np.cross(t_in, slope) @ JR
            if target.jrows is not None:
                ot, k = target.jrows
                slope = _footprint_slope(target.tangent, t_in, r_in, r_o, V[-1], wrt_out=True)
                JR = rotations[ot][3 * (k - 1):3 * k]
                tr[offs[ot]:offs[ot] + JR.shape[1]] += np.cross(target.tangent, slope) @ JR
            Ts.append(tr)
        return len(V) - 1

    for pair in pairs:
        rod = stacked.rods[pair.inner]
        tube = pair.inner
        P_in, T_in = rod.p, rod.R[:, :, 2]
        r_in, r_o = pair.r_in_outer, pair.r_out_inner
        if pair.outer == "channel":
            _channel_rows(stacked, pair, channel, model, rod, tube, P_in, T_in, r_in, r_o,
                          add_quad, A, b, logical, meta, jrow, jacobians)
            continue
        outer = stacked.rods[pair.outer]
        poly, ptan = _tube_polyline(outer)
        if model.correspondence == NEAREST:
            match = kernels.nearest_index(P_in, poly)
        else:
            match = np.rint(rod.grid / outer.ds).astype(int)
        for mi in range(rod.n):
            k = int(match[mi])
            if k > outer.n:
                continue  # beyond the outer tube's tip
            if k == outer.n and (P_in[mi] - poly[k]) @ ptan[k] > 0 \
                    and model.correspondence == NEAREST:
                continue
            tgt = _Target(poly[k], ptan[k], (pair.outer, k) if k > 0 else None)
            qi = add_quad(tube, mi + 1, P_in[mi], T_in[mi], tgt, r_in, r_o, None)
            logical.append(("q", qi))
            meta.append({"tube": tube, "sample": mi, "tag": "pair", "outer": pair.outer,
                         "match": k})

    G = np.array(Gs) if jacobians is not None else None
    if jacobians is not None and not Gs:
        G = np.zeros((0, 3, n))
    rows = Rows(np.array(V).reshape(-1, 3), np.array(Ms).reshape(-1, 3, 3), G,
                np.array(A).reshape(-1, n) if jacobians is not None else None,
                np.array(b, dtype=float), logical, meta, clamped,
                np.array(Ts).reshape(-1, n) if tangent_terms else None)
    rows._n = n
    return rows


def _channel_rows(stacked, pair, channel, model, rod, tube, P_in, T_in, r_in, r_o,
                  add_quad, A, b, logical, meta, jrow, jacobians):
    ch = channel
    d1 = r_in - r_o

    def section_target(i, p):
        k = int(chmod.nearest_in_section(p, ch, i)[0])
        return _Target(ch.poly[k], ch.poly_tangent[k], None), k

    if model.corners == "scm" or model.correspondence == ARCLENGTH:
        # arclength correspondence and an abrupt constraint switch at each joint
        s = rod.grid
        sec = ch.section_at_arclength(s)
        pts, tans = ch.point_at_arclength(s)
        for mi in range(rod.n):
            if s[mi] > ch.total_length + 1e-12:
                continue
            tgt = _Target(pts[mi], tans[mi], None)
            qi = add_quad(tube, mi + 1, P_in[mi], T_in[mi], tgt, r_in, r_o, None)
            logical.append(("q", qi))
            meta.append({"tube": tube, "sample": mi, "tag": chmod._label(int(sec[mi])),
                         "section": int(sec[mi])})
        return

    margin = rod.ds if model.margin is None else model.margin
    tags = chmod.classify_regions(P_in, ch, margin=margin, radius=r_in, strict=False)
    for mi in range(rod.n):
        kind = tags.kind[mi]
        if kind == chmod.OUTSIDE:
            continue
        if kind != chmod.OVERLAP:
            i = int(tags.section[mi])
            tgt, k = section_target(i, P_in[mi])
            qi = add_quad(tube, mi + 1, P_in[mi], T_in[mi], tgt, r_in, r_o, None)
            logical.append(("q", qi))
            meta.append({"tube": tube, "sample": mi, "tag": kind, "section": i, "match": k})
            continue
        e = ch.elbows[int(tags.elbow[mi])]
        tb, kb = section_target(e.blue, P_in[mi])
        tr, kr = section_target(e.red, P_in[mi])
        qb = add_quad(tube, mi + 1, P_in[mi], T_in[mi], tb, r_in, r_o, None)
        qr = add_quad(tube, mi + 1, P_in[mi], T_in[mi], tr, r_in, r_o, None)
        logical.append(("min", qb, qr))
        base = {"tube": tube, "sample": mi, "tag": chmod.OVERLAP,
                "elbow": int(tags.elbow[mi])}
        meta.append(dict(base, row="disjunction"))
        Mpt, vb2, vr2 = chmod.corner_planes(e, d1)
        for name, w in (("plane_blue", vb2), ("plane_red", vr2)):
            b.append(float((P_in[mi] - Mpt) @ w) / d1)
            if jacobians is not None:
                A.append((w / d1) @ jrow(tube, mi + 1))
            logical.append(("l", len(b) - 1))
            meta.append(dict(base, row=name))
