"""Shape-error measures and rigid registration of point sequences."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometry, LengthMismatch


@dataclass(frozen=True)
class ShapeErrors:
    e_tip: np.ndarray        # model tip minus reference tip, m
    e_tip_norm: float
    e_mean: float
    e_max: float
    profile: np.ndarray      # per-sample error norm, m

    def as_row(self):
        return {"e_tip_m": self.e_tip_norm, "e_mean_m": self.e_mean, "e_max_m": self.e_max,
                "e_tip_x_m": float(self.e_tip[0]), "e_tip_y_m": float(self.e_tip[1]),
                "e_tip_z_m": float(self.e_tip[2])}


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    history: tuple = ()

    def apply(self, pts):
        return np.asarray(pts, float) @ self.rotation.T + self.translation

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))


def arclength(pts):
    pts = np.asarray(pts, float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample(pts, s_new, s=None):
    """Linear interpolation of a polyline at arclengths ``s_new``.

    ``s`` gives the arclength of each vertex; by default it is measured along
    the polyline from its first vertex.
    """
    pts = np.asarray(pts, float)
    s = arclength(pts) if s is None else np.asarray(s, float)
    s_new = np.asarray(s_new, float)
    tol = 1e-9 * max(abs(s[-1]), 1e-12)
    if s_new.size and (s_new.max() > s[-1] + tol or s_new.min() < s[0] - tol):
        raise LengthMismatch(f"polyline spans [{s[0]:.6g}, {s[-1]:.6g}] m, "
                             f"cannot cover [{s_new.min():.6g}, {s_new.max():.6g}] m")
    return np.column_stack([np.interp(s_new, s, pts[:, k]) for k in range(3)])


def shape_errors(model, reference, s_model=None, s_reference=None):
    """Tip error vector, mean and max of the per-sample position error.

    Sequences of different length are compared at the model's arclengths after
    linear resampling of the reference. Arclengths default to the distance
    along each polyline from its first point.
    """
    model = np.asarray(model, float)
    reference = np.asarray(reference, float)
    if model.ndim != 2 or model.shape[1] != 3 or reference.ndim != 2 or reference.shape[1] != 3:
        raise ValueError("position sequences must be (n, 3)")
    if len(model) != len(reference):
        s_m = arclength(model) if s_model is None else np.asarray(s_model, float)
        reference = resample(reference, s_m, s_reference)
    d = model - reference
    prof = np.linalg.norm(d, axis=1)
    return ShapeErrors(d[-1].copy(), float(prof[-1]), float(prof.mean()), float(prof.max()), prof)


def _check_spread(pts, what):
    c = pts - pts.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    if len(pts) < 3 or sv[0] == 0.0 or sv[1] <= 1e-10 * sv[0]:
        raise DegenerateGeometry(f"{what} points are collinear or too few")


def kabsch(src, dst, w=None):
    """Least-squares rotation and translation taking ``src`` onto ``dst``."""
    w = np.ones(len(src)) if w is None else np.asarray(w, float)
    w = w / w.sum()
    cs, cd = w @ src, w @ dst
    H = (src - cs).T @ ((dst - cd) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, cd - R @ cs


def rigid_register(source, target, max_iter=100, tol=1e-12, init="index"):
    """Iterative closest point alignment of ``source`` onto ``target``.

    With ``init="index"`` and equal counts the first fit pairs samples by
    index, which suits ordered polylines; afterwards pairs come from nearest
    neighbours. Stops when the pairing repeats or the residual change drops
    below ``tol``. Returns the transform with the lowest residual seen.
    """
    src = np.asarray(source, float)
    dst = np.asarray(target, float)
    _check_spread(src, "source")
    _check_spread(dst, "target")
    tree = cKDTree(dst)
    R, t = np.eye(3), np.zeros(3)
    if init == "index" and len(src) == len(dst):
        R, t = kabsch(src, dst)
    best = None
    hist = []
    prev_idx = None
    prev_res = np.inf
    for it in range(1, max_iter + 1):
        moved = src @ R.T + t
        dist, idx = tree.query(moved)
        res = float(np.sqrt(np.mean(dist ** 2)))
        hist.append(res)
        if best is None or res < best[2]:
            best = (R, t, res, it)
        if prev_idx is not None and (np.array_equal(idx, prev_idx) or prev_res - res <= tol):
            break
        prev_idx, prev_res = idx, res
        R, t = kabsch(src, dst[idx])
    R, t, res, it = best
    # snap to SO(3) against drift from repeated products
    U, _, Vt = np.linalg.svd(R)
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    return RigidTransform(R, t, res, it, tuple(hist))


def polyline_distance(p, poly):
    """Distance from point ``p`` to the polyline ``poly`` (continuous projection)."""
    a, b = poly[:-1], poly[1:]
    d = b - a
    t = np.clip(((p - a) * d).sum(1) / np.maximum((d * d).sum(1), 1e-300), 0.0, 1.0)
    return float(np.min(np.linalg.norm(p - (a + t[:, None] * d), axis=1)))


def tip_wall_gap(report):
    """Distance from the inner-tube tip centerline to the wall it is nested in.

    The outermost wall counts: the channel when present, otherwise the next
    tube out. Tip contact means the gap equals the inner tube's outer radius.
    """
    scene = report.scene
    tip = report.tip()
    if scene.channel is not None:
        radius = scene.channel.inner_radius
        dist = polyline_distance(tip, scene.channel.poly)
        for S in scene.channel.sections:
            xi, _, rad = S.locate(tip[None])
            if -1e-12 <= xi[0] <= S.length + 1e-12:
                dist = min(dist, float(rad[0]))
    elif len(scene.tubes) > 1:
        radius = scene.tubes[-1].inner_radius
        dist = polyline_distance(tip, report.state.rods[-1].points_with_base())
    else:
        raise ValueError("a single tube without a channel has no wall")
    return radius - dist
