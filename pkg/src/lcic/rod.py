"""Discretised inextensible rod: shape integration, elastic energy, shape Jacobian.

Curvature is piecewise constant: ``u[k]`` acts on the arclength interval
``(s_{k-1}, s_k]`` with ``s_k = k * ds`` and the base frame sitting at ``s_0 = 0``.
Sample ``k`` is the pose at the distal end of segment ``k``.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import DimensionMismatch, RigidTube
from .geometry import hat


@dataclass
class TubeSpec:
    inner_radius: float
    outer_radius: float
    length: float
    bending_stiffness: float = 1.0
    poisson_ratio: float = 0.3
    precurvature: object = (0.0, 0.0, 0.0)
    rigid: bool = False
    name: str = "tube"

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("tube length must be positive")
        if not 0 <= self.inner_radius < self.outer_radius:
            raise ValueError("tube needs inner_radius < outer_radius")
        if not self.rigid and not self.bending_stiffness > 0:
            raise ValueError("bending stiffness must be positive for an elastic tube")

    def precurvature_on(self, grid):
        """Precurvature sampled per segment, shape ``(len(grid), 3)``.

        ``precurvature`` may be a constant 3-vector, an ``(N, 3)`` array matching
        the grid, or a list of ``(s_end, (ux, uy, uz))`` pieces.
        """
        pc = self.precurvature
        grid = np.asarray(grid, dtype=float)
        if callable(pc):
            return np.array([pc(s) for s in grid], dtype=float)
        try:
            arr = np.asarray(pc, dtype=float)
        except (TypeError, ValueError):
            arr = None
        if arr is not None and arr.shape == (3,):
            return np.tile(arr, (grid.size, 1))
        if arr is not None and arr.ndim == 2 and arr.shape[1] == 3:
            if arr.shape[0] != grid.size:
                raise DimensionMismatch(f"precurvature rows {arr.shape[0]} != {grid.size}")
            return arr.copy()
        out = np.zeros((grid.size, 3))
        # pieces (s_end, vector); a segment belongs to the piece holding its midpoint
        mids = grid - 0.5 * (grid[1] - grid[0] if grid.size > 1 else grid[0])
        lo = -np.inf
        for s_end, vec in pc:
            out[(mids > lo) & (mids <= s_end)] = np.asarray(vec, dtype=float)
            lo = s_end
        return out


def stiffness_matrix(spec):
    """Per-sample stiffness ``diag(EI, EI, GJ)`` with ``GJ = EI / (1 + nu)``."""
    if spec.rigid:
        raise RigidTube(f"{spec.name} is rigid")
    EI = spec.bending_stiffness
    return np.diag([EI, EI, EI / (1.0 + spec.poisson_ratio)])


def stacked_stiffness(spec_or_K, n):
    K3 = spec_or_K if isinstance(spec_or_K, np.ndarray) else stiffness_matrix(spec_or_K)
    return np.kron(np.eye(n), K3)


def make_grid(length, n):
    ds = length / n
    return ds * np.arange(1, n + 1), ds


@dataclass
class RodState:
    grid: np.ndarray
    u: np.ndarray
    p: np.ndarray
    R: np.ndarray
    base_p: np.ndarray
    base_R: np.ndarray
    ds: float

    @classmethod
    def from_u(cls, u, ds, base_p=None, base_R=None):
        u = np.array(u, dtype=float).reshape(-1, 3)
        base_p = np.zeros(3) if base_p is None else np.asarray(base_p, dtype=float)
        base_R = np.eye(3) if base_R is None else np.asarray(base_R, dtype=float)
        p, R = integrate_shape(u, (base_p, base_R), ds)
        grid = ds * np.arange(1, len(u) + 1)
        return cls(grid, u, p, R, base_p, base_R, float(ds))

    @property
    def n(self):
        return len(self.grid)

    @property
    def tangents(self):
        return self.R[:, :, 2]

    def with_u(self, u):
        return RodState.from_u(u, self.ds, self.base_p, self.base_R)

    def points_with_base(self):
        return np.vstack([self.base_p[None], self.p])

    def dense(self, n_per_segment=10):
        """Exact centerline at ``n_per_segment`` points per segment (plus the base)."""
        out = [self.base_p]
        sigma = self.ds * np.arange(1, n_per_segment + 1) / n_per_segment
        ps = np.vstack([self.base_p[None], self.p[:-1]])
        Rs = np.concatenate([self.base_R[None], self.R[:-1]])
        for k in range(self.n):
            _, t = kernels.twist_exp_np(np.tile(self.u[k], (sigma.size, 1)), sigma)
            out.append(ps[k] + t @ Rs[k].T)
        return np.vstack([np.atleast_2d(o) for o in out])


@dataclass
class StackedState:
    """Tubes ordered from the innermost (index 0) outward."""
    rods: list
    offsets: list = field(init=False)

    def __post_init__(self):
        self.offsets = []
        off = 0
        for r in self.rods:
            self.offsets.append(off)
            off += 3 * r.n

    @property
    def u(self):
        return np.concatenate([r.u.ravel() for r in self.rods])

    @property
    def p(self):
        return np.concatenate([r.p.ravel() for r in self.rods])

    @property
    def dim(self):
        return sum(3 * r.n for r in self.rods)

    def with_u(self, u):
        rods = []
        for r, off in zip(self.rods, self.offsets):
            rods.append(r.with_u(u[off:off + 3 * r.n].reshape(-1, 3)))
        return StackedState(rods)


def integrate_shape(u, base, ds):
    """Positions and frames at the end of every constant-curvature segment."""
    base_p, base_R = base
    return kernels.integrate(np.asarray(u, float).reshape(-1, 3), ds, base_p, base_R)


def elastic_energy(u, u_hat, K, ds=1.0):
    """``0.5 * ds * sum_k (u_k - u_hat_k)^T K3 (u_k - u_hat_k)``.

    ``K`` may be the 3x3 per-sample stiffness or the stacked block-diagonal form.
    """
    e = np.asarray(u, float).ravel() - np.asarray(u_hat, float).ravel()
    K = np.asarray(K, float)
    if K.shape == (3, 3):
        if e.size % 3:
            raise DimensionMismatch("curvature vector length is not a multiple of 3")
        E = e.reshape(-1, 3)
        return 0.5 * ds * float(np.einsum("ki,ij,kj->", E, K, E))
    if K.shape != (e.size, e.size):
        raise DimensionMismatch(f"stiffness {K.shape} vs curvature {e.size}")
    return 0.5 * ds * float(e @ K @ e)


def shape_jacobian(state, rule="exact", sparse=False, rotation=False):
    """Derivative of the sample positions with respect to the segment curvatures.

    Block ``(k, j)`` (``k >= j``) maps a curvature change on segment ``j`` to the
    displacement of sample ``k``: ``int_seg_j [p(s) - p_k]x R(s) ds``. The
    ``"endpoint"`` rule replaces the integral by ``ds [p_j - p_k]x R_j``, which is
    first-order accurate in ``ds``; ``"exact"`` integrates over the segment and is
    the true derivative of ``integrate_shape``.

    With ``rotation=True`` the spatial angular Jacobian is returned as well:
    block ``(k, j)`` is ``int_seg_j R(s) ds``, so ``dR_k = hat(JR_k du) R_k``.
    """
    n, ds = state.n, state.ds
    if rule == "exact":
        A, B = kernels.segment_moments(state.u, ds, state.base_p, state.base_R,
                                       state.p, state.R)
    elif rule == "endpoint":
        B = ds * state.R
        A = kernels.hat_many(state.p) @ B
    else:
        raise ValueError(f"unknown rule {rule!r}")
    blocks = A[None, :, :, :] - kernels.hat_many(state.p)[:, None] @ B[None, :, :, :]
    mask = np.tril(np.ones((n, n), dtype=bool))
    blocks[~mask] = 0.0
    J = blocks.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
    J = sp.csr_matrix(J) if sparse else J
    if not rotation:
        return J
    rb = np.broadcast_to(B[None], (n, n, 3, 3)).copy()
    rb[~mask] = 0.0
    return J, rb.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)


def stacked_jacobian(stacked, rule="exact"):
    from scipy.linalg import block_diag
    return block_diag(*[shape_jacobian(r, rule) for r in stacked.rods])


__all__ = ["TubeSpec", "RodState", "StackedState", "stiffness_matrix", "stacked_stiffness",
           "integrate_shape", "elastic_energy", "shape_jacobian", "stacked_jacobian",
           "make_grid", "hat"]
