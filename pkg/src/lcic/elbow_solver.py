"""Impulse-curvature model: disjunctive corner constraints solved by SQP.

Samples near an elbow that sit in both adjacent cylinders carry
``min(h_blue, h_red) <= 0`` plus two cut-plane rows removing the wedge beyond
the outer corner. Each SQP subproblem fixes the active branch per sample, uses
the Gauss-Newton Hessian ``K + sum lam_r 2 G_r^T M_r G_r`` and is solved as a
least-distance program by nonnegative least squares. An l1 merit line search
globalizes the steps.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.optimize import nnls

from . import channel as chmod
from .baseline_scm import scm_model
from .clearance_solver import ClearanceConfig, ContinuationSchedule, clearance_continuation
from .contact import ContactModel, build_rows
from .errors import Infeasible, SqpStalled
from .geometry import contact_ellipse, tangent_projection
from .report import SolveReport
from .rod import shape_jacobian
from .scene import Scene

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- corner geometry

@dataclass
class CornerConstraint:
    channel: object
    elbow: object
    r_in_outer: float
    r_out_inner: float
    M: np.ndarray = field(init=False)
    v_b2: np.ndarray = field(init=False)
    v_r2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.M, self.v_b2, self.v_r2 = chmod.corner_planes(self.elbow, self.d1)

    @property
    def d1(self):
        return self.r_in_outer - self.r_out_inner

    def section_value(self, p, section, t_in=None):
        """Ellipse row of one section at the nearest sample of its centerline."""
        ch = self.channel
        k = int(chmod.nearest_in_section(p, ch, section)[0])
        t_out = ch.poly_tangent[k]
        t_in = t_out if t_in is None else t_in
        el = contact_ellipse(t_out, t_in, self.r_in_outer, self.r_out_inner, clamp=True)
        w = tangent_projection(t_out) @ (np.asarray(p, float) - ch.poly[k])
        return float(w @ el.Q @ w - 1.0)


def corner_constraint_value(p_l, corner, t_in=None):
    """Disjunction value, active branch and both cut-plane residuals at one point.

    Feasible iff ``h_c <= 0`` and both plane residuals are ``<= 0``; the branch
    is the smaller of the two section rows, Blue on ties.
    """
    p_l = np.asarray(p_l, float)
    hb = corner.section_value(p_l, corner.elbow.blue, t_in)
    hr = corner.section_value(p_l, corner.elbow.red, t_in)
    branch = chmod.BLUE if hb <= hr else chmod.RED
    planes = ((p_l - corner.M) @ corner.v_b2 / corner.d1,
              (p_l - corner.M) @ corner.v_r2 / corner.d1)
    return min(hb, hr), branch, planes


# ---------------------------------------------------------------- SQP pieces

LCIC_MODEL = ContactModel()


def _row_key(meta):
    return (meta["tube"], meta["sample"], meta.get("row", "quad"))


@dataclass
class SqpState:
    u: np.ndarray
    lam: dict = field(default_factory=dict)   # row key -> multiplier
    merit: float = np.inf
    penalty: float = 1.0


@dataclass
class QpData:
    H: np.ndarray        # regularized Gauss-Newton Hessian of the Lagrangian
    grad: np.ndarray     # gradient of the elastic energy
    h: np.ndarray        # row values
    A: np.ndarray        # row gradients (rows x n)
    branch: np.ndarray   # quad row behind each logical row, -1 for planes
    rows: object
    tau: float


def _regularize(H):
    for tau in (0.0,) + tuple(10.0 ** -k for k in range(10, -1, -2)):
        Ht = H + tau * np.eye(len(H)) if tau else H
        try:
            return Ht, cho_factor(Ht, lower=True), tau
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("Hessian could not be regularized")


def sqp_subproblem(scene, state, model=LCIC_MODEL, fraction=1.0):
    """Hessian, energy gradient and linearized rows at ``state.u``.

    Region tags, nearest-neighbour matches and branches are refreshed here.
    """
    u = state.u
    st = scene.state(u)
    jac, rot = zip(*[shape_jacobian(r, rotation=True) for r in st.rods])
    rows = build_rows(st, scene.pairs(fraction), scene.channel, model, jac, rot)
    h, A, br = rows.linearize()
    kd = scene.k_diag
    grad = kd * (u - scene.u_hat)
    H = np.diag(kd)
    for r, meta in enumerate(rows.meta):
        lam = state.lam.get(_row_key(meta), 0.0)
        if lam > 0 and br[r] >= 0:
            GM = rows.M[br[r]] @ rows.G[br[r]]
            H += 2.0 * lam * rows.G[br[r]].T @ GM
    H = 0.5 * (H + H.T)
    H, _, tau = _regularize(H)
    return QpData(H, grad, h, A, br, rows, tau)


def solve_qp(qp):
    """``min 0.5 d^T H d + grad^T d  s.t.  h + A d <= 0`` as a least-distance program.

    With ``H = L L^T`` and ``z = L^T d + L^-1 grad`` the problem becomes
    ``min 0.5 |z|^2  s.t.  G z >= b``, solved by the Lawson-Hanson reduction to
    nonnegative least squares. Returns ``(d, mu)``; raises Infeasible.
    """
    L = np.linalg.cholesky(qp.H)
    n = len(qp.grad)
    w = solve_triangular(L, qp.grad, lower=True)
    if len(qp.h) == 0:
        d = -solve_triangular(L.T, w, lower=False)
        return d, np.zeros(0)
    # A d = A L^-T (z - w)
    AL = solve_triangular(L, qp.A.T, lower=True).T       # A L^-T
    G = -AL
    b = qp.h - AL @ w
    E = np.vstack([G.T, b[None, :]])
    f = np.zeros(n + 1)
    f[-1] = 1.0
    x, rnorm = nnls(E, f, maxiter=50 * E.shape[1])
    r = E @ x - f
    if rnorm < 1e-12 or -r[-1] < 1e-14:
        raise Infeasible("linearized corner constraints are inconsistent")
    z = -r[:n] / r[-1]
    mu = x / (-r[-1])
    d = solve_triangular(L.T, z - w, lower=False)
    return d, mu


def update_multipliers(qp, d, act_tol=1e-8):
    """Multipliers from the stationarity system restricted to the rows active after ``d``.

    Solves ``min |A_act^T lam + (H d + grad)|`` over ``lam >= 0`` and returns the
    full multiplier vector (zeros off the active set) plus a rank-deficiency flag.
    """
    m = len(qp.h)
    lam = np.zeros(m)
    if m == 0:
        return lam, False
    lin = qp.h + qp.A @ d
    act = np.flatnonzero(lin >= -act_tol * (1.0 + np.abs(qp.h)))
    if act.size == 0:
        return lam, False
    rhs = -(qp.H @ d + qp.grad)
    At = qp.A[act].T
    rank_def = np.linalg.matrix_rank(At) < act.size
    if rank_def:
        # damped least squares on the augmented system
        damp = 1e-10 * np.linalg.norm(At, 2)
        At = np.vstack([At, damp * np.eye(act.size)])
        rhs = np.concatenate([rhs, np.zeros(act.size)])
    lam[act], _ = nnls(At, rhs, maxiter=50 * act.size + 100)
    return lam, rank_def


@dataclass
class SqpConfig:
    tol_step: float = 1e-9       # relative to max |u|
    tol_flat: float = 1e-6       # step accepted as converged once the merit is flat
    eps_feas: float = 1e-6
    max_iter: int = 200
    stall_iter: int = 20
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40


def _merit(scene, u, penalty, model, fraction):
    rows = build_rows(scene.state(u), scene.pairs(fraction), scene.channel, model)
    h = rows.values()
    viol = float(np.sum(np.maximum(h, 0.0)))
    return scene.energy(u) + penalty * viol, h, rows


def kkt_residuals(scene, u, model=LCIC_MODEL, fraction=1.0, act_tol=1e-6):
    """Stationarity, feasibility and complementarity at ``u`` with NNLS multipliers."""
    state = SqpState(np.asarray(u, float))
    qp = sqp_subproblem(scene, state, model, fraction)
    lam = np.zeros(len(qp.h))
    act = np.flatnonzero(qp.h >= -act_tol)
    if act.size:
        lam[act], _ = nnls(qp.A[act].T, -qp.grad, maxiter=50 * act.size + 100)
    stat = np.linalg.norm(qp.grad + qp.A.T @ lam)
    return {
        "stationarity": float(stat),
        "stationarity_scale": float(1.0 + np.linalg.norm(qp.grad)),
        "feasibility": float(max(np.max(qp.h), 0.0)) if len(qp.h) else 0.0,
        "complementarity": float(np.max(np.abs(lam * qp.h))) if len(qp.h) else 0.0,
        "multipliers": lam,
        "rows": qp.rows,
        "h": qp.h,
        "branch": qp.branch,
    }


def solve_sqp(scene, u0, config=None, model=LCIC_MODEL, fraction=1.0, lam0=None):
    """SQP on the nonlinear program with corner rows; returns a SolveReport.

    Raises SqpStalled (carrying the best-iterate report) after ``stall_iter``
    iterations without merit decrease.
    """
    cfg = config or SqpConfig()
    state = SqpState(np.asarray(u0, float).copy(), dict(lam0 or {}))
    merit_hist, trace, warnings = [], [scene.energy(state.u)], []
    best = (np.inf, state.u.copy(), state.penalty)
    no_decrease = 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        qp = sqp_subproblem(scene, state, model, fraction)
        d, mu = solve_qp(qp)
        lam, rank_def = update_multipliers(qp, d)
        if rank_def:
            warnings.append(f"rank-deficient active set at iteration {it}")
        lam_qp = mu if len(mu) else lam
        viol0 = float(np.max(qp.h, initial=-np.inf))
        if np.max(np.abs(d)) <= cfg.tol_step * (1.0 + np.max(np.abs(state.u))) \
                and viol0 <= cfg.eps_feas:
            state.lam = {_row_key(m): float(l) for m, l in zip(qp.rows.meta, lam_qp)}
            converged = True
            break
        state.penalty = max(state.penalty, 1.1 * float(np.max(lam_qp, initial=0.0)))
        phi0 = scene.energy(state.u) + state.penalty * float(np.sum(np.maximum(qp.h, 0.0)))
        slope = float(qp.grad @ d) - state.penalty * float(np.sum(np.maximum(qp.h, 0.0)))
        t = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            phi, h, _ = _merit(scene, state.u + t * d, state.penalty, model, fraction)
            if phi <= phi0 + cfg.armijo * t * min(slope, 0.0):
                accepted = True
                break
            t *= cfg.backtrack
        if not accepted and phi > phi0:
            t, phi = 0.0, phi0
        # merit flat to round-off with a tiny feasible step: nothing left to gain
        if abs(phi - phi0) <= 1e-14 * max(1.0, abs(phi0)) and viol0 <= cfg.eps_feas \
                and np.max(np.abs(d)) <= cfg.tol_flat * (1.0 + np.max(np.abs(state.u))):
            state.lam = {_row_key(m): float(l) for m, l in zip(qp.rows.meta, lam_qp)}
            converged = True
            break
        state.u = state.u + t * d
        state.lam = {_row_key(m): float(l) for m, l in zip(qp.rows.meta, lam_qp)}
        state.merit = phi
        merit_hist.append(phi)
        trace.append(scene.energy(state.u))
        # merits under different penalties do not compare: restart the count
        if phi < best[0] - 1e-15 * max(1.0, abs(best[0])) or state.penalty != best[2]:
            best = (phi, state.u.copy(), state.penalty)
            no_decrease = 0
        else:
            no_decrease += 1
        log.debug("sqp it %d merit %.12g step %.3g t %.3g viol %.3g", it, phi,
                  np.max(np.abs(d)), t, viol0)
        if no_decrease >= cfg.stall_iter:
            rep = _sqp_report(scene, best[1], model, fraction, merit_hist, trace, it,
                              warnings, False)
            raise SqpStalled(f"merit did not decrease for {cfg.stall_iter} iterations", rep)
    return _sqp_report(scene, state.u, model, fraction, merit_hist, trace, it, warnings,
                       converged, state)


def _sqp_report(scene, u, model, fraction, merit_hist, trace, it, warnings, converged,
                state=None):
    kkt = kkt_residuals(scene, u, model, fraction)
    rows = kkt["rows"]
    branch_map = {}
    for r, m in enumerate(rows.meta):
        if m.get("row") == "disjunction":
            L = rows.logical[r]
            branch_map[m["sample"]] = chmod.BLUE if kkt["branch"][r] == L[1] else chmod.RED
    rep = SolveReport("lcic", scene, np.asarray(u, float).copy(), converged,
                      "converged" if converged else "max_iter", kkt["multipliers"],
                      kkt["h"], rows.meta, trace, it, 0, warnings,
                      [{"merit": m} for m in merit_hist],
                      {"kkt": {k: kkt[k] for k in ("stationarity", "stationarity_scale",
                                                    "feasibility", "complementarity")},
                       "branch_map": branch_map, "fraction": fraction,
                       "lam_state": dict(state.lam) if state is not None else {}})
    return rep


# ---------------------------------------------------------------- initializer and driver

def smooth_corner_initializer(scene, fillet_radius=None, fraction=1.0, relaxed_fraction=0.5,
                              config=None):
    """Relax every elbow into a tangent arc and solve the baseline there.

    The channel is first narrowed to the effective radius at clearance
    ``fraction``. The fillet defaults to that radius, the smallest allowed: a
    fillet cuts the corner, so its pipe crosses the inner corner edge of the
    sharp sections, and a tighter fillet crosses it least. The baseline is
    solved on the relaxed channel with ``relaxed_fraction`` of the clearance
    left there, which keeps the start close to the sharp channel; the SQP merit
    absorbs what remains. Returns the relaxed channel and the stacked curvature.
    """
    ch = scene.channel
    _, _, r, ro = scene.target_radii()[-1]
    r_eff = ro + fraction * (r - ro)
    narrowed = ch.with_radius(r_eff)
    rho = r_eff if fillet_radius is None else fillet_radius
    relaxed = chmod.relax_elbows(narrowed, rho)
    rs = Scene(scene.tubes, relaxed, list(scene.n), list(scene.base_rotation),
               list(scene.lengths))
    target = ro + relaxed_fraction * (r_eff - ro)
    sched = ContinuationSchedule(ro, target, 5)
    rep = clearance_continuation(rs, sched, config or ClearanceConfig(), model=scm_model())
    if rep.max_residual > (config or ClearanceConfig()).eps_feas:
        log.warning("relaxed-channel start is infeasible (max residual %.3g)",
                    rep.max_residual)
    return relaxed, rep.u


@dataclass
class LcicConfig:
    start_fraction: float = 0.5
    steps: int = 4
    fillet_factor: float = 1.0      # fillet radius over the effective channel radius
    relaxed_fraction: float = 0.5
    sqp: SqpConfig = field(default_factory=SqpConfig)
    clearance: ClearanceConfig = field(default_factory=ClearanceConfig)


def lcic_solve(scene, config=None):
    """Large-clearance, impulse-curvature solve.

    Without elbows this is the clearance continuation. With elbows the outer
    loop grows the clearance from ``start_fraction`` of its target in ``steps``
    increments and runs the SQP at each one, warm-started from the previous
    solution; the first SQP starts from the smoothed-corner initializer.
    """
    cfg = config or LcicConfig()
    ch = scene.channel
    if ch is None or not ch.elbows:
        return clearance_continuation(scene, None, cfg.clearance)
    f0 = cfg.start_fraction
    _, _, r, ro = scene.target_radii()[-1]
    r0 = ro + f0 * (r - ro)
    _, u = smooth_corner_initializer(scene, cfg.fillet_factor * r0, f0, cfg.relaxed_fraction,
                                     cfg.clearance)
    fracs = f0 + (1.0 - f0) * np.arange(0, cfg.steps + 1) / cfg.steps if cfg.steps else [1.0]
    trace, hist, warnings, iters = [scene.energy(u)], [], [], 0
    lam = {}
    rep = None
    for k, fr in enumerate(fracs):
        try:
            rep = solve_sqp(scene, u, cfg.sqp, LCIC_MODEL, float(fr), lam)
        except SqpStalled as exc:
            exc.report.extra["increment"] = k
            raise
        u, lam = rep.u, rep.extra["lam_state"]
        iters += rep.iterations
        trace += rep.energy_trace[1:]
        warnings += rep.warnings
        hist.append({"fraction": float(fr), "sqp_iterations": rep.iterations,
                     "max_residual": rep.max_residual, "converged": rep.converged})
    rep.energy_trace = trace
    rep.iterations = iters
    rep.increments = len(fracs)
    rep.warnings = warnings
    rep.extra["outer_loop"] = hist
    return rep
