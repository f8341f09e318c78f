"""Large-clearance model: QCQP per clearance increment, solved through its Lagrangian dual.

Each increment linearizes the shape map at the current curvature and poses

    min  0.5 du^T K du + g^T du
    s.t. 0.5 du^T X_i du + Y_i du + Z_i <= 0

with ``X_i = 2 G_i^T M_i G_i``, ``Y_i = 2 v_i^T M_i G_i``, ``Z_i = v_i^T M_i v_i - 1``
(``G_i`` the linearized offset of contact row ``i``). Every ``X_i`` is kept as a
low-rank factor ``F_i^T F_i`` so the dual is evaluated through the Woodbury
identity over the rows with a positive multiplier only.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .contact import ContactModel, build_rows
from .errors import ContinuationDiverged, MaxIterExceeded, NonPsdConstraint
from .report import SolveReport
from .rod import shape_jacobian

log = logging.getLogger(__name__)

PSD_TOL = 1e-8
UNBOUNDED = 1e12   # dual growth taken as evidence of an infeasible linearization
NEWTON_CAP = 1e6   # largest projected-Newton step relative to the multiplier scale


@dataclass
class QcqpProblem:
    K: np.ndarray        # (n,) diagonal or (n, n) SPD
    g: np.ndarray        # (n,)
    U: np.ndarray        # (R, n) stacked factors; X_i = U_i^T U_i over the rows owned by i
    owner: np.ndarray    # (R,) constraint index of each factor row
    Y: np.ndarray        # (m, n)
    Z: np.ndarray        # (m,)
    meta: list = None

    @property
    def n(self):
        return self.g.size

    @property
    def m(self):
        return self.Z.size

    def X(self, i):
        Ui = self.U[self.owner == i]
        return Ui.T @ Ui

    def Kmat(self):
        return np.diag(self.K) if self.K.ndim == 1 else self.K

    def objective(self, du):
        du = np.asarray(du, float)
        Kdu = self.K * du if self.K.ndim == 1 else self.K @ du
        return 0.5 * float(du @ Kdu) + float(self.g @ du)

    def constraint_values(self, du):
        du = np.asarray(du, float)
        Ud = self.U @ du
        quad = np.bincount(self.owner, weights=Ud * Ud, minlength=self.m)
        return 0.5 * quad + self.Y @ du + self.Z

    @classmethod
    def from_matrices(cls, K, g, X, Y, Z, meta=None):
        """Build from explicit ``X_i`` matrices; raises NonPsdConstraint on indefinite ones."""
        U, owner = [], []
        for i, Xi in enumerate(X):
            Xi = 0.5 * (np.asarray(Xi, float) + np.asarray(Xi, float).T)
            w, V = np.linalg.eigh(Xi)
            scale = max(1.0, float(np.max(np.abs(w))))
            if w.min() < -PSD_TOL * scale:
                raise NonPsdConstraint(f"constraint {i} has eigenvalue {w.min():.3g}")
            keep = w > PSD_TOL * scale * 1e-6
            U.append(np.sqrt(w[keep])[:, None] * V[:, keep].T)
            owner += [i] * int(keep.sum())
        n = len(g)
        U = np.vstack(U) if U else np.zeros((0, n))
        K = np.asarray(K, float)
        if K.ndim == 2 and np.allclose(K, np.diag(np.diag(K))):
            K = np.diag(K).copy()
        return cls(K, np.asarray(g, float), U, np.array(owner, dtype=int),
                   np.asarray(Y, float).reshape(-1, n), np.asarray(Z, float).ravel(), meta)


def build_qcqp(rows, k_diag, u, u_hat):
    """QCQP data from quadratic contact rows linearized at ``u``."""
    if len(rows.b):
        raise ValueError("linear corner rows need the elbow solver")
    g = k_diag * (np.asarray(u, float) - u_hat)
    n = g.size
    U, owner, Y = [], [], []
    for i in range(len(rows.V)):
        M = 0.5 * (rows.M[i] + rows.M[i].T)
        w, V = np.linalg.eigh(M)
        scale = max(1.0, float(np.max(np.abs(w))))
        if w.min() < -PSD_TOL * scale:
            raise NonPsdConstraint(f"row {i}: contact form has eigenvalue {w.min():.3g}")
        keep = w > 1e-12 * scale
        # 0.5 * X_i = G^T M G  ->  U_i = sqrt(2 w) V^T G
        U.append(np.sqrt(2.0 * w[keep])[:, None] * (V[:, keep].T @ rows.G[i]))
        owner += [i] * int(keep.sum())
        Y.append(2.0 * rows.V[i] @ M @ rows.G[i] + (0.0 if rows.T is None else rows.T[i]))
    Z = rows.quad_values
    U = np.vstack(U) if U else np.zeros((0, n))
    Y = np.array(Y).reshape(-1, n)
    return QcqpProblem(np.asarray(k_diag, float), g, U, np.array(owner, dtype=int), Y,
                       np.asarray(Z, float), rows.meta)


@dataclass
class DualResult:
    lam: np.ndarray
    du: np.ndarray
    dual_value: float
    primal_value: float
    max_violation: float
    complementarity: float
    pg_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)   # dual value per accepted iterate
    newton_steps: int = 0
    evaluations: int = 0

    @property
    def gap(self):
        return self.primal_value - self.dual_value


class _DualOracle:
    """Dual value, gradient (= constraint values at the Lagrangian minimizer) and Hessian."""

    def __init__(self, prob):
        self.p = prob
        K = prob.K
        if K.ndim == 1:
            self.kinv = lambda x: (x.T / K).T
        else:
            cf = cho_factor(K)
            self.kinv = lambda x: cho_solve(cf, x)
        self.KiUt = self.kinv(prob.U.T) if prob.U.size else np.zeros((prob.n, 0))
        self.C = prob.U @ self.KiUt
        self.Kig = self.kinv(prob.g)
        self.KiYt = self.kinv(prob.Y.T) if prob.m else np.zeros((prob.n, 0))
        self.UKig = prob.U @ self.Kig
        self.UKiY = prob.U @ self.KiYt
        self.evals = 0

    def _inner(self, lam):
        a = np.flatnonzero(lam[self.p.owner] > 0)
        s = np.sqrt(lam[self.p.owner[a]])
        S = np.eye(a.size) + s[:, None] * self.C[np.ix_(a, a)] * s[None, :]
        return a, s, cho_factor(S) if a.size else None

    def __call__(self, lam):
        self.evals += 1
        p = self.p
        try:
            a, s, cf = self._inner(lam)
        except np.linalg.LinAlgError:
            # multipliers have blown up: the linearized constraints are inconsistent
            return np.inf, np.full(p.m, np.nan), np.full(p.n, np.nan)
        w = self.Kig + self.KiYt @ lam
        Pq = w
        if a.size:
            Uw = self.UKig[a] + self.UKiY[a] @ lam
            z = cho_solve(cf, s * Uw)
            Pq = w - self.KiUt[:, a] @ (s * z)
        du = -Pq
        c = p.constraint_values(du)
        q = p.g + p.Y.T @ lam
        dual = float(lam @ p.Z) + 0.5 * float(q @ du)
        # the closed form and the Lagrangian at du agree unless cancellation
        # in the Woodbury update has eaten the precision (very large lam)
        lag = p.objective(du) + float(lam @ c)
        scale = abs(float(lam @ p.Z)) + abs(float(q @ du)) + abs(lag)
        if not abs(lag - dual) <= 1e-8 * scale + 1e-300:
            return -np.inf, c, du
        return dual, c, du

    def hessian(self, lam, du, free):
        """``A_F^T P^-1 A_F`` (the negated dual Hessian) on the free multipliers."""
        p = self.p
        Ud = p.U @ du
        A = p.Y[free].T.copy()
        for col, i in enumerate(free):
            r = p.owner == i
            A[:, col] += p.U[r].T @ Ud[r]
        KiA = self.kinv(A)
        a, s, cf = self._inner(lam)
        if a.size:
            KiA = KiA - self.KiUt[:, a] @ (s[:, None] * cho_solve(cf, s[:, None] * (p.U[a] @ KiA)))
        return A.T @ KiA


def solve_dual(prob, tol=1e-8, max_iter=5000, lam0=None, strict=True, memory=10):
    """Maximize the Lagrangian dual over ``lam >= 0``.

    Spectral projected gradient (Barzilai-Borwein steps with a nonmonotone
    Armijo search) drives the iteration; once the free set is identified a
    projected Newton step on it is tried and kept whenever it raises the dual.
    Stops when the projected gradient ``||lam - max(lam + grad, 0)||_inf <= tol``,
    or when it reaches the round-off floor of the constraint evaluation (the
    largest term of ``0.5 |U_i du|^2 + Y_i du + Z_i`` times ``1e4 eps``).
    """
    m = prob.m
    if m == 0:
        du = -_DualOracle(prob).kinv(prob.g)
        val = prob.objective(du)
        return DualResult(np.zeros(0), du, val, val, -np.inf, 0.0, 0.0, 0, True, [val])
    orc = _DualOracle(prob)
    lam = np.zeros(m) if lam0 is None else np.maximum(np.asarray(lam0, float), 0.0)
    f, gr, du = orc(lam)
    hist = [f]
    alpha = 1.0 / max(1.0, float(np.max(np.abs(gr))))
    converged = False
    it = 0
    n_newton = 0
    for it in range(1, max_iter + 1):
        pg = np.max(np.abs(np.maximum(lam + gr, 0.0) - lam))
        if pg <= max(tol, _floor(prob, du)):
            converged = True
            break
        # projected Newton on the free set
        free = np.flatnonzero((lam > 0) | (gr > 0))
        step_done = False
        if 0 < free.size <= 400:
            H = orc.hessian(lam, du, free)
            try:
                dl = np.linalg.solve(H + 1e-14 * np.trace(H) / free.size * np.eye(free.size), gr[free])
            except np.linalg.LinAlgError:
                dl = None
            # a near-singular free-set Hessian (dependent active rows) yields huge steps
            # along directions where the dual is flat; round-off then fakes an ascent
            if dl is not None and np.all(np.isfinite(dl)) and \
                    np.max(np.abs(dl)) <= NEWTON_CAP * (1.0 + np.max(lam)):
                t = 1.0
                for _ in range(30):
                    trial = lam.copy()
                    trial[free] = np.maximum(lam[free] + t * dl, 0.0)
                    ft, gt, dut = orc(trial)
                    # once the dual value is flat to round-off, judge by the gradient
                    flat = abs(ft - f) <= 1e-10 * max(1.0, abs(f))
                    if (ft >= f + 1e-4 * float(gr @ (trial - lam)) and ft >= f) or \
                            (flat and _pgn(trial, gt) < pg):
                        s, y = trial - lam, gt - gr
                        lam, f, gr, du = trial, ft, gt, dut
                        step_done = True
                        n_newton += 1
                        break
                    t *= 0.5
        if not step_done:
            d = np.maximum(lam + alpha * gr, 0.0) - lam
            fref = max(hist[-memory:])
            t = 1.0
            gd = float(gr @ d)
            for _ in range(60):
                trial = lam + t * d
                ft, gt, dut = orc(trial)
                if ft >= fref + 1e-4 * t * gd:
                    break
                t *= 0.5
            s, y = trial - lam, gt - gr
            lam, f, gr, du = trial, ft, gt, dut
        if not np.isfinite(f) or f > UNBOUNDED * (1.0 + abs(hist[0])):
            f = np.inf
            break
        sy = float(s @ y)
        alpha = float(s @ s) / -sy if sy < 0 else 1e10
        alpha = min(max(alpha, 1e-12), 1e12)
        hist.append(f)
    if not np.isfinite(f):
        res = DualResult(lam, du, np.inf, np.inf, np.inf, np.inf, np.inf, it, False, hist,
                         n_newton, orc.evals)
        if strict:
            raise MaxIterExceeded("dual is unbounded: linearized constraints are inconsistent",
                                  res)
        return res
    pg = float(np.max(np.abs(np.maximum(lam + gr, 0.0) - lam)))
    converged = converged or pg <= max(tol, _floor(prob, du))
    res = DualResult(lam, du, f, prob.objective(du), float(np.max(gr)),
                     float(np.max(np.abs(lam * gr))), pg, it, converged, hist, n_newton, orc.evals)
    if not converged and strict:
        raise MaxIterExceeded(f"dual ascent stopped at projected gradient {pg:.3g}", res)
    return res


def _pgn(lam, gr):
    return float(np.max(np.abs(np.maximum(lam + gr, 0.0) - lam)))


def _floor(prob, du):
    Ud = prob.U @ du
    quad = np.bincount(prob.owner, weights=Ud * Ud, minlength=prob.m)
    scale = np.max(0.5 * quad + np.abs(prob.Y @ du) + np.abs(prob.Z))
    return 1e4 * np.finfo(float).eps * scale


@dataclass
class ContinuationSchedule:
    start_radius: float
    target_radius: float
    steps: int = 20

    def __post_init__(self):
        if self.steps < 1 or not self.target_radius > self.start_radius:
            raise ValueError("schedule needs target > start and at least one step")

    @property
    def delta(self):
        return (self.target_radius - self.start_radius) / self.steps

    def radii(self):
        return self.start_radius + self.delta * np.arange(1, self.steps + 1)


@dataclass
class ClearanceConfig:
    tol: float = 1e-8
    max_iter: int = 5000
    eps_feas: float = 1e-6
    eps_blowup: float = 1e-2
    max_halvings: int = 10
    max_damping: int = 10
    polish_iter: int = 200
    kkt_tol: float = 1e-6        # relative stationarity accepted in the polish
    step_tol: float = 1e-10      # relative to max |u|
    steps: int = 20              # continuation increments


def default_schedule(scene, steps=20):
    _, _, r, ro = scene.target_radii()[-1]
    return ContinuationSchedule(ro, r, steps)


def feasible_radius(scene, u, model, target, iters=40):
    """Smallest outermost radius (up to ``target``) at which ``u`` violates no row.

    Returns the zero-clearance radius when ``u`` fits everywhere below ``target``.
    """
    _, _, _, ro = scene.target_radii()[-1]

    def ok(r):
        h, _ = nonlinear_residuals(scene, u, scene.fraction_of(r), model)
        return h.size == 0 or np.max(h) <= 0.0

    lo_r = ro + 1e-3 * (target - ro)
    if ok(lo_r):
        return ro
    if not ok(target):
        return target
    lo, hi = lo_r, target
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


def nonlinear_residuals(scene, u, fraction, model):
    rows = build_rows(scene.state(u), scene.pairs(fraction), scene.channel, model)
    return rows.values(), rows


def increment(scene, u, fraction, model, cfg, lam0=None, tol=None):
    """One linearize-and-solve pass at a fixed clearance fraction.

    ``lam0`` warm-starts the dual when it matches the new row count.
    """
    state = scene.state(u)
    jac, rot = zip(*[shape_jacobian(r, rotation=True) for r in state.rods])
    rows = build_rows(state, scene.pairs(fraction), scene.channel, model, jac, rot)
    prob = build_qcqp(rows, scene.k_diag, u, scene.u_hat)
    if lam0 is not None and len(lam0) != prob.m:
        lam0 = None
    res = solve_dual(prob, cfg.tol if tol is None else tol, cfg.max_iter, lam0=lam0, strict=False)
    return res, rows


def _damped(scene, u, du, fraction, model, cfg):
    """Largest ``t`` in 1, 1/2, ... whose update keeps the violation below ``eps_blowup``.

    The linearized constraints are convex in the step and hold at ``du = 0``, so
    a shorter step stays feasible to first order while its linearization error
    shrinks quadratically.
    """
    t = 1.0
    for _ in range(cfg.max_damping + 1):
        u_try = u + t * du
        h, rows = nonlinear_residuals(scene, u_try, fraction, model)
        viol = float(np.max(h)) if h.size else -np.inf
        if viol <= cfg.eps_blowup:
            return t, u_try, viol, rows
        t *= 0.5
    return None, None, viol, rows


def clearance_continuation(scene, schedule=None, config=None, u0=None, model=None):
    """Grow the clearance from the zero-clearance guess to the target radius.

    Every increment re-linearizes at the current shape, solves the dual QCQP and
    re-integrates. An update whose nonlinear violation exceeds ``eps_blowup`` is
    shortened; if that fails the increment is retried at half size. At the
    target radius the linearization is repeated until the update vanishes and
    the nonlinear residual is below ``eps_feas``.
    """
    from .baseline_scm import zero_clearance_guess

    cfg = config or ClearanceConfig()
    model = model or ContactModel()
    schedule = schedule or default_schedule(scene, cfg.steps)
    u = zero_clearance_guess(scene) if u0 is None else np.asarray(u0, float).copy()
    r_feas = feasible_radius(scene, u, model, schedule.target_radius)
    if r_feas >= schedule.target_radius:
        # the guess already fits at the target: only the polish remains
        schedule = ContinuationSchedule(schedule.start_radius, schedule.target_radius, schedule.steps)
        r_feas = schedule.target_radius
    elif r_feas > schedule.start_radius:
        # the guess is off the centerline (kinks at elbows): start where it fits
        schedule = ContinuationSchedule(r_feas, schedule.target_radius, schedule.steps)
    trace = [scene.energy(u)]
    warnings, hist = [], []
    r = max(schedule.start_radius, r_feas)
    target = schedule.target_radius
    dc0 = schedule.delta
    n_inc = 0
    iters = 0
    lam = None
    while r < target - 1e-15:
        dc = min(dc0, target - r)
        for _ in range(cfg.max_halvings + 1):
            r_try = min(r + dc, target)
            res, rows = increment(scene, u, scene.fraction_of(r_try), model, cfg, lam)
            iters += res.iterations
            t = None
            if np.isfinite(res.dual_value):
                t, u_try, viol, _ = _damped(scene, u, res.du, scene.fraction_of(r_try), model, cfg)
            if t is not None:
                break
            log.debug("increment to r=%.6g failed; halving", r_try)
            dc *= 0.5
        else:
            raise ContinuationDiverged(
                f"no admissible update after {cfg.max_halvings} halvings at r={r:.6g}",
                _report(scene, u, r, model, lam, trace, iters, n_inc, warnings, hist, False))
        if rows.clamped:
            warnings.append(f"{rows.clamped} clamped ellipse evaluations at r={r_try:.6g}")
        u, r, lam = u_try, r_try, res.lam
        n_inc += 1
        trace.append(scene.energy(u))
        hist.append({"radius": r, "max_violation": viol, "dual_iterations": res.iterations,
                     "gap": res.gap, "damping": t})

    frac = scene.fraction_of(target)
    converged = False
    for _ in range(cfg.polish_iter):
        res, rows = increment(scene, u, frac, model, cfg, lam)
        iters += res.iterations
        if not np.isfinite(res.dual_value):
            break
        step = float(np.max(np.abs(res.du)))
        h0 = rows.quad_values if len(rows.V) else np.zeros(0)
        feasible = h0.size == 0 or np.max(h0) <= cfg.eps_feas
        if feasible and (step <= cfg.step_tol * (1.0 + np.max(np.abs(u)))
                         or _kkt_ok(scene, u, rows, res.lam, cfg)):
            lam = res.lam
            converged = True
            break
        t, u_try, viol, _ = _damped(scene, u, res.du, frac, model, cfg)
        if t is None:
            break
        u, lam = u_try, res.lam
        trace.append(scene.energy(u))
        hist.append({"radius": target, "max_violation": viol, "dual_iterations": res.iterations,
                     "gap": res.gap, "step": step, "damping": t})
    return _report(scene, u, target, model, lam, trace, iters, n_inc, warnings, hist, converged)


def _kkt_ok(scene, u, rows, lam, cfg):
    """Stationarity and complementarity at ``u`` with the subproblem multipliers.

    The dual stops at a projected gradient of ``tol``, which leaves steps too
    noisy for the step test once they reach that floor; the optimality
    conditions themselves are still resolved there.
    """
    grad = scene.k_diag * (np.asarray(u, float) - scene.u_hat)
    if len(rows.V) == 0:
        return np.linalg.norm(grad) <= cfg.kkt_tol
    lam = np.asarray(lam, float)
    stat = np.linalg.norm(grad + rows.quad_grad().T @ lam)
    comp = np.max(np.abs(lam * rows.quad_values))
    return stat <= cfg.kkt_tol * (1.0 + np.linalg.norm(grad)) and comp <= 1e-4


def _report(scene, u, radius, model, lam, trace, iters, n_inc, warnings, hist, converged):
    h, rows = nonlinear_residuals(scene, u, scene.fraction_of(radius), model)
    mult = None
    if lam is not None and len(lam) == len(h):
        mult = np.asarray(lam, float)
    return SolveReport("lcic" if model.correspondence == "nearest" else "scm", scene, u,
                       converged, "converged" if converged else "stalled", mult, h,
                       rows.meta, trace, iters, n_inc, warnings, hist,
                       {"radius": radius})
