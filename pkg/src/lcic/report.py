"""Solver output record."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SolveReport:
    model: str
    scene: object
    u: np.ndarray
    converged: bool
    status: str = "converged"        # converged | stalled | max_iter
    multipliers: np.ndarray = None   # one per logical constraint row
    residuals: np.ndarray = None     # nonlinear h per logical row at the final shape
    rows_meta: list = None
    energy_trace: list = field(default_factory=list)
    iterations: int = 0
    increments: int = 0
    warnings: list = field(default_factory=list)
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def state(self):
        return self.scene.state(self.u)

    @property
    def energy(self):
        return self.scene.energy(self.u)

    @property
    def max_residual(self):
        if self.residuals is None or len(self.residuals) == 0:
            return -np.inf
        return float(np.max(self.residuals))

    def inner_points(self):
        return self.state.rods[0].p

    def tip(self):
        return self.inner_points()[-1].copy()

    def active_rows(self, tol=1e-6, lam_tol=1e-10):
        """Indices of rows that are tight or carry a positive multiplier."""
        if self.residuals is None:
            return np.zeros(0, dtype=int)
        tight = np.abs(self.residuals) <= tol
        if self.multipliers is not None and len(self.multipliers) == len(self.residuals):
            tight |= self.multipliers > lam_tol
        return np.flatnonzero(tight)

    def contact_flags(self, tol=1e-6):
        """Per inner-tube sample: True where some row on that sample is active."""
        flags = np.zeros(self.scene.n[0], dtype=bool)
        for r in self.active_rows(tol):
            m = self.rows_meta[r]
            if m["tube"] == 0:
                flags[m["sample"]] = True
        return flags

    def summary(self):
        return {
            "model": self.model,
            "status": self.status,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "increments": int(self.increments),
            "energy": self.energy,
            "max_residual": self.max_residual,
            "n_rows": 0 if self.residuals is None else int(len(self.residuals)),
            "n_active": int(len(self.active_rows())),
            "warnings": list(self.warnings),
        }
