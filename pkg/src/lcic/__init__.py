"""Kinematics of nested elastic tubes in large-clearance channels with sharp elbows.

The solver grows the clearance from a concentric start and handles elbow
joints with disjunctive corner constraints. An arclength-matched baseline
runs on the same core for comparison.
"""
from .baseline_scm import scm_solve, zero_clearance_guess
from .channel import Channel, channel_from_segments, classify_regions, straight_channel
from .clearance_solver import (ClearanceConfig, ContinuationSchedule, QcqpProblem,
                               clearance_continuation, solve_dual)
from .elbow_solver import LcicConfig, SqpConfig, kkt_residuals, lcic_solve, solve_sqp
from .metrics import RigidTransform, ShapeErrors, rigid_register, shape_errors, tip_wall_gap
from .report import SolveReport
from .rod import TubeSpec, integrate_shape, shape_jacobian
from .scene import Scene

__version__ = "0.1.0"

__all__ = [
    "Channel", "ClearanceConfig", "ContinuationSchedule", "LcicConfig", "QcqpProblem",
    "RigidTransform", "Scene", "ShapeErrors", "SolveReport", "SqpConfig", "TubeSpec",
    "channel_from_segments", "classify_regions", "clearance_continuation", "integrate_shape",
    "kkt_residuals", "lcic_solve", "rigid_register", "scm_solve", "shape_errors",
    "shape_jacobian", "solve_dual", "solve_sqp", "straight_channel", "tip_wall_gap",
    "zero_clearance_guess",
]
