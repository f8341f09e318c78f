"""Small-clearance baseline: arclength-matched constraints and an abrupt switch at joints.

The baseline runs on the same solver core as the large-clearance model. Only
the correspondence rule changes: cross-sections are matched by equal arclength,
not by nearest neighbour. The constraint also switches sections at the joint
arclength, and there are no overlap, disjunction or cut-plane rows.
"""
import numpy as np

from .clearance_solver import ClearanceConfig, clearance_continuation
from .contact import ARCLENGTH, ContactModel
from .geometry import rot_z
from .rod import stiffness_matrix

SCM_MODEL = ContactModel(correspondence=ARCLENGTH, corners="scm", metric="ball")


def scm_model(metric="ball"):
    return ContactModel(correspondence=ARCLENGTH, corners="scm", metric=metric)


def zero_clearance_guess(scene, channel=None):
    """Curvature of the concentric (zero-clearance) configuration.

    Without a channel all tubes share one centerline whose curvature is the
    stiffness-weighted mean of the precurvatures present at each arclength,
    torsion neglected. Inside a rigid channel the tubes follow its centerline,
    and every elbow becomes a one-segment kink carrying the whole deflection.
    """
    channel = scene.channel if channel is None else channel
    out = []
    for i, tube in enumerate(scene.tubes):
        s = scene.grid(i)
        ds = scene.ds_list[i]
        Rz = rot_z(scene.base_rotation[i])
        if channel is not None:
            # arcs shorter than a few segments keep their full turning angle
            uc = channel.mean_curvature_on(s - ds, s)
            for e in channel.elbows:
                s_e = channel.section_start[e.red]
                j = int(np.clip(np.ceil(s_e / ds) - 1, 0, len(s) - 1))
                if s_e > s[-1]:
                    continue
                roll = np.radians(float(channel.spec["sections"][e.red].get("roll", 0.0)))
                uc[j] += e.deflection / ds * np.array([-np.sin(roll), np.cos(roll), 0.0])
        else:
            num = np.zeros((len(s), 3))
            den = np.zeros((len(s), 3))
            for k, other in enumerate(scene.tubes):
                Kd = np.diag(stiffness_matrix(other))
                present = s <= scene.lengths[k] + 1e-12
                uh = other.precurvature_on(np.minimum(s, scene.lengths[k]))
                uh = uh @ rot_z(scene.base_rotation[k]).T
                num[present] += Kd * uh[present]
                den[present] += Kd
            uc = num / np.maximum(den, 1e-300)
            uc[:, 2] = 0.0
        # body-frame curvature of tube i: rotate out of the common frame
        out.append(uc @ Rz)
    return np.concatenate([o.ravel() for o in out])


def scm_solve(scene, config=None, schedule=None, metric="ball"):
    """Baseline solve: continuation from the concentric guess with arclength matching."""
    return clearance_continuation(scene, schedule, config or ClearanceConfig(),
                                  model=scm_model(metric))
