"""A solvable arrangement: elastic tubes (innermost first) and an optional rigid channel."""
from dataclasses import dataclass, field

import numpy as np

from .contact import Pair
from .geometry import rot_z
from .rod import RodState, StackedState, stiffness_matrix


@dataclass
class Scene:
    tubes: list                      # elastic TubeSpec, tube 0 innermost
    channel: object = None           # rigid outermost Channel, optional
    n: object = 100                  # samples per tube (int or per-tube list)
    base_rotation: object = None     # axial rotation of each tube at the base, rad
    lengths: object = None           # modelled (inserted) length per tube
    ds_list: list = field(init=False)
    base_p: np.ndarray = field(init=False)
    base_R: np.ndarray = field(init=False)

    def __post_init__(self):
        k = len(self.tubes)
        if k == 0:
            raise ValueError("a scene needs at least one elastic tube")
        if any(t.rigid for t in self.tubes):
            raise ValueError("rigid tubes enter a scene as the channel, not as tubes")
        ns = self.n if isinstance(self.n, (list, tuple)) else [self.n] * k
        self.n = [int(v) for v in ns]
        if any(v < 2 for v in self.n):
            raise ValueError("each tube needs at least 2 samples")
        rot = self.base_rotation
        self.base_rotation = [0.0] * k if rot is None else [float(r) for r in np.broadcast_to(rot, (k,))]
        L = self.lengths
        self.lengths = [t.length for t in self.tubes] if L is None else [float(v) for v in L]
        for t, Li in zip(self.tubes, self.lengths):
            if not 0 < Li <= t.length + 1e-12:
                raise ValueError(f"modelled length {Li} of {t.name} exceeds the tube")
        self.ds_list = [Li / ni for Li, ni in zip(self.lengths, self.n)]
        if self.channel is not None and self.channel.spec is not None:
            self.base_p = np.asarray(self.channel.spec.get("base_point", np.zeros(3)), float)
            self.base_R = np.asarray(self.channel.spec.get("base_frame", np.eye(3)), float)
        else:
            self.base_p, self.base_R = np.zeros(3), np.eye(3)

    # -- per-tube data
    def grid(self, i):
        return self.ds_list[i] * np.arange(1, self.n[i] + 1)

    def tube_base(self, i):
        return self.base_p.copy(), self.base_R @ rot_z(self.base_rotation[i])

    @property
    def u_hat(self):
        return np.concatenate([t.precurvature_on(self.grid(i)).ravel()
                               for i, t in enumerate(self.tubes)])

    @property
    def k_diag(self):
        """Diagonal of the stacked stiffness, each block weighted by its ds."""
        return np.concatenate([np.tile(np.diag(stiffness_matrix(t)), n) * ds
                               for t, n, ds in zip(self.tubes, self.n, self.ds_list)])

    @property
    def dim(self):
        return 3 * sum(self.n)

    def state(self, u):
        u = np.asarray(u, dtype=float).ravel()
        rods, off = [], 0
        for i, n in enumerate(self.n):
            p0, R0 = self.tube_base(i)
            rods.append(RodState.from_u(u[off:off + 3 * n].reshape(-1, 3), self.ds_list[i], p0, R0))
            off += 3 * n
        return StackedState(rods)

    def energy(self, u):
        e = np.asarray(u, float).ravel() - self.u_hat
        return 0.5 * float(e @ (self.k_diag * e))

    # -- contact pairs
    def target_radii(self):
        out = []
        for i in range(len(self.tubes) - 1):
            out.append((i, i + 1, self.tubes[i + 1].inner_radius, self.tubes[i].outer_radius))
        if self.channel is not None:
            k = len(self.tubes) - 1
            out.append((k, "channel", self.channel.inner_radius, self.tubes[k].outer_radius))
        return out

    def pairs(self, fraction=1.0):
        """Contact pairs with every clearance scaled by ``fraction`` of its target."""
        return [Pair(a, b, ro + fraction * (r - ro), ro) for a, b, r, ro in self.target_radii()]

    def fraction_of(self, radius):
        """Clearance fraction at which the outermost pair reaches ``radius``."""
        _, _, r, ro = self.target_radii()[-1]
        return (radius - ro) / (r - ro)
