"""Rigid outer channel: straight/arc sections joined by elbow joints.

Sections carry a frame ``F = [n, b, t]`` at their start; ``t`` is the centerline
tangent, ``n`` a reference normal that is parallel-transported along the channel
so that elbow roll angles have a fixed meaning.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, FilletTooSmall, OutsideChannel
from .geometry import rot_axis

BLUE, RED, OVERLAP, OUTSIDE = "Blue", "Red", "Overlap", "Outside"


@dataclass
class ChannelSection:
    kind: str  # "line" | "arc"
    start: np.ndarray
    frame: np.ndarray
    length: float
    inner_radius: float
    radius: float = np.inf  # bend radius for arcs
    roll: float = 0.0  # arc bend direction about t, from n

    @property
    def tangent0(self):
        return self.frame[:, 2]

    @property
    def bend_dir(self):
        n, b = self.frame[:, 0], self.frame[:, 1]
        return np.cos(self.roll) * n + np.sin(self.roll) * b

    def point(self, s):
        s = np.asarray(s, dtype=float)
        t = self.tangent0
        if self.kind == "line":
            return self.start + s[..., None] * t
        nb = self.bend_dir
        a = s / self.radius
        return (self.start + self.radius * (1 - np.cos(a))[..., None] * nb
                + self.radius * np.sin(a)[..., None] * t)

    def tangent(self, s):
        s = np.asarray(s, dtype=float)
        t = self.tangent0
        if self.kind == "line":
            return np.broadcast_to(t, s.shape + (3,)).copy()
        nb = self.bend_dir
        a = s / self.radius
        return np.sin(a)[..., None] * nb + np.cos(a)[..., None] * t

    def end_frame(self):
        if self.kind == "line":
            return self.frame.copy()
        axis = np.cross(self.tangent0, self.bend_dir)
        return rot_axis(axis, self.length / self.radius) @ self.frame

    def end_point(self):
        return self.point(self.length)

    def locate(self, p):
        """Axial coordinate (unclamped for lines), foot point, and radial distance."""
        p = np.atleast_2d(p)
        if self.kind == "line":
            xi = (p - self.start) @ self.tangent0
            foot = self.start + xi[:, None] * self.tangent0
        else:
            nb, t = self.bend_dir, self.tangent0
            rel = p - (self.start + self.radius * nb)
            psi = np.arctan2(rel @ t, -(rel @ nb))
            psi = np.clip(psi, 0.0, self.length / self.radius)
            xi = psi * self.radius
            foot = self.point(xi)
            # axial coordinate beyond the ends continues along the end tangents
            for end, sgn in ((0.0, -1.0), (self.length, 1.0)):
                at = np.isclose(xi, end)
                if np.any(at):
                    tang = self.tangent(end)
                    off = (p[at] - self.point(end)) @ tang
                    sel = sgn * off > 0
                    idx = np.flatnonzero(at)[sel]
                    xi[idx] = end + off[sel]
                    foot[idx] = self.point(end) + off[sel, None] * tang
        rad = np.linalg.norm(p - foot, axis=1)
        return xi, foot, rad


@dataclass
class ElbowJoint:
    blue: int
    red: int
    corner: np.ndarray
    v_b1: np.ndarray
    v_r1: np.ndarray
    v_b2: np.ndarray
    v_r2: np.ndarray

    @property
    def deflection(self):
        return float(np.arccos(np.clip(self.v_b1 @ self.v_r1, -1.0, 1.0)))

    @property
    def bend_angle(self):
        """Interior angle between the two sections; 180 deg is a straight pipe."""
        return np.pi - self.deflection

    def extension(self, radius):
        return 2.0 * radius / max(np.sin(self.deflection), 1e-3)


@dataclass
class Channel:
    sections: list
    elbows: list
    ds: float
    rigid: bool = True
    spec: list = None
    poly: np.ndarray = field(init=False)
    poly_s: np.ndarray = field(init=False)
    poly_section: np.ndarray = field(init=False)
    poly_tangent: np.ndarray = field(init=False)

    def __post_init__(self):
        pts, ss, sec, tan = [], [], [], []
        s0 = 0.0
        for i, S in enumerate(self.sections):
            m = max(int(round(S.length / self.ds)), 1)
            loc = np.linspace(0.0, S.length, m + 1)
            if i > 0:
                loc = loc[1:]
            pts.append(S.point(loc))
            tan.append(S.tangent(loc))
            ss.append(s0 + loc)
            sec.append(np.full(loc.size, i))
            s0 += S.length
        self.poly = np.vstack(pts)
        self.poly_s = np.concatenate(ss)
        self.poly_section = np.concatenate(sec)
        self.poly_tangent = np.vstack(tan)
        self.section_start = np.cumsum([0.0] + [S.length for S in self.sections])

    @property
    def inner_radius(self):
        return self.sections[0].inner_radius

    @property
    def total_length(self):
        return float(self.section_start[-1])

    def with_radius(self, r):
        secs = [ChannelSection(S.kind, S.start, S.frame, S.length, r, S.radius, S.roll)
                for S in self.sections]
        return Channel(secs, self.elbows, self.ds, self.rigid, self.spec)

    def elbow_between(self, a, b):
        for e in self.elbows:
            if {e.blue, e.red} == {a, b}:
                return e
        return None

    def section_at_arclength(self, s):
        """Section index containing channel arclength ``s`` (joints go upstream)."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.section_start[1:-1], s, side="left")
        return idx

    def point_at_arclength(self, s):
        s = np.asarray(s, dtype=float)
        k = self.section_at_arclength(s)
        out = np.empty(s.shape + (3,))
        tan = np.empty(s.shape + (3,))
        for i, S in enumerate(self.sections):
            m = k == i
            if np.any(m):
                loc = np.clip(s[m] - self.section_start[i], 0.0, None)
                out[m] = S.point(loc)
                tan[m] = S.tangent(loc)
        return out, tan

    def curvature_at_arclength(self, s):
        """Centerline curvature in the transported section frame, shape ``(..., 3)``."""
        s = np.asarray(s, dtype=float)
        k = self.section_at_arclength(s)
        out = np.zeros(s.shape + (3,))
        for i, S in enumerate(self.sections):
            if S.kind == "arc":
                out[k == i] = [-np.sin(S.roll) / S.radius, np.cos(S.roll) / S.radius, 0.0]
        return out

    def mean_curvature_on(self, lo, hi):
        """Curvature averaged over each interval ``[lo, hi]`` of channel arclength."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        out = np.zeros(lo.shape + (3,))
        for i, S in enumerate(self.sections):
            if S.kind != "arc":
                continue
            a, b = self.section_start[i], self.section_start[i] + S.length
            overlap = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
            k = np.array([-np.sin(S.roll) / S.radius, np.cos(S.roll) / S.radius, 0.0])
            out += (overlap / (hi - lo))[..., None] * k
        return out

    def frame_at_arclength(self, s):
        """Transported frame ``[n, b, t]`` at a single channel arclength."""
        i = int(self.section_at_arclength(s))
        S = self.sections[i]
        loc = max(float(s) - self.section_start[i], 0.0)
        if S.kind == "line":
            return S.frame.copy()
        axis = np.cross(S.tangent0, S.bend_dir)
        return rot_axis(axis, loc / S.radius) @ S.frame

    # -- containment used for validation (independent of the constraint code)
    def contains(self, p, radius=None):
        """Direct point-in-pipe test against the mitred physical channel."""
        p = np.atleast_2d(p)
        r = self.inner_radius if radius is None else radius
        inside = np.zeros(len(p), dtype=bool)
        for i, S in enumerate(self.sections):
            xi, _, rad = S.locate(p)
            ok = rad <= r
            up = [e for e in self.elbows if e.red == i]
            down = [e for e in self.elbows if e.blue == i]
            if up:
                e = up[0]
                ok &= (p - e.corner) @ (e.v_b1 + e.v_r1) >= 0.0
            else:
                ok &= xi >= -1e-12
            if down:
                e = down[0]
                ok &= (p - e.corner) @ (e.v_b1 + e.v_r1) <= 0.0
            else:
                ok &= xi <= S.length + 1e-12
            inside |= ok
        return inside


def channel_from_segments(config):
    """Assemble a Channel from a plain dict in SI units.

    ``{"inner_radius": r, "ds": h, "base_frame": 3x3 (optional),
      "base_point": xyz (optional),
      "sections": [{"type": "line", "length": L},
                   {"type": "line", "length": L, "bend_angle": deg, "roll": deg},
                   {"type": "arc", "length": L, "radius": rho, "roll": deg}, ...]}``

    ``bend_angle`` is the interior angle between a section and its predecessor
    (180 would be a straight continuation); ``roll`` turns the bend direction
    about the incoming tangent, measured from the transported reference normal.
    """
    def bad(msg, fld):
        raise ConfigError(msg, field=fld)

    try:
        r = float(config["inner_radius"])
    except KeyError:
        bad("missing channel inner radius", "channel.inner_radius")
    if not r > 0:
        bad("inner radius must be positive", "channel.inner_radius")
    ds = float(config.get("ds", 1e-3))
    if not ds > 0:
        bad("ds must be positive", "channel.ds")
    secs_cfg = config.get("sections") or []
    if not secs_cfg:
        bad("channel needs at least one section", "channel.sections")
    F = np.array(config.get("base_frame", np.eye(3)), dtype=float)
    start = np.array(config.get("base_point", np.zeros(3)), dtype=float)

    sections, elbows = [], []
    for i, sc in enumerate(secs_cfg):
        fld = f"channel.sections[{i}]"
        kind = sc.get("type", "line")
        if kind not in ("line", "arc"):
            bad(f"unknown section type {kind!r}", fld + ".type")
        L = float(sc.get("length", 0.0))
        if not L > 0:
            bad("section length must be positive", fld + ".length")
        roll = np.radians(float(sc.get("roll", 0.0)))
        if "bend_angle" in sc:
            if i == 0:
                bad("the first section cannot carry an elbow", fld + ".bend_angle")
            ang = float(sc["bend_angle"])
            if not 0.0 < ang < 180.0:
                bad(f"bend angle {ang} deg is not realisable (0 < angle < 180)",
                    fld + ".bend_angle")
            prev = sections[-1]
            corner = prev.end_point()
            t_in = F[:, 2]
            turn = np.cos(roll) * F[:, 0] + np.sin(roll) * F[:, 1]
            defl = np.pi - np.radians(ang)
            F = rot_axis(np.cross(t_in, turn), defl) @ F
            t_out = F[:, 2]
            c = float(np.clip(t_in @ t_out, -1.0, 1.0))
            v_b2 = -(t_out - c * t_in)
            v_b2 /= np.linalg.norm(v_b2)
            v_r2 = t_in - c * t_out
            v_r2 /= np.linalg.norm(v_r2)
            elbows.append(ElbowJoint(i - 1, i, corner, t_in.copy(), t_out.copy(), v_b2, v_r2))
            start = corner
        if kind == "line":
            S = ChannelSection("line", start.copy(), F.copy(), L, r)
        else:
            rho = float(sc.get("radius", 0.0))
            if not rho > 0:
                bad("arc radius must be positive", fld + ".radius")
            S = ChannelSection("arc", start.copy(), F.copy(), L, r, rho,
                               roll if "bend_angle" not in sc else 0.0)
        sections.append(S)
        start = S.end_point()
        F = S.end_frame()
    spec = [dict(sc) for sc in secs_cfg]
    return Channel(sections, elbows, ds, True,
                   {"inner_radius": r, "ds": ds, "sections": spec,
                    "base_frame": np.array(config.get("base_frame", np.eye(3))).tolist(),
                    "base_point": np.array(config.get("base_point", np.zeros(3))).tolist()})


def straight_channel(length, inner_radius, ds):
    return channel_from_segments({"inner_radius": inner_radius, "ds": ds,
                                  "sections": [{"type": "line", "length": length}]})


def corner_planes(elbow, offset):
    """Cut planes of an elbow: a point ``M`` on their intersection and the two normals.

    Each plane is tangent to one section's cylinder of radius ``offset`` on the
    outer side of the bend; ``(p - M) . v <= 0`` keeps a point on the inside.
    """
    c = float(elbow.v_b2 @ elbow.v_r2)
    a = offset / (1.0 + c)
    M = elbow.corner + a * (elbow.v_b2 + elbow.v_r2)
    return M, elbow.v_b2.copy(), elbow.v_r2.copy()


def nearest_outer_point(p_m, channel_or_poly):
    """Index of the closest polyline sample; ties go to the smaller index."""
    poly = channel_or_poly.poly if isinstance(channel_or_poly, Channel) else channel_or_poly
    p_m = np.asarray(p_m, dtype=float)
    idx = kernels.nearest_index(np.atleast_2d(p_m), np.asarray(poly, dtype=float))
    return int(idx[0]) if p_m.ndim == 1 else idx


def nearest_in_section(points, channel, section):
    sel = np.flatnonzero(channel.poly_section == section)
    idx = kernels.nearest_index(np.atleast_2d(points), channel.poly[sel])
    return sel[idx]


@dataclass
class RegionTags:
    kind: np.ndarray      # Blue / Red / Overlap / Outside per sample
    section: np.ndarray   # owning section (blue side for Overlap), -1 if Outside
    elbow: np.ndarray     # elbow index for Overlap samples, else -1
    match: np.ndarray     # nearest polyline index within the owning section

    @property
    def overlap(self):
        return np.flatnonzero(self.kind == OVERLAP)


def _label(i):
    return BLUE if i % 2 == 0 else RED


def classify_regions(p_inner, channel, margin=None, radius=None, strict=True):
    """Tag each inner sample with the channel region it occupies.

    A sample is Overlap when it lies inside both cylinders adjacent to an elbow
    (within ``margin``); otherwise it belongs to the section containing it. Samples
    past the channel's far end are Outside and carry no constraint.
    """
    p = np.atleast_2d(np.asarray(p_inner, dtype=float))
    m = len(p)
    r = channel.inner_radius if radius is None else radius
    margin = channel.ds if margin is None else margin
    ns = len(channel.sections)
    member = np.zeros((ns, m), dtype=bool)
    excess = np.zeros((ns, m))
    rads = np.zeros((ns, m))
    xis = np.zeros((ns, m))
    for i, S in enumerate(channel.sections):
        xi, _, rad = S.locate(p)
        up = [e for e in channel.elbows if e.red == i]
        down = [e for e in channel.elbows if e.blue == i]
        lo = -up[0].extension(r + margin) if up else -margin
        hi = S.length + (down[0].extension(r + margin) if down else margin)
        if not up and i > 0:
            lo = -margin
        member[i] = (rad <= r + margin) & (xi >= lo) & (xi <= hi)
        excess[i] = np.maximum.reduce([rad - r, lo - xi, xi - hi])
        rads[i], xis[i] = rad, xi

    kind = np.empty(m, dtype=object)
    section = np.full(m, -1)
    elbow = np.full(m, -1)
    last = channel.sections[-1]
    for k in range(m):
        mem = np.flatnonzero(member[:, k])
        done = False
        for a in mem:
            if a + 1 in mem:
                e = channel.elbow_between(a, a + 1)
                if e is not None:
                    kind[k] = OVERLAP
                    section[k] = a
                    elbow[k] = channel.elbows.index(e)
                    done = True
                    break
        if done:
            continue
        if mem.size:
            kind[k] = _label(mem[0])
            section[k] = mem[0]
            continue
        if xis[-1, k] > last.length and rads[-1, k] <= r + margin:
            kind[k] = OUTSIDE
            continue
        if strict and np.min(rads[:, k] - r) > r + margin:
            raise OutsideChannel(f"sample {k} at {p[k]} is outside every section")
        i = int(np.argmin(excess[:, k]))
        if i == ns - 1 and xis[i, k] > last.length:
            kind[k] = OUTSIDE
            continue
        kind[k] = _label(i)
        section[k] = i

    match = np.full(m, -1)
    for i in range(ns):
        sel = section == i
        if np.any(sel):
            match[sel] = nearest_in_section(p[sel], channel, i)
    return RegionTags(kind.astype(str), section, elbow, match)


def relax_elbows(channel, fillet_radius):
    """Replace every elbow by a tangent circular arc of radius ``fillet_radius``."""
    if channel.spec is None:
        raise ValueError("channel was not built from a section list")
    if fillet_radius < channel.inner_radius:
        raise FilletTooSmall("fillet radius must be at least the channel radius")
    secs = [dict(s) for s in channel.spec["sections"]]
    out = []
    trims = [[0.0, 0.0] for _ in secs]
    for i, sc in enumerate(secs):
        if "bend_angle" in sc:
            defl = np.pi - np.radians(float(sc["bend_angle"]))
            T = fillet_radius * np.tan(0.5 * defl)
            trims[i - 1][1] += T
            trims[i][0] += T
    for i, sc in enumerate(secs):
        L = float(sc["length"]) - trims[i][0] - trims[i][1]
        if sc.get("type", "line") != "line" and (trims[i][0] or trims[i][1]):
            raise FilletTooSmall("elbows next to arc sections cannot be filleted")
        if L < -1e-12:
            raise FilletTooSmall(
                f"fillet of radius {fillet_radius:.4g} m does not fit on section {i}")
        if "bend_angle" in sc:
            defl = np.pi - np.radians(float(sc["bend_angle"]))
            out.append({"type": "arc", "length": fillet_radius * defl,
                        "radius": fillet_radius, "roll": sc.get("roll", 0.0)})
        if L > 1e-12:
            rest = {k: v for k, v in sc.items() if k not in ("bend_angle", "roll", "length")}
            rest["length"] = L
            out.append(rest)
    cfg = dict(channel.spec)
    cfg["sections"] = out
    cfg["inner_radius"] = channel.inner_radius
    return channel_from_segments(cfg)
