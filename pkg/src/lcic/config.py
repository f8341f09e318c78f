"""Scenario files: YAML parsing with line tracking, schema validation, unit resolution.

A scenario file describes the tubes (innermost first), an optional rigid
channel, solver settings and an optional sweep. Every diagnostic carries the
``file:line`` of the offending key.
"""
import copy
import hashlib
import itertools
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .channel import channel_from_segments
from .clearance_solver import ClearanceConfig
from .elbow_solver import LcicConfig, SqpConfig
from .errors import ConfigError
from .rod import TubeSpec
from .scene import Scene

FORMAT_VERSION = 1

_UNITS = {
    "m": ("length", 1.0), "cm": ("length", 1e-2), "mm": ("length", 1e-3), "um": ("length", 1e-6),
    "1/m": ("curvature", 1.0), "1/mm": ("curvature", 1e3),
    "deg": ("angle", 1.0), "rad": ("angle", 180.0 / np.pi),
}
_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S+)?\s*$")
_PATH = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)|\[(\d+)\]")


def load_schema():
    return json.loads(resources.files("lcic").joinpath("schema/scenario.schema.json").read_text())


# -- YAML with line numbers

def _line_map(node, path=(), out=None):
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_map(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


def dotted(path):
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else str(p))
    return s


def parse_path(text):
    out = []
    pos = 0
    for m in _PATH.finditer(text):
        if m.start() not in (pos, pos + 1):
            raise ValueError(text)
        out.append(m.group(1) if m.group(1) else int(m.group(2)))
        pos = m.end()
    if pos != len(text) or not out:
        raise ValueError(text)
    return tuple(out)


@dataclass
class Source:
    path: str
    lines: dict

    def line(self, path):
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, message, path):
        return ConfigError(message, field=dotted(path) or None, line=self.line(path), path=self.path)


def read_yaml(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None, path=str(path)) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping", line=1, path=str(path))
    return raw, Source(str(path), _line_map(node)), text


def validate(raw, src):
    v = jsonschema.Draft202012Validator(load_schema())
    errs = sorted(v.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if not errs:
        return
    e = jsonschema.exceptions.best_match(errs)
    path = tuple(e.absolute_path)
    if e.validator == "required":
        missing = re.search(r"'([^']+)' is a required property", e.message)
        field_path = path + ((missing.group(1),) if missing else ())
        raise ConfigError(f"missing required field {dotted(field_path)!r}", field=dotted(field_path),
                          line=src.line(path), path=src.path)
    if e.validator == "additionalProperties":
        extra = re.findall(r"'([^']+)'", e.message)
        where = path + ((extra[0],) if extra else ())
        raise src.error(f"unknown field {dotted(where)!r}", where)
    if e.validator == "const" and path == ("format_version",):
        raise src.error(f"unsupported format_version {e.instance!r} (expected {FORMAT_VERSION})", path)
    raise src.error(e.message, path)


# -- units

def quantity(value, kind, src, path):
    """Resolve a number or '<value> <unit>' string; plain numbers are SI (angles in degrees)."""
    if isinstance(value, bool):
        raise src.error("expected a quantity", path)
    if isinstance(value, (int, float)):
        return float(value)
    m = _QTY.match(str(value))
    if not m:
        raise src.error(f"cannot parse quantity {value!r}", path)
    unit = m.group(2)
    if unit is None:
        return float(m.group(1))
    if unit not in _UNITS:
        raise src.error(f"unknown unit {unit!r}", path)
    dim, scale = _UNITS[unit]
    if dim != kind:
        raise src.error(f"unit {unit!r} is a {dim}, expected a {kind}", path)
    return float(m.group(1)) * scale


# -- resolved scenario

@dataclass
class Scenario:
    """One solvable row of a scenario file, in SI units."""
    name: str
    label: str
    model: str
    seed: int
    tubes: list                 # TubeSpec
    insertion: list             # modelled length per tube, m
    base_rotation: list         # rad
    channel: dict = None        # channel_from_segments input
    n: int = 100
    clearance: ClearanceConfig = field(default_factory=ClearanceConfig)
    lcic: LcicConfig = field(default_factory=LcicConfig)
    scm_metric: str = "ball"
    reference: str = None
    overrides: dict = field(default_factory=dict)

    def scene(self):
        ch = channel_from_segments(self.channel) if self.channel else None
        return Scene(self.tubes, ch, n=self.n, base_rotation=self.base_rotation,
                     lengths=self.insertion)

    def to_dict(self):
        return {
            "name": self.name, "label": self.label, "model": self.model, "seed": self.seed,
            "n": self.n, "overrides": self.overrides,
            "tubes": [{"name": t.name, "inner_radius_m": t.inner_radius, "outer_radius_m": t.outer_radius,
                       "length_m": t.length, "insertion_m": L, "bending_stiffness": t.bending_stiffness,
                       "poisson_ratio": t.poisson_ratio, "precurvature_1_m": list(map(float, t.precurvature)),
                       "base_rotation_rad": b}
                      for t, L, b in zip(self.tubes, self.insertion, self.base_rotation)],
            "channel": self.channel,
        }


def _resolve(raw, src, name, label, overrides, cfg_dir):
    def q(obj, key, kind, path, default=None):
        if key not in obj:
            return default
        return quantity(obj[key], kind, src, path + (key,))

    tubes, insertion, rot = [], [], []
    for i, t in enumerate(raw["tubes"]):
        p = ("tubes", i)
        od = q(t, "outer_diameter", "length", p)
        idm = q(t, "inner_diameter", "length", p, 0.0)
        L = q(t, "length", "length", p)
        pc = t.get("precurvature", 0.0)
        if isinstance(pc, list):
            pc = tuple(quantity(v, "curvature", src, p + ("precurvature", k)) for k, v in enumerate(pc))
        else:
            # a scalar bends the tube about its body y axis
            pc = (0.0, quantity(pc, "curvature", src, p + ("precurvature",)), 0.0)
        if not L > 0:
            raise src.error("tube length must be positive", p + ("length",))
        if not 0 <= idm < od:
            raise src.error("inner diameter must be below the outer diameter", p + ("inner_diameter",))
        tname = t.get("name", f"tube{i}")
        tubes.append(TubeSpec(idm / 2, od / 2, L, float(t["bending_stiffness"]),
                              float(t.get("poisson_ratio", 0.3)), pc, name=tname))
        ins = q(t, "insertion", "length", p, L)
        if not 0 < ins <= L + 1e-12:
            raise src.error(f"insertion {ins:.6g} m exceeds tube length {L:.6g} m", p + ("insertion",))
        insertion.append(ins)
        rot.append(np.radians(q(t, "base_rotation", "angle", p, 0.0)))
    names = [t.name for t in tubes]
    if len(set(names)) != len(names):
        raise src.error("tube names must be unique", ("tubes",))
    for i in range(1, len(tubes)):
        if not tubes[i].inner_radius > tubes[i - 1].outer_radius:
            raise src.error("tube does not fit around the previous one", ("tubes", i, "inner_diameter"))

    channel = None
    if raw.get("channel"):
        c = raw["channel"]
        p = ("channel",)
        r = q(c, "inner_diameter", "length", p) / 2
        if not r > tubes[-1].outer_radius:
            raise src.error("channel does not fit around the outermost tube", p + ("inner_diameter",))
        ds = q(c, "ds", "length", p, 1e-3)
        if not ds > 0:
            raise src.error("ds must be positive", p + ("ds",))
        secs = []
        for k, s in enumerate(c["sections"]):
            sp = p + ("sections", k)
            d = {"type": s.get("type", "line"), "length": q(s, "length", "length", sp)}
            if d["type"] == "arc":
                if "radius" not in s:
                    raise src.error("arc section needs a radius", sp + ("radius",))
                d["radius"] = q(s, "radius", "length", sp)
            for key in ("bend_angle", "roll"):
                if key in s:
                    d[key] = q(s, key, "angle", sp)
            if "bend_angle" in d and k == 0:
                raise src.error("the first section cannot carry an elbow", sp + ("bend_angle",))
            if "bend_angle" in d and not 0 < d["bend_angle"] < 180:
                raise src.error("bend angle must lie in (0, 180) deg", sp + ("bend_angle",))
            if not d["length"] > 0:
                raise src.error("section length must be positive", sp + ("length",))
            secs.append(d)
        channel = {"inner_radius": r, "ds": ds, "sections": secs}
        total = sum(s["length"] for s in secs)
        if max(insertion) > total + 1e-12:
            raise src.error(f"insertion {max(insertion):.6g} m exceeds channel length {total:.6g} m",
                            ("tubes", int(np.argmax(insertion)), "insertion"))

    sv = raw.get("solver") or {}
    clr = ClearanceConfig()
    for key in ("tol", "eps_feas", "eps_blowup", "max_iter", "steps"):
        if key in sv:
            setattr(clr, key, type(getattr(clr, key))(sv[key]))
    lc = sv.get("lcic") or {}
    sqp = SqpConfig(eps_feas=clr.eps_feas, max_iter=int(lc.get("max_iter", SqpConfig.max_iter)))
    lcic = LcicConfig(start_fraction=float(lc.get("start_fraction", 0.5)), steps=int(lc.get("steps", 4)),
                      fillet_factor=float(lc.get("fillet_factor", 1.0)),
                      relaxed_fraction=float(lc.get("relaxed_fraction", 0.5)),
                      sqp=sqp, clearance=clr)
    ref = raw.get("reference")
    if ref is not None:
        ref = str((cfg_dir / ref).resolve())
        if not Path(ref).is_file():
            raise src.error(f"reference file {ref} not found", ("reference",))
    return Scenario(name, label, raw.get("model", "both"), int(raw.get("seed", 0)), tubes, insertion,
                    rot, channel, int(sv.get("n", 100)), clr, lcic, sv.get("scm_metric", "ball"),
                    ref, overrides)


def _assign(raw, path, value):
    obj = raw
    for p in path[:-1]:
        obj = obj[p]
    last = path[-1]
    if isinstance(obj, list):
        obj[last]
    elif not isinstance(obj, dict) or not isinstance(last, str):
        raise TypeError(last)
    obj[last] = value


@dataclass
class ScenarioFile:
    path: str
    raw: dict
    source: Source
    digest: str
    rows: list          # Scenario, in sweep order

    @property
    def name(self):
        return self.raw.get("name", Path(self.path).stem)


def load_config(path):
    """Parse, validate and resolve a scenario file into its rows."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", path=str(path))
    raw, src, text = read_yaml(path)
    validate(raw, src)
    name = raw.get("name", path.stem)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    sweep = raw.get("sweep") or {}
    keys = list(sweep)
    paths = []
    for k in keys:
        try:
            paths.append(parse_path(k))
        except ValueError:
            raise src.error(f"bad sweep path {k!r}", ("sweep", k)) from None
    rows = []
    combos = itertools.product(*(sweep[k] for k in keys)) if keys else [()]
    for j, combo in enumerate(combos):
        row = copy.deepcopy(raw)
        row.pop("sweep", None)
        over = {}
        for k, pth, val in zip(keys, paths, combo):
            try:
                _assign(row, pth, val)
            except (KeyError, IndexError, TypeError):
                raise src.error(f"sweep path {k!r} does not exist", ("sweep", k)) from None
            over[k] = val
        if keys:
            # overridden values are reported at the sweep block
            validate(row, Source(src.path, {(): src.line(("sweep",))}))
        label = "row%03d" % j if keys else name
        rows.append(_resolve(row, src, name, label, over, path.parent))
    return ScenarioFile(str(path), raw, src, digest, rows)
