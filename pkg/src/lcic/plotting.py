"""Orthographic views of a solved bundle as SVG, plus the projected polylines as CSV."""
import json
from pathlib import Path

import numpy as np

VIEWS = {"xy": (0, 1), "xz": (0, 2), "yz": (1, 2)}
PLANAR_TOL = 1e-9


def _read(path):
    a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return a


def pick_views(points):
    """One view for planar data (the plane it lies in), otherwise all three."""
    span = np.ptp(points, axis=0)
    flat = np.flatnonzero(span <= PLANAR_TOL * max(1.0, span.max()))
    if flat.size == 1:
        keep = tuple(k for k in range(3) if k != flat[0])
        return {n: ax for n, ax in VIEWS.items() if ax == keep}
    return dict(VIEWS)


def _outline(center, radius, ax):
    """Two wall traces of a tube around ``center`` seen along the dropped axis."""
    c = center[:, ax]
    t = np.gradient(c, axis=0)
    nrm = np.linalg.norm(t, axis=1)
    nrm[nrm == 0] = 1.0
    n = np.column_stack([-t[:, 1], t[:, 0]]) / nrm[:, None]
    return c + radius * n, c - radius * n


def export_bundle(bundle):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .cli import csv_text, write_atomic

    bundle = Path(bundle)
    meta = json.loads((bundle / "report.json").read_text())
    shapes = {p.stem[len("shape_"):]: _read(p)[:, 1:] for p in sorted(bundle.glob("shape_*.csv"))}
    if not shapes:
        return []
    chan = _read(bundle / "channel.csv") if (bundle / "channel.csv").exists() else None
    contacts = _read(bundle / "contacts.csv") if (bundle / "contacts.csv").exists() else np.zeros((0, 7))
    allpts = np.vstack(list(shapes.values()) + ([chan[:, 1:4]] if chan is not None else []))
    out = []
    plt.rcParams["svg.hashsalt"] = "lcic"
    for vname, ax in pick_views(allpts).items():
        fig, axes = plt.subplots(figsize=(6, 6))
        rows = []
        if chan is not None:
            sec = chan[:, 5].astype(int)
            for j in np.unique(sec):
                idx = np.flatnonzero(sec == j)
                if idx[0] > 0:
                    idx = np.concatenate([[idx[0] - 1], idx])   # start at the joint
                for side, tr in zip(("a", "b"), _outline(chan[idx, 1:4], chan[0, 4], ax)):
                    axes.plot(tr[:, 0], tr[:, 1], color="0.5", lw=1.0, gid=f"channel-{j}-{side}")
                    rows += [(f"channel_{j}_{side}", k, *v) for k, v in enumerate(tr)]
        for name, pts in shapes.items():
            axes.plot(pts[:, ax[0]], pts[:, ax[1]], lw=1.5, gid=f"tube-{name}", label=name)
            rows += [(f"tube_{name}", k, *v) for k, v in enumerate(pts[:, ax])]
        for c in contacts:
            axes.plot([c[4 + ax[0]]], [c[4 + ax[1]]], "o", ms=4, color="red",
                      gid=f"contact-{int(c[0])}")
            rows.append(("contact", int(c[0]), c[4 + ax[0]], c[4 + ax[1]]))
        axes.set_aspect("equal")
        axes.set_xlabel(f"{'xyz'[ax[0]]} [m]")
        axes.set_ylabel(f"{'xyz'[ax[1]]} [m]")
        axes.set_title(f"{meta.get('row', '')} {meta.get('model', '')} ({vname})")
        axes.legend(loc="best", fontsize=8)
        buf = _svg(fig)
        plt.close(fig)
        svg = bundle / f"plot_{vname}.svg"
        write_atomic(svg, buf)
        write_atomic(bundle / f"plot_{vname}.csv",
                     csv_text(["curve", "index", "a_m", "b_m"], [(r[0], r[1], float(r[2]), float(r[3]))
                                                               for r in rows]))
        out += [svg, bundle / f"plot_{vname}.csv"]
    return out


def _svg(fig):
    import io
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()
