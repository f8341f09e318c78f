"""Command line: solve scenario files, compare models, export plot views.

    lcic solve scenarios/elbow_45.yaml --model both --out runs/elbow
    lcic compare scenarios/planar_sweep.yaml --jobs 4
    lcic plot runs/elbow

Exit status: 0 when every solve converged, 2 when a solver stalled (its best
iterate is still written), 1 on configuration or input errors.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContinuationDiverged, LcicError, LengthMismatch, SqpStalled

log = logging.getLogger("lcic")

OUTPUT_ENV = "LCIC_OUTPUT_DIR"
SHAPE_HEADER = ["s_m", "x_m", "y_m", "z_m"]
EXIT_OK, EXIT_CONFIG, EXIT_STALL = 0, 1, 2
MODELS = ("scm", "lcic")


def fmt(v):
    """Nine significant digits; negative zero printed as zero."""
    v = float(v)
    return "0" if v == 0.0 else f"{v:.9g}"


# -- atomic output

def write_atomic(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def shape_csv(s, pts):
    return csv_text(SHAPE_HEADER, [(float(a), *map(float, p)) for a, p in zip(s, pts)])


def read_shape_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        rd = csv.reader(f)
        header = next(rd, None)
        if header != SHAPE_HEADER:
            raise ConfigError(f"expected header {','.join(SHAPE_HEADER)}", line=1, path=str(path))
        rows = []
        for k, row in enumerate(rd, start=2):
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ConfigError("non-numeric value", line=k, path=str(path)) from None
            if len(row) != 4:
                raise ConfigError("expected 4 columns", line=k, path=str(path))
    a = np.array(rows, dtype=float).reshape(-1, 4)
    return a[:, 0], a[:, 1:]


def _json(obj):
    def conv(o):
        if isinstance(o, dict):
            return {str(k): conv(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [conv(v) for v in o]
        if isinstance(o, np.ndarray):
            return conv(o.tolist())
        if isinstance(o, (np.floating, float)):
            return float(fmt(o)) if np.isfinite(o) else str(o)
        if isinstance(o, np.integer):
            return int(o)
        if isinstance(o, np.bool_):
            return bool(o)
        return o
    return json.dumps(conv(obj), indent=2, sort_keys=True) + "\n"


# -- solving one (row, model) job

def _solve(row, model):
    from .baseline_scm import scm_solve
    from .elbow_solver import lcic_solve

    scene = row.scene()
    t0 = time.perf_counter()
    status, err = "converged", None
    try:
        rep = lcic_solve(scene, row.lcic) if model == "lcic" else \
            scm_solve(scene, row.clearance, metric=row.scm_metric)
        if not rep.converged:
            status = "stalled"
    except (SqpStalled, ContinuationDiverged) as exc:
        rep, status, err = exc.report, "stalled", str(exc)
    except LcicError as exc:
        rep, status, err = None, "failed", f"{type(exc).__name__}: {exc}"
    return scene, rep, status, err, time.perf_counter() - t0


def _bundle_dir(out, row, model, multi):
    return Path(out) / row.label / model if multi else Path(out) / model


def _reference(row, rep_by_model):
    """Reference polyline for error tables: the configured file, else the LCIC shape."""
    if row.reference:
        s, pts = read_shape_csv(row.reference)
        return s, pts, "file"
    for m in ("lcic", "scm"):
        rep = rep_by_model.get(m)
        if rep is not None:
            st = rep.state.rods[0]
            return np.concatenate([[0.0], rep.scene.grid(0)]), st.points_with_base(), m
    return None, None, None


def write_bundle(path, row, model, scene, rep, status, err, wall, digest, ref=None):
    from .metrics import shape_errors, tip_wall_gap

    path = Path(path)
    files = []
    meta = {
        "model": model, "status": status, "error": err, "scenario": row.name, "row": row.label,
        "overrides": row.overrides, "config_sha256": digest, "seed": row.seed,
        "wall_time_s": round(wall, 3),
    }
    if rep is not None:
        st = rep.state
        for i, (tube, rod) in enumerate(zip(scene.tubes, st.rods)):
            s = np.concatenate([[0.0], scene.grid(i)])
            name = f"shape_{tube.name}.csv"
            write_atomic(path / name, shape_csv(s, rod.points_with_base()))
            files.append(name)
        if scene.channel is not None:
            ch = scene.channel
            write_atomic(path / "channel.csv",
                         csv_text(SHAPE_HEADER + ["r_m", "section"],
                                  [(float(a), *map(float, p), ch.inner_radius, int(k))
                                   for a, p, k in zip(ch.poly_s, ch.poly, ch.poly_section)]))
            files.append("channel.csv")
        h = rep.residuals if rep.residuals is not None else np.zeros(0)
        lam = rep.multipliers if rep.multipliers is not None else np.full(len(h), np.nan)
        act = set(rep.active_rows().tolist())
        res_rows, contact_rows = [], []
        for r, m in enumerate(rep.rows_meta or []):
            tag = m.get("row", m.get("tag", ""))
            res_rows.append((r, m["tube"], m["sample"], tag, float(h[r]), float(lam[r]),
                             int(r in act)))
            if r in act:
                i, k = m["tube"], m["sample"]
                p = st.rods[i].p[k]
                contact_rows.append((r, i, k, float(scene.grid(i)[k]), *map(float, p)))
        write_atomic(path / "residuals.csv",
                     csv_text(["row", "tube", "sample", "kind", "h", "lambda", "active"], res_rows))
        write_atomic(path / "contacts.csv",
                     csv_text(["row", "tube", "sample", "s_m", "x_m", "y_m", "z_m"], contact_rows))
        write_atomic(path / "energy.csv",
                     csv_text(["iteration", "energy_J"], list(enumerate(map(float, rep.energy_trace)))))
        files += ["residuals.csv", "contacts.csv", "energy.csv"]
        summ = rep.summary()
        meta.update({
            "energy_J": summ["energy"], "iterations": summ["iterations"],
            "increments": summ["increments"], "max_residual": summ["max_residual"],
            "active_rows": sorted(act), "n_contacts": len(contact_rows),
            "warnings": summ["warnings"], "tip_m": rep.tip(),
            "samples_outside_channel": None,
        })
        if scene.channel is not None or len(scene.tubes) > 1:
            meta["tip_wall_gap_m"] = tip_wall_gap(rep)
        if scene.channel is not None:
            reff = scene.channel.inner_radius - scene.tubes[-1].outer_radius
            meta["samples_outside_channel"] = int(np.sum(~scene.channel.contains(
                st.rods[-1].p, reff * (1 + 1e-9) + 1e-12)))
        if "kkt" in rep.extra:
            meta["kkt"] = rep.extra["kkt"]
        if ref is not None and ref[1] is not None:
            s_ref, p_ref, src = ref
            try:
                e = shape_errors(st.rods[0].p, p_ref, scene.grid(0), s_ref)
                meta["errors"] = dict(e.as_row(), reference=src)
            except LengthMismatch as exc:
                meta["errors"] = {"reference": src, "error": str(exc)}
    files.append("report.json")
    meta["files"] = files
    write_atomic(path / "report.json", _json(meta))
    return meta


def _job(args):
    row, model, out, multi, digest = args
    from threadpoolctl import threadpool_limits
    # one BLAS thread: results must not depend on the worker layout
    with threadpool_limits(1):
        scene, rep, status, err, wall = _solve(row, model)
    path = _bundle_dir(out, row, model, multi)
    # the reference for per-bundle errors is applied later, by compare
    meta = write_bundle(path, row, model, scene, rep, status, err, wall, digest,
                        _reference(row, {}) if row.reference else None)
    return row.label, model, status, meta, rep


def run_jobs(jobs, n_workers):
    if n_workers <= 1 or len(jobs) <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as ex:
        # map keeps input order regardless of completion order
        return list(ex.map(_job, jobs))


def _models(arg, row_model):
    m = arg or row_model or "both"
    return list(MODELS) if m == "both" else [m]


def _out_dir(args, cfg):
    if args.out:
        return Path(args.out)
    if cfg.raw.get("output_dir"):
        return Path(cfg.path).parent / cfg.raw["output_dir"]
    return Path(os.environ.get(OUTPUT_ENV, "lcic_out")) / cfg.name


def _prepare(args):
    from .config import load_config
    cfg = load_config(args.config)
    if args.seed is not None:
        for r in cfg.rows:
            r.seed = args.seed
    out = _out_dir(args, cfg)
    multi = len(cfg.rows) > 1
    jobs = [(row, m, str(out), multi, cfg.digest)
            for row in cfg.rows for m in _models(args.model, row.model)]
    return cfg, out, jobs


def cmd_solve(args):
    cfg, out, jobs = _prepare(args)
    results = run_jobs(jobs, args.jobs)
    code = EXIT_OK
    for label, model, status, meta, _ in results:
        print(f"{label:>24s} {model:5s} {status:10s} E={meta.get('energy_J', float('nan')):.6g} J  "
              f"max h={meta.get('max_residual', float('nan')):.3g}")
        if status != "converged":
            code = EXIT_STALL
    print(f"results in {out}")
    return code


COMPARE_HEADER = ["index", "row", "model", "status", "reference", "e_tip_m", "e_mean_m", "e_max_m",
                  "tip_x_m", "tip_y_m", "tip_z_m", "tip_wall_gap_m", "energy_J", "iterations"]


def cmd_compare(args):
    from .metrics import shape_errors

    cfg, out, jobs = _prepare(args)
    results = run_jobs(jobs, args.jobs)
    by_row = {}
    for label, model, status, meta, rep in results:
        by_row.setdefault(label, {})[model] = (status, meta, rep)
    table, code = [], EXIT_OK
    for idx, row in enumerate(cfg.rows):
        got = by_row.get(row.label, {})
        ref = _reference(row, {m: v[2] for m, v in got.items() if v[2] is not None})
        for model in _models(args.model, row.model):
            status, meta, rep = got[model]
            if status != "converged":
                code = EXIT_STALL
            e = [np.nan] * 3
            if rep is not None and ref[1] is not None:
                try:
                    er = shape_errors(rep.state.rods[0].p, ref[1], rep.scene.grid(0), ref[0])
                    e = [er.e_tip_norm, er.e_mean, er.e_max]
                except LengthMismatch as exc:
                    log.warning("%s/%s: %s", row.label, model, exc)
            tip = meta.get("tip_m", [np.nan] * 3)
            table.append([idx, row.label, model, status, ref[2] or "", *e, *tip,
                          meta.get("tip_wall_gap_m", np.nan), meta.get("energy_J", np.nan),
                          meta.get("iterations", 0)])
    write_atomic(Path(out) / "comparison.csv", csv_text(COMPARE_HEADER, table))
    txt = _pretty(table)
    write_atomic(Path(out) / "comparison.txt", txt)
    print(txt, end="")
    return code


def _pretty(table):
    lines = [f"{'row':>16s} {'model':>5s} {'status':>9s} {'ref':>5s} "
             f"{'e_tip[mm]':>10s} {'e_mean[mm]':>10s} {'e_max[mm]':>10s} {'gap[mm]':>9s}"]
    for r in table:
        e = [1e3 * float(v) for v in r[5:8]]
        gap = 1e3 * float(r[11])
        lines.append(f"{r[1]:>16s} {r[2]:>5s} {r[3]:>9s} {r[4]:>5s} "
                     f"{e[0]:10.3f} {e[1]:10.3f} {e[2]:10.3f} {gap:9.3f}")
    return "\n".join(lines) + "\n"


def cmd_plot(args):
    from .plotting import export_bundle
    root = Path(args.bundle)
    reports = sorted(root.rglob("report.json"))
    if not reports:
        raise ConfigError("no report.json below this directory", path=str(root))
    for rp in reports:
        for f in export_bundle(rp.parent):
            print(f)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="lcic", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="scenario YAML file")
        p.add_argument("--model", choices=["scm", "lcic", "both"], default=None,
                       help="override the model selector of the config")
        p.add_argument("--out", default=None,
                       help=f"output directory (default: config output_dir, then ${OUTPUT_ENV}/<name>)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    common(sub.add_parser("solve", help="solve every row of a scenario file"))
    common(sub.add_parser("compare", help="solve and tabulate shape errors per model"))
    p = sub.add_parser("plot", help="export projections of solved bundles")
    p.add_argument("bundle", help="bundle directory (searched recursively)")
    p.add_argument("--out", default=None, help=argparse.SUPPRESS)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"solve": cmd_solve, "compare": cmd_compare, "plot": cmd_plot}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
