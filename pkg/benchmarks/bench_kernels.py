"""Compiled vs pure-numpy kernels.

    python benchmarks/bench_kernels.py            # kernel timings
    python benchmarks/bench_kernels.py --solve    # also a full elbow solve per backend

Kernel timings call both implementations in one process. The full solve runs
in subprocesses with and without LCIC_DISABLE_NUMBA so that the switch is
exercised the way users flip it.
"""
import argparse
import os
import subprocess
import sys
import timeit
from pathlib import Path

import numpy as np

from lcic import kernels
from lcic._accel import USE_NUMBA
from lcic.geometry import MIN_AXIS_RATIO, contact_ellipse, tangent_projection

ROOT = Path(__file__).resolve().parents[1]


def _case(n, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.normal(scale=5.0, size=(n, 3))
    ds = 0.2 / n
    p0, R0 = np.zeros(3), np.eye(3)
    return u, ds, p0, R0


def bench(fn, number):
    fn()  # warm-up (and JIT compile)
    t = min(timeit.repeat(fn, number=number, repeat=5)) / number
    return t


def kernel_table(sizes=(50, 100, 400)):
    rows = []
    for n in sizes:
        u, ds, p0, R0 = _case(n)
        p, R = kernels.integrate_np(u, ds, p0, R0)
        poly = np.cumsum(np.random.default_rng(1).normal(size=(4 * n, 3)), axis=0)
        pairs = {
            "integrate": (lambda: kernels.integrate_jit(u, ds, p0, R0),
                          lambda: kernels.integrate_np(u, ds, p0, R0)),
            "segment_moments": (
                lambda: kernels.segment_moments_jit(u, ds, p0, R0, p, R, kernels.GAUSS_X, kernels.GAUSS_W),
                lambda: kernels.segment_moments_np(u, ds, p0, R0, p, R)),
            "nearest_index": (lambda: kernels.nearest_index_jit(p, poly),
                              lambda: kernels.nearest_index_np(p, poly)),
        }
        for name, (fast, slow) in pairs.items():
            tf, ts = bench(fast, 200), bench(slow, 200)
            rows.append((name, n, tf, ts))
    rows.append(("footprint", 1, *footprint_timing()))
    return rows


def footprint_timing():
    """One contact-ellipse metric: compiled kernel vs the geometry module."""
    t_out = np.array([0.0, 0.0, 1.0])
    t_in = np.array([0.3, 0.1, 1.0]) / np.linalg.norm([0.3, 0.1, 1.0])
    M = np.empty((3, 3))

    def slow():
        P = tangent_projection(t_out)
        return P @ contact_ellipse(t_out, t_in, 0.01, 0.00066, clamp=True).Q @ P

    fast = lambda: kernels.footprint_jit(t_out, t_in, 0.01, 0.00066, MIN_AXIS_RATIO, M)  # noqa: E731
    return bench(fast, 2000), bench(slow, 2000)


def solve_timing(config):
    code = ("import time; from lcic.config import load_config; from lcic.elbow_solver import lcic_solve;"
            f"r = load_config({str(config)!r}).rows[0]; s = r.scene(); lcic_solve(s, r.lcic);"
            "t = time.perf_counter(); lcic_solve(s, r.lcic); print(time.perf_counter() - t)")
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, LCIC_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        out[label] = float(res.stdout.strip().splitlines()[-1])
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--solve", action="store_true", help="time a full 45 deg elbow solve per backend")
    args = ap.parse_args()
    if not USE_NUMBA:
        print("numba disabled in this process: the 'jit' column runs the same python code")
    print(f"{'kernel':>16s} {'n':>5s} {'jit [us]':>10s} {'numpy [us]':>11s} {'speedup':>8s}")
    for name, n, tf, ts in kernel_table():
        print(f"{name:>16s} {n:5d} {1e6 * tf:10.1f} {1e6 * ts:11.1f} {ts / tf:8.1f}")
    if args.solve:
        t = solve_timing(ROOT / "scenarios" / "elbow_45.yaml")
        print(f"elbow_45 lcic solve: numba {t['numba']:.2f} s, numpy {t['numpy']:.2f} s")


if __name__ == "__main__":
    main()
