"""Compare the numba and pure-numpy kernel paths.

    python benchmarks/bench_kernels.py [--repeats 200]

Both paths are always importable; CURVELAB_DISABLE_NUMBA only changes the default.
"""
import argparse
import time

import numpy as np

from curvelab.geometry import CameraModel, CurveParams, project_points, sample_curve
from curvelab.kernels import linear_sum_assignment, stroke_polyline


def timeit(fn, repeats):
    fn()  # warm-up (JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_assignment(n, repeats, rng):
    costs = [rng.normal(size=(n, n)) for _ in range(16)]
    out = {}
    for name, flag in (("numba", True), ("numpy", False)):
        out[name] = timeit(lambda: [linear_sum_assignment(c, use_numba=flag) for c in costs], repeats) / len(costs)
    return out


def bench_stroke(repeats, rng):
    cam = CameraModel.from_height_pitch(1.5, 0.04, 100.0, (128, 160))
    polylines = []
    for x in (-5.4, -1.8, 1.8, 5.4):
        lane = CurveParams(1.0, 4.0, 100.0, [x, rng.uniform(-0.02, 0.02), rng.uniform(-3e-4, 3e-4), 0.0], np.zeros(4))
        pts = sample_curve(lane, np.geomspace(4.0, 100.0, 300)).points
        polylines.append(project_points(pts, cam))
    out = {}
    for name, flag in (("numba", True), ("numpy", False)):
        def run():
            mask = np.zeros((128, 160), np.int32)
            for k, (uv, ok) in enumerate(polylines):
                stroke_polyline(mask, uv, ok, k + 1, 2.0, use_numba=flag)
        out[name] = timeit(run, repeats)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    rows = [(f"assignment {n}x{n}", bench_assignment(n, args.repeats, rng)) for n in (6, 12, 50)]
    rows.append(("stroke 4 lanes 128x160", bench_stroke(max(args.repeats // 10, 5), rng)))
    print(f"{'kernel':<24} {'numba [us]':>12} {'numpy [us]':>12} {'speedup':>8}")
    for name, t in rows:
        print(f"{name:<24} {t['numba'] * 1e6:>12.1f} {t['numpy'] * 1e6:>12.1f} {t['numpy'] / t['numba']:>8.1f}")


if __name__ == "__main__":
    main()
