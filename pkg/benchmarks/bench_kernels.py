"""Compiled vs pure-numpy ray kernels on the demo scene.

Run with ``python benchmarks/bench_kernels.py [rays]``. Each kernel is timed
on identical inputs for both backends (best of three), then one full trace
is timed with the tracer bound to each backend.
"""

import sys
import time

import numpy as np

from chantwin.ray import kernels, tracer
from chantwin.ray.kernels import get_backend
from chantwin.ray.scene import load_demo_scene
from chantwin.ray.tracer import TraceConfig, ray_directions, trace_many


def best_of(fn, repeat=3):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(rays=20000):
    scene = load_demo_scene()
    geo = scene.geometry()
    arrs = geo.arrays()
    tx = np.asarray(scene.tx)
    dirs = ray_directions(rays, seed=0)
    rx = scene.route_points(50)
    rng = np.random.default_rng(0)
    lo, hi = rx.min(axis=0) - [20, 20, 0], rx.max(axis=0) + [20, 20, 20]
    p, q = rng.uniform(lo, hi, size=(5000, 3)), rng.uniform(lo, hi, size=(5000, 3))
    skip = np.full(5000, -1, np.int32)

    backends = {"python": get_backend("python")}
    try:
        backends["compiled"] = get_backend("compiled")
    except ImportError:
        print("compiled kernels are not built; timing the python backend only")

    rows = []
    for name, mod in backends.items():
        segs = mod.launch(tx, dirs, *arrs, 3, 5000.0)
        t_launch = best_of(lambda: mod.launch(tx, dirs, *arrs, 3, 5000.0))
        t_detect = best_of(lambda: mod.detect(*segs, rx, 0.03, -1.0, 1))
        t_occ = best_of(lambda: mod.occluded(p, q, skip, skip, *arrs))
        saved = tracer.kernels
        tracer.kernels = mod
        try:
            t_trace = best_of(lambda: trace_many(scene, TraceConfig(ray_count=rays), rx, geo), repeat=1)
        finally:
            tracer.kernels = saved
        rows.append((name, t_launch, t_detect, t_occ, t_trace))

    print(f"{rays} rays, {len(rx)} receivers, {len(p)} occlusion segments (default backend: {kernels.BACKEND})")
    print(f"{'backend':10}{'launch':>10}{'detect':>10}{'occluded':>10}{'trace':>10}  (seconds)")
    for name, *t in rows:
        print(f"{name:10}" + "".join(f"{v:10.3f}" for v in t))
    if len(rows) == 2:
        speed = [a / b for a, b in zip(rows[0][1:], rows[1][1:])]
        print(f"{'speedup':10}" + "".join(f"{v:9.1f}x" for v in speed))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20000)
