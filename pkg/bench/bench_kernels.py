"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 bench/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on the same seeded inputs under every available backend;
the best of ``--repeat`` runs is reported together with the speedup.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from geocell_kit import kernels
from geocell_kit.clustering import OpticsParams, optics_order


def cases(rng: np.random.Generator) -> dict:
    lat = rng.uniform(-60, 60, 200_000)
    lon = rng.uniform(-180, 180, 200_000)
    blob = np.vstack([rng.normal(size=(400, 2)), rng.normal(size=(400, 2)) + [15.0, 0.0]])
    ang = np.sort(rng.uniform(0, 2 * np.pi, 64))
    rx = np.append(np.cos(ang), np.cos(ang[0]))
    ry = np.append(np.sin(ang), np.sin(ang[0]))
    px, py = rng.uniform(-1.2, 1.2, (2, 200_000))
    rows = rng.normal(size=(20_000, 64))
    queries = rng.normal(size=(200, 64))
    return {
        "haversine_pairs (200k)": lambda: kernels.haversine_pairs(
            lat, lon, lat[::-1], lon[::-1], 6371.0),
        "haversine_matrix (1k x 1k)": lambda: kernels.haversine_matrix(
            lat[:1000], lon[:1000], lat[1000:2000], lon[1000:2000], 6371.0),
        "optics (800 pts)": lambda: optics_order(blob, OpticsParams(10, 0.1)),
        "points_in_ring (200k, 64 vertices)": lambda: kernels.points_in_ring(
            px, py, rx, ry, 1e-9),
        "nearest_row (200 q, 20k x 64)": lambda: [kernels.nearest_row(q, rows) for q in queries],
    }


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings to this file")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    prev = kernels.BACKEND
    results: dict[str, dict[str, float]] = {}
    try:
        for name in backends:
            kernels.use_backend(name)
            for label, fn in cases(np.random.default_rng(0)).items():
                fn()  # warm-up
                results.setdefault(label, {})[name] = best_of(fn, args.repeat)
    finally:
        kernels.use_backend(prev)

    header = f"{'kernel':38s}" + "".join(f"{b:>12s}" for b in backends)
    if "compiled" in backends:
        header += f"{'speedup':>10s}"
    print(header)
    for label, t in results.items():
        line = f"{label:38s}" + "".join(f"{t[b] * 1e3:10.2f}ms" for b in backends)
        if "compiled" in t:
            line += f"{t['python'] / t['compiled']:9.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
