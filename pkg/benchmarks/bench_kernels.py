"""Time the numba and numpy kernel flavours side by side.

    python benchmarks/bench_kernels.py [--repeat N] [--no-engine]

Kernel timings use inputs sized like an 80-bike platoon. The engine section
runs one full simulation per backend in a subprocess, switching backends with
VAMSIM_DISABLE_NUMBA.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from vamsim import kernels

RNG = np.random.default_rng(0)
S = 1_000_000


def tracks(n=80, m=40):
    t = np.concatenate([np.sort(RNG.choice(60 * S, m, replace=False)) for _ in range(n)]).astype(np.int64)
    offs = np.arange(0, n * m + 1, m, dtype=np.int64)
    x, y, v, h = RNG.normal(size=n * m), RNG.normal(size=n * m), RNG.uniform(0, 5, n * m), RNG.uniform(0, 360, n * m)
    keys = kernels.track_keys(t, offs)
    idx = np.arange(n, dtype=np.int64)
    return (t, keys, x, y, v, h, offs, idx, np.int64(30 * S))


def segments(n=80):
    ex0, ey0 = np.array([10.0, 30.0, 30.0, 10.0]), np.array([10.0, 10.0, 30.0, 30.0])
    ex1, ey1 = np.roll(ex0, -1), np.roll(ey0, -1)
    ax, ay, bx, by = (RNG.uniform(0, 40, n) for _ in range(4))
    return (ax, ay, bx, by, ex0, ey0, ex1, ey1, np.array([0, 4], dtype=np.int64))


def collisions(n=200):
    rx = RNG.integers(0, 80, n).astype(np.int64)
    start = np.sort(RNG.integers(0, 100_000, n)).astype(np.int64)
    return (rx, start, start + 400)


def busy(n_frames=40_000, n_nodes=80, n_windows=500):
    node = RNG.integers(0, n_nodes, n_frames).astype(np.int64)
    start = RNG.integers(0, n_windows * 100_000, n_frames).astype(np.int64)
    return (node, start, start + 400, n_nodes, np.int64(0), np.int64(100_000), n_windows)


def vpr(n=80):
    ox, oy, px, py = (RNG.uniform(-60, 60, n) for _ in range(4))
    ids = np.arange(n, dtype=np.int64)
    last = RNG.integers(-5 * S, S, (n, n)).astype(np.int64)
    return (ox, oy, ids, px, py, ids, last, np.int64(S), 50.0, np.int64(10 * S))


CASES = [
    ("interp_tracks", tracks),
    ("segments_blocked", segments),
    ("collision_lost", collisions),
    ("busy_per_window", busy),
    ("vpr_counts", vpr),
]


def bench_kernels(repeat: int) -> None:
    if not kernels.HAVE_NUMBA:
        print("numba not installed; kernel comparison skipped")
        return
    print(f"{'kernel':<18}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, make in CASES:
        args = make()
        fast = getattr(kernels, f"{name}_numba")
        slow = getattr(kernels, f"{name}_numpy")
        fast(*args)  # compile or load from cache
        number = max(1, repeat)
        t_np = min(timeit.repeat(lambda: slow(*args), number=number, repeat=3)) / number
        t_nb = min(timeit.repeat(lambda: fast(*args), number=number, repeat=3)) / number
        print(f"{name:<18}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.1f}x")


ENGINE_SNIPPET = """
import time
from vamsim import RunConfig, run, BACKEND
from vamsim.engine import ScenarioConfig
cfg = RunConfig(duration=30_000_000, scenario=ScenarioConfig(bikes=80)).with_(mode="adapted")
run(cfg.with_(duration=2_000_000, warmup=1_000_000))
t0 = time.perf_counter()
run(cfg)
print(BACKEND, time.perf_counter() - t0)
"""


def bench_engine() -> None:
    print("\nengine, 80-bike platoon, 30 s, adapted mode")
    for flag in ("0", "1"):
        env = dict(os.environ, VAMSIM_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", ENGINE_SNIPPET], env=env, capture_output=True,
                             text=True, check=True)
        backend, secs = res.stdout.split()
        print(f"  {backend:<8}{float(secs):8.2f} s")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--no-engine", action="store_true")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if not args.no_engine:
        bench_engine()


if __name__ == "__main__":
    main()
