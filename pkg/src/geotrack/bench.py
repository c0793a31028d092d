"""
Timing helpers: per-iteration Sinkhorn cost and full registrations per
correspondence mode over a ladder of segment sizes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import InstanceSegment, RigidTransform, apply_transform, rot_z
from .icp import IcpConfig, register
from .ot import build_cost, sinkhorn

DEFAULT_SIZES = (128, 256, 512, 1024)
MODES = {"sinkhorn": "sinkhorn", "nn": "nearest_neighbor"}


@dataclass(frozen=True)
class BenchRow:
    mode: str
    n: int
    seconds: float
    per_iteration: float
    iterations: int


def box_cloud(n: int, seed: int = 0, extent=(4.0, 1.8, 1.5)) -> np.ndarray:
    rng = np.random.default_rng(seed)
    ext = np.asarray(extent)
    return rng.uniform(-ext / 2, ext / 2, (n, 3))


def sinkhorn_iteration_time(n: int, iterations: int = 50, repeats: int = 3, epsilon: float = 0.2, seed: int = 0) -> float:
    """Best-of-``repeats`` wall time of one full scaling sweep on an ``n x n`` problem."""
    src = box_cloud(n, seed)
    dst = apply_transform(RigidTransform(rot_z(0.1), (0.5, 0.0, 0.0)), box_cloud(n, seed + 1))
    z = build_cost(src, dst)
    z /= z.max()
    sinkhorn(z, epsilon, max_iters=1)  # warm-up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        plan = sinkhorn(z, epsilon, max_iters=iterations, tol=0.0)
        best = min(best, time.perf_counter() - t0)
    return best / plan.iterations


def registration_time(n: int, mode: str, repeats: int = 3, seed: int = 0) -> tuple[float, int]:
    """Best-of-``repeats`` wall time of one ``register`` call and its iteration count."""
    pts = box_cloud(n, seed)
    truth = RigidTransform(rot_z(np.radians(10.0)), (1.0, 0.2, 0.0))
    src = InstanceSegment(1, 1, pts)
    dst = InstanceSegment(2, 1, apply_transform(truth, pts))
    cfg = IcpConfig(correspondence_mode=MODES[mode])
    best, iters = np.inf, 0
    for _ in range(repeats):
        t0 = time.perf_counter()
        res = register(src, dst, cfg)
        best = min(best, time.perf_counter() - t0)
        iters = res.iterations_run
    return best, iters


def scaling_exponent(sizes: Sequence[int], times: Sequence[float]) -> float:
    """Slope of the least-squares line through ``(log n, log t)``."""
    slope, _ = np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)


def run_bench(sizes: Sequence[int] = DEFAULT_SIZES, modes: Sequence[str] = ("sinkhorn", "nn"), seed: int = 0):
    """Rows per (mode, size) plus the per-iteration Sinkhorn exponent (None when sinkhorn is not benchmarked)."""
    rows = []
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown bench mode {mode!r}")
        for n in sizes:
            secs, iters = registration_time(n, mode, seed=seed)
            per_it = sinkhorn_iteration_time(n, seed=seed) if mode == "sinkhorn" else secs / max(iters, 1)
            rows.append(BenchRow(mode, n, secs, per_it, iters))
    exponent = None
    sk = [r for r in rows if r.mode == "sinkhorn"]
    if len(sk) >= 2:
        exponent = scaling_exponent([r.n for r in sk], [r.per_iteration for r in sk])
    return rows, exponent
