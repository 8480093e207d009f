"""Micro-benchmarks for the renderer and the voxelizer."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import CameraView
from .render import render
from .synth import make_rng
from .scene import GaussianScene
from .voxel import voxelize


@dataclass
class BenchReport:
    op: str
    size: dict
    wall_ms: float
    throughput: float
    unit: str
    runs: int

    def to_dict(self):
        return asdict(self)


def bench_scene(n, dim=16, seed=0, extent=1.0, scale=0.01):
    """Random isotropic scene in a ``[-extent, extent]^3`` cube."""
    rng = make_rng(seed)
    sigma = scale * rng.uniform(0.5, 1.5, size=n)
    return GaussianScene(
        rng.uniform(-extent, extent, size=(n, 3)),
        (sigma ** 2)[:, None, None] * np.eye(3),
        rng.normal(size=(n, 1, 3)) * 0.5,
        rng.uniform(0.2, 1.0, size=n),
        rng.normal(size=(n, dim)),
        rng.uniform(0.0, 2.0, size=n),
    )


def _median_ms(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def bench_render(n=10_000, size=256, dim=16, repeats=5, seed=0, threads=1) -> BenchReport:
    scene = bench_scene(n, dim, seed)
    view = CameraView.from_params(size, size, size / 2, size / 2, size, size, np.eye(3), [0.0, 0.0, 3.0])
    ms = _median_ms(lambda: render(scene, view, threads=threads), repeats)
    return BenchReport("render", {"n": n, "width": size, "height": size, "feature_dim": dim},
                       ms, size * size / (ms / 1e3), "pixels/s", repeats)


def bench_voxelize(n=1_000_000, voxel_size=0.25, lambda_sem=2.0, dim=16, repeats=5, seed=0) -> BenchReport:
    scene = bench_scene(n, dim, seed, extent=5.0)
    ms = _median_ms(lambda: voxelize(scene, voxel_size, lambda_sem), repeats)
    return BenchReport("voxelize", {"n": n, "voxel_size": voxel_size, "lambda": lambda_sem, "feature_dim": dim},
                       ms, n / (ms / 1e3), "primitives/s", repeats)
