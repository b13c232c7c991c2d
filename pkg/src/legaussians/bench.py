"""Render throughput measurement on a random Gaussian cloud."""

from __future__ import annotations

import time

import numpy as np

from .rasterizer import rasterize
from .scene import Camera, GaussianCloud, look_at
from .trainer import init_from_points


def bench_scene(n_gaussians: int, width: int, height: int, semantic_dim: int = 8,
                seed: int = 0) -> tuple[GaussianCloud, Camera]:
    """Uniform points in the unit cube, half-opaque, seen from a fixed camera."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, size=(n_gaussians, 3))
    cloud = init_from_points(pts, rng, semantic_dim=semantic_dim, init_opacity=0.5)
    cam = look_at((3.0, 0.0, 1.0), (0, 0, 0), width=width, height=height, fx=0.8 * width)
    return cloud, cam


def time_render(cloud: GaussianCloud, cam: Camera, frames: int = 50) -> np.ndarray:
    """Wall time (ms) of ``frames`` forward renders after one warm-up render."""
    bg = np.zeros(3)
    rasterize(cloud, cam, bg)
    times = np.empty(frames)
    for i in range(frames):
        t0 = time.perf_counter()
        rasterize(cloud, cam, bg)
        times[i] = 1e3 * (time.perf_counter() - t0)
    return times
