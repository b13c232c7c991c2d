"""Adaptive density control: prune transparent splats, clone small and split
large splats with high screen-space positional gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import AdamState
from .scene import GaussianCloud, quaternion_to_matrix, sigmoid

SPLIT_SCALE_DIVISOR = 1.6


@dataclass
class DensityStats:
    grad_accum: np.ndarray
    denom: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensityStats":
        return cls(np.zeros(n), np.zeros(n))

    def add(self, means2d_grad: np.ndarray, visible: np.ndarray, width: int, height: int):
        # NDC units so the threshold is resolution independent
        g = means2d_grad * np.array([0.5 * width, 0.5 * height])
        self.grad_accum[visible] += np.linalg.norm(g[visible], axis=1)
        self.denom[visible] += 1

    def mean(self) -> np.ndarray:
        return np.where(self.denom > 0, self.grad_accum / np.maximum(self.denom, 1), 0.0)


@dataclass
class DensityConfig:
    grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    prune_opacity: float = 0.005
    max_gaussians: int = 20000


def _select_rows(state: AdamState, n_params: int, index: np.ndarray, n_new: int):
    for k in range(min(n_params, len(state.m))):
        for buf in (state.m, state.v):
            kept = buf[k][index]
            buf[k] = np.concatenate([kept, np.zeros((n_new,) + kept.shape[1:], dtype=kept.dtype)])


def density_control(cloud: GaussianCloud, stats: DensityStats, config: DensityConfig, scene_extent: float,
                    rng: np.random.Generator, adam_state: AdamState | None = None,
                    densify: bool = True) -> GaussianCloud:
    """Returns the new cloud; ``adam_state`` rows (ordered as
    ``GaussianCloud.PARAMS``) are kept, zeroed for new splats and dropped for
    removed ones.

    New splats copy every parameter of their parent, including semantics and
    uncertainty. Split children are sampled from the parent distribution with
    scales divided by 1.6.
    """
    n = len(cloud)
    grads = stats.mean()
    scales = np.exp(cloud.log_scales.astype(np.float64))
    big = scales.max(axis=1) > config.percent_dense * scene_extent
    selected = (grads >= config.grad_threshold) if densify else np.zeros(n, dtype=bool)
    room = max(0, config.max_gaussians - n)
    if selected.sum() > room:
        # split adds one net splat, clone adds one: keep the strongest gradients
        order = np.argsort(-grads, kind="stable")
        keep = np.zeros(n, dtype=bool)
        keep[order[:room]] = True
        selected &= keep
    clone = selected & ~big
    split = selected & big

    new_parts = []
    if clone.any():
        new_parts.append(cloud.subset(clone))
    if split.any():
        parent = cloud.subset(split)
        kids = GaussianCloud.concat([parent, parent])
        std = np.exp(kids.log_scales.astype(np.float64))
        R = quaternion_to_matrix(kids.rotations / np.linalg.norm(kids.rotations, axis=1, keepdims=True))
        offset = np.einsum("nij,nj->ni", R, rng.normal(size=std.shape) * std)
        kids.positions = (kids.positions + offset).astype(cloud.dtype)
        kids.log_scales = (kids.log_scales - np.log(SPLIT_SCALE_DIVISOR)).astype(cloud.dtype)
        new_parts.append(kids)

    prune = sigmoid(cloud.opacity_raw) < config.prune_opacity
    keep_old = ~(prune | split)
    kept = cloud.subset(keep_old)
    if new_parts:
        added = GaussianCloud.concat(new_parts)
        # children of pruned parents are transparent too
        added = added.subset(sigmoid(added.opacity_raw) >= config.prune_opacity)
        result = GaussianCloud.concat([kept, added])
    else:
        added = None
        result = kept
    if adam_state is not None:
        _select_rows(adam_state, len(GaussianCloud.PARAMS), np.flatnonzero(keep_old),
                     0 if added is None else len(added))
    return result
