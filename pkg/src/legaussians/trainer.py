"""Joint optimization of appearance, compact semantics, uncertainty, decoder
and smoothing MLP.

Semantic and smoothing losses reach only the semantic features, the
uncertainties and the two heads; geometry, opacity and color are driven by
the RGB loss alone.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from .checkpoint import SceneCheckpoint
from .density import DensityConfig, DensityStats, density_control
from .heads import MLP, decoder_forward, heads_backward, init_decoder, init_smoothing_mlp, smoothing_forward
from .losses import rgb_loss, semantic_ce_loss, smoothing_loss, uncertainty_reg
from .optim import AdamState, adam_step
from .quantizer import Codebook
from .rasterizer import rasterize, rasterize_backward
from .scene import Camera, GaussianCloud, sigmoid

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 30000
    lr: float = 0.001
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    # appearance/geometry learning rates (position is scaled by scene extent)
    position_lr: float = 1.6e-4
    color_lr: float = 2.5e-3
    opacity_lr: float = 0.05
    scaling_lr: float = 5e-3
    rotation_lr: float = 1e-3
    lambda_rgb: float = 1.0
    lambda_ce: float = 1.0
    lambda_u: float = 1.0
    lambda_s: float = 1.0
    lambda_smo: float = 1.0
    lambda_dino: float = 0.5
    lambda_lb: float = 0.5
    w_s: float = 0.1
    semantic_dim: int = 8
    n_codes: int = 32
    pe_frequencies: int = 0
    dssim_weight: float = 0.2
    densify_from: int = 100
    densify_interval: int = 100
    densify_until: int | None = None  # default: iterations // 2
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    prune_opacity: float = 0.005
    max_gaussians: int = 20000
    checkpoint_every: int = 0
    log_every: int = 100
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        weights = (self.lambda_rgb, self.lambda_ce, self.lambda_u, self.lambda_s, self.lambda_smo,
                   self.lambda_dino, self.lambda_lb)
        if min(weights) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.w_s <= 1.0:
            raise ValueError("w_s must lie in [0, 1]")
        if self.iterations < 0 or self.n_codes < 1:
            raise ValueError("iterations must be >= 0 and n_codes >= 1")

    @property
    def densify_stop(self) -> int:
        return self.iterations // 2 if self.densify_until is None else self.densify_until

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def desk_scale(self) -> "TrainConfig":
        return dataclasses.replace(self, iterations=3000)


@dataclass
class TrainDataset:
    cameras: list[Camera]
    images: list[np.ndarray]       # (H, W, 3) in [0, 1]
    index_maps: list[np.ndarray]   # (H, W) int
    background: np.ndarray

    def __post_init__(self):
        if not (len(self.cameras) == len(self.images) == len(self.index_maps)):
            raise ValueError("cameras, images and index maps differ in count")


@dataclass
class TrainResult:
    checkpoint: SceneCheckpoint
    history: list[dict] = field(default_factory=list)


def scene_extent(cameras: list[Camera]) -> float:
    centers = np.array([c.center for c in cameras])
    return 1.1 * float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max())


def init_from_points(points: np.ndarray, rng: np.random.Generator, semantic_dim: int = 8,
                     init_opacity: float = 0.1, dtype=np.float32) -> GaussianCloud:
    """Isotropic splats on a point cloud, scaled by mean distance to the 3 nearest
    neighbours, gray color, random semantics, uncertainty near zero."""
    from scipy.spatial import cKDTree

    from .scene import UNCERTAINTY_INIT_RAW, inverse_sigmoid

    n = len(points)
    if n > 1:
        d, _ = cKDTree(points).query(points, k=min(4, n))
        dist = np.maximum(d[:, 1:].mean(axis=1), 1e-4)
    else:
        dist = np.full(n, 0.01)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianCloud(
        positions=points,
        rotations=rot,
        log_scales=np.repeat(np.log(dist)[:, None], 3, axis=1),
        opacity_raw=np.full(n, float(inverse_sigmoid(init_opacity))),
        colors=np.full((n, 3), 0.5),
        semantics=rng.normal(scale=0.5, size=(n, semantic_dim)),
        uncertainty_raw=np.full(n, UNCERTAINTY_INIT_RAW),
    ).astype(dtype)


def _check(name: str, value: float, it: int):
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {name} loss at iteration {it}")


def train(cloud: GaussianCloud, dataset: TrainDataset, config: TrainConfig,
          codebook: Codebook | None = None, decoder: MLP | None = None, smooth_mlp: MLP | None = None,
          callback=None) -> TrainResult:
    """Run the optimization loop and return the final checkpoint.

    ``callback(iteration, cloud, decoder, smooth_mlp, record)`` runs after every
    step; if ``config.checkpoint_every`` is set it also receives intermediate
    checkpoints through ``record["checkpoint"]``.
    """
    if codebook is not None and codebook.n != config.n_codes:
        raise ValueError(f"codebook has N={codebook.n} but config.n_codes={config.n_codes}")
    rng = np.random.default_rng(config.seed)
    cloud = cloud.copy()
    decoder = decoder.copy() if decoder is not None else init_decoder(config.n_codes, rng, config.semantic_dim)
    smooth_mlp = smooth_mlp.copy() if smooth_mlp is not None else \
        init_smoothing_mlp(rng, config.semantic_dim, config.pe_frequencies)
    if decoder.out_features != config.n_codes:
        raise ValueError(f"decoder emits {decoder.out_features} logits but n_codes={config.n_codes}")

    extent = scene_extent(dataset.cameras) if len(dataset.cameras) > 1 else 1.0
    cloud_lrs = [config.position_lr * extent, config.rotation_lr, config.scaling_lr, config.opacity_lr,
                 config.color_lr, config.lr, config.lr]
    cloud_state, dec_state, smo_state = AdamState(), AdamState(), AdamState()
    stats = DensityStats.zeros(len(cloud))
    dens_cfg = DensityConfig(config.densify_grad_threshold, config.percent_dense,
                             config.prune_opacity, config.max_gaussians)
    history = []
    bg = np.asarray(dataset.background, dtype=np.float64)
    adam_kw = dict(betas=config.betas, eps=config.eps)
    semantic_on = config.lambda_s * (config.lambda_ce + config.lambda_u) > 0

    for it in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        k = int(rng.integers(len(dataset.cameras)))
        cam = dataset.cameras[k]
        out = rasterize(cloud, cam, bg)
        record = {"iteration": it, "view": k}

        d_color = None
        if config.lambda_rgb > 0:
            l_rgb, d_color = rgb_loss(out.color, dataset.images[k], config.dssim_weight)
            d_color *= config.lambda_rgb
            _check("rgb", l_rgb, it)
            record["rgb"] = l_rgb

        d_sem = d_unc = None
        dec_grads = None
        if semantic_on:
            logits, cache = decoder_forward(decoder, out.semantic)
            l_ce, d_logits, d_u_ce = semantic_ce_loss(logits, dataset.index_maps[k], out.uncertainty)
            l_u, d_u_reg = uncertainty_reg(out.uncertainty)
            _check("cross-entropy", l_ce, it)
            _check("uncertainty", l_u, it)
            scale = config.lambda_s
            gw, gb, d_sem = heads_backward(decoder, cache,
                                           (scale * config.lambda_ce * d_logits).astype(logits.dtype))
            dec_grads = [a for pair in zip(gw, gb) for a in pair]
            d_unc = scale * (config.lambda_ce * d_u_ce + config.lambda_u * d_u_reg)
            record.update(ce=l_ce, u=l_u)

        d_sg = None
        smo_grads = None
        if config.lambda_smo > 0 and len(cloud):
            s_mlp, scache = smoothing_forward(smooth_mlp, cloud.positions)
            u = sigmoid(cloud.uncertainty_raw)
            l_smo, d_mlp, d_sg = smoothing_loss(s_mlp, cloud.semantics, u, config.w_s)
            _check("smoothing", l_smo, it)
            gw, gb, _ = heads_backward(smooth_mlp, scache, (config.lambda_smo * d_mlp).astype(s_mlp.dtype))
            smo_grads = [a for pair in zip(gw, gb) for a in pair]
            d_sg = config.lambda_smo * d_sg
            record["smo"] = l_smo

        grads = rasterize_backward(cloud, cam, bg, out, d_color=d_color, d_semantic=d_sem,
                                   d_uncertainty=d_unc, isolate_semantics=True)
        if d_sg is not None:
            grads.semantics += d_sg.astype(grads.semantics.dtype)

        params = [getattr(cloud, name) for name in GaussianCloud.PARAMS]
        if len(cloud):
            adam_step(params, [getattr(grads, name) for name in GaussianCloud.PARAMS], cloud_state,
                      cloud_lrs, **adam_kw)
            np.clip(cloud.colors, 0.0, 1.0, out=cloud.colors)
        if dec_grads is not None:
            adam_step(decoder.params(), dec_grads, dec_state, config.lr, **adam_kw)
        if smo_grads is not None:
            adam_step(smooth_mlp.params(), smo_grads, smo_state, config.lr, **adam_kw)

        if it <= config.densify_stop and config.lambda_rgb > 0:
            stats.add(grads.means2d, out.state.proj.visible, cam.width, cam.height)
            if it >= config.densify_from and it % config.densify_interval == 0:
                cloud = density_control(cloud, stats, dens_cfg, extent, rng, cloud_state)
                stats = DensityStats.zeros(len(cloud))

        record["n_gaussians"] = len(cloud)
        record["seconds"] = time.perf_counter() - t0
        history.append(record)
        if config.log_every and it % config.log_every == 0:
            log.info("iter %d %s", it, {k: round(v, 5) for k, v in record.items() if isinstance(v, float)})
        if config.checkpoint_every and it % config.checkpoint_every == 0:
            record["checkpoint"] = _make_checkpoint(cloud, codebook, decoder, smooth_mlp, config, it, bg)
        if callback is not None:
            callback(it, cloud, decoder, smooth_mlp, record)
        record.pop("checkpoint", None)

    ckpt = _make_checkpoint(cloud, codebook, decoder, smooth_mlp, config, config.iterations, bg)
    return TrainResult(ckpt, history)


def _make_checkpoint(cloud, codebook, decoder, smooth_mlp, config, step, bg) -> SceneCheckpoint:
    return SceneCheckpoint(
        gaussians=cloud.copy(),
        codebook=codebook,
        decoder=decoder.copy(),
        smooth_mlp=smooth_mlp.copy(),
        meta={"step": step, "config": config.to_dict(), "background": [float(x) for x in bg]},
    )


def sample_init_points(points: np.ndarray, count: int, rng: np.random.Generator,
                       jitter: float = 0.02) -> np.ndarray:
    """Random subset of a reference point cloud with Gaussian jitter, standing in
    for a structure-from-motion point cloud."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        return points.reshape(0, 3)
    pick = rng.choice(len(points), size=min(count, len(points)), replace=False)
    return points[np.sort(pick)] + rng.normal(scale=jitter, size=(len(pick), 3))
