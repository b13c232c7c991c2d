"""Synthetic labelled scenes and per-view hybrid feature maps.

Objects are disjoint ellipsoidal clusters of Gaussians, each carrying a unit
"CLIP" and "DINO" label embedding. Feature maps are built from the
rasterized label map with controllable view jitter, boundary bleed and
per-view resampling, standing in for dense vision-language features.
"""

from __future__ import annotations

import colorsys
import dataclasses
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .quantizer import Codebook, HybridFeatureMap
from .rasterizer import rasterize
from .scene import UNCERTAINTY_INIT_RAW, Camera, GaussianCloud, look_at

BACKGROUND = -1
MIN_LABEL_ANGLE_DEG = 30.0


@dataclass
class NoiseConfig:
    view_jitter_sigma: float = 0.0
    boundary_blur_px: int = 0
    dino_blur_px: int = 0
    inconsistent_labels: list[int] = field(default_factory=list)

    def __post_init__(self):
        if min(self.view_jitter_sigma, self.boundary_blur_px, self.dino_blur_px) < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if self.dino_blur_px > self.boundary_blur_px:
            raise ValueError("dino_blur_px must not exceed boundary_blur_px")


@dataclass
class SceneSpec:
    object_count: int = 4
    gaussians_per_object: int = 1000
    d_clip: int = 32
    d_dino: int = 16
    bounds: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    camera_count: int = 30
    image_size: tuple = (128, 128)
    seed: int = 0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    background: tuple = (0.05, 0.05, 0.08)
    semantic_dim: int = 8

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseConfig(**self.noise)
        if self.d_clip < 2 or self.d_dino < 1:
            raise ValueError("need d_clip >= 2 and d_dino >= 1")
        if self.object_count < 0:
            raise ValueError("object_count must be >= 0")
        if self.gaussians_per_object < 1 or self.camera_count < 1:
            raise ValueError("gaussians_per_object and camera_count must be positive")
        lo, hi = np.asarray(self.bounds, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("bounds must have positive extent on every axis")


@dataclass
class SyntheticScene:
    gaussians: GaussianCloud
    label_clip: np.ndarray   # (object_count, d_clip), unit rows
    label_dino: np.ndarray   # (object_count, d_dino), unit rows
    background_clip: np.ndarray
    background_dino: np.ndarray
    cameras: list[Camera]
    background: np.ndarray   # RGB
    spec: SceneSpec

    @property
    def object_count(self) -> int:
        return len(self.label_clip)

    def label_features(self, label: int) -> np.ndarray:
        if label == BACKGROUND:
            return np.concatenate([self.background_clip, self.background_dino])
        return np.concatenate([self.label_clip[label], self.label_dino[label]])

    def oracle_codebook(self, lambda_dino: float = 0.5) -> Codebook:
        """Codebook whose entries are the object embeddings followed by the background."""
        rows = [self.label_features(i) for i in range(self.object_count)] + [self.label_features(BACKGROUND)]
        return Codebook(np.array(rows), self.spec.d_clip, self.spec.d_dino, lambda_dino)

    def to_checkpoint(self):
        """Gaussians plus a META section holding embeddings, cameras and the spec."""
        from .checkpoint import SceneCheckpoint

        spec = dataclasses.asdict(self.spec)
        meta = {
            "kind": "synthetic_scene",
            "spec": spec,
            "label_clip": self.label_clip.tolist(),
            "label_dino": self.label_dino.tolist(),
            "background_clip": self.background_clip.tolist(),
            "background_dino": self.background_dino.tolist(),
            "cameras": [c.to_dict() for c in self.cameras],
            "background": [float(x) for x in self.background],
        }
        return SceneCheckpoint(gaussians=self.gaussians, meta=meta)

    @classmethod
    def from_checkpoint(cls, ckpt) -> "SyntheticScene":
        m = ckpt.meta
        if m.get("kind") != "synthetic_scene":
            raise ValueError("checkpoint does not hold a synthetic scene")
        spec = dict(m["spec"])
        spec["bounds"] = tuple(tuple(b) for b in spec["bounds"])
        spec["image_size"] = tuple(spec["image_size"])
        spec["background"] = tuple(spec["background"])
        spec = SceneSpec(**spec)
        return cls(
            gaussians=ckpt.gaussians,
            label_clip=np.array(m["label_clip"], dtype=np.float64).reshape(-1, spec.d_clip),
            label_dino=np.array(m["label_dino"], dtype=np.float64).reshape(-1, spec.d_dino),
            background_clip=np.array(m["background_clip"], dtype=np.float64),
            background_dino=np.array(m["background_dino"], dtype=np.float64),
            cameras=[Camera.from_dict(c) for c in m["cameras"]],
            background=np.array(m["background"], dtype=np.float64),
            spec=spec,
        )


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def sample_separated_embeddings(count: int, dim: int, rng: np.random.Generator,
                                min_angle_deg: float = MIN_LABEL_ANGLE_DEG, max_tries: int = 20000) -> np.ndarray:
    """Unit vectors with pairwise angle >= ``min_angle_deg`` by rejection sampling."""
    max_cos = np.cos(np.radians(min_angle_deg))
    if dim == 2 and count > int(360.0 // min_angle_deg):
        raise ValueError(f"cannot separate {count} labels by {min_angle_deg} deg in d_clip=2 "
                         f"(at most {int(360.0 // min_angle_deg)} fit)")
    out = []
    tries = 0
    while len(out) < count:
        v = _unit_rows(rng.normal(size=dim))
        tries += 1
        if all(float(v @ u) <= max_cos for u in out):
            out.append(v)
            tries = 0
        elif tries >= max_tries:
            raise ValueError(f"could not place {count} label embeddings in d_clip={dim} with pairwise "
                             f"angle >= {min_angle_deg} deg after {max_tries} tries")
    return np.array(out).reshape(count, dim)


def _place_objects(spec: SceneSpec, rng: np.random.Generator):
    lo, hi = (np.asarray(b, dtype=np.float64) for b in spec.bounds)
    extent = hi - lo
    centers, radii = [], []
    for _ in range(spec.object_count):
        for _attempt in range(10000):
            r = rng.uniform(0.18, 0.26, size=3) * extent.min()
            c = rng.uniform(lo + r, hi - r)
            if all(np.linalg.norm(c - c2) > 1.05 * (r.max() + r2.max()) for c2, r2 in zip(centers, radii)):
                centers.append(c)
                radii.append(r)
                break
        else:
            raise ValueError(f"could not place {spec.object_count} disjoint objects inside bounds")
    return centers, radii


def _object_colors(count: int, rng: np.random.Generator) -> np.ndarray:
    offset = rng.uniform()
    return np.array([colorsys.hsv_to_rgb((offset + i / max(count, 1)) % 1.0, 0.65, 0.85)
                     for i in range(count)]).reshape(count, 3)


def ring_cameras(spec: SceneSpec, center=None, radius: float | None = None) -> list[Camera]:
    """Pinhole cameras on a ring at 1.5x the scene radius, looking at the centre,
    cycling through three elevations. Defaults to the bounding sphere of
    ``spec.bounds``; the focal length makes that sphere fill the frame."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in spec.bounds)
    center = 0.5 * (lo + hi) if center is None else np.asarray(center, dtype=np.float64)
    radius = 0.5 * np.linalg.norm(hi - lo) if radius is None else radius
    dist = 1.5 * radius
    W, H = spec.image_size
    tan_half = radius / np.sqrt(dist ** 2 - radius ** 2)
    fx = 0.5 * min(W, H) / tan_half
    cams = []
    for i in range(spec.camera_count):
        az = 2 * np.pi * i / spec.camera_count
        el = np.radians(15.0 + 15.0 * (i % 3))
        eye = center + dist * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cams.append(look_at(eye, center, width=W, height=H, fx=fx))
    return cams


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Build a labelled scene; bit-identical for a fixed ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    embeddings = sample_separated_embeddings(spec.object_count + 1, spec.d_clip, rng)
    dino = _unit_rows(rng.normal(size=(spec.object_count + 1, spec.d_dino)))
    centers, radii = _place_objects(spec, rng)
    colors = _object_colors(spec.object_count, rng)

    parts = []
    n = spec.gaussians_per_object
    for label, (c, r) in enumerate(zip(centers, radii)):
        d = _unit_rows(rng.normal(size=(n, 3)))
        pos = c + d * rng.uniform(size=(n, 1)) ** (1 / 3) * r
        spacing = (4.0 / 3.0 * np.pi * np.prod(r) / n) ** (1 / 3)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        texture = 0.8 + 0.2 * np.sin(3.0 * np.pi * ((pos - c) / r) + phase)
        parts.append(GaussianCloud(
            positions=pos,
            rotations=_unit_rows(rng.normal(size=(n, 4))),
            log_scales=np.log(0.7 * spacing) + rng.normal(scale=0.1, size=(n, 3)),
            opacity_raw=np.full(n, 3.0),
            colors=np.clip(colors[label] * texture, 0.0, 1.0),
            semantics=np.zeros((n, spec.semantic_dim)),
            uncertainty_raw=np.full(n, UNCERTAINTY_INIT_RAW),
            labels=np.full(n, label, dtype=np.int32),
        ))
    cloud = GaussianCloud.concat(parts).astype(np.float32) if parts else GaussianCloud.empty(spec.semantic_dim)
    if centers:
        centroid = np.mean(centers, axis=0)
        radius = max(np.linalg.norm(c - centroid) + r.max() for c, r in zip(centers, radii))
        cameras = ring_cameras(spec, centroid, radius)
    else:
        cameras = ring_cameras(spec)
    return SyntheticScene(
        gaussians=cloud,
        label_clip=embeddings[:-1],
        label_dino=dino[:-1],
        background_clip=embeddings[-1],
        background_dino=dino[-1],
        cameras=cameras,
        background=np.asarray(spec.background, dtype=np.float64),
        spec=spec,
    )


def render_ground_truth(scene: SyntheticScene, camera: Camera):
    """RGB image and label map (``BACKGROUND`` where no cluster is opaque).

    A pixel takes the label of the nearest cluster whose own blended alpha
    exceeds 0.5; cluster depth is its alpha-normalized rendered depth.
    """
    cloud = scene.gaussians
    rgb = rasterize(cloud, camera, scene.background).color
    H, W = camera.height, camera.width
    labels = np.full((H, W), BACKGROUND, dtype=np.int32)
    best = np.full((H, W), np.inf)
    for label in range(scene.object_count):
        sub = cloud.subset(cloud.labels == label)
        if not len(sub):
            continue
        out = rasterize(sub, camera, np.zeros(3))
        alpha = out.alpha.astype(np.float64)
        depth = np.where(alpha > 0, out.depth / np.maximum(alpha, 1e-12), np.inf)
        take = (alpha > 0.5) & (depth < best)
        labels[take] = label
        best[take] = depth[take]
    return rgb, labels


def _view_rng(scene: SyntheticScene, camera: Camera) -> np.random.Generator:
    key = zlib.crc32(np.ascontiguousarray(camera.R).tobytes() + np.ascontiguousarray(camera.t).tobytes())
    return np.random.default_rng([scene.spec.seed, key])


def _rotate_towards_random(v: np.ndarray, angle: float, rng: np.random.Generator) -> np.ndarray:
    w = rng.normal(size=v.shape)
    w -= (w @ v) * v
    w /= np.linalg.norm(w)
    return np.cos(angle) * v + np.sin(angle) * w


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return img
    return uniform_filter(img, size=(2 * radius + 1, 2 * radius + 1, 1), mode="nearest")


def extract_features(scene: SyntheticScene, camera: Camera, noise: NoiseConfig | None = None,
                     label_map: np.ndarray | None = None) -> HybridFeatureMap:
    """Per-pixel hybrid features for one view.

    Each label's embedding is rotated by a random angle ~ N(0, jitter) per
    view (labels listed as inconsistent get a fresh random CLIP part per
    view instead), painted through the label map, box-blurred with the given
    radii and renormalized part by part.
    """
    noise = scene.spec.noise if noise is None else noise
    if label_map is None:
        _, label_map = render_ground_truth(scene, camera)
    rng = _view_rng(scene, camera)
    dc, dd = scene.spec.d_clip, scene.spec.d_dino

    table_clip = np.vstack([scene.label_clip, scene.background_clip[None]])
    table_dino = np.vstack([scene.label_dino, scene.background_dino[None]])
    for label in range(scene.object_count):
        ang_c, ang_d = rng.normal(scale=noise.view_jitter_sigma, size=2) if noise.view_jitter_sigma > 0 else (0.0, 0.0)
        if label in noise.inconsistent_labels:
            table_clip[label] = _unit_rows(rng.normal(size=dc))
        elif ang_c:
            table_clip[label] = _rotate_towards_random(table_clip[label], ang_c, rng)
        if ang_d:
            table_dino[label] = _rotate_towards_random(table_dino[label], ang_d, rng)

    idx = np.where(label_map == BACKGROUND, scene.object_count, label_map)
    clip = _box_blur(table_clip[idx], noise.boundary_blur_px)
    dino = _box_blur(table_dino[idx], noise.dino_blur_px)
    data = np.concatenate([_unit_rows(clip), _unit_rows(dino)], axis=-1).astype(np.float32)
    return HybridFeatureMap(data, dc, dd)
