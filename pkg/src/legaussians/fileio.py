"""On-disk formats: feature maps, label/index maps, images, heatmaps, masks."""

from __future__ import annotations

import struct
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from .quantizer import HybridFeatureMap

FEAT_MAGIC = b"LEGFEAT\x00"
FEAT_VERSION = 1
FEAT_HEADER = struct.Struct("<8sIIIIII")  # magic, version, width, height, d_clip, d_dino, reserved
assert FEAT_HEADER.size == 32
MAX_LABEL = 65534
NO_LABEL = 65535  # 16-bit sentinel for label -1 (background)


class FormatError(ValueError):
    pass


def write_feature_map(path, fmap: HybridFeatureMap) -> None:
    H, W = fmap.height, fmap.width
    with open(path, "wb") as fh:
        fh.write(FEAT_HEADER.pack(FEAT_MAGIC, FEAT_VERSION, W, H, fmap.d_clip, fmap.d_dino, 0))
        fh.write(np.ascontiguousarray(fmap.data, dtype="<f4").tobytes())


def read_feature_map(path) -> HybridFeatureMap:
    buf = Path(path).read_bytes()
    if len(buf) < FEAT_HEADER.size:
        raise FormatError(f"{path}: shorter than the 32-byte header")
    magic, version, W, H, dc, dd, _ = FEAT_HEADER.unpack_from(buf)
    if magic != FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FEAT_VERSION:
        raise FormatError(f"{path}: unsupported feature map version {version}")
    expected = H * W * (dc + dd) * 4
    payload = buf[FEAT_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(H, W, dc + dd)
    return HybridFeatureMap(data, dc, dd)


def write_label_png(path, labels: np.ndarray) -> None:
    """Label or index map as 16-bit grayscale; negative ids map to 65535."""
    a = np.asarray(labels)
    if a.ndim != 2:
        raise ValueError("label map must be 2-D")
    if a.size and a.max() > MAX_LABEL:
        raise ValueError(f"label id {a.max()} does not fit in 16 bits")
    out = np.where(a < 0, NO_LABEL, a).astype(np.uint16)
    Image.fromarray(out).save(path)  # mode I;16


def read_label_png(path) -> np.ndarray:
    a = np.asarray(Image.open(path)).astype(np.int32)
    a[a == NO_LABEL] = -1
    return a


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_rgb_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path)


def read_rgb_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path)


def read_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("1"), dtype=bool)


@lru_cache(maxsize=1)
def turbo_table() -> np.ndarray:
    """The checked-in 256x3 uint8 colormap."""
    text = resources.files("legaussians").joinpath("data/turbo_256.txt").read_text()
    table = np.loadtxt(text.splitlines(), dtype=np.int64, comments="#")
    if table.shape != (256, 3):
        raise FormatError(f"colormap table has shape {table.shape}")
    return table.astype(np.uint8)


def apply_colormap(scores: np.ndarray) -> np.ndarray:
    """Map [0, 1] scores to uint8 RGB through the fixed table."""
    idx = np.clip(np.floor(np.asarray(scores, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.int64)
    return turbo_table()[idx]


def write_heatmap_png(path, scores: np.ndarray) -> None:
    Image.fromarray(apply_colormap(scores), mode="RGB").save(path)
