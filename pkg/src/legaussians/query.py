"""Language feature maps from a trained scene and open-vocabulary relevancy."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .heads import MLP, decoder_forward
from .quantizer import Codebook, softmax
from .rasterizer import rasterize
from .scene import Camera, GaussianCloud


@dataclass
class QuerySpec:
    name: str
    embedding: np.ndarray          # (d_clip,) unit
    canonicals: list[np.ndarray]   # unit (d_clip,) negatives
    threshold: float = 0.5
    label: int | None = None       # ground-truth label for evaluation

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        self.canonicals = [np.asarray(c, dtype=np.float64) for c in self.canonicals]
        if not self.canonicals:
            raise ValueError(f"query {self.name!r} needs at least one canonical negative")
        for v in [self.embedding, *self.canonicals]:
            if abs(np.linalg.norm(v) - 1.0) > 1e-4:
                raise ValueError(f"query {self.name!r}: embeddings must be unit norm")
            if v.shape != self.embedding.shape:
                raise ValueError(f"query {self.name!r}: canonical dimension mismatch")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = {"name": self.name, "embedding": self.embedding.tolist(),
             "canonicals": [c.tolist() for c in self.canonicals], "threshold": self.threshold}
        if self.label is not None:
            d["label"] = self.label
        return d


@dataclass
class RelevancyMap:
    scores: np.ndarray  # (H, W) in [0, 1]
    query: str = ""
    camera: int | None = None


def save_queries(path, queries: list[QuerySpec]):
    with open(path, "w") as fh:
        json.dump({"queries": [q.to_dict() for q in queries]}, fh, indent=1)


def load_queries(path) -> list[QuerySpec]:
    with open(path) as fh:
        doc = json.load(fh)
    return [QuerySpec(**q) for q in doc["queries"]]


def default_queries(label_clip: np.ndarray, background_clip: np.ndarray, names=None) -> list[QuerySpec]:
    """One query per label; negatives are the background embedding and the
    normalized mean of the other labels."""
    out = []
    for i, q in enumerate(label_clip):
        canon = [background_clip]
        others = np.delete(label_clip, i, axis=0)
        if len(others):
            m = others.mean(axis=0)
            if np.linalg.norm(m) > 1e-9:
                canon.append(m / np.linalg.norm(m))
        out.append(QuerySpec(names[i] if names else f"object_{i}", q, canon, 0.5, label=i))
    return out


def index_distribution(cloud: GaussianCloud, camera: Camera, decoder: MLP, background=(0, 0, 0)):
    """Softmax of decoded logits, ``(H, W, N)``."""
    out = rasterize(cloud, camera, background)
    logits, _ = decoder_forward(decoder, out.semantic)
    return softmax(logits.astype(np.float64), axis=-1)


def features_from_distribution(dist: np.ndarray, codebook: Codebook) -> np.ndarray:
    """``M_infer @ S``: each pixel is a convex combination of codebook entries."""
    H, W, N = dist.shape
    if N != codebook.n:
        raise ValueError(f"decoder emits N={N} logits but the codebook has N={codebook.n}")
    return (dist.reshape(-1, N) @ codebook.entries.astype(np.float64)).reshape(H, W, -1)


def render_feature_map(cloud: GaussianCloud, camera: Camera, decoder: MLP, codebook: Codebook,
                       background=(0, 0, 0)) -> np.ndarray:
    if decoder.out_features != codebook.n:
        raise ValueError(f"decoder emits N={decoder.out_features} logits but the codebook has N={codebook.n}")
    return features_from_distribution(index_distribution(cloud, camera, decoder, background), codebook)


def relevancy(feature_map: np.ndarray, query: QuerySpec, camera: int | None = None) -> RelevancyMap:
    """Pairwise-softmax relevancy against canonical negatives, minimized over them.

    Only the CLIP slice (the first ``len(query.embedding)`` channels) is used,
    normalized per pixel; zero-norm pixels score 0.
    """
    d = len(query.embedding)
    if feature_map.shape[-1] < d:
        raise ValueError(f"feature map has {feature_map.shape[-1]} channels, query needs {d}")
    f = np.asarray(feature_map[..., :d], dtype=np.float64)
    norm = np.linalg.norm(f, axis=-1)
    zero = norm == 0
    f = f / np.where(zero, 1.0, norm)[..., None]
    pos = f @ query.embedding
    score = np.ones(f.shape[:-1])
    for c in query.canonicals:
        neg = f @ c
        # exp(pos) / (exp(pos) + exp(neg)) written as a logistic for stability
        score = np.minimum(score, 1.0 / (1.0 + np.exp(neg - pos)))
    score[zero] = 0.0
    return RelevancyMap(score, query.name, camera)


def segment(rel: RelevancyMap | np.ndarray, threshold: float) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    scores = rel.scores if isinstance(rel, RelevancyMap) else np.asarray(rel)
    return scores > threshold
