"""Discrete hybrid-feature space: nearest-basis assignment and codebook fitting.

A hybrid feature is a CLIP-like part concatenated with a DINO-like part.
Similarity to a basis is ``cos(clip, clip_i) + lambda_dino * cos(dino, dino_i)``.
The codebook is optimized with a cosine reconstruction loss plus a
load-balancing penalty ``sum(r * p)`` where ``r`` is the share of features
assigned to each basis and ``p`` the mean softmax of the similarity rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class HybridFeatureMap:
    data: np.ndarray  # (H, W, d_clip + d_dino)
    d_clip: int
    d_dino: int

    def __post_init__(self):
        if self.data.shape[-1] != self.d_clip + self.d_dino:
            raise ValueError(f"feature map has {self.data.shape[-1]} channels, "
                             f"expected d_clip + d_dino = {self.d_clip + self.d_dino}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def clip(self) -> np.ndarray:
        return self.data[..., :self.d_clip]

    @property
    def dino(self) -> np.ndarray:
        return self.data[..., self.d_clip:]


@dataclass
class Codebook:
    entries: np.ndarray  # (N, d_clip + d_dino)
    d_clip: int
    d_dino: int
    lambda_dino: float = 0.5

    def __post_init__(self):
        if len(self.entries) < 1:
            raise ValueError("codebook needs at least one entry")
        if self.entries.shape[1] != self.d_clip + self.d_dino:
            raise ValueError("codebook entry width does not match d_clip + d_dino")
        if self.lambda_dino < 0:
            raise ValueError("lambda_dino must be non-negative")

    @property
    def n(self) -> int:
        return len(self.entries)

    def normalized(self) -> "Codebook":
        return Codebook(normalize_parts(self.entries, self.d_clip), self.d_clip, self.d_dino, self.lambda_dino)


@dataclass
class QuantizerConfig:
    n_codes: int = 32
    lambda_cos: float = 1.0
    lambda_lb: float = 0.5
    lambda_dino: float = 0.5
    epochs: int = 10
    batch_pixels: int = 4096
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.lambda_cos, self.lambda_lb, self.lambda_dino) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 1 or self.batch_pixels < 1 or self.n_codes < 1:
            raise ValueError("n_codes, epochs and batch_pixels must be positive")


@dataclass
class FitReport:
    losses: list[dict] = field(default_factory=list)      # per epoch
    utilization: list[np.ndarray] = field(default_factory=list)  # per epoch, counts per code


def normalize_parts(x: np.ndarray, d_clip: int) -> np.ndarray:
    out = np.array(x, dtype=np.float64 if x.dtype != np.float32 else np.float32, copy=True)
    for sl in (slice(0, d_clip), slice(d_clip, None)):
        part = out[..., sl]
        if part.shape[-1]:
            part /= np.linalg.norm(part, axis=-1, keepdims=True)
    return out


def _unit(x: np.ndarray, what: str):
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError(f"zero-norm {what}: cosine similarity is undefined")
    return x / norm, norm


def _split(x: np.ndarray, d_clip: int):
    return x[..., :d_clip], x[..., d_clip:]


def similarity(f: np.ndarray, basis: np.ndarray, d_clip: int, lambda_dino: float) -> float:
    """Weighted two-part cosine similarity of one feature and one basis."""
    f = np.asarray(f, dtype=np.float64)
    basis = np.asarray(basis, dtype=np.float64)
    if f.shape != basis.shape:
        raise ValueError(f"dimension mismatch: {f.shape} vs {basis.shape}")
    fc, fd = _split(f, d_clip)
    bc, bd = _split(basis, d_clip)
    fc, _ = _unit(fc, "feature clip part")
    bc, _ = _unit(bc, "basis clip part")
    s = float(fc @ bc)
    if fd.shape[-1]:
        fd, _ = _unit(fd, "feature dino part")
        bd, _ = _unit(bd, "basis dino part")
        s += lambda_dino * float(fd @ bd)
    return s


def similarity_matrix(features: np.ndarray, codebook: Codebook) -> np.ndarray:
    """``(K, N)`` similarities of flattened features against every basis."""
    feats = np.asarray(features, dtype=np.float64).reshape(-1, codebook.d_clip + codebook.d_dino)
    fc, fd = _split(feats, codebook.d_clip)
    ec, ed = _split(codebook.entries.astype(np.float64), codebook.d_clip)
    fc, _ = _unit(fc, "feature clip part")
    ec, _ = _unit(ec, "codebook clip part")
    D = fc @ ec.T
    if codebook.d_dino:
        fd, _ = _unit(fd, "feature dino part")
        ed, _ = _unit(ed, "codebook dino part")
        D += codebook.lambda_dino * (fd @ ed.T)
    return D


def assign(f: np.ndarray, codebook: Codebook) -> int:
    """Index of the most similar basis; ties go to the smallest index."""
    return int(np.argmax(similarity_matrix(f, codebook)[0]))


def assign_many(features: np.ndarray, codebook: Codebook, chunk: int = 65536) -> np.ndarray:
    feats = np.asarray(features).reshape(-1, codebook.d_clip + codebook.d_dino)
    out = np.empty(len(feats), dtype=np.int64)
    for s in range(0, len(feats), chunk):
        out[s:s + chunk] = np.argmax(similarity_matrix(feats[s:s + chunk], codebook), axis=1)
    return out


def quantize_map(features: HybridFeatureMap | np.ndarray, codebook: Codebook) -> np.ndarray:
    """Per-pixel basis indices, shape ``(H, W)``."""
    data = features.data if isinstance(features, HybridFeatureMap) else np.asarray(features)
    if data.shape[-1] != codebook.d_clip + codebook.d_dino:
        raise ValueError(f"feature width {data.shape[-1]} does not match codebook width "
                         f"{codebook.d_clip + codebook.d_dino}")
    return assign_many(data, codebook).reshape(data.shape[:-1])


def reconstruct(indices: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Quantized features: the selected basis at every pixel."""
    return codebook.entries[indices]


def _cos_and_grad(F: np.ndarray, E: np.ndarray):
    """Row-wise cosine of F and E and its gradient w.r.t. E."""
    Fu, _ = _unit(F, "feature")
    Eu, En = _unit(E, "codebook entry")
    c = np.sum(Fu * Eu, axis=1)
    return c, (Fu - c[:, None] * Eu) / En


def cosine_loss(features: np.ndarray, codebook: Codebook, assignments: np.ndarray, return_grad: bool = False):
    """Mean of ``(1 - cos clip) + lambda_dino (1 - cos dino)`` to the assigned basis.

    With ``return_grad`` also returns the ``(N, d)`` gradient w.r.t. the
    codebook entries; the features are treated as data.
    """
    F = np.asarray(features, dtype=np.float64).reshape(-1, codebook.d_clip + codebook.d_dino)
    a = np.asarray(assignments).reshape(-1)
    E = codebook.entries.astype(np.float64)[a]
    k = len(F)
    dc = codebook.d_clip
    cc, gc = _cos_and_grad(F[:, :dc], E[:, :dc])
    loss_rows = 1.0 - cc
    grad_rows = np.zeros_like(E)
    grad_rows[:, :dc] = -gc / k
    if codebook.d_dino:
        cd, gd = _cos_and_grad(F[:, dc:], E[:, dc:])
        loss_rows += codebook.lambda_dino * (1.0 - cd)
        grad_rows[:, dc:] = -codebook.lambda_dino * gd / k
    loss = float(loss_rows.mean())
    if not return_grad:
        return loss
    grad = np.zeros((codebook.n, F.shape[1]))
    np.add.at(grad, a, grad_rows)
    return loss, grad


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def load_balance_loss(similarities: np.ndarray, return_grad: bool = False):
    """``sum(r * p)`` over a ``(K, N)`` similarity matrix.

    ``r`` is the one-hot argmax share per basis (constant, no gradient) and
    ``p`` the mean row softmax at temperature 1. With ``return_grad`` also
    returns the gradient w.r.t. the similarities.
    """
    D = np.asarray(similarities, dtype=np.float64)
    K, N = D.shape
    r = np.bincount(np.argmax(D, axis=1), minlength=N) / K
    P = softmax(D, axis=1)
    p = P.mean(axis=0)
    loss = float(np.sum(r * p))
    if not return_grad:
        return loss
    grad = P * (r[None, :] - (P @ r)[:, None]) / K
    return loss, grad


def _similarity_backward(F: np.ndarray, codebook: Codebook, dD: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. codebook entries of sum(dD * D(F, entries))."""
    dc = codebook.d_clip
    E = codebook.entries.astype(np.float64)
    grad = np.zeros_like(E)
    parts = [(slice(0, dc), 1.0)]
    if codebook.d_dino:
        parts.append((slice(dc, None), codebook.lambda_dino))
    for sl, weight in parts:
        Fu, _ = _unit(F[:, sl], "feature")
        Eu, En = _unit(E[:, sl], "codebook entry")
        C = Fu @ Eu.T                              # (K, N)
        # d cos(f, e)/de = (f_u - cos * e_u) / |e|
        gE = dD.T @ Fu - (dD * C).sum(axis=0)[:, None] * Eu
        grad[:, sl] = weight * gE / En
    return grad


def quantization_loss(features: np.ndarray, codebook: Codebook, assignments: np.ndarray,
                      lambda_cos: float, lambda_lb: float):
    """``lambda_cos * L_cos + lambda_lb * L_lb`` on a batch and its codebook gradient."""
    F = np.asarray(features, dtype=np.float64)
    l_cos, g_cos = cosine_loss(F, codebook, assignments, return_grad=True)
    total_grad = lambda_cos * g_cos
    l_lb = 0.0
    if lambda_lb > 0:
        D = similarity_matrix(F, codebook)
        l_lb, dD = load_balance_loss(D, return_grad=True)
        total_grad = total_grad + lambda_lb * _similarity_backward(F, codebook, dD)
    return lambda_cos * l_cos + lambda_lb * l_lb, l_cos, l_lb, total_grad


def utilization_entropy(counts: np.ndarray) -> float:
    """Shannon entropy (nats) of a utilization histogram."""
    p = np.asarray(counts, dtype=np.float64)
    p = p[p > 0] / p.sum()
    return float(-(p * np.log(p)).sum())


def fit_codebook(feature_maps: list, config: QuantizerConfig, d_clip: int | None = None,
                 d_dino: int | None = None):
    """Optimize a codebook on all pixels of ``feature_maps``.

    Returns ``(codebook, index_maps, report)``. Entries start at ``n_codes``
    randomly chosen distinct features, or at every distinct feature padded
    with random pixels when there are fewer than ``n_codes``. Every epoch re-assigns all pixels, then
    runs Adam over shuffled mini-batches and renormalizes both entry parts
    after each step.
    """
    from .optim import Adam

    if not feature_maps:
        raise ValueError("fit_codebook needs at least one feature map")
    first = feature_maps[0]
    if isinstance(first, HybridFeatureMap):
        d_clip, d_dino = first.d_clip, first.d_dino
        arrays = [m.data for m in feature_maps]
    else:
        if d_clip is None or d_dino is None:
            raise ValueError("d_clip and d_dino are required for raw arrays")
        arrays = [np.asarray(m) for m in feature_maps]
    d = d_clip + d_dino
    shapes = [a.shape[:-1] for a in arrays]
    X = np.concatenate([a.reshape(-1, d) for a in arrays]).astype(np.float64)
    total = len(X)
    N = config.n_codes
    if N > total:
        raise ValueError(f"codebook size N={N} exceeds the pixel count {total}")

    rng = np.random.default_rng(config.seed)
    # distinct feature vectors, not just distinct pixels, so no two entries start equal
    _, first_idx = np.unique(X, axis=0, return_index=True)
    pool = np.sort(first_idx)
    if len(pool) >= N:
        pick = rng.choice(pool, size=N, replace=False)
    else:
        # every distinct feature gets an entry; duplicates fill the rest
        rest = rng.choice(np.setdiff1d(np.arange(total), pool), size=N - len(pool), replace=False)
        pick = np.concatenate([pool, rest])
    codebook = Codebook(normalize_parts(X[np.sort(pick)], d_clip), d_clip, d_dino, config.lambda_dino)
    opt = Adam([codebook.entries], lr=config.learning_rate)
    report = FitReport()

    for epoch in range(config.epochs):
        assignments = assign_many(X, codebook)
        perm = rng.permutation(total)
        sums = np.zeros(3)
        n_batches = 0
        for s in range(0, total, config.batch_pixels):
            idx = perm[s:s + config.batch_pixels]
            loss, l_cos, l_lb, grad = quantization_loss(X[idx], codebook, assignments[idx],
                                                        config.lambda_cos, config.lambda_lb)
            opt.step([grad])
            codebook.entries[:] = normalize_parts(codebook.entries, d_clip)
            sums += (loss, l_cos, l_lb)
            n_batches += 1
        counts = np.bincount(assignments, minlength=N)
        report.utilization.append(counts)
        mean = sums / n_batches
        report.losses.append({"epoch": epoch, "loss": mean[0], "cos": mean[1], "lb": mean[2],
                              "entropy": utilization_entropy(counts)})
        log.info("quantize epoch %d loss %.5f cos %.5f lb %.5f", epoch, *mean)

    final = assign_many(X, codebook)
    counts = np.bincount(final, minlength=N)
    report.utilization.append(counts)
    report.losses.append({"epoch": config.epochs, "loss": float("nan"),
                          "cos": cosine_loss(X, codebook, final), "lb": float("nan"),
                          "entropy": utilization_entropy(counts)})
    index_maps = []
    start = 0
    for shp in shapes:
        size = int(np.prod(shp))
        index_maps.append(final[start:start + size].reshape(shp))
        start += size
    return codebook, index_maps, report
