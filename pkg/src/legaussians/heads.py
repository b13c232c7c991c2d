"""Per-pixel semantic decoder and coordinate smoothing MLP.

Both heads are plain dense/ReLU stacks with hand-written reverse mode. The
decoder's 1x1 convolutions are per-pixel dense layers. ReLU uses subgradient
0 at exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DECODER_HIDDEN = (128, 256)
SMOOTH_HIDDEN = (128, 128, 128)


def positional_encode(p: np.ndarray, n_freqs: int) -> np.ndarray:
    """NeRF-style encoding ``[p, sin(2^0 pi p), cos(2^0 pi p), ...]``.

    Works on a single 3-vector or a batch ``(n, 3)``; ``n_freqs == 0``
    returns ``p`` unchanged.
    """
    p = np.asarray(p)
    parts = [p]
    for k in range(n_freqs):
        arg = (2.0 ** k) * np.pi * p
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


def _positional_encode_backward(p: np.ndarray, n_freqs: int, grad: np.ndarray) -> np.ndarray:
    d = p.shape[-1]
    out = grad[..., :d].copy()
    for k in range(n_freqs):
        scale = (2.0 ** k) * np.pi
        arg = scale * p
        g_sin = grad[..., d * (1 + 2 * k):d * (2 + 2 * k)]
        g_cos = grad[..., d * (2 + 2 * k):d * (3 + 2 * k)]
        out += scale * (g_sin * np.cos(arg) - g_cos * np.sin(arg))
    return out


@dataclass
class MLP:
    """Dense stack; ReLU on every layer but the last.

    Weights are stored ``(out, in)``. ``pe_frequencies`` is ``None`` for a
    plain MLP, otherwise inputs are positionally encoded first.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    pe_frequencies: int | None = None

    @property
    def in_features(self) -> int:
        n = self.weights[0].shape[1]
        return n if self.pe_frequencies is None else n // (1 + 2 * self.pe_frequencies)

    @property
    def out_features(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.pe_frequencies)

    def astype(self, dtype) -> "MLP":
        return MLP([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases],
                   self.pe_frequencies)

    def forward(self, x: np.ndarray):
        """Returns ``(output, cache)`` for a batch ``(n, in_features)``."""
        if x.shape[-1] != self.in_features:
            raise ValueError(f"MLP expects {self.in_features} input features, got {x.shape[-1]}")
        h = x if self.pe_frequencies is None else positional_encode(x, self.pe_frequencies)
        cache = [x, h]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T + b
            if i < last:
                h = np.maximum(h, 0)
            cache.append(h)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        """Reverse mode through the cached forward.

        Returns ``(weight_grads, bias_grads, input_grad)``.
        """
        x, acts = cache[0], cache[1:]
        g = grad_out
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last:
                g = g * (acts[i + 1] > 0)
            gw[i] = g.T @ acts[i]
            gb[i] = g.sum(axis=0)
            g = g @ self.weights[i]
        if self.pe_frequencies is not None:
            g = _positional_encode_backward(x, self.pe_frequencies, g)
        return gw, gb, g


def init_mlp(sizes, rng: np.random.Generator, pe_frequencies=None, dtype=np.float32) -> MLP:
    """He-uniform weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MLP(weights, biases, pe_frequencies)


def init_decoder(n_codes: int, rng: np.random.Generator, semantic_dim: int = 8, dtype=np.float32) -> MLP:
    return init_mlp([semantic_dim, *DECODER_HIDDEN, n_codes], rng, dtype=dtype)


def init_smoothing_mlp(rng: np.random.Generator, semantic_dim: int = 8, pe_frequencies: int = 0,
                       dtype=np.float32) -> MLP:
    return init_mlp([3 + 6 * pe_frequencies, *SMOOTH_HIDDEN, semantic_dim], rng,
                    pe_frequencies=pe_frequencies, dtype=dtype)


def decoder_forward(decoder: MLP, features: np.ndarray):
    """Logits ``(H, W, N)`` for a rendered semantic map ``(H, W, d_s)``.

    Softmax is left to callers. Returns ``(logits, cache)``.
    """
    H, W, d = features.shape
    if d != decoder.in_features:
        raise ValueError(f"decoder expects {decoder.in_features} channels, got {d}")
    logits, cache = decoder.forward(features.reshape(H * W, d))
    return logits.reshape(H, W, -1), cache


def smoothing_forward(mlp: MLP, positions: np.ndarray):
    """Smoothed per-Gaussian features for ``(n, 3)`` positions."""
    return mlp.forward(np.asarray(positions))


def heads_backward(head: MLP, cache, upstream: np.ndarray):
    """Weight and input gradients of either head.

    ``upstream`` may be shaped like the head output of ``decoder_forward``
    (``(H, W, N)``); the input gradient is returned in the matching shape.
    """
    n_rows = cache[0].shape[0]
    g = upstream.reshape(n_rows, -1)
    gw, gb, gx = head.backward(cache, g)
    if upstream.ndim == 3:
        gx = gx.reshape(upstream.shape[0], upstream.shape[1], -1)
    return gw, gb, gx
