"""Training losses. Every function returns ``(value, gradients...)``."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DSSIM_WEIGHT = 0.2


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def semantic_ce_loss(logits: np.ndarray, targets: np.ndarray, u_map: np.ndarray):
    """Uncertainty-weighted cross entropy, mean over pixels of ``CE * (1 - u)``.

    Returns ``(loss, d_logits, d_u)``.
    """
    H, W, N = logits.shape
    logp = _log_softmax(logits.astype(np.float64))
    t = np.asarray(targets).reshape(H, W)
    ce = -np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    weight = 1.0 - u_map.astype(np.float64).reshape(H, W)
    n = H * W
    loss = float(np.sum(ce * weight) / n)
    d_logits = np.exp(logp)
    d_logits[np.arange(H)[:, None], np.arange(W)[None, :], t] -= 1.0
    d_logits *= weight[..., None] / n
    d_u = -ce / n
    return loss, d_logits, d_u


def uncertainty_reg(u_map: np.ndarray):
    """Mean rendered uncertainty; returns ``(loss, d_u)``."""
    u = np.asarray(u_map, dtype=np.float64)
    return float(u.mean()), np.full(u.shape, 1.0 / u.size)


def _norm_and_grad(x: np.ndarray):
    n = np.linalg.norm(x, axis=1)
    safe = np.where(n > 0, n, 1.0)
    # subgradient 0 at x == 0
    return n, np.where(n[:, None] > 0, x / safe[:, None], 0.0)


def smoothing_loss(s_mlp: np.ndarray, s_g: np.ndarray, u: np.ndarray, w_s: float = 0.1):
    """Adaptive smoothing loss with stop-gradients, mean over Gaussians.

    ``|s_mlp - sg(s_g)| + max(sg(u), w_s) * |sg(s_mlp) - s_g|``. The first
    term only trains the MLP, the second only moves the Gaussian features.
    Returns ``(loss, d_s_mlp, d_s_g)``.
    """
    n = len(s_g)
    if len(s_mlp) != n or len(u) != n:
        raise ValueError("smoothing_loss inputs differ in length")
    if n == 0:
        return 0.0, np.zeros_like(s_mlp), np.zeros_like(s_g)
    diff = s_mlp.astype(np.float64) - s_g.astype(np.float64)
    dist, unit = _norm_and_grad(diff)
    weight = np.maximum(np.asarray(u, dtype=np.float64), w_s)
    loss = float(np.mean(dist + weight * dist))
    d_mlp = unit / n
    d_g = -weight[:, None] * unit / n
    return loss, d_mlp, d_g


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # zero-padded 'same' filtering; self-adjoint because the window is symmetric
    out = correlate1d(img, g, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, g, axis=1, mode="constant", cval=0.0)


def ssim(x: np.ndarray, y: np.ndarray, return_grad: bool = False):
    """Mean SSIM over pixels and channels, 11x11 Gaussian window (sigma 1.5),
    zero padding; optional gradient w.r.t. ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image size mismatch: {x.shape} vs {y.shape}")
    g = gaussian_window()
    mx, my = _blur(x, g), _blur(y, g)
    exx, eyy, exy = _blur(x * x, g), _blur(y * y, g), _blur(x * y, g)
    vx, vy, cxy = exx - mx * mx, eyy - my * my, exy - mx * my
    A1 = 2 * mx * my + SSIM_C1
    A2 = 2 * cxy + SSIM_C2
    B1 = mx * mx + my * my + SSIM_C1
    B2 = vx + vy + SSIM_C2
    smap = (A1 * A2) / (B1 * B2)
    value = float(smap.mean())
    if not return_grad:
        return value
    up = 1.0 / smap.size
    d_mx = up * ((2 * my * A2 - 2 * my * A1) / (B1 * B2) - smap * (2 * mx / B1 - 2 * mx / B2))
    d_exx = up * (-smap / B2)
    d_exy = up * (2 * A1 / (B1 * B2))
    grad = _blur(d_mx, g) + 2 * x * _blur(d_exx, g) + y * _blur(d_exy, g)
    return value, grad


def rgb_loss(render: np.ndarray, gt: np.ndarray, dssim_weight: float = DSSIM_WEIGHT):
    """``(1 - w) L1 + w (1 - SSIM)``; returns ``(loss, d_render)``."""
    r = np.asarray(render, dtype=np.float64)
    t = np.asarray(gt, dtype=np.float64)
    if r.shape != t.shape:
        raise ValueError(f"image size mismatch: {r.shape} vs {t.shape}")
    l1 = float(np.abs(r - t).mean())
    s, ds = ssim(r, t, return_grad=True)
    loss = (1 - dssim_weight) * l1 + dssim_weight * (1 - s)
    grad = (1 - dssim_weight) * np.sign(r - t) / r.size - dssim_weight * ds
    return loss, grad
