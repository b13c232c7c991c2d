"""Finite-difference harnesses shared by the unit and acceptance suites.

Each ``check_*`` runs ``n`` accepted random float64 configurations and
returns ``(worst relative error, rejected count)``. Configurations whose
evaluation point sits within a small margin of a kink (3-sigma cutoff,
alpha clamp, transmittance stop, ReLU zero, argmax tie) are redrawn,
because a central difference straddling a kink is not a derivative.
"""

from __future__ import annotations

import numpy as np

from legaussians.heads import MLP, heads_backward, init_mlp
from legaussians.losses import rgb_loss, semantic_ce_loss, smoothing_loss, ssim, uncertainty_reg
from legaussians.quantizer import Codebook, cosine_loss, normalize_parts, quantization_loss, similarity_matrix
from legaussians.rasterizer import rasterize, rasterize_backward
from legaussians.scene import GaussianCloud

from oracles import brute_force_render, central_difference, random_camera, random_cloud, rel_err

H_STEP = 1e-6
TOL = 1e-4


def _draw(rng, n, make, accept, max_tries=50):
    """Yield ``n`` accepted configurations, counting rejections."""
    rejected = 0
    got = 0
    while got < n:
        cfg = make(rng)
        if accept(cfg):
            got += 1
            yield cfg, rejected
        else:
            rejected += 1
            if rejected > max_tries * n:
                raise RuntimeError("rejection rate too high")


def check_rasterizer(n, seed=0, size=8, isolate=False):
    rng = np.random.default_rng(seed)
    bg = np.array([0.1, 0.2, 0.3])
    worst, rejected = 0.0, 0

    def make(rng):
        k = int(rng.integers(1, 7))
        hi = 6.0 if rng.random() < 0.3 else 2.5  # sometimes exercise the 0.99 clamp
        cloud = random_cloud(rng, k, opacity=(-1.0, hi))
        cam = random_camera(rng, size, size)
        return cloud, cam

    def accept(cfg):
        m = brute_force_render(cfg[0], cfg[1], bg)["margins"]
        return m["power"] > 1e-2 and m["alpha"] > 1e-3 and m["T"] > 1e-2

    for (cloud, cam), rejected in _draw(rng, n, make, accept):
        ups = {"d_color": rng.normal(size=(size, size, 3)),
               "d_semantic": rng.normal(size=(size, size, cloud.semantic_dim)),
               "d_uncertainty": rng.normal(size=(size, size)),
               "d_alpha": rng.normal(size=(size, size)),
               "d_depth": rng.normal(size=(size, size))}

        def loss():
            o = rasterize(cloud, cam, bg)
            return float((o.color * ups["d_color"]).sum() + (o.semantic * ups["d_semantic"]).sum()
                         + (o.uncertainty * ups["d_uncertainty"]).sum() + (o.alpha * ups["d_alpha"]).sum()
                         + (o.depth * ups["d_depth"]).sum())

        out = rasterize(cloud, cam, bg)
        g = rasterize_backward(cloud, cam, bg, out, **ups, isolate_semantics=isolate)
        arrays = [getattr(cloud, p) for p in GaussianCloud.PARAMS]
        fd = central_difference(loss, arrays, H_STEP)
        for p, num in zip(GaussianCloud.PARAMS, fd):
            worst = max(worst, rel_err(getattr(g, p), num, floor=1e-7))
    return worst, rejected


def small_head(rng, sizes, pe=None):
    m = init_mlp(sizes, rng, pe_frequencies=pe, dtype=np.float64)
    for b in m.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    return m


def check_heads(n, seed=0):
    """Decoder-shaped (H, W, d) and smoothing-shaped (n, 3) with positional encoding."""
    rng = np.random.default_rng(seed)
    worst, rejected = 0.0, 0

    def make(rng):
        if rng.random() < 0.5:
            head = small_head(rng, [8, 12, 10, 6])
            x = rng.normal(size=(3, 3, 8))
        else:
            head = small_head(rng, [3 * (1 + 2 * 2), 10, 10, 8], pe=2)
            x = rng.uniform(-1, 1, size=(5, 3))
        return head, x

    def accept(cfg):
        head, x = cfg
        _, cache = head.forward(x.reshape(-1, x.shape[-1]))
        pre = []
        h = cache[1]
        for W, b in zip(head.weights[:-1], head.biases[:-1]):
            z = h @ W.T + b
            pre.append(np.abs(z).min())
            h = np.maximum(z, 0)
        return min(pre) > 1e-4

    for (head, x), rejected in _draw(rng, n, make, accept):
        flat = x.reshape(-1, x.shape[-1])
        up = rng.normal(size=(len(flat), head.out_features))
        up_shaped = up.reshape(*x.shape[:-1], -1)

        def loss():
            return float((head(x.reshape(-1, x.shape[-1])) * up).sum())

        _, cache = head.forward(flat)
        gw, gb, gx = heads_backward(head, cache, up_shaped)
        fd = central_difference(loss, head.params() + [x], H_STEP)
        analytic = [a for pair in zip(gw, gb) for a in pair] + [gx]
        for a, num in zip(analytic, fd):
            worst = max(worst, rel_err(a, num, floor=1e-7))
    return worst, rejected


def check_cosine_loss(n, seed=0):
    """Cosine quantization loss (codebook gradient) and the load-balance term."""
    rng = np.random.default_rng(seed)
    worst, rejected = 0.0, 0

    def make(rng):
        dc, dd, N, K = int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(2, 6)), 12
        F = normalize_parts(rng.normal(size=(K, dc + dd)), dc)
        cb = Codebook(rng.normal(size=(N, dc + dd)), dc, dd, float(rng.uniform(0, 1)))
        return F, cb

    def accept(cfg):
        F, cb = cfg
        D = np.sort(similarity_matrix(F, cb), axis=1)
        return D.shape[1] < 2 or np.min(D[:, -1] - D[:, -2]) > 1e-4

    for (F, cb), rejected in _draw(rng, n, make, accept):
        a = np.argmax(similarity_matrix(F, cb), axis=1)
        _, g = cosine_loss(F, cb, a, return_grad=True)
        num, = central_difference(lambda: cosine_loss(F, cb, a), [cb.entries], H_STEP)
        worst = max(worst, rel_err(g, num, floor=1e-7))
        _, _, _, gq = quantization_loss(F, cb, a, 1.0, 0.5)
        num, = central_difference(lambda: quantization_loss(F, cb, a, 1.0, 0.5)[0], [cb.entries], H_STEP)
        worst = max(worst, rel_err(gq, num, floor=1e-7))
    return worst, rejected


def check_ce_loss(n, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        H, W, N = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(2, 7))
        logits = rng.normal(scale=2, size=(H, W, N))
        t = rng.integers(0, N, size=(H, W))
        u = rng.uniform(0, 1, size=(H, W))
        _, dl, du = semantic_ce_loss(logits, t, u)
        nl, nu = central_difference(lambda: semantic_ce_loss(logits, t, u)[0], [logits, u], H_STEP)
        worst = max(worst, rel_err(dl, nl, floor=1e-7), rel_err(du, nu, floor=1e-7))
    return worst, 0


def check_uncertainty_reg(n, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        u = rng.uniform(0, 1, size=tuple(rng.integers(1, 6, size=2)))
        _, du = uncertainty_reg(u)
        num, = central_difference(lambda: uncertainty_reg(u)[0], [u], H_STEP)
        worst = max(worst, rel_err(du, num, floor=1e-7))
    return worst, 0


def check_smoothing_loss(n, seed=0):
    """Each stop-gradient term is differentiated against the variable it trains."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        k, d = int(rng.integers(1, 8)), int(rng.integers(1, 9))
        s_mlp, s_g = rng.normal(size=(k, d)), rng.normal(size=(k, d))
        u = rng.uniform(0, 1, size=k)
        w_s = float(rng.uniform(0, 1))
        _, d_mlp, d_g = smoothing_loss(s_mlp, s_g, u, w_s)
        w = np.maximum(u, w_s)
        term1 = lambda: float(np.linalg.norm(s_mlp - s_g, axis=1).mean())
        term2 = lambda: float((w * np.linalg.norm(s_mlp - s_g, axis=1)).mean())
        num_mlp, = central_difference(term1, [s_mlp], H_STEP)
        num_g, = central_difference(term2, [s_g], H_STEP)
        worst = max(worst, rel_err(d_mlp, num_mlp, floor=1e-7), rel_err(d_g, num_g, floor=1e-7))
    return worst, 0


def check_rgb_loss(n, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        H, W = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        r, t = rng.uniform(0, 1, (H, W, 3)), rng.uniform(0, 1, (H, W, 3))
        w = float(rng.uniform(0, 1))
        _, g = rgb_loss(r, t, w)
        num, = central_difference(lambda: rgb_loss(r, t, w)[0], [r], H_STEP)
        _, gs = ssim(r, t, return_grad=True)
        num_s, = central_difference(lambda: ssim(r, t), [r], H_STEP)
        worst = max(worst, rel_err(g, num, floor=1e-7), rel_err(gs, num_s, floor=1e-7))
    return worst, 0


SUITES = {
    "rasterize_backward": check_rasterizer,
    "heads_backward": check_heads,
    "cosine_loss": check_cosine_loss,
    "semantic_ce_loss": check_ce_loss,
    "uncertainty_reg": check_uncertainty_reg,
    "smoothing_loss": check_smoothing_loss,
    "rgb_loss": check_rgb_loss,
}
