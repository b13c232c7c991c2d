"""Tile-based differentiable rasterization of color, semantics, uncertainty,
alpha and depth.

Gaussians are depth-sorted once per frame (ties broken by index) and binned
into square tiles. Each pixel blends its tile's list front to back. A splat
contributes to a pixel only inside its 3-sigma ellipse, which is contained in
the bounding square used for binning, so the image does not depend on the
tile size. Parallel loops run over tiles (forward and backward) or over
Gaussians (projection); the backward pass writes one gradient row per
(tile, Gaussian) entry and reduces the rows serially in entry order, so
results are bit-identical for any thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .scene import Camera, GaussianCloud, RenderGaussians, materialize, materialize_backward

TILE_SIZE = 16
ALPHA_MAX = 0.99
T_MIN = 1e-4
DILATION = 0.3
# exponent below which a splat is ignored (Mahalanobis distance > 3)
POWER_CUTOFF = -4.5


@dataclass
class Projection:
    means2d: np.ndarray   # (n, 2) px
    conics: np.ndarray    # (n, 3) inverse 2D covariance (a, b, c)
    cov2d: np.ndarray     # (n, 3) dilated 2D covariance (A, B, C)
    depths: np.ndarray    # (n,) camera-space z
    rects: np.ndarray     # (n, 4) inclusive pixel bounds x0, x1, y0, y1
    visible: np.ndarray   # (n,) bool


@dataclass
class RasterState:
    rg: RenderGaussians
    proj: Projection
    tile_size: int
    offsets: np.ndarray
    ids: np.ndarray
    final_T: np.ndarray
    n_contrib: np.ndarray


@dataclass
class RenderOutput:
    color: np.ndarray        # (H, W, 3)
    semantic: np.ndarray     # (H, W, d_s)
    uncertainty: np.ndarray  # (H, W)
    alpha: np.ndarray        # (H, W)
    depth: np.ndarray        # (H, W) sum of w_k z_k
    state: RasterState | None = None


@dataclass
class GaussianGrads:
    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_raw: np.ndarray
    colors: np.ndarray
    semantics: np.ndarray
    uncertainty_raw: np.ndarray
    means2d: np.ndarray  # screen-space gradient, used for densification stats

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in GaussianCloud.PARAMS}


@njit(parallel=True, cache=True)
def _project_kernel(pos, cov, Rc, tc, fx, fy, cx, cy, width, height, near, far,
                    means2d, conics, cov2d, depths, rects, visible):
    n = pos.shape[0]
    for i in prange(n):
        tx = Rc[0, 0] * pos[i, 0] + Rc[0, 1] * pos[i, 1] + Rc[0, 2] * pos[i, 2] + tc[0]
        ty = Rc[1, 0] * pos[i, 0] + Rc[1, 1] * pos[i, 1] + Rc[1, 2] * pos[i, 2] + tc[1]
        tz = Rc[2, 0] * pos[i, 0] + Rc[2, 1] * pos[i, 1] + Rc[2, 2] * pos[i, 2] + tc[2]
        depths[i] = tz
        visible[i] = False
        if tz <= near or tz >= far:
            continue
        u = fx * tx / tz + cx
        v = fy * ty / tz + cy
        j00 = fx / tz
        j02 = -fx * tx / (tz * tz)
        j11 = fy / tz
        j12 = -fy * ty / (tz * tz)
        t0 = np.empty(3)
        t1 = np.empty(3)
        for k in range(3):
            t0[k] = j00 * Rc[0, k] + j02 * Rc[2, k]
            t1[k] = j11 * Rc[1, k] + j12 * Rc[2, k]
        A = 0.0
        B = 0.0
        C = 0.0
        for j in range(3):
            for k in range(3):
                s = cov[i, j, k]
                A += t0[j] * s * t0[k]
                B += t0[j] * s * t1[k]
                C += t1[j] * s * t1[k]
        A += DILATION
        C += DILATION
        det = A * C - B * B
        if det <= 0.0:
            continue
        mid = 0.5 * (A + C)
        lam = mid + math.sqrt(max(0.0, mid * mid - det))
        r = 3.0 * math.sqrt(lam)
        x0 = max(0, int(math.ceil(u - r)))
        x1 = min(width - 1, int(math.floor(u + r)))
        y0 = max(0, int(math.ceil(v - r)))
        y1 = min(height - 1, int(math.floor(v + r)))
        if x0 > x1 or y0 > y1:
            continue
        means2d[i, 0] = u
        means2d[i, 1] = v
        cov2d[i, 0] = A
        cov2d[i, 1] = B
        cov2d[i, 2] = C
        conics[i, 0] = C / det
        conics[i, 1] = -B / det
        conics[i, 2] = A / det
        rects[i, 0] = x0
        rects[i, 1] = x1
        rects[i, 2] = y0
        rects[i, 3] = y1
        visible[i] = True


@njit(cache=True)
def _bin_tiles(order, rects, tile, ntx, nty):
    counts = np.zeros(ntx * nty + 1, dtype=np.int64)
    for g in order:
        for ty in range(rects[g, 2] // tile, rects[g, 3] // tile + 1):
            for tx in range(rects[g, 0] // tile, rects[g, 1] // tile + 1):
                counts[ty * ntx + tx + 1] += 1
    offsets = np.cumsum(counts)
    ids = np.empty(offsets[-1], dtype=np.int64)
    cursor = offsets[:-1].copy()
    for g in order:
        for ty in range(rects[g, 2] // tile, rects[g, 3] // tile + 1):
            for tx in range(rects[g, 0] // tile, rects[g, 1] // tile + 1):
                t = ty * ntx + tx
                ids[cursor[t]] = g
                cursor[t] += 1
    return offsets, ids


@njit(parallel=True, cache=True)
def _forward_kernel(offsets, ids, means2d, conics, opac, colors, sem, unc, depths,
                    width, height, tile, ntx, bg,
                    out_color, out_sem, out_unc, out_alpha, out_depth, final_T, n_contrib):
    n_tiles = offsets.shape[0] - 1
    ds = sem.shape[1]
    for t in prange(n_tiles):
        ty = t // ntx
        tx = t - ty * ntx
        start = offsets[t]
        end = offsets[t + 1]
        acc_s = np.empty(ds)
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                for k in range(ds):
                    acc_s[k] = 0.0
                au = 0.0
                ad = 0.0
                count = 0
                for j in range(start, end):
                    g = ids[j]
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    power = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) \
                        - conics[g, 1] * dx * dy
                    if power < POWER_CUTOFF:
                        continue
                    alpha = min(ALPHA_MAX, opac[g] * math.exp(power))
                    w = alpha * T
                    c0 += w * colors[g, 0]
                    c1 += w * colors[g, 1]
                    c2 += w * colors[g, 2]
                    for k in range(ds):
                        acc_s[k] += w * sem[g, k]
                    au += w * unc[g]
                    ad += w * depths[g]
                    T = T * (1.0 - alpha)
                    count = j - start + 1
                    if T < T_MIN:
                        break
                out_color[py, px, 0] = c0 + T * bg[0]
                out_color[py, px, 1] = c1 + T * bg[1]
                out_color[py, px, 2] = c2 + T * bg[2]
                for k in range(ds):
                    out_sem[py, px, k] = acc_s[k]
                out_unc[py, px] = au
                out_alpha[py, px] = 1.0 - T
                out_depth[py, px] = ad
                final_T[py, px] = T
                n_contrib[py, px] = count


@njit(parallel=True, cache=True)
def _backward_kernel(offsets, ids, means2d, conics, opac, colors, sem, unc, depths,
                     width, height, tile, ntx, bg, final_T, n_contrib,
                     g_color, g_sem, g_unc, g_alpha, g_depth, isolate, entry_grads):
    n_tiles = offsets.shape[0] - 1
    ds = sem.shape[1]
    for t in prange(n_tiles):
        ty = t // ntx
        tx = t - ty * ntx
        start = offsets[t]
        S_s = np.empty(ds)
        for py in range(ty * tile, min(height, (ty + 1) * tile)):
            for px in range(tx * tile, min(width, (tx + 1) * tile)):
                T_fin = final_T[py, px]
                T = T_fin
                gc0 = g_color[py, px, 0]
                gc1 = g_color[py, px, 1]
                gc2 = g_color[py, px, 2]
                gu = g_unc[py, px]
                ga = g_alpha[py, px]
                gd = g_depth[py, px]
                S_c0 = T_fin * bg[0]
                S_c1 = T_fin * bg[1]
                S_c2 = T_fin * bg[2]
                for k in range(ds):
                    S_s[k] = 0.0
                S_u = 0.0
                S_d = 0.0
                for j in range(start + n_contrib[py, px] - 1, start - 1, -1):
                    g = ids[j]
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    power = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) \
                        - conics[g, 1] * dx * dy
                    if power < POWER_CUTOFF:
                        continue
                    G = math.exp(power)
                    a_raw = opac[g] * G
                    alpha = min(ALPHA_MAX, a_raw)
                    one_m = 1.0 - alpha
                    T = T / one_m
                    w = alpha * T
                    row = entry_grads[j]
                    row[6] += w * gc0
                    row[7] += w * gc1
                    row[8] += w * gc2
                    for k in range(ds):
                        row[9 + k] += w * g_sem[py, px, k]
                    row[9 + ds] += w * gu
                    row[10 + ds] += w * gd

                    d_alpha = gc0 * (T * colors[g, 0] - S_c0 / one_m) \
                        + gc1 * (T * colors[g, 1] - S_c1 / one_m) \
                        + gc2 * (T * colors[g, 2] - S_c2 / one_m) \
                        + ga * T_fin / one_m \
                        + gd * (T * depths[g] - S_d / one_m)
                    if not isolate:
                        for k in range(ds):
                            d_alpha += g_sem[py, px, k] * (T * sem[g, k] - S_s[k] / one_m)
                        d_alpha += gu * (T * unc[g] - S_u / one_m)

                    S_c0 += w * colors[g, 0]
                    S_c1 += w * colors[g, 1]
                    S_c2 += w * colors[g, 2]
                    for k in range(ds):
                        S_s[k] += w * sem[g, k]
                    S_u += w * unc[g]
                    S_d += w * depths[g]

                    if a_raw < ALPHA_MAX:
                        row[5] += G * d_alpha
                        d_pow = a_raw * d_alpha
                        a = conics[g, 0]
                        b = conics[g, 1]
                        c = conics[g, 2]
                        row[0] += d_pow * (a * dx + b * dy)
                        row[1] += d_pow * (b * dx + c * dy)
                        row[2] += d_pow * (-0.5 * dx * dx)
                        row[3] += d_pow * (-dx * dy)
                        row[4] += d_pow * (-0.5 * dy * dy)


@njit(cache=True)
def _reduce_entries(ids, entry_grads, n):
    out = np.zeros((n, entry_grads.shape[1]))
    for j in range(ids.shape[0]):
        g = ids[j]
        for k in range(entry_grads.shape[1]):
            out[g, k] += entry_grads[j, k]
    return out


def project(rg: RenderGaussians, cam: Camera) -> Projection:
    """Perspective projection with the EWA affine approximation.

    cov2d = J W Sigma W^T J^T + 0.3 I; splats behind the near plane or whose
    3-sigma square misses the frame are marked invisible.
    """
    n = len(rg)
    means2d = np.zeros((n, 2))
    conics = np.zeros((n, 3))
    cov2d = np.zeros((n, 3))
    depths = np.zeros(n)
    rects = np.zeros((n, 4), dtype=np.int64)
    visible = np.zeros(n, dtype=np.bool_)
    if n:
        _project_kernel(np.ascontiguousarray(rg.positions), np.ascontiguousarray(rg.covariances),
                        cam.R, cam.t, float(cam.fx), float(cam.fy), float(cam.cx), float(cam.cy),
                        int(cam.width), int(cam.height), float(cam.near), float(cam.far),
                        means2d, conics, cov2d, depths, rects, visible)
    return Projection(means2d, conics, cov2d, depths, rects, visible)


def projection_jacobian(point_cam: np.ndarray, fx: float, fy: float) -> np.ndarray:
    """2x3 Jacobian of (fx x/z + cx, fy y/z + cy) at a camera-space point."""
    x, y, z = point_cam
    return np.array([[fx / z, 0.0, -fx * x / (z * z)],
                     [0.0, fy / z, -fy * y / (z * z)]])


def depth_order(proj: Projection) -> np.ndarray:
    vis = np.flatnonzero(proj.visible)
    return vis[np.lexsort((vis, proj.depths[vis]))]


def rasterize(cloud: GaussianCloud, cam: Camera, background, tile_size: int = TILE_SIZE) -> RenderOutput:
    """Render every channel of ``cloud`` from ``cam``.

    Per pixel, splats blend front to back with weight w_k = alpha_k T_k,
    alpha_k = min(0.99, opacity * exp(-d^T conic d / 2)), stopping once the
    transmittance drops below 1e-4. Only color receives the background term.
    """
    dtype = cloud.dtype
    H, W = int(cam.height), int(cam.width)
    ds = cloud.semantic_dim
    rg = materialize(cloud)
    proj = project(rg, cam)
    order = depth_order(proj)
    ntx = -(-W // tile_size)
    nty = -(-H // tile_size)
    offsets, ids = _bin_tiles(order.astype(np.int64), proj.rects, tile_size, ntx, nty)
    bg = np.asarray(background, dtype=np.float64).reshape(3)

    out = RenderOutput(
        color=np.empty((H, W, 3), dtype=dtype),
        semantic=np.empty((H, W, ds), dtype=dtype),
        uncertainty=np.empty((H, W), dtype=dtype),
        alpha=np.empty((H, W), dtype=dtype),
        depth=np.empty((H, W), dtype=dtype),
    )
    final_T = np.empty((H, W))
    n_contrib = np.empty((H, W), dtype=np.int64)
    _forward_kernel(offsets, ids, proj.means2d, proj.conics, rg.opacities, rg.colors,
                    rg.semantics, rg.uncertainty, proj.depths, W, H, tile_size, ntx, bg,
                    out.color, out.semantic, out.uncertainty, out.alpha, out.depth,
                    final_T, n_contrib)
    out.state = RasterState(rg, proj, tile_size, offsets, ids, final_T, n_contrib)
    return out


def _projection_backward(rg: RenderGaussians, cam: Camera, proj: Projection, d_mean, d_conic, d_depth):
    """Chain screen-space gradients into world position and 3D covariance."""
    n = len(rg)
    d_pos = np.zeros((n, 3))
    d_cov = np.zeros((n, 3, 3))
    vis = proj.visible
    if not vis.any():
        return d_pos, d_cov
    Rc = cam.R
    p = rg.positions[vis].astype(np.float64)
    Sigma = rg.covariances[vis].astype(np.float64)
    t = p @ Rc.T + cam.t
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    fx, fy = cam.fx, cam.fy
    j00, j02 = fx / tz, -fx * tx / tz**2
    j11, j12 = fy / tz, -fy * ty / tz**2
    T0 = j00[:, None] * Rc[0] + j02[:, None] * Rc[2]
    T1 = j11[:, None] * Rc[1] + j12[:, None] * Rc[2]

    A, B, C = proj.cov2d[vis, 0], proj.cov2d[vis, 1], proj.cov2d[vis, 2]
    det = A * C - B * B
    det2 = det * det
    ga, gb, gc = d_conic[vis, 0], d_conic[vis, 1], d_conic[vis, 2]
    dA = (-ga * C * C + gb * B * C - gc * B * B) / det2
    dC = (-ga * B * B + gb * B * A - gc * A * A) / det2
    dB = (2 * ga * B * C - gb * (A * C + B * B) + 2 * gc * A * B) / det2

    outer = lambda u, v: u[:, :, None] * v[:, None, :]
    d_cov[vis] = dA[:, None, None] * outer(T0, T0) + dB[:, None, None] * outer(T0, T1) \
        + dC[:, None, None] * outer(T1, T1)
    ST0 = np.einsum("nij,nj->ni", Sigma, T0)
    ST1 = np.einsum("nij,nj->ni", Sigma, T1)
    dT0 = 2 * dA[:, None] * ST0 + dB[:, None] * ST1
    dT1 = 2 * dC[:, None] * ST1 + dB[:, None] * ST0
    dj00 = dT0 @ Rc[0]
    dj02 = dT0 @ Rc[2]
    dj11 = dT1 @ Rc[1]
    dj12 = dT1 @ Rc[2]

    du, dv = d_mean[vis, 0], d_mean[vis, 1]
    dtx = du * fx / tz + dj02 * (-fx / tz**2)
    dty = dv * fy / tz + dj12 * (-fy / tz**2)
    dtz = (du * (-fx * tx / tz**2) + dv * (-fy * ty / tz**2) + d_depth[vis]
           + dj00 * (-fx / tz**2) + dj02 * (2 * fx * tx / tz**3)
           + dj11 * (-fy / tz**2) + dj12 * (2 * fy * ty / tz**3))
    d_pos[vis] = np.stack([dtx, dty, dtz], axis=1) @ Rc
    return d_pos, d_cov


def rasterize_backward(cloud: GaussianCloud, cam: Camera, background, out: RenderOutput,
                       d_color=None, d_semantic=None, d_uncertainty=None, d_alpha=None,
                       d_depth=None, isolate_semantics: bool = False) -> GaussianGrads:
    """Gradients of a scalar loss w.r.t. every raw Gaussian parameter.

    ``d_*`` are upstream gradients on the matching ``RenderOutput`` channels
    (``None`` means zero). With ``isolate_semantics`` the semantic and
    uncertainty channels only reach ``semantics`` and ``uncertainty_raw``;
    position, shape, opacity and color see color/alpha/depth gradients only.
    """
    st = out.state
    if st is None:
        raise ValueError("render output carries no rasterizer state")
    H, W = out.alpha.shape
    ds = cloud.semantic_dim
    n = len(cloud)
    z = lambda *s: np.zeros(s)
    f64 = lambda a, *s: z(*s) if a is None else np.ascontiguousarray(a, dtype=np.float64).reshape(s)
    gC = f64(d_color, H, W, 3)
    gS = f64(d_semantic, H, W, ds)
    gU = f64(d_uncertainty, H, W)
    gA = f64(d_alpha, H, W)
    gD = f64(d_depth, H, W)
    bg = np.asarray(background, dtype=np.float64).reshape(3)

    ntx = -(-W // st.tile_size)
    rg, proj = st.rg, st.proj
    entry = np.zeros((len(st.ids), 11 + ds))
    if len(st.ids):
        _backward_kernel(st.offsets, st.ids, proj.means2d, proj.conics, rg.opacities, rg.colors,
                         rg.semantics, rg.uncertainty, proj.depths, W, H, st.tile_size, ntx, bg,
                         st.final_T, st.n_contrib, gC, gS, gU, gA, gD, bool(isolate_semantics), entry)
    g2 = _reduce_entries(st.ids, entry, n)

    d_mean = g2[:, 0:2]
    d_pos, d_cov = _projection_backward(rg, cam, proj, d_mean, g2[:, 2:5], g2[:, 10 + ds])
    d_rot, d_logs, d_op, d_unc = materialize_backward(cloud, rg, d_cov, g2[:, 5], g2[:, 9 + ds])
    dt = cloud.dtype
    return GaussianGrads(
        positions=d_pos.astype(dt),
        rotations=d_rot.astype(dt),
        log_scales=d_logs.astype(dt),
        opacity_raw=d_op.astype(dt),
        colors=g2[:, 6:9].astype(dt),
        semantics=g2[:, 9:9 + ds].astype(dt),
        uncertainty_raw=d_unc.astype(dt),
        means2d=d_mean.copy(),
    )
