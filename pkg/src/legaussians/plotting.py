"""Report figures rendered to files with the Agg backend."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings so reruns produce identical bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_loss_curves(history: list[dict], path, keys=("rgb", "ce", "u", "smo")):
    fig, ax = plt.subplots(figsize=(6, 4))
    its = np.array([r["iteration"] for r in history])
    for k in keys:
        vals = np.array([r.get(k, np.nan) for r in history], dtype=float)
        if np.isfinite(vals).any():
            ax.plot(its, vals, label=k, lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    return _save(fig, path)


def plot_quantizer(report, path):
    """Per-epoch loss and final codebook utilization."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    rows = [r for r in report.losses if np.isfinite(r["loss"])]
    a.plot([r["epoch"] for r in rows], [r["cos"] for r in rows], label="cosine")
    a.plot([r["epoch"] for r in rows], [r["lb"] for r in rows], label="load balance")
    a.set_xlabel("epoch")
    a.legend()
    counts = np.asarray(report.utilization[-1])
    b.bar(np.arange(len(counts)), counts / max(counts.sum(), 1))
    b.set_xlabel("codebook entry")
    b.set_ylabel("pixel fraction")
    return _save(fig, path)


def plot_metric_bars(row: dict, path, columns=("mPA", "mP", "mIoU", "mAP")):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(list(columns), [row[c] for c in columns], color="tab:blue")
    ax.set_ylim(0, 1)
    for i, c in enumerate(columns):
        ax.text(i, row[c] + 0.02, f"{row[c]:.3f}", ha="center")
    ax.set_title(f"PSNR {row['PSNR']:.2f} dB  SSIM {row['SSIM']:.3f}")
    return _save(fig, path)


def plot_bench(times_ms: np.ndarray, path, budget_ms: float | None = None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(times_ms)), times_ms, marker=".", lw=1)
    ax.axhline(np.median(times_ms), color="k", ls="--", label=f"median {np.median(times_ms):.1f} ms")
    if budget_ms is not None:
        ax.axhline(budget_ms, color="r", ls=":", label=f"budget {budget_ms:.0f} ms")
    ax.set_xlabel("frame")
    ax.set_ylabel("ms")
    ax.legend()
    return _save(fig, path)


def plot_image_grid(images: list[np.ndarray], titles: list[str], path, cols: int = 4):
    rows = max(1, -(-len(images) // cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.5 * cols, 2.5 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, img, t in zip(axes.ravel(), images, titles):
        ax.imshow(img)
        ax.set_title(t, fontsize=8)
    return _save(fig, path)
