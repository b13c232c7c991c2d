"""Command-line pipeline: gen, quantize, train, render, query, eval, bench.

Every command writes into an output directory (``--out``, or the
``LEGS_OUTPUT_DIR`` environment variable, default ``./legs_out``) and records
a ``manifest_<command>.json`` listing inputs and outputs with content hashes.
Inputs default to the files an earlier command left in the same directory.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ENV = "LEGS_OUTPUT_DIR"

log = logging.getLogger("legs")


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- manifest

def content_hash(path) -> str:
    """git blob hash (SHA-1 over ``"blob <size>\\0" + bytes``)."""
    data = Path(path).read_bytes()
    h = hashlib.sha1(b"blob %d\x00" % len(data))
    h.update(data)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command: str, argv: list[str], out_dir: Path):
        self.command = command
        self.out_dir = out_dir
        self.doc = {"command": command, "argv": list(argv), "config": {}, "seeds": {},
                    "inputs": {}, "outputs": {}, "timings": {}}
        self._t = {}

    def input(self, path):
        self.doc["inputs"][str(path)] = content_hash(path)

    def output(self, path):
        self.doc["outputs"][str(path)] = content_hash(path)
        return path

    def start(self, phase: str):
        self._t[phase] = time.perf_counter()

    def stop(self, phase: str):
        self.doc["timings"][phase] = round(time.perf_counter() - self._t.pop(phase), 4)

    def write(self) -> Path:
        from . import __version__

        self.doc["version"] = __version__
        path = self.out_dir / f"manifest_{self.command}.json"
        path.write_text(json.dumps(self.doc, indent=1, sort_keys=True))
        return path


# ---------------------------------------------------------------- helpers

def _need(path: Path, what: str, hint: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {what}: {path} ({hint})")
    return path


def _view_list(spec: str | None, count: int) -> list[int]:
    if spec is None or spec == "all":
        return list(range(count))
    try:
        views = [int(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--views expects comma-separated integers or 'all', got {spec!r}") from None
    bad = [v for v in views if not 0 <= v < count]
    if bad:
        raise ConfigError(f"view ids {bad} out of range for {count} cameras")
    return views


def _load_scene(path: Path):
    from .checkpoint import load_checkpoint
    from .oracle import SyntheticScene

    return SyntheticScene.from_checkpoint(load_checkpoint(_need(path, "scene", "run `legs gen` first")))


def _write_csv(path, rows: list[dict], fields: list[str]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def _pca_rgb(features: np.ndarray) -> np.ndarray:
    """First three principal components mapped to RGB by per-channel min-max."""
    H, W, d = features.shape
    X = features.reshape(-1, d).astype(np.float64)
    X = X - X.mean(axis=0)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    k = min(3, vt.shape[0])
    # sign convention: largest-magnitude loading of each component is positive
    comp = vt[:k] * np.where(vt[np.arange(k), np.abs(vt[:k]).argmax(axis=1)] < 0, -1.0, 1.0)[:, None]
    Y = X @ comp.T
    Y = np.concatenate([Y, np.zeros((len(Y), 3 - k))], axis=1)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    return ((Y - lo) / np.where(hi > lo, hi - lo, 1.0)).reshape(H, W, 3)


# ---------------------------------------------------------------- commands

def cmd_gen(args, man: RunManifest):
    from .checkpoint import save_checkpoint
    from .fileio import write_feature_map, write_label_png, write_rgb_png
    from .oracle import NoiseConfig, SceneSpec, extract_features, generate_scene, render_ground_truth
    from .plotting import plot_image_grid
    from .query import default_queries, save_queries

    noise = NoiseConfig(args.jitter, args.blur, args.dino_blur, list(args.inconsistent))
    bad = [i for i in noise.inconsistent_labels if not 0 <= i < args.objects]
    if bad:
        raise ConfigError(f"--inconsistent ids {bad} are not object ids (0..{args.objects - 1})")
    spec = SceneSpec(object_count=args.objects, gaussians_per_object=args.gaussians_per_object,
                     d_clip=args.d_clip, d_dino=args.d_dino, camera_count=args.cameras,
                     image_size=tuple(args.size), seed=args.seed, noise=noise)
    man.doc["config"] = {"objects": args.objects, "cameras": args.cameras, "size": list(args.size),
                         "d_clip": args.d_clip, "d_dino": args.d_dino, "noise": vars(noise)}
    man.doc["seeds"]["scene"] = args.seed

    man.start("generate")
    scene = generate_scene(spec)
    man.stop("generate")
    out = man.out_dir
    (out / "views").mkdir(exist_ok=True)
    (out / "features").mkdir(exist_ok=True)
    man.output(_save(save_checkpoint, out / "scene.leg3d", scene.to_checkpoint()))
    man.start("render_features")
    previews, titles = [], []
    for k, cam in enumerate(scene.cameras):
        rgb, labels = render_ground_truth(scene, cam)
        fmap = extract_features(scene, cam, label_map=labels)
        man.output(_save(write_rgb_png, out / "views" / f"rgb_{k:03d}.png", rgb))
        man.output(_save(write_label_png, out / "views" / f"labels_{k:03d}.png", labels))
        man.output(_save(write_feature_map, out / "features" / f"feat_{k:03d}.legfeat", fmap))
        if k < 4:
            previews += [rgb, (labels + 1) / max(1, args.objects)]
            titles += [f"view {k}", f"labels {k}"]
    man.stop("render_features")
    queries = default_queries(scene.label_clip, scene.background_clip) if args.objects else []
    man.output(_save(save_queries, out / "queries.json", queries))
    man.output(plot_image_grid(previews, titles, out / "gen_overview.png"))
    print(f"scene: {len(scene.gaussians)} gaussians, {args.objects} objects, {len(scene.cameras)} views -> {out}")


def _save(fn, path, obj):
    fn(path, obj)
    return path


def cmd_quantize(args, man: RunManifest):
    from .checkpoint import SceneCheckpoint, save_checkpoint
    from .fileio import read_feature_map, write_label_png
    from .plotting import plot_quantizer
    from .quantizer import QuantizerConfig, fit_codebook

    fdir = Path(args.features) if args.features else man.out_dir / "features"
    files = sorted(_need(fdir, "feature directory", "run `legs gen` first").glob("feat_*.legfeat"))
    if not files:
        raise ConfigError(f"no feat_*.legfeat files in {fdir}")
    maps = []
    for f in files:
        man.input(f)
        maps.append(read_feature_map(f))
    dims = {(m.d_clip, m.d_dino) for m in maps}
    if len(dims) != 1:
        raise ConfigError(f"feature maps disagree on (d_clip, d_dino): {sorted(dims)}")
    cfg = QuantizerConfig(n_codes=args.n_codes, lambda_lb=args.lambda_lb, lambda_dino=args.lambda_dino,
                          epochs=args.epochs, seed=args.seed)
    man.doc["config"] = vars(cfg)
    man.doc["seeds"]["quantizer"] = args.seed
    man.start("fit")
    codebook, index_maps, report = fit_codebook(maps, cfg)
    man.stop("fit")
    out = man.out_dir
    (out / "index").mkdir(exist_ok=True)
    man.output(_save(save_checkpoint, out / "codebook.leg3d",
                     SceneCheckpoint(codebook=codebook, meta={"quantizer": vars(cfg)})))
    for f, idx in zip(files, index_maps):
        k = f.stem.split("_")[-1]
        man.output(_save(write_label_png, out / "index" / f"index_{k}.png", idx))
    _write_csv(out / "quantizer.csv", report.losses, ["epoch", "loss", "cos", "lb", "entropy"])
    man.output(out / "quantizer.csv")
    man.output(plot_quantizer(report, out / "quantizer.png"))
    used = int((report.utilization[-1] > 0).sum())
    print(f"codebook: N={codebook.n}, {used} entries used, entropy {report.losses[-1]['entropy']:.3f}")


def cmd_train(args, man: RunManifest):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .fileio import read_label_png, read_rgb_png
    from .plotting import plot_loss_curves
    from .trainer import TrainConfig, TrainDataset, init_from_points, sample_init_points, train

    out = man.out_dir
    scene_path = Path(args.scene) if args.scene else out / "scene.leg3d"
    cb_path = _need(Path(args.codebook) if args.codebook else out / "codebook.leg3d",
                    "codebook", "run `legs quantize` first")
    scene = _load_scene(scene_path)
    man.input(scene_path)
    man.input(cb_path)
    codebook = load_checkpoint(cb_path).codebook
    if codebook is None:
        raise ConfigError(f"{cb_path} has no CODEBOOK section")

    cfg = TrainConfig.from_yaml(_need(Path(args.config), "config", "pass a YAML file")) if args.config \
        else TrainConfig()
    overrides = {k: v for k, v in (("iterations", args.iterations), ("n_codes", args.n_codes),
                                   ("seed", args.seed)) if v is not None}
    if "n_codes" not in overrides and not args.config:
        overrides["n_codes"] = codebook.n
    cfg = TrainConfig.from_dict({**cfg.to_dict(), **overrides})
    if cfg.n_codes != codebook.n:
        raise ConfigError(f"training expects N={cfg.n_codes} codebook entries but {cb_path} has N={codebook.n}")

    vdir = out / "views"
    idir = Path(args.index) if args.index else out / "index"
    images, index_maps = [], []
    for k in range(len(scene.cameras)):
        rgb = _need(vdir / f"rgb_{k:03d}.png", "ground-truth image", "run `legs gen` first")
        idx = _need(idir / f"index_{k:03d}.png", "index map", "run `legs quantize` first")
        man.input(rgb)
        man.input(idx)
        images.append(read_rgb_png(rgb))
        index_maps.append(read_label_png(idx))
    if index_maps and index_maps[0].max() >= codebook.n:
        raise ConfigError(f"index maps reference entry {index_maps[0].max()} beyond codebook N={codebook.n}")

    rng = np.random.default_rng(cfg.seed)
    pts = sample_init_points(scene.gaussians.positions, args.init_points, rng)
    cloud = init_from_points(pts, rng, cfg.semantic_dim)
    man.doc["config"] = cfg.to_dict()
    man.doc["seeds"]["train"] = cfg.seed
    dataset = TrainDataset(scene.cameras, images, index_maps, scene.background)
    man.start("train")
    result = train(cloud, dataset, cfg, codebook=codebook)
    man.stop("train")
    man.output(_save(save_checkpoint, out / "model.leg3d", result.checkpoint))
    fields = ["iteration", "view", "rgb", "ce", "u", "smo", "n_gaussians"]
    _write_csv(out / "losses.csv", result.history, fields)
    man.output(out / "losses.csv")
    man.output(plot_loss_curves(result.history, out / "losses.png"))
    last = result.history[-1] if result.history else {}
    print(f"trained {cfg.iterations} iterations, {len(result.checkpoint.gaussians)} gaussians, "
          f"final rgb loss {last.get('rgb', float('nan')):.5f}")


def _load_model(args, man: RunManifest):
    from .checkpoint import load_checkpoint

    path = _need(Path(args.model) if args.model else man.out_dir / "model.leg3d", "model", "run `legs train` first")
    man.input(path)
    ckpt = load_checkpoint(path)
    if ckpt.gaussians is None or ckpt.decoder is None:
        raise ConfigError(f"{path} lacks GAUSS or DECODER sections")
    if ckpt.codebook is not None and ckpt.codebook.n != ckpt.decoder.out_features:
        raise ConfigError(f"decoder emits N={ckpt.decoder.out_features} logits but the codebook has "
                          f"N={ckpt.codebook.n}")
    return ckpt


def cmd_render(args, man: RunManifest):
    from .fileio import write_rgb_png
    from .plotting import plot_image_grid
    from .rasterizer import rasterize

    ckpt = _load_model(args, man)
    scene_path = Path(args.scene) if args.scene else man.out_dir / "scene.leg3d"
    scene = _load_scene(scene_path)
    man.input(scene_path)
    cams = scene.cameras
    views = _view_list(args.views, len(cams))
    bg = np.asarray(ckpt.meta.get("background", scene.background))
    rdir = man.out_dir / "renders"
    rdir.mkdir(exist_ok=True)
    grid, titles = [], []
    man.start("render")
    for k in views:
        cam = cams[k] if args.size is None else cams[k].scaled(*args.size)
        out = rasterize(ckpt.gaussians, cam, bg)
        pca = _pca_rgb(out.semantic)
        man.output(_save(write_rgb_png, rdir / f"rgb_{k:03d}.png", out.color))
        man.output(_save(write_rgb_png, rdir / f"pca_{k:03d}.png", pca))
        if len(grid) < 8:
            grid += [np.clip(out.color, 0, 1), pca]
            titles += [f"rgb {k}", f"semantic PCA {k}"]
    man.stop("render")
    man.output(plot_image_grid(grid, titles, man.out_dir / "render_grid.png"))
    print(f"rendered {len(views)} views -> {rdir}")


def _queries(args, man: RunManifest):
    from .query import load_queries

    path = _need(Path(args.queries) if args.queries else man.out_dir / "queries.json",
                 "query file", "write a JSON query spec or run `legs gen`")
    man.input(path)
    return load_queries(path)


def cmd_query(args, man: RunManifest):
    from .fileio import apply_colormap, write_heatmap_png, write_mask_png
    from .plotting import plot_image_grid
    from .query import relevancy, render_feature_map, segment

    ckpt = _load_model(args, man)
    if ckpt.codebook is None:
        raise ConfigError("model checkpoint has no CODEBOOK section")
    scene_path = Path(args.scene) if args.scene else man.out_dir / "scene.leg3d"
    scene = _load_scene(scene_path)
    man.input(scene_path)
    queries = _queries(args, man)
    for q in queries:
        if len(q.embedding) != ckpt.codebook.d_clip:
            raise ConfigError(f"query {q.name!r} has {len(q.embedding)} dims but the codebook clip part "
                              f"has {ckpt.codebook.d_clip}")
    views = _view_list(args.views, len(scene.cameras))
    qdir = man.out_dir / "queries"
    qdir.mkdir(exist_ok=True)
    bg = np.asarray(ckpt.meta.get("background", scene.background))
    grid, titles = [], []
    man.start("query")
    for k in views:
        fmap = render_feature_map(ckpt.gaussians, scene.cameras[k], ckpt.decoder, ckpt.codebook, bg)
        for q in queries:
            rel = relevancy(fmap, q, camera=k)
            tau = q.threshold if args.threshold is None else args.threshold
            man.output(_save(write_heatmap_png, qdir / f"{q.name}_{k:03d}_heat.png", rel.scores))
            man.output(_save(write_mask_png, qdir / f"{q.name}_{k:03d}_mask.png", segment(rel, tau)))
            if k == views[0]:
                grid.append(apply_colormap(rel.scores))
                titles.append(q.name)
    man.stop("query")
    if grid:
        man.output(plot_image_grid(grid, titles, man.out_dir / "query_grid.png"))
    print(f"{len(queries)} queries x {len(views)} views -> {qdir}")


def cmd_eval(args, man: RunManifest):
    from .fileio import read_label_png, read_rgb_png
    from .metrics import (
        TABLE_COLUMNS,
        format_table,
        image_metrics,
        segmentation_metrics,
        table_row,
        write_table_csv,
    )
    from .plotting import plot_metric_bars
    from .query import relevancy, render_feature_map
    from .rasterizer import rasterize

    ckpt = _load_model(args, man)
    if ckpt.codebook is None:
        raise ConfigError("model checkpoint has no CODEBOOK section")
    scene_path = Path(args.scene) if args.scene else man.out_dir / "scene.leg3d"
    scene = _load_scene(scene_path)
    man.input(scene_path)
    queries = _queries(args, man)
    missing = [q.name for q in queries if q.label is None]
    if missing:
        raise ConfigError(f"no ground-truth label mapping for query {missing[0]!r}")
    views = _view_list(args.views, len(scene.cameras))
    bg = np.asarray(ckpt.meta.get("background", scene.background))
    psnrs, ssims, gts = [], [], []
    scores = {q.name: [] for q in queries}
    man.start("eval")
    for k in views:
        rgb_path = _need(man.out_dir / "views" / f"rgb_{k:03d}.png", "ground-truth image", "run `legs gen`")
        lab_path = _need(man.out_dir / "views" / f"labels_{k:03d}.png", "label map", "run `legs gen`")
        man.input(rgb_path)
        man.input(lab_path)
        cam = scene.cameras[k]
        out = rasterize(ckpt.gaussians, cam, bg)
        p, s = image_metrics(np.clip(out.color, 0, 1), read_rgb_png(rgb_path))
        psnrs.append(p)
        ssims.append(s)
        gts.append(read_label_png(lab_path))
        fmap = render_feature_map(ckpt.gaussians, cam, ckpt.decoder, ckpt.codebook, bg)
        for q in queries:
            scores[q.name].append(relevancy(fmap, q, camera=k).scores)
    report = segmentation_metrics(scores, gts, {q.name: q.label for q in queries}, args.threshold)
    man.stop("eval")
    row = {"method": args.method, **table_row(float(np.mean(psnrs)), float(np.mean(ssims)), report)}
    write_table_csv(man.out_dir / "metrics.csv", [row])
    man.output(man.out_dir / "metrics.csv")
    per_q = [{"query": n, **m} for n, m in report.per_query.items()]
    _write_csv(man.out_dir / "per_query.csv", per_q, ["query", "iou", "pa", "precision", "recall", "ap"])
    man.output(man.out_dir / "per_query.csv")
    man.output(plot_metric_bars(row, man.out_dir / "metrics.png"))
    man.doc["config"] = {"views": views, "threshold": args.threshold}
    print(format_table([row], ("method",) + TABLE_COLUMNS), end="")


def cmd_bench(args, man: RunManifest):
    from .bench import bench_scene, time_render
    from .plotting import plot_bench

    W, H = args.size
    cloud, cam = bench_scene(args.gaussians, W, H, args.semantic_dim, args.seed)
    man.doc["config"] = {"gaussians": args.gaussians, "size": [W, H], "frames": args.frames,
                         "semantic_dim": args.semantic_dim}
    man.doc["seeds"]["bench"] = args.seed
    times = time_render(cloud, cam, args.frames)
    med = float(np.median(times))
    _write_csv(man.out_dir / "bench.csv", [{"frame": i, "ms": t} for i, t in enumerate(times)], ["frame", "ms"])
    man.output(man.out_dir / "bench.csv")
    man.output(plot_bench(times, man.out_dir / "bench.png", args.budget_ms))
    man.doc["timings"]["median_frame_ms"] = med
    status = "within" if med < args.budget_ms else "over"
    print(f"median {med:.1f} ms over {args.frames} frames ({status} the {args.budget_ms:.0f} ms budget), "
          f"{1e3 / med:.1f} fps")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="legs", description=__doc__.split("\n")[0])
    p.add_argument("--out", default=None,
                   help=f"output directory (default: ${OUTPUT_ENV} or ./legs_out)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: logical cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic scene, ground truth and feature maps")
    g.add_argument("--objects", type=int, default=4)
    g.add_argument("--gaussians-per-object", type=int, default=1000)
    g.add_argument("--cameras", type=int, default=30)
    g.add_argument("--size", type=int, nargs=2, default=(128, 128), metavar=("W", "H"))
    g.add_argument("--d-clip", type=int, default=32)
    g.add_argument("--d-dino", type=int, default=16)
    g.add_argument("--jitter", type=float, default=0.0, help="per-view embedding jitter (radians)")
    g.add_argument("--blur", type=int, default=0, help="boundary blur of the clip part (px)")
    g.add_argument("--dino-blur", type=int, default=0, help="boundary blur of the dino part (px)")
    g.add_argument("--inconsistent", type=int, nargs="*", default=[], help="object ids resampled per view")
    g.add_argument("--seed", type=int, default=0)

    q = sub.add_parser("quantize", help="fit the feature codebook and write index maps")
    q.add_argument("--features", default=None, help="directory of feat_*.legfeat (default: <out>/features)")
    q.add_argument("--n-codes", type=int, default=32)
    q.add_argument("--epochs", type=int, default=10)
    q.add_argument("--lambda-lb", type=float, default=0.5)
    q.add_argument("--lambda-dino", type=float, default=0.5)
    q.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="optimize gaussians, semantics and heads")
    t.add_argument("--config", default=None, help="YAML file with TrainConfig fields")
    t.add_argument("--scene", default=None)
    t.add_argument("--codebook", default=None)
    t.add_argument("--index", default=None, help="directory of index_*.png (default: <out>/index)")
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--n-codes", type=int, default=None, help="expected codebook size")
    t.add_argument("--init-points", type=int, default=2000)
    t.add_argument("--seed", type=int, default=None)

    for name, helptext in (("render", "render views and semantic PCA images"),
                           ("query", "relevancy heatmaps and masks"),
                           ("eval", "image and segmentation metrics")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--model", default=None)
        c.add_argument("--scene", default=None)
        c.add_argument("--views", default=None, help="comma-separated camera ids or 'all'")
        if name == "render":
            c.add_argument("--size", type=int, nargs=2, default=None, metavar=("W", "H"))
        else:
            c.add_argument("--queries", default=None, help="JSON query spec (default: <out>/queries.json)")
        if name == "query":
            c.add_argument("--threshold", type=float, default=None)
        if name == "eval":
            c.add_argument("--threshold", type=float, default=0.5)
            c.add_argument("--method", default="ours")

    b = sub.add_parser("bench", help="render throughput")
    b.add_argument("--gaussians", type=int, default=20000)
    b.add_argument("--size", type=int, nargs=2, default=(256, 256), metavar=("W", "H"))
    b.add_argument("--frames", type=int, default=50)
    b.add_argument("--semantic-dim", type=int, default=8)
    b.add_argument("--budget-ms", type=float, default=250.0)
    b.add_argument("--seed", type=int, default=0)
    return p


COMMANDS = {"gen": cmd_gen, "quantize": cmd_quantize, "train": cmd_train, "render": cmd_render,
            "query": cmd_query, "eval": cmd_eval, "bench": cmd_bench}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import set_threads
    from .checkpoint import CheckpointError
    from .fileio import FormatError

    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "legs_out")
    try:
        threads = set_threads(args.threads)
        out.mkdir(parents=True, exist_ok=True)
        man = RunManifest(args.command, argv, out)
        man.doc["threads"] = threads
        man.start("total")
        COMMANDS[args.command](args, man)
        man.stop("total")
        man.write()
    except (ConfigError, CheckpointError, FormatError, FileNotFoundError, ValueError) as e:
        print(f"legs {args.command}: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        print(f"legs {args.command}: failed: {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
