import numpy as np
import pytest

from legaussians.metrics import psnr
from legaussians.oracle import SceneSpec, generate_scene, render_ground_truth
from legaussians.quantizer import Codebook
from legaussians.rasterizer import rasterize
from legaussians.trainer import (
    TrainConfig,
    TrainDataset,
    TrainingError,
    init_from_points,
    sample_init_points,
    train,
)

GEOMETRY = ("positions", "rotations", "log_scales", "opacity_raw", "colors")
ALL_PARAMS = GEOMETRY + ("semantics", "uncertainty_raw")


@pytest.fixture(scope="module")
def tiny():
    scene = generate_scene(SceneSpec(object_count=2, gaussians_per_object=150, camera_count=4,
                                     image_size=(24, 24), seed=3))
    imgs, labs = zip(*(render_ground_truth(scene, c) for c in scene.cameras))
    rng = np.random.default_rng(0)
    idx = [np.where(l < 0, 0, l + 1) for l in labs]
    pts = sample_init_points(scene.gaussians.positions, 120, rng)
    cloud = init_from_points(pts, rng)
    ds = TrainDataset(scene.cameras, list(imgs), idx, scene.background)
    return cloud, ds


def _cfg(**kw):
    base = dict(iterations=30, n_codes=4, log_every=0, densify_from=10, densify_interval=10)
    base.update(kw)
    return TrainConfig(**base)


def test_semantic_losses_leave_geometry_bit_identical(tiny):
    cloud, ds = tiny
    on = train(cloud, ds, _cfg()).checkpoint.gaussians
    off = train(cloud, ds, _cfg(lambda_s=0.0, lambda_smo=0.0)).checkpoint.gaussians
    for name in GEOMETRY:
        assert np.array_equal(getattr(on, name), getattr(off, name)), name
    assert not np.array_equal(on.semantics, off.semantics)


def test_training_is_deterministic(tiny):
    cloud, ds = tiny
    a = train(cloud, ds, _cfg(iterations=15))
    b = train(cloud, ds, _cfg(iterations=15))
    for name in ALL_PARAMS:
        assert np.array_equal(getattr(a.checkpoint.gaussians, name), getattr(b.checkpoint.gaussians, name))
    for wa, wb in zip(a.checkpoint.decoder.params(), b.checkpoint.decoder.params()):
        assert np.array_equal(wa, wb)


def test_rgb_only_training_improves_psnr(tiny):
    cloud, ds = tiny
    cfg = _cfg(iterations=120, lambda_s=0.0, lambda_smo=0.0)

    def mean_psnr(c):
        return np.mean([psnr(np.clip(rasterize(c, cam, ds.background).color, 0, 1), img)
                        for cam, img in zip(ds.cameras, ds.images)])

    trained = train(cloud, ds, cfg).checkpoint.gaussians
    assert mean_psnr(trained) > mean_psnr(cloud) + 3


def test_non_finite_loss_aborts_with_iteration(tiny):
    cloud, ds = tiny
    bad = TrainDataset(ds.cameras, [np.full_like(i, np.nan) for i in ds.images], ds.index_maps, ds.background)
    with pytest.raises(TrainingError, match="iteration 1"):
        train(cloud, bad, _cfg(iterations=3))


def test_codebook_size_mismatch_is_rejected(tiny):
    cloud, ds = tiny
    cb = Codebook(np.random.default_rng(0).normal(size=(6, 4)), 3, 1)
    with pytest.raises(ValueError, match="N=6"):
        train(cloud, ds, _cfg(), codebook=cb)


def test_callback_and_history(tiny):
    cloud, ds = tiny
    seen = []
    res = train(cloud, ds, _cfg(iterations=6, checkpoint_every=3),
                callback=lambda it, c, d, m, rec: seen.append((it, "checkpoint" in rec)))
    assert seen == [(1, False), (2, False), (3, True), (4, False), (5, False), (6, True)]
    assert [r["iteration"] for r in res.history] == list(range(1, 7))
    assert all("checkpoint" not in r for r in res.history)


def test_config_validation_and_yaml(tmp_path):
    with pytest.raises(ValueError):
        TrainConfig(w_s=1.5)
    with pytest.raises(ValueError):
        TrainConfig(lambda_ce=-1)
    (tmp_path / "c.yaml").write_text("iterations: 7\nbetas: [0.8, 0.9]\n")
    cfg = TrainConfig.from_yaml(tmp_path / "c.yaml")
    assert cfg.iterations == 7 and cfg.betas == (0.8, 0.9) and cfg.densify_stop == 3
    (tmp_path / "d.yaml").write_text("bogus: 1\n")
    with pytest.raises(ValueError, match="bogus"):
        TrainConfig.from_yaml(tmp_path / "d.yaml")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
