import csv
import json
from pathlib import Path

import pytest

import numpy as np

from legaussians.cli import EXIT_CONFIG, _pca_rgb, content_hash, run

TINY_GEN = ["gen", "--objects", "2", "--gaussians-per-object", "80", "--cameras", "3",
            "--size", "24", "24", "--d-clip", "8", "--d-dino", "4"]
PIPELINE = [TINY_GEN, ["quantize", "--n-codes", "6", "--epochs", "2"],
            ["train", "--iterations", "12", "--init-points", "80"],
            ["render", "--views", "0,1"], ["query", "--views", "0"], ["eval"]]


def _pipeline(out: Path):
    for argv in PIPELINE:
        assert run(["--out", str(out)] + argv) == 0, argv


def _output_hashes(out: Path) -> dict:
    hashes = {}
    for cmd in ("gen", "quantize", "train", "render", "query", "eval"):
        doc = json.loads((out / f"manifest_{cmd}.json").read_text())
        for path, h in doc["outputs"].items():
            hashes[str(Path(path).relative_to(out))] = h
    return hashes


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    _pipeline(a)
    _pipeline(b)
    return a, b


def test_content_hash_is_git_blob(tmp_path):
    (tmp_path / "f").write_bytes(b"hello\n")
    assert content_hash(tmp_path / "f") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_pipeline_writes_table_and_figures(pipeline_dirs):
    out = pipeline_dirs[0]
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["method", "PSNR", "SSIM", "mPA", "mP", "mIoU", "mAP"]
    for name in ("gen_overview.png", "quantizer.png", "losses.png", "render_grid.png",
                 "query_grid.png", "metrics.png"):
        assert (out / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n", name
    doc = json.loads((out / "manifest_train.json").read_text())
    assert doc["inputs"] and doc["outputs"] and doc["timings"]


def test_same_seed_gives_identical_output_hashes(pipeline_dirs):
    a, b = (_output_hashes(d) for d in pipeline_dirs)
    assert a.keys() == b.keys() and len(a) > 20
    assert a == b


def test_empty_scene(tmp_path):
    assert run(["--out", str(tmp_path), "gen", "--objects", "0", "--cameras", "2", "--size", "16", "16"]) == 0
    assert (tmp_path / "scene.leg3d").exists()
    assert json.loads((tmp_path / "queries.json").read_text())["queries"] == []


def test_codebook_size_mismatch_exits_2(tmp_path, capsys):
    for argv in PIPELINE[:2]:
        assert run(["--out", str(tmp_path)] + argv) == 0
    code = run(["--out", str(tmp_path), "train", "--iterations", "2", "--n-codes", "9"])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "6" in err and "9" in err


def test_missing_input_and_bad_flag_exit_2(tmp_path):
    assert run(["--out", str(tmp_path), "quantize"]) == EXIT_CONFIG
    assert run(["--out", str(tmp_path), "gen", "--no-such-flag"]) == EXIT_CONFIG


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("LEGS_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["gen", "--objects", "1", "--gaussians-per-object", "20", "--cameras", "1",
                "--size", "8", "8"]) == 0
    assert (tmp_path / "env" / "manifest_gen.json").exists()


def test_bench_reports_median(tmp_path):
    assert run(["--out", str(tmp_path), "bench", "--gaussians", "200", "--size", "16", "16",
                "--frames", "3"]) == 0
    rows = (tmp_path / "bench.csv").read_text().splitlines()
    assert len(rows) >= 4 and (tmp_path / "bench.png").exists()


def test_pca_rgb_range_and_sign_convention():
    x = np.random.default_rng(0).normal(size=(5, 6, 8))
    a = _pca_rgb(x)
    assert a.shape == (5, 6, 3) and a.min() == 0 and a.max() == 1
    # negating the input keeps the components and mirrors the projections
    np.testing.assert_allclose(_pca_rgb(-x), 1 - a, atol=1e-12)
    # a rank-one ramp comes back as a linear ramp in the first channel
    r1 = np.outer(np.linspace(-1, 1, 12), np.arange(1, 9)).reshape(3, 4, 8)
    b = _pca_rgb(r1)
    np.testing.assert_allclose(b[..., 0].ravel(), np.linspace(0, 1, 12), atol=1e-12)
