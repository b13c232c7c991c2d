import numpy as np
import pytest

from legaussians.fileio import (
    FormatError,
    apply_colormap,
    read_feature_map,
    read_label_png,
    read_mask_png,
    read_rgb_png,
    turbo_table,
    write_feature_map,
    write_heatmap_png,
    write_label_png,
    write_mask_png,
    write_rgb_png,
)
from legaussians.quantizer import HybridFeatureMap


def test_feature_map_roundtrip_and_header(tmp_path):
    data = np.random.default_rng(0).normal(size=(5, 7, 6)).astype(np.float32)
    write_feature_map(tmp_path / "f", HybridFeatureMap(data, 4, 2))
    raw = (tmp_path / "f").read_bytes()
    assert raw[:8] == b"LEGFEAT\x00" and len(raw) == 32 + data.nbytes
    back = read_feature_map(tmp_path / "f")
    assert (back.width, back.height, back.d_clip, back.d_dino) == (7, 5, 4, 2)
    assert np.array_equal(back.data, data)


def test_feature_map_errors(tmp_path):
    write_feature_map(tmp_path / "f", HybridFeatureMap(np.zeros((2, 2, 3), np.float32), 2, 1))
    raw = (tmp_path / "f").read_bytes()
    (tmp_path / "g").write_bytes(b"X" + raw[1:])
    with pytest.raises(FormatError, match="magic"):
        read_feature_map(tmp_path / "g")
    (tmp_path / "h").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="payload"):
        read_feature_map(tmp_path / "h")


def test_label_png_roundtrip(tmp_path):
    labels = np.array([[-1, 0, 5], [300, 65534, -1]])
    write_label_png(tmp_path / "l.png", labels)
    np.testing.assert_array_equal(read_label_png(tmp_path / "l.png"), labels)
    with pytest.raises(ValueError):
        write_label_png(tmp_path / "x.png", np.array([[70000]]))


def test_rgb_and_mask_roundtrip(tmp_path):
    img = np.random.default_rng(1).uniform(size=(4, 5, 3))
    write_rgb_png(tmp_path / "c.png", img)
    np.testing.assert_allclose(read_rgb_png(tmp_path / "c.png"), img, atol=0.5 / 255 + 1e-7)
    mask = np.random.default_rng(2).random((6, 9)) > 0.5
    write_mask_png(tmp_path / "m.png", mask)
    np.testing.assert_array_equal(read_mask_png(tmp_path / "m.png"), mask)


def test_colormap_is_fixed(tmp_path):
    t = turbo_table()
    assert t.shape == (256, 3) and t.dtype == np.uint8
    np.testing.assert_array_equal(apply_colormap(np.array([0.0, 1.0])), t[[0, 255]])
    s = np.linspace(0, 1, 12).reshape(3, 4)
    write_heatmap_png(tmp_path / "a.png", s)
    write_heatmap_png(tmp_path / "b.png", s)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
