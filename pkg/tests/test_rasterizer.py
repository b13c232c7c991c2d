import numba
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from legaussians import set_threads
from legaussians.rasterizer import (
    GaussianGrads,
    depth_order,
    project,
    projection_jacobian,
    rasterize,
    rasterize_backward,
)
from legaussians.scene import GaussianCloud, look_at, materialize

from oracles import brute_force_render, random_camera, random_cloud

BG = np.array([0.1, 0.2, 0.3])
CHANNELS = ("color", "semantic", "uncertainty", "alpha", "depth")


def _single(pos=(0, 0, 0), log_scale=-1.5, opacity_raw=2.0, color=(1, 0, 0), ds=8):
    return GaussianCloud(
        positions=np.array([pos], dtype=float), rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.full((1, 3), log_scale), opacity_raw=np.array([opacity_raw]),
        colors=np.array([color], dtype=float), semantics=np.ones((1, ds)),
        uncertainty_raw=np.zeros(1),
    )


def test_empty_scene_renders_background():
    cam = look_at([0, -3, 0], [0, 0, 0], width=8, height=8, fx=10)
    out = rasterize(GaussianCloud.empty(dtype=np.float64), cam, BG)
    np.testing.assert_array_equal(out.color, np.broadcast_to(BG, (8, 8, 3)))
    assert np.all(out.alpha == 0) and np.all(out.semantic == 0) and np.all(out.depth == 0)


def test_centered_gaussian_peaks_at_projected_center():
    cam = look_at([0, -3, 0], [0, 0, 0], width=9, height=9, fx=10)
    out = rasterize(_single(), cam, np.zeros(3))
    assert np.unravel_index(np.argmax(out.alpha), out.alpha.shape) == (4, 4)
    # symmetric footprint around the principal point
    np.testing.assert_allclose(out.alpha, out.alpha[::-1, ::-1], atol=1e-12)


def test_behind_camera_is_culled():
    cam = look_at([0, -3, 0], [0, 0, 0], width=8, height=8, fx=10)
    proj = project(materialize(_single(pos=(0, -5, 0))), cam)
    assert not proj.visible.any()


def test_projection_jacobian_matches_numeric():
    p = np.array([0.3, -0.2, 2.0])
    J = projection_jacobian(p, 10.0, 12.0)
    f = lambda q: np.array([10 * q[0] / q[2], 12 * q[1] / q[2]])
    num = np.stack([(f(p + e) - f(p - e)) / 2e-6 for e in np.eye(3) * 1e-6], axis=1)
    np.testing.assert_allclose(J, num, rtol=1e-7)


def test_depth_order_breaks_ties_by_index():
    cloud = random_cloud(np.random.default_rng(0), 4)
    cloud.positions[:] = cloud.positions[0]
    cam = look_at([0, -3, 0], [0, 0, 0], width=8, height=8, fx=10)
    proj = project(materialize(cloud), cam)
    np.testing.assert_array_equal(depth_order(proj), np.flatnonzero(proj.visible))


def test_opaque_front_gaussian_hides_back_one():
    cam = look_at([0, -3, 0], [0, 0, 0], width=9, height=9, fx=10)
    front = _single(pos=(0, -1, 0), log_scale=0.0, opacity_raw=20.0, color=(0, 1, 0))
    back = _single(pos=(0, 1, 0), log_scale=0.0, opacity_raw=20.0, color=(1, 0, 0))
    out = rasterize(GaussianCloud.concat([back, front]), cam, BG)
    np.testing.assert_allclose(out.color[4, 4], [0, 1, 0], atol=0.02)


@pytest.mark.parametrize("seed", range(10))
def test_matches_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, int(rng.integers(1, 11)))
    cam = random_camera(rng)
    out = rasterize(cloud, cam, BG)
    ref = brute_force_render(cloud, cam, BG)
    for ch in CHANNELS:
        np.testing.assert_allclose(getattr(out, ch), ref[ch], atol=1e-5, err_msg=ch)


def test_output_independent_of_tile_size():
    rng = np.random.default_rng(3)
    cloud = random_cloud(rng, 30, spread=0.8)
    cam = random_camera(rng, 40, 24)
    base = rasterize(cloud, cam, BG, tile_size=16)
    for tile in (4, 7, 8, 32, 64):
        other = rasterize(cloud, cam, BG, tile_size=tile)
        for ch in CHANNELS:
            np.testing.assert_allclose(getattr(other, ch), getattr(base, ch), atol=1e-12)


def test_weights_and_transmittance_sum_to_one():
    rng = np.random.default_rng(5)
    cloud = random_cloud(rng, 20)
    cloud.colors[:] = 1.0
    out = rasterize(cloud, random_camera(rng, 16, 16), np.zeros(3))
    np.testing.assert_allclose(out.color[..., 0] + out.state.final_T, 1.0, atol=1e-12)


def test_thread_count_does_not_change_output():
    rng = np.random.default_rng(11)
    cloud = random_cloud(rng, 200, spread=0.9).astype(np.float32)
    cam = random_camera(rng, 64, 48)
    gC = rng.normal(size=(48, 64, 3))
    results = []
    try:
        for n in (1, 4, 8):
            set_threads(n)
            out = rasterize(cloud, cam, BG)
            g = rasterize_backward(cloud, cam, BG, out, d_color=gC, d_semantic=np.ones((48, 64, 8)))
            results.append((out, g))
    finally:
        set_threads(None)
    for out, g in results[1:]:
        for ch in CHANNELS:
            assert np.array_equal(getattr(out, ch), getattr(results[0][0], ch))
        for name in GaussianCloud.PARAMS:
            assert np.array_equal(getattr(g, name), getattr(results[0][1], name))


def test_backward_returns_zero_without_upstream():
    rng = np.random.default_rng(2)
    cloud = random_cloud(rng, 5)
    cam = random_camera(rng)
    out = rasterize(cloud, cam, BG)
    g = rasterize_backward(cloud, cam, BG, out)
    assert isinstance(g, GaussianGrads)
    for name in GaussianCloud.PARAMS:
        assert not np.any(g.params()[name])


def test_isolation_keeps_geometry_gradients_zero():
    rng = np.random.default_rng(4)
    cloud = random_cloud(rng, 8)
    cam = random_camera(rng)
    out = rasterize(cloud, cam, BG)
    g = rasterize_backward(cloud, cam, BG, out, d_semantic=rng.normal(size=(8, 8, 8)),
                           d_uncertainty=rng.normal(size=(8, 8)), isolate_semantics=True)
    for name in ("positions", "rotations", "log_scales", "opacity_raw", "colors"):
        assert not np.any(getattr(g, name)), name
    assert np.any(g.semantics) and np.any(g.uncertainty_raw)


def test_float32_close_to_float64():
    rng = np.random.default_rng(8)
    cloud = random_cloud(rng, 10)
    cam = random_camera(rng, 16, 16)
    a = rasterize(cloud, cam, BG)
    b = rasterize(cloud.astype(np.float32), cam, BG)
    assert b.color.dtype == np.float32
    np.testing.assert_allclose(b.color, a.color, atol=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_alpha_and_color_bounds(seed):
    rng = np.random.default_rng(seed)
    cloud = random_cloud(rng, int(rng.integers(0, 12)))
    out = rasterize(cloud, random_camera(rng), BG)
    assert np.all(out.alpha >= 0) and np.all(out.alpha <= 1)
    assert np.all(out.color >= -1e-12) and np.all(out.color <= 1 + 1e-12)
    assert np.all(out.uncertainty >= 0) and np.all(out.uncertainty <= out.alpha + 1e-12)


def test_numba_pool_allows_eight_threads():
    assert numba.config.NUMBA_NUM_THREADS >= 8
