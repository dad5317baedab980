import numpy as np
import pytest

import gradcheck
import oracles
import scenes
from microsplat.render import (Camera, DEFAULT_SETTINGS, InvalidParameterError, bin_to_tiles, footprint_radius,
                               project, project_model, rasterize, rasterize_backward)
from microsplat.splat import SplatModel


def single_splat_model(pos, logs=(-1.5, -1.5, -1.5), logit=2.0, rgb_dc=(1.0, 0.5, 0.2)):
    sh = np.zeros((1, 1, 3))
    sh[0, 0] = rgb_dc
    return SplatModel(np.array([pos], float), np.array([[1.0, 0, 0, 0]]), np.array([logs], float),
                      np.array([logit]), sh)


@pytest.mark.parametrize("seed", range(12))
def test_tile_renderer_equals_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    model = scenes.random_model(rng, int(rng.integers(1, 15)), int(rng.integers(0, 4)), opacity=(-3, 5))
    cam = scenes.random_camera(rng, int(rng.choice([16, 20, 33])))
    bg = rng.uniform(0, 1, 3)
    ref, wsum, tfin = oracles.brute_force_render(model, cam, bg)
    out = rasterize(model, cam, bg)
    assert np.max(np.abs(out.image - ref)) <= 1e-6
    assert np.max(np.abs(out.transmittance - tfin)) <= 1e-6
    assert np.max(np.abs(wsum + tfin - 1.0)) <= 1e-6


def test_empty_model_renders_background():
    cam = scenes.front_camera(16)
    out = rasterize(SplatModel.empty(0), cam, (0.1, 0.2, 0.3))
    assert np.all(out.image == np.array([0.1, 0.2, 0.3]))
    assert np.all(out.transmittance == 1.0)


def test_splat_behind_camera_is_culled():
    cam = scenes.front_camera(16)
    model = single_splat_model([0.0, -6.0, 0.0])  # camera sits at y = -4 looking toward +y
    out = rasterize(model, cam)
    assert not out.visible[0]
    assert np.all(out.image == 0)
    assert project(model[0], cam) is None


def test_centred_splat_peaks_at_principal_point():
    cam = scenes.front_camera(17)  # odd size puts the principal point on a pixel centre
    model = single_splat_model([0.0, 0.0, 0.0], logit=0.0)
    out = rasterize(model, cam)
    row, col = np.unravel_index(np.argmax(out.image[..., 0]), out.image.shape[:2])
    assert (row, col) == (8, 8)
    colour = 0.28209479177387814 * 1.0
    assert out.image[8, 8, 0] == pytest.approx(0.5 * colour, rel=1e-12)


def test_depth_order_front_splat_occludes():
    cam = scenes.front_camera(16)
    near = single_splat_model([0.0, -1.0, 0.0], logs=(-0.5,) * 3, logit=8.0, rgb_dc=(2.0, 0.0, 0.0))
    far = single_splat_model([0.0, 1.0, 0.0], logs=(-0.5,) * 3, logit=8.0, rgb_dc=(0.0, 2.0, 0.0))
    for m in (SplatModel.concat([near, far]), SplatModel.concat([far, near])):
        img = rasterize(m, cam).image
        assert img[8, 8, 0] > 10 * img[8, 8, 1]


def test_projection_matches_monte_carlo():
    rng = np.random.default_rng(7)
    cam = scenes.front_camera(64, focal=80.0, dist=6.0)
    model = single_splat_model([0.2, 0.0, -0.1], logs=np.log([0.05, 0.02, 0.03]))
    model.rotations[0] = [0.9, 0.2, -0.3, 0.1]
    model.normalize_rotations()
    p = project(model[0], cam, DEFAULT_SETTINGS)
    mean_mc, cov_mc = oracles.monte_carlo_cov2d(model.positions[0], model.covariances()[0], cam, 400_000, rng)
    # the affine approximation is exact only to first order, hence the loose tolerance
    np.testing.assert_allclose(p.mean_2d, mean_mc, atol=0.02)
    np.testing.assert_allclose(p.cov_2d - DEFAULT_SETTINGS.dilation * np.eye(2), cov_mc, rtol=0.03, atol=0.01)
    exact = oracles.project_one(model, 0, cam)
    np.testing.assert_allclose(p.cov_2d, exact["cov"], atol=1e-12)
    assert p.footprint_radius == pytest.approx(exact["radius"], rel=1e-12)


def test_footprint_radius_closed_form():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(50, 2, 2))
    cov = a @ np.swapaxes(a, 1, 2) + 0.1 * np.eye(2)
    np.testing.assert_allclose(footprint_radius(cov), np.sqrt(np.linalg.eigvalsh(cov)[:, -1]), rtol=1e-12)


def test_binning_covers_every_overlapped_tile():
    bbox = np.array([[0, 40, 0, 5], [17, 17, 30, 31], [5, 4, 0, 0]])
    keep = np.array([True, True, False])
    tiles = bin_to_tiles(bbox, keep, (np.arange(3),), 48, 48, 16)
    assert sorted(tiles) == [0, 1, 2, 4]
    assert tiles[4].tolist() == [1]
    assert tiles[0].tolist() == [0]


def test_backward_rejects_mismatched_shape():
    cam = scenes.front_camera(16)
    model = single_splat_model([0.0, 0.0, 0.0])
    with pytest.raises(InvalidParameterError):
        rasterize_backward(model, cam, (0, 0, 0), np.zeros((8, 8, 3)))


def test_zero_cotangent_gives_zero_gradients():
    rng = np.random.default_rng(3)
    model = scenes.random_model(rng, 5)
    cam = scenes.random_camera(rng)
    g = rasterize_backward(model, cam, (0, 0, 0), np.zeros((16, 16, 3)))
    for v in g.as_dict().values():
        assert not np.any(v)
    assert not np.any(g.g_map)


def test_g_map_is_channel_norm():
    rng = np.random.default_rng(4)
    model = scenes.random_model(rng, 3)
    cam = scenes.random_camera(rng)
    d = rng.normal(size=(16, 16, 3))
    g = rasterize_backward(model, cam, (0, 0, 0), d)
    np.testing.assert_allclose(g.g_map, np.linalg.norm(d, axis=2))


@pytest.mark.parametrize("seed", range(3))
def test_gradients_match_finite_differences(seed):
    case = gradcheck.random_case(np.random.default_rng(900 + seed))
    worst, checked, largest = gradcheck.check_case(*case)
    assert checked > 0 and largest > 0
    assert worst <= 0


def test_camera_roundtrip_and_validation():
    cam = scenes.random_camera(np.random.default_rng(1))
    again = Camera.from_dict(cam.to_dict())
    assert again.to_dict() == cam.to_dict()
    with pytest.raises(InvalidParameterError):
        Camera.from_dict({**cam.to_dict(), "skew": 0.0})
    with pytest.raises(InvalidParameterError):
        Camera(-1.0, 1.0, 0, 0, 8, 8, np.eye(3), np.zeros(3))
    with pytest.raises(InvalidParameterError):
        Camera(1.0, 1.0, 0, 0, 8, 8, 2 * np.eye(3), np.zeros(3))
