import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
import scenes
from microsplat.densify import GrowthConfig, adaptive_threshold, local_error_scores, select_and_split
from microsplat.render import rasterize
from microsplat.splat import quat_to_rotmat, trace_penalty_from_log_scales


@pytest.mark.parametrize("seed", range(6))
def test_scores_match_disc_scan(seed):
    rng = np.random.default_rng(seed)
    model = scenes.random_model(rng, int(rng.integers(1, 20)), 1)
    cam = scenes.random_camera(rng, int(rng.choice([16, 29, 40])))
    out = rasterize(model, cam)
    g = rng.uniform(0, 1, (cam.height, cam.width))
    fast = local_error_scores(g, out.projection)
    slow = oracles.disc_scan_scores(g, out.screen_splats())
    assert np.max(np.abs(fast - slow)) <= 1e-12
    np.testing.assert_array_equal(local_error_scores(g, out.screen_splats()), fast)


def test_zero_gradient_map_gives_zero_scores():
    rng = np.random.default_rng(1)
    model = scenes.random_model(rng, 8)
    out = rasterize(model, scenes.random_camera(rng))
    assert not np.any(local_error_scores(np.zeros((16, 16)), out.projection))


def test_culled_splats_score_zero():
    from microsplat.render import ScreenSplat
    screens = [None, ScreenSplat(np.array([-50.0, -50.0]), np.eye(2), 1.0, 2.0)]
    assert local_error_scores(np.ones((16, 16)), screens).tolist() == [0.0, 0.0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=40),
       st.floats(0, 100), st.floats(0, 100))
def test_threshold_is_nearest_rank_and_monotone(scores, p, q):
    assert adaptive_threshold(scores, p) == oracles.nearest_rank(scores, p)
    lo, hi = sorted((p, q))
    assert adaptive_threshold(scores, lo) <= adaptive_threshold(scores, hi)


def test_threshold_empty_rejected():
    with pytest.raises(ValueError):
        adaptive_threshold([], 90)


def test_no_trigger_leaves_model_unchanged():
    model = scenes.random_model(np.random.default_rng(2), 10)
    scores = np.zeros(10)
    out, rep = select_and_split(model, scores, adaptive_threshold(scores, 90), np.zeros(10))
    assert out.equals(model)
    assert rep.split_ids.size == 0 and rep.count_after == 10


def test_split_geometry():
    model = scenes.random_model(np.random.default_rng(3), 6)
    scores = np.array([0.0, 5.0, 0.0, 0.0, 9.0, 0.0])
    cfg = GrowthConfig(clones_per_split=3)
    out, rep = select_and_split(model, scores, 1.0, np.zeros(6), cfg)
    assert rep.split_ids.tolist() == [1, 4]
    assert len(out) == 6 - 2 + 2 * 3
    # survivors first, in order
    kept = [0, 2, 3, 5]
    assert out.take(np.arange(4)).equals(model.take(kept))
    for c, parent in enumerate([1, 1, 1, 4, 4, 4]):
        k = 4 + c
        np.testing.assert_allclose(out.log_scales[k], model.log_scales[parent] + math.log(0.5))
        assert np.all(out.rotations[k] == model.rotations[parent])
        assert np.all(out.sh[k] == model.sh[parent])
        assert out.opacity_logits[k] == model.opacity_logits[parent]
    for j, parent in enumerate([1, 4]):
        sig = np.exp(model.log_scales[parent])
        a = int(np.argmax(sig))
        axis = quat_to_rotmat(model.rotations[parent])[:, a]
        offs = out.positions[4 + 3 * j: 7 + 3 * j] - model.positions[parent]
        np.testing.assert_allclose(offs, np.outer([-0.5, 0.0, 0.5], axis * sig[a]), atol=1e-14)
    assert rep.origin.tolist() == kept + [-1] * 6


def test_trace_violators_always_split():
    rng = np.random.default_rng(4)
    for _ in range(50):
        model = scenes.random_model(rng, 30)
        tau = float(np.quantile(model.traces(), rng.uniform(0.2, 0.9)))
        pen, _ = trace_penalty_from_log_scales(model.log_scales, tau)
        scores = rng.uniform(0, 1, 30)
        _, rep = select_and_split(model, scores, adaptive_threshold(scores, 90), pen)
        assert set(np.flatnonzero(pen > 0)) <= set(rep.split_ids.tolist())
        assert set(np.flatnonzero(scores > adaptive_threshold(scores, 90))) <= set(rep.split_ids.tolist())


def test_max_splats_truncates_by_descending_score():
    model = scenes.random_model(np.random.default_rng(5), 8)
    scores = np.array([1, 8, 3, 7, 2, 6, 5, 4], float)
    out, rep = select_and_split(model, scores, 0.5, np.zeros(8), GrowthConfig(max_splats=11))
    assert rep.split_ids.tolist() == [1, 3, 5]
    assert len(out) == 11


def test_split_is_deterministic():
    model = scenes.random_model(np.random.default_rng(6), 12)
    scores = np.linspace(0, 1, 12)
    a, _ = select_and_split(model, scores, 0.5, np.zeros(12))
    b, _ = select_and_split(model, scores, 0.5, np.zeros(12))
    assert a.equals(b)
