import numpy as np
import pytest

import oracles
from microsplat import synth
from microsplat.trainer import Dataset, heldout_psnr

SMALL = synth.SceneSpec(seed=3, reference_count=60, camera_count=8, width=24, height=24)


def test_generate_is_deterministic():
    a, b = synth.generate(SMALL), synth.generate(SMALL)
    assert a.reference.equals(b.reference) and a.init.equals(b.init)
    for x, y in zip(a.images, b.images):
        assert np.array_equal(x, y)


def test_scene_shapes():
    s = synth.generate(SMALL)
    assert len(s.reference) == 60 and len(s.init) == 12
    assert len(s.cameras) == len(s.images) == 8
    assert s.images[0].shape == (24, 24, 3)
    assert s.init.degree == 3 and s.reference.degree == 1
    assert np.all(s.init.rotations[:, 0] == 1.0)


def test_cameras_look_at_origin():
    for cam in synth.camera_ring(SMALL):
        t = cam.rotation @ np.zeros(3) + cam.translation
        assert t[2] == pytest.approx(SMALL.camera_radius)
        u = cam.fx * t[0] / t[2] + cam.cx
        v = cam.fy * t[1] / t[2] + cam.cy
        assert (u, v) == pytest.approx(((SMALL.width - 1) / 2, (SMALL.height - 1) / 2))


def test_toy_scene_init_is_far_from_reference():
    spec = synth.SceneSpec()
    s = synth.generate(spec)
    assert len(s.reference) == 400 and len(s.init) == 80
    held = Dataset(s.cameras, s.images).split(8)[1]
    assert held.tolist() == [0, 8]
    assert heldout_psnr(s.init, Dataset(s.cameras, s.images), held, (0, 0, 0)) < 25.0


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        synth.SceneSpec(width=4)
    with pytest.raises(ValueError):
        synth.SceneSpec(init_fraction=0.0)


def test_quadrature_integrates_polynomials_exactly():
    dirs, w = synth.sphere_quadrature(12)
    assert w.sum() == pytest.approx(4 * np.pi, rel=1e-14)
    assert np.sum(w * dirs[:, 2] ** 4) == pytest.approx(4 * np.pi / 5, rel=1e-13)
    assert np.sum(w * dirs[:, 0] ** 2 * dirs[:, 1] ** 2) == pytest.approx(4 * np.pi / 15, rel=1e-13)


def test_kernel_weights_are_directional_variance():
    d = np.eye(3)
    np.testing.assert_allclose(synth.kernel_weights(d, synth.ANISOTROPIC_COV), [1.5, 0.5, 0.5])
    np.testing.assert_allclose(synth.kernel_weights(d, synth.ISOTROPIC_COV), [0.5, 0.5, 0.5])


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_fit_rmse_matches_dense_midpoint_oracle(degree):
    field = synth.directional_field(0)
    for cov in (synth.ISOTROPIC_COV, synth.ANISOTROPIC_COV):
        fast = synth.sh_fit_rmse(field, cov, degree)
        slow = oracles.sh_fit_rmse_oracle(field, cov, degree, n=300)
        assert abs(fast - slow) <= 1e-6


def test_fit_recovers_band_limited_field_exactly():
    from microsplat import sh as shlib
    coeffs = np.random.default_rng(0).normal(size=16)

    def field(d):
        return shlib.basis(d, 3) @ coeffs

    for cov in (synth.ISOTROPIC_COV, synth.ANISOTROPIC_COV):
        assert synth.sh_fit_rmse(field, cov, 3) < 1e-12


def test_anisotropy_rows_and_table():
    rows = synth.anisotropy_experiment(seed=1)
    assert [r["degree"] for r in rows] == [1, 2, 3]
    assert all(r["rmse_anisotropic"] >= r["rmse_isotropic"] for r in rows)
    assert rows[0]["rmse_isotropic"] > rows[2]["rmse_isotropic"]
    text = synth.format_anisotropy_table(rows)
    assert text.count("\n") == 5
