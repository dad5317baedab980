"""Central finite-difference checks of the analytic total-loss gradient."""

from __future__ import annotations

import math

import numpy as np

import oracles
import scenes
from microsplat.loss import LossWeights, total_loss
from microsplat.render import project_model, rasterize, rasterize_backward
from microsplat.splat import SplatModel

STEP = 1e-6
RTOL = 1e-4
ATOL = 1e-7
# distance kept from every non-smooth point of the forward map
MARGIN = 2e-6


def loss_value(model, cam, target, weights, tau, bg):
    return total_loss(rasterize(model, cam, bg).image, target, model, weights, tau).total


def analytic(model, cam, target, weights, tau, bg) -> dict:
    fwd = rasterize(model, cam, bg)
    rep = total_loss(fwd.image, target, model, weights, tau)
    g = rasterize_backward(model, cam, bg, rep.d_image, forward=fwd).as_dict()
    g["log_scales"] = g["log_scales"] + rep.d_log_scales
    return g


def smooth_enough(model, cam, target, tau, bg) -> bool:
    """Reject configurations sitting within MARGIN of a kink or branch switch."""
    raw = oracles.raw_alphas(model, cam)
    if raw.size and (np.min(np.abs(raw - oracles.ALPHA_MIN)) < MARGIN
                     or np.min(np.abs(raw - oracles.ALPHA_MAX)) < MARGIN):
        return False
    # transmittance termination test, per pixel in depth order
    proj = project_model(model, cam)
    live = [i for i in range(len(model)) if oracles.project_one(model, i, cam) is not None]
    T = np.ones((cam.height, cam.width))
    for row in sorted(range(len(live)), key=lambda r: (proj.depths[live[r]], live[r])):
        a = raw[row]
        a = np.where(a < oracles.ALPHA_MIN, 0.0, np.minimum(a, oracles.ALPHA_MAX))
        nxt = T * (1 - a)
        if np.any(np.abs(nxt - oracles.T_MIN) < MARGIN * oracles.T_MIN):
            return False
        T = np.where(nxt < oracles.T_MIN, T, nxt)
    if np.any(np.abs(proj.cache["colors_raw"][proj.visible]) < MARGIN):
        return False
    image = rasterize(model, cam, bg).image
    if np.min(np.abs(image - target)) < MARGIN:
        return False
    if np.min(np.abs(model.traces() - tau)) < MARGIN * tau:
        return False
    return True


def random_case(rng, size: int = 16):
    """A scene with 2-8 splats, at least one trace above the cap, random target."""
    while True:
        n = int(rng.integers(2, 9))
        degree = int(rng.integers(0, 4))
        model = scenes.random_model(rng, n, degree, spread=0.6, scale=(0.08, 0.35))
        cam = scenes.random_camera(rng, size)
        target = rng.uniform(0, 1, (size, size, 3))
        traces = np.sort(model.traces())
        tau = 0.5 * (traces[0] + traces[-1])
        bg = tuple(rng.uniform(0, 0.5, 3))
        weights = LossWeights(l1=rng.uniform(0.2, 1), l2=rng.uniform(0.2, 1), ssim=rng.uniform(0.1, 0.5),
                              cov=rng.uniform(0.01, 1))
        if not rasterize(model, cam, bg).visible.any():
            continue
        if smooth_enough(model, cam, target, tau, bg):
            return model, cam, target, weights, tau, bg


def check_case(model: SplatModel, cam, target, weights, tau, bg):
    """Returns ``(worst_excess, n_checked, largest_fd)``.

    ``worst_excess <= 0`` means every entry is within tolerance.
    """
    grads = analytic(model, cam, target, weights, tau, bg)
    worst = -math.inf
    checked = 0
    largest = 0.0
    for name in SplatModel.PARAMS:
        arr = getattr(model, name)
        flat = arr.reshape(-1)
        g_flat = grads[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + STEP
            up = loss_value(model, cam, target, weights, tau, bg)
            flat[k] = orig - STEP
            down = loss_value(model, cam, target, weights, tau, bg)
            flat[k] = orig
            fd = (up - down) / (2 * STEP)
            excess = abs(g_flat[k] - fd) - (ATOL + RTOL * abs(fd))
            worst = max(worst, excess)
            largest = max(largest, abs(fd))
            checked += 1
    return worst, checked, largest
