"""Photometric and covariance objective with per-pixel gradients."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .splat import SplatModel, trace_penalty_from_log_scales

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    l1: float = 0.5
    l2: float = 0.5
    ssim: float = 0.2
    cov: float = 0.01

    def __post_init__(self):
        for name in ("l1", "l2", "ssim", "cov"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    total: float
    l1: float
    l2: float
    ssim_term: float
    cov_term: float
    d_image: np.ndarray
    d_log_scales: np.ndarray


def _check_pair(rendered, target):
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch: {rendered.shape} vs {target.shape}")
    return rendered, target


def l1_loss(rendered, target):
    rendered, target = _check_pair(rendered, target)
    err = rendered - target
    return float(np.abs(err).mean()), np.sign(err) / err.size


def l2_loss(rendered, target):
    rendered, target = _check_pair(rendered, target)
    err = rendered - target
    return float((err * err).mean()), 2.0 * err / err.size


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


@lru_cache(maxsize=32)
def _filter_matrix(length: int, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Dense matrix for 1-D Gaussian filtering with reflected borders.

    Row ``i`` holds the weights that the filtered sample ``i`` puts on each
    input sample, so the adjoint filter is simply the transpose.
    """
    w = gaussian_window(size, sigma)
    half = size // 2
    out = np.zeros((length, length))
    if length == 1:
        out[0, 0] = 1.0
        return out
    period = 2 * (length - 1)
    for i in range(length):
        for k, wk in enumerate(w):
            j = (i + k - half) % period
            if j >= length:
                j = period - j
            out[i, j] += wk
    out.setflags(write=False)
    return out


def _separable(img: np.ndarray, kh: np.ndarray, kw: np.ndarray) -> np.ndarray:
    rows = np.tensordot(kh, img, axes=(1, 0))
    return np.moveaxis(np.tensordot(rows, kw, axes=(1, 1)), -1, 1)


def _blur(img: np.ndarray) -> np.ndarray:
    return _separable(img, _filter_matrix(img.shape[0]), _filter_matrix(img.shape[1]))


def _blur_adjoint(img: np.ndarray) -> np.ndarray:
    return _separable(img, _filter_matrix(img.shape[0]).T, _filter_matrix(img.shape[1]).T)


def ssim_map(x, y):
    """Per-pixel, per-channel SSIM of ``(H, W, C)`` images in [0, 1]."""
    x, y = _check_pair(x, y)
    mx, my = _blur(x), _blur(y)
    sxx = _blur(x * x) - mx * mx
    syy = _blur(y * y) - my * my
    sxy = _blur(x * y) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(x, y) -> float:
    return float(ssim_map(x, y).mean())


def ssim_loss(rendered, target):
    """``1 - mean SSIM`` and its gradient with respect to ``rendered``."""
    x, y = _check_pair(rendered, target)
    mx, my = _blur(x), _blur(y)
    sxx = _blur(x * x) - mx * mx
    syy = _blur(y * y) - my * my
    sxy = _blur(x * y) - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    g = -s / s.size
    d_mx = g * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2)
    d_exx = g * (-1.0 / b2)
    d_exy = g * (2.0 / a2)
    grad = _blur_adjoint(d_mx) + 2 * x * _blur_adjoint(d_exx) + y * _blur_adjoint(d_exy)
    return float(1.0 - s.mean()), grad


def covariance_loss(model: SplatModel, tau: float):
    """Sum of trace hinge penalties; gradient is w.r.t. log-scales only."""
    penalty, grad = trace_penalty_from_log_scales(model.log_scales, tau)
    return float(penalty.sum()), grad


def photometric_loss(rendered, target, weights: LossWeights):
    """Weighted L1 + L2 + SSIM terms and the combined image gradient."""
    l1, g1 = l1_loss(rendered, target)
    l2, g2 = l2_loss(rendered, target)
    ls, gs = ssim_loss(rendered, target)
    return l1, l2, ls, weights.l1 * g1 + weights.l2 * g2 + weights.ssim * gs


def total_loss(rendered, target, model: SplatModel, weights: LossWeights, tau: float) -> LossReport:
    l1, l2, ls, d_image = photometric_loss(rendered, target, weights)
    lc, d_logs = covariance_loss(model, tau)
    total = weights.l1 * l1 + weights.l2 * l2 + weights.ssim * ls + weights.cov * lc
    return LossReport(total, l1, l2, ls, lc, d_image, weights.cov * d_logs)
