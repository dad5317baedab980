"""Growth stage: footprint-local error scores and score/trace-triggered splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .render import Projection, bin_to_tiles, tile_pixels
from .splat import SplatModel, quat_to_rotmat, normalize_quat


@dataclass(frozen=True)
class GrowthConfig:
    percentile: float = 90.0
    clones_per_split: int = 2
    scale_halving_factor: float = 0.5
    densify_interval: int = 100
    max_splats: int = 2_000_000
    enabled: bool = True

    def __post_init__(self):
        if not 0 < self.percentile <= 100:
            raise ValueError("percentile must be in (0, 100]")
        if self.clones_per_split < 2:
            raise ValueError("clones_per_split must be >= 2")
        if not 0 < self.scale_halving_factor < 1:
            raise ValueError("scale_halving_factor must be in (0, 1)")
        if self.densify_interval < 1 or self.max_splats < 1:
            raise ValueError("densify_interval and max_splats must be positive")


@dataclass
class SplitReport:
    scores: np.ndarray
    threshold: float
    split_by_score: np.ndarray
    split_by_trace: np.ndarray
    count_before: int
    count_after: int
    origin: np.ndarray = field(repr=False)

    @property
    def split_ids(self) -> np.ndarray:
        return np.union1d(self.split_by_score, self.split_by_trace)

    def summary(self) -> dict:
        return {
            "threshold": float(self.threshold),
            "split_by_score": int(self.split_by_score.size),
            "split_by_trace": int(self.split_by_trace.size),
            "count_before": self.count_before,
            "count_after": self.count_after,
        }


def _screen_arrays(screens):
    if isinstance(screens, Projection):
        return screens.means2d, screens.radii, screens.visible
    n = len(screens)
    means = np.zeros((n, 2))
    radii = np.zeros(n)
    visible = np.zeros(n, dtype=bool)
    for i, s in enumerate(screens):
        if s is not None:
            means[i] = s.mean_2d
            radii[i] = s.footprint_radius
            visible[i] = True
    return means, radii, visible


def local_error_scores(g_map: np.ndarray, screens, tile: int = 16) -> np.ndarray:
    """Mean of ``g_map`` over the pixel centres inside each splat's footprint disc.

    ``screens`` is a :class:`Projection` or a list of ``ScreenSplat | None``.
    Culled splats and discs covering no pixel centre score 0.
    """
    g_map = np.asarray(g_map, dtype=np.float64)
    H, W = g_map.shape
    means, radii, visible = _screen_arrays(screens)
    n = len(radii)
    sums = np.zeros(n)
    counts = np.zeros(n)
    if n == 0:
        return sums
    with np.errstate(invalid="ignore"):
        x0 = np.clip(np.ceil(means[:, 0] - radii), 0, W - 1)
        x1 = np.clip(np.floor(means[:, 0] + radii), -1, W - 1)
        y0 = np.clip(np.ceil(means[:, 1] - radii), 0, H - 1)
        y1 = np.clip(np.floor(means[:, 1] + radii), -1, H - 1)
    bbox = np.stack([x0, x1, y0, y1], axis=1)
    keep = visible & np.isfinite(bbox).all(axis=1)
    bbox = np.where(np.isfinite(bbox), bbox, -1).astype(np.int64)
    keep &= (bbox[:, 0] <= bbox[:, 1]) & (bbox[:, 2] <= bbox[:, 3])
    tiles = bin_to_tiles(bbox, keep, (np.arange(n),), W, H, tile)
    r2 = radii * radii
    for tile_index, ids in tiles.items():
        xs, ys = tile_pixels(tile_index, W, H, tile)
        px = np.tile(xs, ys.size).astype(np.float64)
        py = np.repeat(ys, xs.size).astype(np.float64)
        g = g_map[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1].reshape(-1)
        d2 = (px[None, :] - means[ids, 0][:, None]) ** 2 + (py[None, :] - means[ids, 1][:, None]) ** 2
        inside = d2 <= r2[ids][:, None]
        np.add.at(sums, ids, inside @ g)
        np.add.at(counts, ids, inside.sum(axis=1))
    return np.divide(sums, counts, out=np.zeros(n), where=counts > 0)


def adaptive_threshold(scores, percentile: float) -> float:
    """Nearest-rank percentile of ``scores``."""
    scores = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    if scores.size == 0:
        raise ValueError("cannot take a percentile of an empty score set")
    rank = max(1, math.ceil(percentile / 100.0 * scores.size))
    return float(scores[min(rank, scores.size) - 1])


def select_and_split(model: SplatModel, scores, threshold: float, penalties,
                     cfg: GrowthConfig = GrowthConfig()) -> tuple[SplatModel, SplitReport]:
    """Replace every splat with ``score > threshold`` or ``penalty > 0`` by smaller clones.

    Clones shrink every axis by ``scale_halving_factor`` and are spread
    evenly over ``[-0.5, 0.5]`` of the parent's largest standard deviation
    along that axis. Survivors keep their order; clones are appended in
    parent order. ``report.origin`` maps each output splat to its source
    index, or -1 for clones.
    """
    scores = np.asarray(scores, dtype=np.float64)
    penalties = np.asarray(penalties, dtype=np.float64)
    n = len(model)
    if scores.shape != (n,) or penalties.shape != (n,):
        raise ValueError("scores and penalties must align with the model")
    by_score = np.flatnonzero(scores > threshold)
    by_trace = np.flatnonzero(penalties > 0)
    selected = np.union1d(by_score, by_trace)

    extra = cfg.clones_per_split - 1
    room = max(cfg.max_splats - n, 0) // extra
    if selected.size > room:
        order = np.lexsort((selected, -scores[selected]))
        selected = np.sort(selected[order[:room]])
        by_score = np.intersect1d(by_score, selected)
        by_trace = np.intersect1d(by_trace, selected)

    if selected.size == 0:
        report = SplitReport(scores, threshold, by_score, by_trace, n, n, np.arange(n))
        return model.copy(), report

    keep = np.ones(n, dtype=bool)
    keep[selected] = False
    survivors = model.take(np.flatnonzero(keep))

    parents = model.take(selected)
    c = cfg.clones_per_split
    rot = quat_to_rotmat(normalize_quat(parents.rotations))
    scales = parents.scales
    major = np.argmax(scales, axis=1)
    axis = rot[np.arange(selected.size), :, major]
    sigma = scales[np.arange(selected.size), major]
    offsets = np.linspace(-0.5, 0.5, c)
    clones = parents.take(np.repeat(np.arange(selected.size), c))
    clones.positions = clones.positions + (np.repeat(axis * sigma[:, None], c, axis=0)
                                           * np.tile(offsets, selected.size)[:, None])
    clones.log_scales = clones.log_scales + math.log(cfg.scale_halving_factor)

    out = SplatModel.concat([survivors, clones])
    origin = np.concatenate([np.flatnonzero(keep), np.full(len(clones), -1)])
    report = SplitReport(scores, threshold, by_score, by_trace, n, len(out), origin)
    return out, report
