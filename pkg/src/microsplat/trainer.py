"""Two-stage optimisation loop: growth until ``refine_start``, refinement after."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .densify import GrowthConfig, adaptive_threshold, local_error_scores, select_and_split
from .loss import LossWeights, total_loss
from .optim import Adam, LearningRates, group_rates
from .refine import MergeThresholds, RefineConfig, default_merge_thresholds, refine_step
from .render import Camera, DEFAULT_SETTINGS, RasterSettings, project_model, rasterize, rasterize_backward
from .splat import SplatModel, trace_penalty_from_log_scales

log = logging.getLogger(__name__)

PSNR_INF = float("inf")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_iterations: int = 30000
    refine_start: int | None = None
    weights: LossWeights = LossWeights()
    trace_cap: float | None = None
    trace_cap_mult: float = 9.0
    growth: GrowthConfig = GrowthConfig()
    refine: RefineConfig = RefineConfig()
    lr: LearningRates = LearningRates()
    position_lr_scale: float = 1.0
    seed: int = 0
    log_interval: int = 100
    holdout_every: int = 8
    background: tuple = (0.0, 0.0, 0.0)
    raster: RasterSettings = DEFAULT_SETTINGS

    @property
    def t_refine(self) -> int:
        return self.total_iterations // 2 if self.refine_start is None else self.refine_start

    def validate(self) -> None:
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be positive")
        if not 0 < self.t_refine < self.total_iterations:
            raise ValueError("refine_start must lie strictly inside (0, total_iterations)")
        if self.log_interval < 1 or self.holdout_every < 2:
            raise ValueError("log_interval must be >= 1 and holdout_every >= 2")


@dataclass
class Dataset:
    cameras: list[Camera]
    images: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.cameras)

    def split(self, holdout_every: int = 8):
        """Indices ``(train, held_out)``; every ``holdout_every``-th view is held out."""
        idx = np.arange(len(self))
        held = idx % holdout_every == 0
        return idx[~held], idx[held]


@dataclass
class TrainResult:
    model: SplatModel
    records: list[dict]
    trace_cap: float
    merge_thresholds: MergeThresholds | None = None
    events: list[dict] = field(default_factory=list)


def psnr(rendered, target) -> float:
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"shape mismatch: {rendered.shape} vs {target.shape}")
    mse = float(np.mean((rendered - target) ** 2))
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def mean_footprint_radius(model: SplatModel, cameras, settings: RasterSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Per-splat mean screen radius over the cameras where the splat is visible (0 if never)."""
    total = np.zeros(len(model))
    seen = np.zeros(len(model))
    for cam in cameras:
        p = project_model(model, cam, settings)
        total += np.where(p.visible, p.radii, 0.0)
        seen += p.visible
    return np.divide(total, seen, out=np.zeros(len(model)), where=seen > 0)


def radius_bin_histogram(model: SplatModel, cameras, settings: RasterSettings = DEFAULT_SETTINGS, bins: int = 10):
    """Counts of mean footprint radius over ``bins`` equal-width bins on ``[0, max]``.

    Returns ``(counts, max_radius)``.
    """
    if len(model) == 0:
        return np.zeros(bins, dtype=np.int64), 0.0
    r = mean_footprint_radius(model, cameras, settings)
    top = float(r.max())
    if top <= 0:
        counts = np.zeros(bins, dtype=np.int64)
        counts[0] = len(model)
        return counts, top
    counts, _ = np.histogram(r, bins=bins, range=(0.0, top))
    return counts.astype(np.int64), top


def auto_trace_cap(model: SplatModel, mult: float = 9.0) -> float:
    if len(model) == 0:
        raise ValueError("cannot derive a trace cap from an empty model")
    return mult * float(np.median(model.traces()))


def heldout_psnr(model: SplatModel, dataset: Dataset, ids, background, settings=DEFAULT_SETTINGS) -> float:
    values = [psnr(rasterize(model, dataset.cameras[i], background, settings).image, dataset.images[i]) for i in ids]
    return float(np.mean(values)) if values else float("nan")


def train(model: SplatModel, dataset: Dataset, cfg: TrainConfig, log_path=None, progress=None) -> TrainResult:
    """Optimise ``model`` against ``dataset``; returns the final model and log records.

    The loop is deterministic for a fixed config: views are visited round
    robin over a seed-shuffled order of the training split.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    train_ids, held_ids = dataset.split(cfg.holdout_every)
    if train_ids.size == 0:
        raise TrainingError("no training views after hold-out split")
    if len(model) == 0:
        raise TrainingError("initial model has no splats")
    model = model.copy()
    model.normalize_rotations()
    rng = np.random.default_rng(cfg.seed)
    order = train_ids[rng.permutation(train_ids.size)]
    tau = cfg.trace_cap if cfg.trace_cap is not None else auto_trace_cap(model, cfg.trace_cap_mult)
    t_refine = cfg.t_refine
    bg = np.asarray(cfg.background, dtype=np.float64)
    opt = Adam(model)
    score_sum = np.zeros(len(model))
    score_seen = np.zeros(len(model))
    thresholds: MergeThresholds | None = None
    records: list[dict] = []
    events: list[dict] = []
    start = time.perf_counter()
    sink = open(log_path, "w") if log_path is not None else None
    held_cams = [dataset.cameras[i] for i in held_ids] or [dataset.cameras[i] for i in train_ids]

    def emit(it, rep, event=None):
        counts, top = radius_bin_histogram(model, held_cams, cfg.raster)
        rec = {
            "iteration": it,
            "loss": rep.total,
            "l1": rep.l1,
            "l2": rep.l2,
            "ssim_term": rep.ssim_term,
            "cov_term": rep.cov_term,
            "heldout_psnr": heldout_psnr(model, dataset, held_ids, bg, cfg.raster),
            "count": len(model),
            "radius_bins": counts.tolist(),
            "radius_max": top,
            "trace_cap": tau,
            "event": event,
            "wall_clock": time.perf_counter() - start,
        }
        records.append(rec)
        if sink is not None:
            sink.write(json.dumps(rec) + "\n")
            sink.flush()

    try:
        for it in range(1, cfg.total_iterations + 1):
            view = int(order[(it - 1) % order.size])
            cam, target = dataset.cameras[view], dataset.images[view]
            fwd = rasterize(model, cam, bg, cfg.raster)
            rep = total_loss(fwd.image, target, model, cfg.weights, tau)
            if not math.isfinite(rep.total):
                raise TrainingError(f"non-finite loss at iteration {it}")
            grads = rasterize_backward(model, cam, bg, rep.d_image, cfg.raster, forward=fwd)

            growing = it <= t_refine and cfg.growth.enabled
            if growing:
                m_k = local_error_scores(grads.g_map, fwd.projection, cfg.raster.tile_size)
                score_sum += np.where(fwd.visible, m_k, 0.0)
                score_seen += fwd.visible

            g = grads.as_dict()
            g["log_scales"] = g["log_scales"] + rep.d_log_scales
            lrs = group_rates(cfg.lr, model.degree, it - 1, cfg.total_iterations, cfg.position_lr_scale)
            opt.step(model, g, lrs)
            model.normalize_rotations()

            event = None
            if growing and it % cfg.growth.densify_interval == 0:
                scores = np.divide(score_sum, score_seen, out=np.zeros(len(model)), where=score_seen > 0)
                eps = adaptive_threshold(scores, cfg.growth.percentile)
                penalties, _ = trace_penalty_from_log_scales(model.log_scales, tau)
                model, split = select_and_split(model, scores, eps, penalties, cfg.growth)
                opt.remap(split.origin)
                score_sum = np.zeros(len(model))
                score_seen = np.zeros(len(model))
                event = {"kind": "split", "iteration": it, **split.summary()}
            elif it > t_refine and (it - t_refine) % cfg.refine.refine_interval == 0:
                if thresholds is None:
                    thresholds = default_merge_thresholds(model, cfg.refine)
                model, ref = refine_step(model, cfg.refine.prune_fraction, thresholds,
                                         cfg.refine.prune_enabled, cfg.refine.merge_enabled)
                opt.remap(ref.origin)
                event = {"kind": "refine", "iteration": it, **ref.summary()}
                if len(model) == 0:
                    raise TrainingError(f"splat population reached zero at iteration {it}")
            if event is not None:
                events.append(event)
                log.debug("event %s", event)

            if it % cfg.log_interval == 0 or it == cfg.total_iterations or event is not None:
                emit(it, rep, event["kind"] if event else None)
            if progress is not None:
                progress(it, model, rep)
    finally:
        if sink is not None:
            sink.close()
    return TrainResult(model, records, tau, thresholds, events)
