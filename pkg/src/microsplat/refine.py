"""Refinement stage: importance-score pruning and redundancy-driven pair merging."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .splat import SplatModel, normalize_quat, sigmoid


@dataclass(frozen=True)
class RefineConfig:
    prune_fraction: float = 2.0
    tau_xyz: float | None = None
    tau_col: float = 0.05
    tau_scale: float | None = None
    refine_interval: int = 500
    xyz_median_mult: float = 0.5
    scale_median_mult: float = 0.5
    prune_enabled: bool = True
    merge_enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.prune_fraction < 100:
            raise ValueError("prune_fraction must be in [0, 100)")
        for name in ("tau_xyz", "tau_col", "tau_scale"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.refine_interval < 1:
            raise ValueError("refine_interval must be positive")


@dataclass
class MergeThresholds:
    xyz: float
    col: float
    scale: float


@dataclass
class RefineReport:
    pruned: int
    merged_pairs: int
    count_before: int
    count_after: int
    score_summary: dict
    origin: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {
            "pruned": self.pruned,
            "merged_pairs": self.merged_pairs,
            "count_before": self.count_before,
            "count_after": self.count_after,
            "scores": self.score_summary,
        }


def importance_scores(model: SplatModel) -> np.ndarray:
    """Opacity times the largest per-axis standard deviation (world units)."""
    return sigmoid(model.opacity_logits) * np.exp(model.log_scales.max(axis=1, initial=-np.inf))


def score_summary(scores: np.ndarray) -> dict:
    if scores.size == 0:
        return {"min": None, "median": None, "max": None, "mean": None}
    return {
        "min": float(scores.min()),
        "median": float(np.median(scores)),
        "max": float(scores.max()),
        "mean": float(scores.mean()),
    }


def prune(model: SplatModel, q: float):
    """Drop the ``floor(q N / 100)`` lowest-importance splats (ties: lower id first).

    Returns ``(model', pruned_ids, kept_ids)``.
    """
    if not 0 <= q < 100:
        raise ValueError("q must be in [0, 100)")
    n = len(model)
    k = math.floor(q * n / 100)
    scores = importance_scores(model)
    order = np.lexsort((np.arange(n), scores))
    pruned = np.sort(order[:k])
    keep = np.ones(n, dtype=bool)
    keep[pruned] = False
    kept = np.flatnonzero(keep)
    return model.take(kept), pruned, kept


class SpatialHashGrid:
    """Uniform grid over 3-D points keyed by integer cell coordinates."""

    STENCIL = tuple(itertools.product((-1, 0, 1), repeat=3))

    def __init__(self, points: np.ndarray, cell_size: float):
        self.points = np.asarray(points, dtype=np.float64)
        self.cell_size = cell_size
        if math.isfinite(cell_size) and cell_size > 0:
            keys = np.floor(self.points / cell_size).astype(np.int64)
        else:
            keys = np.zeros((len(self.points), 3), dtype=np.int64)
        self.keys = keys
        self.cells: dict[tuple, np.ndarray] = {}
        if len(keys):
            order = np.lexsort(keys.T[::-1])
            sorted_keys = keys[order]
            splits = np.flatnonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1)) + 1
            for chunk in np.split(order, splits):
                self.cells[tuple(keys[chunk[0]])] = np.sort(chunk)

    def candidate_pairs(self) -> np.ndarray:
        """All ``(i, j)`` with ``i < j`` whose cells are 27-stencil neighbours."""
        out = []
        for key, members in self.cells.items():
            for off in self.STENCIL:
                other = self.cells.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
                if other is None:
                    continue
                i = np.repeat(members, other.size)
                j = np.tile(other, members.size)
                mask = i < j
                if mask.any():
                    out.append(np.stack([i[mask], j[mask]], axis=1))
        if not out:
            return np.zeros((0, 2), dtype=np.int64)
        pairs = np.concatenate(out)
        return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def default_merge_thresholds(model: SplatModel, cfg: RefineConfig = RefineConfig()) -> MergeThresholds:
    """Data-adaptive thresholds; explicit config values win."""
    xyz = cfg.tau_xyz
    if xyz is None:
        if len(model) >= 2:
            dist, _ = cKDTree(model.positions).query(model.positions, k=2)
            xyz = cfg.xyz_median_mult * float(np.median(dist[:, 1]))
        else:
            xyz = 0.0
    scale = cfg.tau_scale
    if scale is None:
        scale = cfg.scale_median_mult * float(np.median(np.linalg.norm(model.scales, axis=1))) if len(model) else 0.0
    return MergeThresholds(float(xyz), float(cfg.tau_col), float(scale))


def qualifying_pairs(model: SplatModel, tau_xyz: float, tau_col: float, tau_scale: float):
    """Pairs passing all three proximity tests, sorted by distance then ids."""
    if len(model) < 2 or not tau_xyz > 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    grid = SpatialHashGrid(model.positions, tau_xyz)
    pairs = grid.candidate_pairs()
    if pairs.size == 0:
        return pairs, np.zeros(0)
    i, j = pairs[:, 0], pairs[:, 1]
    dist = np.linalg.norm(model.positions[i] - model.positions[j], axis=1)
    col = np.linalg.norm(model.sh[i, 0] - model.sh[j, 0], axis=1)
    sig = model.scales
    scl = np.linalg.norm(sig[i] - sig[j], axis=1)
    ok = (dist <= tau_xyz) & (col <= tau_col) & (scl <= tau_scale)
    pairs, dist = pairs[ok], dist[ok]
    order = np.lexsort((pairs[:, 1], pairs[:, 0], dist))
    return pairs[order], dist[order]


def merge_attributes(model: SplatModel, i: np.ndarray, j: np.ndarray) -> SplatModel:
    """Average each pair; quaternions are sign-aligned before averaging."""
    qi, qj = model.rotations[i], model.rotations[j]
    sign = np.where(np.sum(qi * qj, axis=1) < 0, -1.0, 1.0)
    return SplatModel(
        0.5 * (model.positions[i] + model.positions[j]),
        normalize_quat(0.5 * (qi + sign[:, None] * qj)),
        0.5 * (model.log_scales[i] + model.log_scales[j]),
        0.5 * (model.opacity_logits[i] + model.opacity_logits[j]),
        0.5 * (model.sh[i] + model.sh[j]),
    )


def merge(model: SplatModel, tau_xyz: float, tau_col: float, tau_scale: float):
    """Greedy nearest-first merging; each splat joins at most one pair.

    The merged splat takes the slot of the lower index of its pair. Returns
    ``(model', pairs, origin)`` where ``origin`` is -1 for merged outputs.
    """
    n = len(model)
    candidates, _ = qualifying_pairs(model, tau_xyz, tau_col, tau_scale)
    used = np.zeros(n, dtype=bool)
    chosen = []
    for a, b in candidates:
        if not used[a] and not used[b]:
            used[a] = used[b] = True
            chosen.append((a, b))
    if not chosen:
        return model.copy(), np.zeros((0, 2), dtype=np.int64), np.arange(n)
    chosen = np.array(chosen, dtype=np.int64)
    merged = merge_attributes(model, chosen[:, 0], chosen[:, 1])
    out = model.copy()
    for p in SplatModel.PARAMS:
        getattr(out, p)[chosen[:, 0]] = getattr(merged, p)
    keep = np.ones(n, dtype=bool)
    keep[chosen[:, 1]] = False
    origin = np.arange(n)
    origin[chosen[:, 0]] = -1
    kept = np.flatnonzero(keep)
    return out.take(kept), chosen, origin[kept]


def refine_step(model: SplatModel, q: float, thresholds: MergeThresholds,
                do_prune: bool = True, do_merge: bool = True) -> tuple[SplatModel, RefineReport]:
    """Prune then merge once, composing the index maps of both flows."""
    n = len(model)
    scores = importance_scores(model)
    origin = np.arange(n)
    pruned = np.zeros(0, dtype=np.int64)
    if do_prune:
        model, pruned, kept = prune(model, q)
        origin = origin[kept]
    pairs = np.zeros((0, 2), dtype=np.int64)
    if do_merge:
        model, pairs, merge_origin = merge(model, thresholds.xyz, thresholds.col, thresholds.scale)
        origin = np.where(merge_origin >= 0, origin[np.maximum(merge_origin, 0)], -1)
    report = RefineReport(int(pruned.size), int(len(pairs)), n, len(model), score_summary(scores), origin)
    return model, report
