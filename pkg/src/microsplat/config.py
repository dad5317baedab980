"""JSON run configuration: scene + training + outputs, with strict key checking.

Every key is optional; omitted keys take the dataclass defaults. Unknown
keys anywhere in the document are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .densify import GrowthConfig
from .loss import LossWeights
from .optim import LearningRates
from .refine import RefineConfig
from .render import RasterSettings
from .synth import SceneSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "run"
    model: str = "model.ply"
    log: str = "train_log.jsonl"
    psnr_plot: str = "psnr.svg"
    count_plot: str = "count.svg"
    cameras: str = "cameras.json"
    summary: str = "summary.json"


@dataclass(frozen=True)
class RunConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


_NESTED = {
    (TrainConfig, "weights"): LossWeights,
    (TrainConfig, "growth"): GrowthConfig,
    (TrainConfig, "refine"): RefineConfig,
    (TrainConfig, "lr"): LearningRates,
    (TrainConfig, "raster"): RasterSettings,
    (RunConfig, "scene"): SceneSpec,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "output"): OutputConfig,
}
_TUPLES = {"background"}


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) at {path or 'top level'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        where = f"{path}.{key}" if path else key
        if sub is not None:
            kwargs[key] = _build(sub, value, where)
        elif key in _TUPLES:
            kwargs[key] = tuple(float(v) for v in value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path or 'config'}: {exc}") from None


def run_config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    try:
        cfg.train.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid train: {exc}") from None
    return cfg


def load_run_config(path) -> RunConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    return run_config_from_dict(data)


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def toy_config(output_dir: str = "run") -> RunConfig:
    """The desk-scale acceptance run: 64x64, 16 views, 400-splat reference, 3000 iterations."""
    return RunConfig(
        scene=SceneSpec(seed=42, reference_count=400, camera_count=16, width=64, height=64, init_fraction=0.2),
        train=TrainConfig(total_iterations=3000, refine_start=1500, seed=42, growth=GrowthConfig(percentile=75.0)),
        output=OutputConfig(dir=output_dir),
    )
