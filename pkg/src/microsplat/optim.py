"""Adam over the splat parameter groups, with state that follows topology edits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .splat import SplatModel


@dataclass(frozen=True)
class LearningRates:
    position: float = 1.6e-4
    position_final: float = 1.6e-6
    sh_dc: float = 2.5e-3
    sh_rest: float = 1.25e-4
    opacity: float = 5e-2
    scale: float = 5e-3
    rotation: float = 1e-3


def exponential_decay(step: int, total: int, start: float, end: float) -> float:
    """Log-linear interpolation from ``start`` (step 0) to ``end`` (step ``total``)."""
    if total <= 0 or start <= 0 or end <= 0:
        return start
    t = min(max(step / total, 0.0), 1.0)
    return math.exp((1 - t) * math.log(start) + t * math.log(end))


def group_rates(lrs: LearningRates, degree: int, step: int, total: int, position_scale: float = 1.0):
    """Per-parameter learning rates (broadcastable against the parameter arrays)."""
    sh_lr = np.full((1, (degree + 1) ** 2, 1), lrs.sh_rest)
    sh_lr[0, 0, 0] = lrs.sh_dc
    return {
        "positions": exponential_decay(step, total, lrs.position, lrs.position_final) * position_scale,
        "rotations": lrs.rotation,
        "log_scales": lrs.scale,
        "opacity_logits": lrs.opacity,
        "sh": sh_lr,
    }


class Adam:
    """Adaptive moment estimation; one moment pair per model parameter array."""

    def __init__(self, model: SplatModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {p: np.zeros_like(a) for p, a in model.params().items()}
        self.v = {p: np.zeros_like(a) for p, a in model.params().items()}

    def __len__(self) -> int:
        return len(self.m["positions"])

    def step(self, model: SplatModel, grads: dict[str, np.ndarray], lrs: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in SplatModel.PARAMS:
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = lrs[name] * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            setattr(model, name, getattr(model, name) - update)

    def remap(self, origin: np.ndarray) -> None:
        """Reorder moments after a topology edit; ``origin == -1`` gets zeros."""
        origin = np.asarray(origin, dtype=np.int64)
        fresh = origin < 0
        src = np.where(fresh, 0, origin)
        for state in (self.m, self.v):
            for name, arr in state.items():
                if len(arr) == 0:
                    new = np.zeros((origin.size,) + arr.shape[1:])
                else:
                    new = arr[src].copy()
                    new[fresh] = 0.0
                state[name] = new
