"""Gaussian primitives: parameter containers and covariance algebra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sh as shlib


class InvalidParameterError(ValueError):
    """Raised for non-finite or malformed splat parameters."""


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions ``(..., 4)`` ordered (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def quat_rotmat_vjp(q: np.ndarray, d_r: np.ndarray) -> np.ndarray:
    """Pull a gradient on R(q) back to the (unit) quaternion components."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    g = d_r
    dw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0]
              - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1])
    dx = 2 * (y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0] - 2 * x * g[..., 1, 1]
              - w * g[..., 1, 2] + z * g[..., 2, 0] + w * g[..., 2, 1] - 2 * x * g[..., 2, 2])
    dy = 2 * (-2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2] + x * g[..., 1, 0]
              + z * g[..., 1, 2] - w * g[..., 2, 0] + z * g[..., 2, 1] - 2 * y * g[..., 2, 2])
    dz = 2 * (-2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2] + w * g[..., 1, 0]
              - 2 * z * g[..., 1, 1] + y * g[..., 1, 2] + x * g[..., 2, 0] + y * g[..., 2, 1])
    return np.stack([dw, dx, dy, dz], axis=-1)


def normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def covariance_from_params(rotation, log_scales) -> np.ndarray:
    """Return ``R diag(exp(2 s)) R^T`` for one or many splats."""
    rotation = np.asarray(rotation, dtype=np.float64)
    log_scales = np.asarray(log_scales, dtype=np.float64)
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(log_scales))):
        raise InvalidParameterError("rotation and log_scales must be finite")
    norm = np.linalg.norm(rotation, axis=-1)
    if np.any(norm == 0):
        raise InvalidParameterError("rotation quaternion has zero norm")
    r = quat_to_rotmat(rotation / norm[..., None])
    m = r * np.exp(log_scales)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def trace_from_log_scales(log_scales) -> np.ndarray:
    return np.exp(2.0 * np.asarray(log_scales, dtype=np.float64)).sum(axis=-1)


def trace_penalty(cov, tau: float):
    """Hinge ``max(tr(cov) - tau, 0)``; accepts ``(3, 3)`` or ``(N, 3, 3)``."""
    if not tau > 0:
        raise InvalidParameterError("trace cap must be positive")
    cov = np.asarray(cov, dtype=np.float64)
    tr = np.trace(cov, axis1=-2, axis2=-1)
    return np.maximum(tr - tau, 0.0)


def trace_penalty_from_log_scales(log_scales, tau: float):
    """Penalty and its gradient w.r.t. log-scales, without building covariances.

    At ``tr == tau`` the subgradient is taken as zero.
    """
    if not tau > 0:
        raise InvalidParameterError("trace cap must be positive")
    sq = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    excess = sq.sum(axis=-1) - tau
    active = excess > 0
    penalty = np.where(active, excess, 0.0)
    grad = np.where(active[..., None], 2.0 * sq, 0.0)
    return penalty, grad


@dataclass
class GaussianSplat:
    position: np.ndarray
    rotation: np.ndarray
    log_scales: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_params(self.rotation, self.log_scales)


@dataclass
class SplatModel:
    """Struct-of-arrays splat collection.

    ``sh`` has shape ``(N, (degree+1)**2, 3)``.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    PARAMS = ("positions", "rotations", "log_scales", "opacity_logits", "sh")

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.sh = np.asarray(self.sh, dtype=np.float64)
        if self.sh.ndim != 3 or self.sh.shape[0] != n or self.sh.shape[2] != 3:
            raise InvalidParameterError(f"sh must have shape (N, K, 3), got {self.sh.shape}")
        shlib.degree_from_count(self.sh.shape[1])

    @classmethod
    def empty(cls, degree: int = 3) -> "SplatModel":
        k = shlib.num_coeffs(degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, k, 3)))

    @classmethod
    def from_splats(cls, splats, degree: int | None = None) -> "SplatModel":
        splats = list(splats)
        if not splats:
            return cls.empty(3 if degree is None else degree)
        return cls(
            np.stack([s.position for s in splats]),
            np.stack([s.rotation for s in splats]),
            np.stack([s.log_scales for s in splats]),
            np.array([s.opacity_logit for s in splats]),
            np.stack([s.sh_coeffs for s in splats]),
        )

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> GaussianSplat:
        return GaussianSplat(
            self.positions[i].copy(),
            self.rotations[i].copy(),
            self.log_scales[i].copy(),
            float(self.opacity_logits[i]),
            self.sh[i].copy(),
        )

    @property
    def degree(self) -> int:
        return shlib.degree_from_count(self.sh.shape[1])

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def covariances(self) -> np.ndarray:
        return covariance_from_params(self.rotations, self.log_scales)

    def traces(self) -> np.ndarray:
        return trace_from_log_scales(self.log_scales)

    def copy(self) -> "SplatModel":
        return SplatModel(*(getattr(self, p).copy() for p in self.PARAMS))

    def take(self, index) -> "SplatModel":
        index = np.asarray(index)
        if index.dtype != bool:
            index = index.astype(np.intp)
        return SplatModel(*(getattr(self, p)[index] for p in self.PARAMS))

    @staticmethod
    def concat(models) -> "SplatModel":
        models = list(models)
        return SplatModel(*(np.concatenate([getattr(m, p) for m in models]) for p in SplatModel.PARAMS))

    def params(self) -> dict[str, np.ndarray]:
        return {p: getattr(self, p) for p in self.PARAMS}

    def normalize_rotations(self) -> None:
        self.rotations = normalize_quat(self.rotations)

    def validate(self) -> None:
        for p in self.PARAMS:
            if not np.all(np.isfinite(getattr(self, p))):
                raise InvalidParameterError(f"non-finite values in {p}")
        if np.any(np.linalg.norm(self.rotations, axis=1) == 0):
            raise InvalidParameterError("zero-norm rotation quaternion")

    def equals(self, other: "SplatModel") -> bool:
        return all(
            getattr(self, p).shape == getattr(other, p).shape
            and np.array_equal(getattr(self, p), getattr(other, p))
            for p in self.PARAMS
        )
