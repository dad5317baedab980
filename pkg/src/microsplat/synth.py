"""Deterministic synthetic scenes and the kernel-anisotropy SH fitting experiment."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.spatial import cKDTree

from . import sh as shlib
from .render import Camera, RasterSettings, DEFAULT_SETTINGS, rasterize
from .splat import SplatModel, logit, normalize_quat


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 42
    reference_count: int = 400
    extent: float = 1.0
    cluster_fraction: float = 0.6
    n_clusters: int = 8
    camera_count: int = 16
    camera_radius: float = 4.0
    camera_elevation_deg: float = 20.0
    fov_deg: float = 40.0
    width: int = 64
    height: int = 64
    init_fraction: float = 0.2
    init_opacity: float = 0.3
    sh_degree: int = 3
    background: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.reference_count < 1 or self.camera_count < 1 or self.n_clusters < 1:
            raise ValueError("counts must be >= 1")
        if self.width < 16 or self.height < 16:
            raise ValueError("resolution must be at least 16x16")
        if not 0 <= self.cluster_fraction <= 1 or not 0 < self.init_fraction <= 1:
            raise ValueError("fractions must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        return d


@dataclass
class SyntheticScene:
    spec: SceneSpec
    reference: SplatModel
    cameras: list[Camera]
    images: list[np.ndarray]
    init: SplatModel


def _random_quats(rng, n):
    return normalize_quat(rng.normal(size=(n, 4)))


def camera_ring(spec: SceneSpec) -> list[Camera]:
    f = 0.5 * spec.width / np.tan(np.radians(spec.fov_deg) / 2)
    elev = np.radians(spec.camera_elevation_deg)
    cams = []
    for k in range(spec.camera_count):
        phi = 2 * np.pi * k / spec.camera_count
        eye = spec.camera_radius * np.array([np.cos(elev) * np.cos(phi), np.cos(elev) * np.sin(phi), np.sin(elev)])
        cams.append(Camera.look_at(eye, np.zeros(3), np.array([0.0, 0.0, 1.0]), f, f, spec.width, spec.height))
    return cams


def reference_model(spec: SceneSpec, rng: np.random.Generator) -> SplatModel:
    """Small saturated clusters over a few large, smoothly coloured splats."""
    n = spec.reference_count
    n_cluster = int(round(spec.cluster_fraction * n))
    n_smooth = n - n_cluster
    ext = spec.extent

    smooth_pos = rng.normal(size=(n_smooth, 3))
    smooth_pos *= (ext * 0.75 * rng.uniform(0.3, 1.0, n_smooth) ** (1 / 3) / np.linalg.norm(smooth_pos, axis=1))[:, None]
    smooth_scale = ext * rng.uniform(0.12, 0.25, (n_smooth, 1)) * rng.uniform(0.7, 1.0, (n_smooth, 3))
    smooth_rgb = 0.25 + 0.5 * (0.5 + 0.5 * np.tanh(smooth_pos / ext * np.array([1.2, -0.9, 1.5])))
    smooth_opacity = rng.uniform(0.6, 0.9, n_smooth)

    centers = rng.normal(size=(spec.n_clusters, 3))
    centers *= (ext * 0.6 * rng.uniform(0.4, 1.0, spec.n_clusters) / np.linalg.norm(centers, axis=1))[:, None]
    palette = rng.uniform(0.05, 0.95, (spec.n_clusters, 3))
    member = rng.integers(0, spec.n_clusters, n_cluster)
    cluster_pos = centers[member] + rng.normal(0, 0.1 * ext, (n_cluster, 3))
    cluster_scale = ext * rng.uniform(0.03, 0.07, (n_cluster, 1)) * rng.uniform(0.6, 1.0, (n_cluster, 3))
    cluster_rgb = np.clip(palette[member] + rng.normal(0, 0.15, (n_cluster, 3)), 0.02, 0.98)
    cluster_opacity = rng.uniform(0.7, 0.95, n_cluster)

    positions = np.concatenate([smooth_pos, cluster_pos])
    rgb = np.concatenate([smooth_rgb, cluster_rgb])
    sh = np.zeros((n, 4, 3))
    sh[:, 0] = shlib.rgb_to_dc(rgb)
    sh[:, 1:] = rng.normal(0, 0.04, (n, 3, 3))
    return SplatModel(
        positions,
        _random_quats(rng, n),
        np.log(np.concatenate([smooth_scale, cluster_scale])),
        logit(np.concatenate([smooth_opacity, cluster_opacity])),
        sh,
    )


def init_model(spec: SceneSpec, reference: SplatModel, rng: np.random.Generator) -> SplatModel:
    """Sparse, gray, enlarged isotropic stand-in for an SfM initialisation."""
    n = len(reference)
    m = max(1, int(round(spec.init_fraction * n)))
    pick = np.sort(rng.choice(n, size=m, replace=False))
    positions = reference.positions[pick] + rng.normal(0, 0.05 * spec.extent, (m, 3))
    if m > 1:
        k = min(4, m)
        dist, _ = cKDTree(positions).query(positions, k=k)
        radius = np.sqrt(np.mean(dist[:, 1:] ** 2, axis=1))
    else:
        radius = np.full(m, 0.2 * spec.extent)
    k = shlib.num_coeffs(spec.sh_degree)
    sh = np.zeros((m, k, 3))
    sh[:, 0] = shlib.rgb_to_dc(0.5)
    rot = np.zeros((m, 4))
    rot[:, 0] = 1.0
    return SplatModel(
        positions,
        rot,
        np.log(np.repeat(radius[:, None], 3, axis=1)),
        np.full(m, float(logit(spec.init_opacity))),
        sh,
    )


def generate(spec: SceneSpec, settings: RasterSettings = DEFAULT_SETTINGS) -> SyntheticScene:
    rng = np.random.default_rng(spec.seed)
    reference = reference_model(spec, rng)
    cameras = camera_ring(spec)
    images = [rasterize(reference, cam, spec.background, settings).image for cam in cameras]
    init = init_model(spec, reference, rng)
    return SyntheticScene(spec, reference, cameras, images, init)


# Kernel-anisotropy SH fitting experiment ----------------------------------

ISOTROPIC_COV = 0.5 * np.eye(3)
ANISOTROPIC_COV = np.diag([1.5, 0.5, 0.5])


def sphere_quadrature(n: int = 48):
    """Gauss-Legendre in cos(theta) times uniform phi; weights sum to 4 pi."""
    x, wx = np.polynomial.legendre.leggauss(n)
    phi = (np.arange(2 * n) + 0.5) * np.pi / n
    cos_t = np.repeat(x, phi.size)
    sin_t = np.sqrt(1 - cos_t**2)
    ph = np.tile(phi, n)
    dirs = np.stack([sin_t * np.cos(ph), sin_t * np.sin(ph), cos_t], axis=1)
    weights = np.repeat(wx, phi.size) * (np.pi / n)
    return dirs, weights


def directional_field(seed: int, n_lobes: int = 5, sharpness: float = 6.0):
    """A positive scalar field on the sphere made of random exponential lobes."""
    rng = np.random.default_rng(seed)
    axes = rng.normal(size=(n_lobes, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    amps = rng.uniform(0.3, 1.0, n_lobes)

    def field(dirs):
        dirs = np.asarray(dirs, dtype=np.float64)
        return 0.2 + np.exp(sharpness * (dirs @ axes.T - 1.0)) @ amps

    return field


def kernel_weights(dirs: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Directional variance ``d^T cov d`` of the kernel along each sample direction."""
    return np.einsum("ni,ij,nj->n", dirs, cov, dirs)


def fit_sh(values, dirs, weights, degree: int) -> np.ndarray:
    """Weighted least-squares SH coefficients for samples ``values`` at ``dirs``."""
    b = shlib.basis(dirs, degree)
    bw = b * weights[:, None]
    return np.linalg.solve(bw.T @ b, bw.T @ values)


def sh_fit_rmse(field, cov, degree: int, quad_n: int = 48) -> float:
    """RMSE over the whole sphere of the kernel-weighted SH fit of ``field``."""
    dirs, qw = sphere_quadrature(quad_n)
    f = field(dirs)
    w = kernel_weights(dirs, cov)
    coeffs = fit_sh(f, dirs, qw * w, degree)
    resid = shlib.basis(dirs, degree) @ coeffs - f
    return float(np.sqrt(np.sum(qw * resid**2) / qw.sum()))


def anisotropy_experiment(degrees=(1, 2, 3), seed: int = 0, field=None, quad_n: int = 48) -> list[dict]:
    """Per-degree SH fitting RMSE through the isotropic and anisotropic kernels."""
    field = directional_field(seed) if field is None else field
    rows = []
    for L in degrees:
        rows.append({
            "degree": int(L),
            "rmse_isotropic": sh_fit_rmse(field, ISOTROPIC_COV, L, quad_n),
            "rmse_anisotropic": sh_fit_rmse(field, ANISOTROPIC_COV, L, quad_n),
        })
    return rows


def format_anisotropy_table(rows: list[dict]) -> str:
    lines = ["| degree | RMSE isotropic (0.5 I) | RMSE anisotropic diag(1.5, 0.5, 0.5) |",
             "|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['degree']} | {r['rmse_isotropic']:.6f} | {r['rmse_anisotropic']:.6f} |")
    return "\n".join(lines) + "\n"
