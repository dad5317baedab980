"""Pinhole projection and tile-based front-to-back splat rasterization.

Forward and backward are plain numpy. The image is cut into square tiles;
each tile composites only the splats whose contribution ellipse (the region
where a splat's alpha reaches the 1/255 floor) touches one of its pixel
centers, so the result equals a full per-pixel scan over every splat.
Pixel ``(row, col)`` is centred at image coordinates ``(x=col, y=row)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sh as shlib
from .splat import InvalidParameterError, SplatModel, quat_rotmat_vjp, quat_to_rotmat, sigmoid


@dataclass(frozen=True)
class RasterSettings:
    dilation: float = 0.3
    alpha_max: float = 0.99
    alpha_min: float = 1.0 / 255.0
    transmittance_min: float = 1e-4
    tile_size: int = 16
    footprint_sigma_mult: float = 1.0


DEFAULT_SETTINGS = RasterSettings()


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray
    near: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidParameterError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError("image size must be at least 1x1")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-8):
            raise InvalidParameterError("camera rotation is not orthonormal")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "near": float(self.near),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        known = {"fx", "fy", "cx", "cy", "width", "height", "rotation", "translation", "near"}
        unknown = set(d) - known
        if unknown:
            raise InvalidParameterError(f"unknown camera fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None, near=0.01) -> "Camera":
        """Camera at ``eye`` looking at ``target``; x right, y down, z forward."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        cx = (width - 1) / 2.0 if cx is None else cx
        cy = (height - 1) / 2.0 if cy is None else cy
        return cls(fx, fy, cx, cy, width, height, rot, -rot @ eye, near)


@dataclass
class ScreenSplat:
    mean_2d: np.ndarray
    cov_2d: np.ndarray
    depth: float
    footprint_radius: float


def footprint_radius(cov_2d, sigma_mult: float = 1.0):
    """sqrt of the largest eigenvalue of 2x2 covariance(s), closed form."""
    cov_2d = np.asarray(cov_2d, dtype=np.float64)
    a, b, c = cov_2d[..., 0, 0], cov_2d[..., 0, 1], cov_2d[..., 1, 1]
    lam = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    return sigma_mult * np.sqrt(np.maximum(lam, 0.0))


@dataclass
class Projection:
    """Per-splat screen-space state for one camera; also feeds the backward pass."""

    visible: np.ndarray
    depths: np.ndarray
    means2d: np.ndarray
    cov2d: np.ndarray
    conics: np.ndarray
    radii: np.ndarray
    bbox: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    skipped: int
    cache: dict = field(default_factory=dict, repr=False)


def project_model(model: SplatModel, camera: Camera, settings: RasterSettings = DEFAULT_SETTINGS) -> Projection:
    n = len(model)
    W = camera.rotation
    fx, fy = camera.fx, camera.fy

    qnorm = np.linalg.norm(model.rotations, axis=1)
    qn = model.rotations / np.where(qnorm > 0, qnorm, 1.0)[:, None]
    R = quat_to_rotmat(qn)
    s = np.exp(model.log_scales)
    M3 = R * s[:, None, :]
    cov3 = M3 @ np.swapaxes(M3, 1, 2)

    t = model.positions @ W.T + camera.translation
    depths = t[:, 2].copy()
    in_front = depths >= camera.near
    tz = np.where(in_front, depths, 1.0)
    tx, ty = t[:, 0], t[:, 1]

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = fx / tz
    J[:, 0, 2] = -fx * tx / tz**2
    J[:, 1, 1] = fy / tz
    J[:, 1, 2] = -fy * ty / tz**2
    M = J @ W
    cov2d = M @ cov3 @ np.swapaxes(M, 1, 2)
    cov2d[:, 0, 0] += settings.dilation
    cov2d[:, 1, 1] += settings.dilation

    means2d = np.stack([fx * tx / tz + camera.cx, fy * ty / tz + camera.cy], axis=1)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    invertible = np.isfinite(det) & (det > 0) & np.isfinite(means2d).all(axis=1)
    skipped = int(np.count_nonzero(in_front & ~invertible))
    safe_det = np.where(invertible, det, 1.0)
    conics = np.stack([c / safe_det, -b / safe_det, a / safe_det], axis=1)

    opac = sigmoid(model.opacity_logits)
    # alpha * exp(-q/2) >= alpha_min  <=>  q <= 2 ln(alpha / alpha_min)
    k2 = 2.0 * np.log(np.maximum(opac, 1e-300) / settings.alpha_min)
    reach = k2 > 0
    k = np.sqrt(np.maximum(k2, 0.0))
    hx = k * np.sqrt(np.maximum(a, 0.0)) + 1e-3
    hy = k * np.sqrt(np.maximum(c, 0.0)) + 1e-3
    with np.errstate(invalid="ignore"):
        x0 = np.ceil(means2d[:, 0] - hx)
        x1 = np.floor(means2d[:, 0] + hx)
        y0 = np.ceil(means2d[:, 1] - hy)
        y1 = np.floor(means2d[:, 1] + hy)
    x0 = np.clip(np.nan_to_num(x0, nan=1.0), 0, camera.width - 1)
    x1 = np.clip(np.nan_to_num(x1, nan=-1.0), -1, camera.width - 1)
    y0 = np.clip(np.nan_to_num(y0, nan=1.0), 0, camera.height - 1)
    y1 = np.clip(np.nan_to_num(y1, nan=-1.0), -1, camera.height - 1)
    bbox = np.stack([x0, x1, y0, y1], axis=1).astype(np.int64)
    on_screen = (bbox[:, 0] <= bbox[:, 1]) & (bbox[:, 2] <= bbox[:, 3])
    visible = in_front & invertible & reach & on_screen

    radii = footprint_radius(cov2d, settings.footprint_sigma_mult)

    cam_center = camera.center
    v = cam_center - model.positions
    vnorm = np.linalg.norm(v, axis=1)
    dirs = v / np.where(vnorm > 0, vnorm, 1.0)[:, None]
    basis = shlib.basis(dirs, model.degree)
    colors_raw = np.einsum("nk,nkc->nc", basis, model.sh)
    colors = np.maximum(colors_raw, 0.0)

    cache = dict(qn=qn, qnorm=qnorm, R=R, s=s, M3=M3, cov3=cov3, t=t, tz=tz, J=J, M=M,
                 dirs=dirs, vnorm=vnorm, basis=basis, colors_raw=colors_raw)
    return Projection(visible, depths, means2d, cov2d, conics, radii, bbox, colors, opac, skipped, cache)


def project(splat, camera: Camera, settings: RasterSettings = DEFAULT_SETTINGS) -> ScreenSplat | None:
    """Project one splat; ``None`` means culled."""
    model = SplatModel.from_splats([splat])
    p = project_model(model, camera, settings)
    if not p.visible[0]:
        return None
    return ScreenSplat(p.means2d[0].copy(), p.cov2d[0].copy(), float(p.depths[0]), float(p.radii[0]))


@dataclass
class RenderResult:
    image: np.ndarray
    transmittance: np.ndarray
    projection: Projection

    @property
    def visible(self) -> np.ndarray:
        return self.projection.visible

    @property
    def skipped(self) -> int:
        return self.projection.skipped

    def screen_splats(self) -> list[ScreenSplat | None]:
        p = self.projection
        return [
            ScreenSplat(p.means2d[i].copy(), p.cov2d[i].copy(), float(p.depths[i]), float(p.radii[i]))
            if p.visible[i] else None
            for i in range(len(p.visible))
        ]


@dataclass
class GradientBundle:
    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    g_map: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {p: getattr(self, p) for p in SplatModel.PARAMS}


def bin_to_tiles(bbox: np.ndarray, keep: np.ndarray, order_keys: tuple, width: int, height: int, tile: int):
    """Group splat ids per tile.

    ``bbox`` rows are inclusive pixel ranges ``(x0, x1, y0, y1)``. Within a
    tile, ids are ordered by ``order_keys`` (lexsort keys, last is primary).
    Returns ``{tile_index: ids}`` for non-empty tiles.
    """
    ids = np.flatnonzero(keep)
    if ids.size == 0:
        return {}
    tiles_x = (width + tile - 1) // tile
    bx = bbox[ids]
    tx0, tx1 = bx[:, 0] // tile, bx[:, 1] // tile
    ty0, ty1 = bx[:, 2] // tile, bx[:, 3] // tile
    nx, ny = tx1 - tx0 + 1, ty1 - ty0 + 1
    counts = nx * ny
    rep = np.repeat(np.arange(ids.size), counts)
    local = np.arange(rep.size) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_x = tx0[rep] + local % nx[rep]
    tile_y = ty0[rep] + local // nx[rep]
    tile_id = tile_y * tiles_x + tile_x
    splat = ids[rep]
    order = np.lexsort(tuple(key[splat] for key in order_keys) + (tile_id,))
    tile_id, splat = tile_id[order], splat[order]
    bounds = np.flatnonzero(np.diff(tile_id)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [tile_id.size]])
    return {int(tile_id[a]): splat[a:b] for a, b in zip(starts, ends)}


def tile_pixels(tile_index: int, width: int, height: int, tile: int):
    tiles_x = (width + tile - 1) // tile
    ty, tx = divmod(tile_index, tiles_x)
    xs = np.arange(tx * tile, min((tx + 1) * tile, width))
    ys = np.arange(ty * tile, min((ty + 1) * tile, height))
    return xs, ys


def _tile_alphas(proj: Projection, ids, px, py, settings: RasterSettings):
    dx = px[None, :] - proj.means2d[ids, 0][:, None]
    dy = py[None, :] - proj.means2d[ids, 1][:, None]
    ca, cb, cc = (proj.conics[ids, j][:, None] for j in range(3))
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    gauss = np.exp(power)
    raw = proj.opacities[ids][:, None] * gauss
    alpha = np.where(raw >= settings.alpha_min, np.minimum(raw, settings.alpha_max), 0.0)
    incl = np.cumprod(1.0 - alpha, axis=0)
    active = (alpha > 0) & (incl >= settings.transmittance_min)
    alpha = np.where(active, alpha, 0.0)
    trans_incl = np.cumprod(1.0 - alpha, axis=0)
    trans = np.vstack([np.ones((1, px.size)), trans_incl[:-1]])
    return dx, dy, gauss, raw, alpha, active, trans, trans_incl[-1]


def _tile_order(proj: Projection, settings: RasterSettings, camera: Camera):
    ids = np.arange(len(proj.depths))
    return bin_to_tiles(proj.bbox, proj.visible, (ids, proj.depths), camera.width, camera.height, settings.tile_size)


def rasterize(model: SplatModel, camera: Camera, background=(0.0, 0.0, 0.0),
              settings: RasterSettings = DEFAULT_SETTINGS) -> RenderResult:
    """Composite ``model`` front to back, depth ascending (ties by splat index)."""
    bg = np.asarray(background, dtype=np.float64)
    H, W = camera.height, camera.width
    image = np.empty((H, W, 3))
    image[:] = bg
    trans_out = np.ones((H, W))
    proj = project_model(model, camera, settings)
    tiles = _tile_order(proj, settings, camera)
    proj.cache["tiles"] = tiles
    for tile_index, ids in tiles.items():
        xs, ys = tile_pixels(tile_index, W, H, settings.tile_size)
        px = np.tile(xs, ys.size).astype(np.float64)
        py = np.repeat(ys, xs.size).astype(np.float64)
        _, _, _, _, alpha, _, trans, t_final = _tile_alphas(proj, ids, px, py, settings)
        color = (alpha * trans).T @ proj.colors[ids] + t_final[:, None] * bg
        image[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] = color.reshape(ys.size, xs.size, 3)
        trans_out[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1] = t_final.reshape(ys.size, xs.size)
    return RenderResult(image, trans_out, proj)


def rasterize_backward(model: SplatModel, camera: Camera, background, dL_dimage: np.ndarray,
                       settings: RasterSettings = DEFAULT_SETTINGS,
                       forward: RenderResult | None = None) -> GradientBundle:
    """Analytic gradients of ``sum(dL_dimage * image)`` w.r.t. every splat parameter.

    Per-pixel compositing state is recomputed tile by tile. Passing the
    matching ``forward`` result skips re-projection.
    """
    H, W = camera.height, camera.width
    dL_dimage = np.asarray(dL_dimage, dtype=np.float64)
    if dL_dimage.shape != (H, W, 3):
        raise InvalidParameterError(f"dL_dimage shape {dL_dimage.shape} does not match image {(H, W, 3)}")
    bg = np.asarray(background, dtype=np.float64)
    n = len(model)
    if forward is None:
        proj = project_model(model, camera, settings)
        tiles = _tile_order(proj, settings, camera)
    else:
        proj = forward.projection
        tiles = proj.cache.get("tiles") or _tile_order(proj, settings, camera)

    d_mean = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    d_opac = np.zeros(n)
    d_color = np.zeros((n, 3))

    for tile_index, ids in tiles.items():
        xs, ys = tile_pixels(tile_index, W, H, settings.tile_size)
        px = np.tile(xs, ys.size).astype(np.float64)
        py = np.repeat(ys, xs.size).astype(np.float64)
        dC = dL_dimage[ys[0]:ys[-1] + 1, xs[0]:xs[-1] + 1].reshape(-1, 3)
        dx, dy, gauss, raw, alpha, active, trans, t_final = _tile_alphas(proj, ids, px, py, settings)
        weight = alpha * trans
        cd = proj.colors[ids] @ dC.T
        contrib = weight * cd
        after = np.cumsum(contrib[::-1], axis=0)[::-1] - contrib
        after += t_final * (dC @ bg)
        d_alpha = cd * trans - after / (1.0 - alpha)
        d_raw = np.where(active & (raw < settings.alpha_max), d_alpha, 0.0)
        d_power = d_raw * proj.opacities[ids][:, None] * gauss
        ca, cb, cc = (proj.conics[ids, j][:, None] for j in range(3))
        np.add.at(d_opac, ids, (d_raw * gauss).sum(axis=1))
        np.add.at(d_mean, ids, np.stack([(d_power * (ca * dx + cb * dy)).sum(axis=1),
                                         (d_power * (cb * dx + cc * dy)).sum(axis=1)], axis=1))
        np.add.at(d_conic, ids, np.stack([(-0.5 * d_power * dx * dx).sum(axis=1),
                                          (-d_power * dx * dy).sum(axis=1),
                                          (-0.5 * d_power * dy * dy).sum(axis=1)], axis=1))
        np.add.at(d_color, ids, weight @ dC)

    grads = _chain_to_params(model, camera, proj, d_mean, d_conic, d_opac, d_color)
    g_map = np.linalg.norm(dL_dimage, axis=2)
    return GradientBundle(*grads, g_map=g_map)


def _chain_to_params(model, camera, proj, d_mean, d_conic, d_opac, d_color):
    c = proj.cache
    vis = proj.visible
    d_mean = np.where(vis[:, None], d_mean, 0.0)
    d_conic = np.where(vis[:, None], d_conic, 0.0)
    d_opac = np.where(vis, d_opac, 0.0)
    d_color = np.where(vis[:, None], d_color, 0.0)

    Wr = camera.rotation
    fx, fy = camera.fx, camera.fy
    conic = np.empty((len(model), 2, 2))
    conic[:, 0, 0] = proj.conics[:, 0]
    conic[:, 0, 1] = conic[:, 1, 0] = proj.conics[:, 1]
    conic[:, 1, 1] = proj.conics[:, 2]
    g_conic = np.empty_like(conic)
    g_conic[:, 0, 0] = d_conic[:, 0]
    g_conic[:, 0, 1] = g_conic[:, 1, 0] = 0.5 * d_conic[:, 1]
    g_conic[:, 1, 1] = d_conic[:, 2]
    d_cov2d = -conic @ g_conic @ conic

    M, cov3 = c["M"], c["cov3"]
    d_M = 2.0 * d_cov2d @ M @ cov3
    d_cov3 = np.swapaxes(M, 1, 2) @ d_cov2d @ M
    d_J = d_M @ Wr.T

    tx, ty, tz = c["t"][:, 0], c["t"][:, 1], c["tz"]
    d_t = np.zeros((len(model), 3))
    d_t[:, 0] = -fx / tz**2 * d_J[:, 0, 2] + fx / tz * d_mean[:, 0]
    d_t[:, 1] = -fy / tz**2 * d_J[:, 1, 2] + fy / tz * d_mean[:, 1]
    d_t[:, 2] = (
        -fx / tz**2 * d_J[:, 0, 0]
        + 2.0 * fx * tx / tz**3 * d_J[:, 0, 2]
        - fy / tz**2 * d_J[:, 1, 1]
        + 2.0 * fy * ty / tz**3 * d_J[:, 1, 2]
        - fx * tx / tz**2 * d_mean[:, 0]
        - fy * ty / tz**2 * d_mean[:, 1]
    )
    d_pos = d_t @ Wr

    R, s, M3 = c["R"], c["s"], c["M3"]
    d_M3 = 2.0 * d_cov3 @ M3
    d_log_scales = np.einsum("nik,nik->nk", d_M3, R) * s
    d_R = d_M3 * s[:, None, :]
    qn, qnorm = c["qn"], c["qnorm"]
    d_qn = quat_rotmat_vjp(qn, d_R)
    d_rot = (d_qn - qn * np.sum(qn * d_qn, axis=1, keepdims=True)) / np.where(qnorm > 0, qnorm, 1.0)[:, None]

    d_raw_color = np.where(c["colors_raw"] > 0, d_color, 0.0)
    basis = c["basis"]
    d_sh = basis[:, :, None] * d_raw_color[:, None, :]
    if model.degree > 0:
        coeff_dot = np.einsum("nkc,nc->nk", model.sh, d_raw_color)
        d_dir = np.einsum("nk,nkd->nd", coeff_dot, shlib.basis_jacobian(c["dirs"], model.degree))
        dirs, vnorm = c["dirs"], c["vnorm"]
        d_v = (d_dir - dirs * np.sum(dirs * d_dir, axis=1, keepdims=True)) / np.where(vnorm > 0, vnorm, 1.0)[:, None]
        d_pos = d_pos - d_v

    opac = proj.opacities
    d_logit = d_opac * opac * (1.0 - opac)
    return d_pos, d_rot, d_log_scales, d_logit, d_sh
