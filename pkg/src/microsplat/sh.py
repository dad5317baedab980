"""Real spherical harmonics up to degree 3 (graphics convention).

Coefficient layout is ``(..., (L+1)**2, 3)``: basis index first, RGB last.
Basis ordering and signs follow the usual 3DGS tables so coefficients are
interchangeable with PLY files written by that ecosystem.
"""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_DEGREE = 3


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def degree_from_count(count: int) -> int:
    degree = int(round(np.sqrt(count))) - 1
    if degree < 0 or num_coeffs(degree) != count:
        raise ValueError(f"{count} is not a valid SH coefficient count")
    return degree


def rgb_to_dc(rgb):
    return (np.asarray(rgb, dtype=np.float64)) / C0


def dc_to_rgb(dc):
    return np.asarray(dc, dtype=np.float64) * C0


def basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the basis at unit directions ``(..., 3)`` -> ``(..., K)``."""
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_DEGREE}], got {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, C0)]
    if degree >= 1:
        out += [-C1 * y, C1 * z, -C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * x * z,
            C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            C3[0] * y * (3.0 * xx - yy),
            C3[1] * x * y * z,
            C3[2] * y * (4.0 * zz - xx - yy),
            C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            C3[4] * x * (4.0 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3.0 * yy),
        ]
    return np.stack(out, axis=-1)


def basis_jacobian(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Partial derivatives of each basis polynomial, ``(..., K, 3)``.

    Derivatives are of the polynomial forms in :func:`basis` taken as
    functions on R^3; callers chain through the direction normalization.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    zero = np.zeros_like(x)
    rows = [(zero, zero, zero)]
    if degree >= 1:
        c = np.full_like(x, C1)
        rows += [(zero, -c, zero), (zero, zero, c), (-c, zero, zero)]
    if degree >= 2:
        rows += [
            (C2[0] * y, C2[0] * x, zero),
            (zero, C2[1] * z, C2[1] * y),
            (-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z),
            (C2[3] * z, zero, C2[3] * x),
            (2.0 * C2[4] * x, -2.0 * C2[4] * y, zero),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        rows += [
            (6.0 * C3[0] * x * y, C3[0] * (3.0 * xx - 3.0 * yy), zero),
            (C3[1] * y * z, C3[1] * x * z, C3[1] * x * y),
            (-2.0 * C3[2] * x * y, C3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * C3[2] * y * z),
            (-6.0 * C3[3] * x * z, -6.0 * C3[3] * y * z, C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)),
            (C3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * C3[4] * x * y, 8.0 * C3[4] * x * z),
            (2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)),
            (C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, zero),
        ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def sh_evaluate(sh_coeffs, view_direction, degree: int | None = None) -> np.ndarray:
    """Sum the real-SH expansion along ``view_direction``.

    ``sh_coeffs`` is ``(K, 3)`` for one splat or ``(N, K, 3)`` for many, in
    which case ``view_direction`` is ``(N, 3)``. No clamping is applied.
    """
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    stored = degree_from_count(sh_coeffs.shape[-2])
    if degree is None:
        degree = stored
    if degree > stored or degree < 0:
        raise ValueError(f"degree {degree} exceeds stored SH degree {stored}")
    k = num_coeffs(degree)
    b = basis(view_direction, degree)
    return np.einsum("...k,...kc->...c", b, sh_coeffs[..., :k, :])
