"""Binary little-endian PLY in the 3DGS vertex layout."""

from __future__ import annotations

import numpy as np

from . import sh as shlib
from .splat import SplatModel


class PlyError(ValueError):
    pass


def property_names(degree: int) -> list[str]:
    n_rest = 3 * (shlib.num_coeffs(degree) - 1)
    return (
        ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        + [f"f_rest_{i}" for i in range(n_rest)]
        + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    )


def save_ply(model: SplatModel) -> bytes:
    n = len(model)
    degree = model.degree
    k = shlib.num_coeffs(degree)
    names = property_names(degree)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    # f_rest is channel-major: all red rest coefficients, then green, then blue
    rest = np.transpose(model.sh[:, 1:, :], (0, 2, 1)).reshape(n, 3 * (k - 1))
    cols = np.concatenate(
        [
            model.positions,
            np.zeros((n, 3)),
            model.sh[:, 0, :],
            rest,
            model.opacity_logits[:, None],
            model.log_scales,
            model.rotations,
        ],
        axis=1,
    )
    payload = cols.astype("<f4").tobytes()
    return ("\n".join(header) + "\n").encode("ascii") + payload


def load_ply(data: bytes) -> SplatModel:
    marker = b"end_header\n"
    end = data.find(marker)
    if not data.startswith(b"ply\n") or end < 0:
        raise PlyError("malformed PLY header")
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(marker):]
    count = None
    props: list[str] = []
    fmt_ok = False
    in_vertex = False
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if parts[1:] != ["binary_little_endian", "1.0"]:
                raise PlyError(f"unsupported PLY format: {' '.join(parts[1:])}")
            fmt_ok = True
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyError(f"malformed element line: {line!r}")
            in_vertex = parts[1] == "vertex"
            if not in_vertex:
                raise PlyError(f"unexpected element {parts[1]!r}")
            try:
                count = int(parts[2])
            except ValueError:
                raise PlyError(f"bad vertex count {parts[2]!r}") from None
        elif parts[0] == "property":
            if not in_vertex:
                raise PlyError("property outside the vertex element")
            if len(parts) != 3:
                raise PlyError(f"unsupported property declaration: {line!r}")
            if parts[1] not in ("float", "float32"):
                raise PlyError(f"property {parts[2]} has non-float type {parts[1]}")
            props.append(parts[2])
        else:
            raise PlyError(f"unrecognised header line: {line!r}")
    if not fmt_ok or count is None or count < 0:
        raise PlyError("header lacks format or vertex count")

    n_rest = sum(1 for p in props if p.startswith("f_rest_"))
    if n_rest % 3:
        raise PlyError(f"f_rest count {n_rest} is not a multiple of 3")
    try:
        degree = shlib.degree_from_count(n_rest // 3 + 1)
    except ValueError:
        raise PlyError(f"f_rest count {n_rest} matches no SH degree") from None
    for name in property_names(degree):
        if name not in props:
            raise PlyError(f"missing property {name}")

    stride = 4 * len(props)
    if len(body) < stride * count:
        raise PlyError(f"truncated payload: expected {stride * count} bytes, got {len(body)}")
    table = np.frombuffer(body[: stride * count], dtype="<f4").reshape(count, len(props)).astype(np.float64)
    col = {name: i for i, name in enumerate(props)}

    def pick(names):
        return table[:, [col[nm] for nm in names]]

    k = shlib.num_coeffs(degree)
    sh = np.zeros((count, k, 3))
    sh[:, 0, :] = pick(["f_dc_0", "f_dc_1", "f_dc_2"])
    rest = pick([f"f_rest_{i}" for i in range(n_rest)]).reshape(count, 3, k - 1)
    sh[:, 1:, :] = np.transpose(rest, (0, 2, 1))
    return SplatModel(
        pick(["x", "y", "z"]),
        pick(["rot_0", "rot_1", "rot_2", "rot_3"]),
        pick(["scale_0", "scale_1", "scale_2"]),
        pick(["opacity"])[:, 0],
        sh,
    )


def write_ply(path, model: SplatModel) -> int:
    data = save_ply(model)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def read_ply(path) -> SplatModel:
    with open(path, "rb") as f:
        return load_ply(f.read())
