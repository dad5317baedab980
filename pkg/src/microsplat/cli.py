"""Command-line entry point: ``microsplat <verb> ...``.

Failures print one JSON line on stderr and exit nonzero; any files the
failing command had started writing are removed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import synth
from .config import ConfigError, load_run_config, to_dict
from .plots import line_chart_svg
from .ply import read_ply, save_ply
from .refine import MergeThresholds, RefineConfig, default_merge_thresholds, importance_scores, refine_step, score_summary
from .render import Camera, rasterize
from .trainer import Dataset, heldout_psnr, radius_bin_histogram, train

log = logging.getLogger("microsplat")


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self):
        self.paths: list[Path] = []
        self.dirs: list[Path] = []

    def mkdir(self, path) -> Path:
        path = Path(path)
        missing = []
        p = path
        while not p.exists():
            missing.append(p)
            p = p.parent
        path.mkdir(parents=True, exist_ok=True)
        self.dirs.extend(reversed(missing))
        return path

    def claim(self, path) -> Path:
        path = Path(path)
        if path.parent != Path(""):
            self.mkdir(path.parent)
        self.paths.append(path)
        return path

    def write_bytes(self, path, data: bytes) -> None:
        self.claim(path).write_bytes(data)

    def write_text(self, path, text: str) -> None:
        self.claim(path).write_text(text)

    def rollback(self) -> None:
        for p in self.paths:
            if p.is_file():
                p.unlink()
        for d in reversed(self.dirs):
            try:
                d.rmdir()
            except OSError:
                pass


def load_cameras(path) -> list[Camera]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CliError("invalid_manifest", f"camera manifest is not valid JSON: {exc}") from None
    if not isinstance(data, list) or not data:
        raise CliError("invalid_manifest", "camera manifest must be a non-empty JSON array")
    try:
        return [Camera.from_dict(d) for d in data]
    except (TypeError, ValueError, KeyError) as exc:
        raise CliError("invalid_manifest", f"bad camera entry: {exc}") from None


def cameras_json(cameras) -> str:
    return json.dumps([c.to_dict() for c in cameras], indent=1) + "\n"


def png_bytes(image: np.ndarray) -> bytes:
    import io

    from PIL import Image

    px = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(px).save(buf, format="PNG")
    return buf.getvalue()


# verbs -----------------------------------------------------------------------

def cmd_train(args, out: Outputs) -> dict:
    cfg = load_run_config(args.config)
    root = Path(args.out_dir or cfg.output.dir)
    o = cfg.output
    scene = synth.generate(cfg.scene, cfg.train.raster)
    dataset = Dataset(scene.cameras, scene.images)
    log_path = out.claim(root / o.log)
    result = train(scene.init, dataset, cfg.train, log_path=log_path)

    model_bytes = save_ply(result.model)
    out.write_bytes(root / o.model, model_bytes)
    out.write_text(root / o.cameras, cameras_json(scene.cameras))
    its = [r["iteration"] for r in result.records]
    out.write_text(root / o.psnr_plot, line_chart_svg(
        its, [r["heldout_psnr"] for r in result.records], "Held-out PSNR", "iteration", "PSNR (dB)"))
    out.write_text(root / o.count_plot, line_chart_svg(
        its, [r["count"] for r in result.records], "Splat count", "iteration", "splats"))
    thr = result.merge_thresholds
    summary = {
        "count": len(result.model),
        "size_bytes": len(model_bytes),
        "heldout_psnr": result.records[-1]["heldout_psnr"],
        "peak_count": max(r["count"] for r in result.records),
        "trace_cap": result.trace_cap,
        "merge_thresholds": None if thr is None else {"xyz": thr.xyz, "col": thr.col, "scale": thr.scale},
        "events": result.events,
        "config": to_dict(cfg),
    }
    out.write_text(root / o.summary, json.dumps(summary, indent=1) + "\n")
    return {k: summary[k] for k in ("count", "size_bytes", "heldout_psnr", "peak_count")}


def cmd_render(args, out: Outputs) -> dict:
    model = read_ply(args.model)
    cams = load_cameras(args.camera)
    if not 0 <= args.index < len(cams):
        raise CliError("invalid_argument", f"camera index {args.index} out of range [0, {len(cams)})")
    res = rasterize(model, cams[args.index], tuple(args.background))
    out.write_bytes(args.out, png_bytes(res.image))
    return {"width": cams[args.index].width, "height": cams[args.index].height, "visible": int(res.visible.sum())}


def cmd_compact(args, out: Outputs) -> dict:
    model = read_ply(args.model)
    cfg = RefineConfig()
    q = cfg.prune_fraction if args.q is None else args.q
    if not 0 <= q <= 100:
        raise CliError("invalid_argument", "--q must lie in [0, 100]")
    auto = default_merge_thresholds(model, cfg)
    thr = MergeThresholds(
        auto.xyz if args.txyz is None else args.txyz,
        auto.col if args.tcol is None else args.tcol,
        auto.scale if args.tscale is None else args.tscale,
    )
    compacted, rep = refine_step(model, q, thr)
    data = save_ply(compacted)
    out.write_bytes(args.out, data)
    return {
        "count_before": rep.count_before,
        "pruned": rep.pruned,
        "merged_pairs": rep.merged_pairs,
        "count_after": rep.count_after,
        "size_bytes": len(data),
        "thresholds": {"xyz": thr.xyz, "col": thr.col, "scale": thr.scale},
    }


def cmd_stats(args, out: Outputs) -> dict:
    model = read_ply(args.model)
    stats = {
        "count": len(model),
        "size_bytes": os.path.getsize(args.model),
        "sh_degree": model.degree,
        "importance": score_summary(importance_scores(model)),
    }
    if args.cameras:
        counts, top = radius_bin_histogram(model, load_cameras(args.cameras))
        stats["radius_bins"] = counts.tolist()
        stats["radius_max"] = top
    return stats


def cmd_synth(args, out: Outputs) -> dict:
    cfg = load_run_config(args.config)
    root = Path(args.out_dir or cfg.output.dir)
    scene = synth.generate(cfg.scene, cfg.train.raster)
    out.write_text(root / "cameras.json", cameras_json(scene.cameras))
    out.write_bytes(root / "reference.ply", save_ply(scene.reference))
    out.write_bytes(root / "init.ply", save_ply(scene.init))
    for i, img in enumerate(scene.images):
        out.write_bytes(root / f"view_{i:03d}.png", png_bytes(img))
    held = Dataset(scene.cameras, scene.images).split(cfg.train.holdout_every)[1]
    psnr0 = heldout_psnr(scene.init, Dataset(scene.cameras, scene.images), held, cfg.scene.background)
    return {"views": len(scene.cameras), "reference_count": len(scene.reference),
            "init_count": len(scene.init), "init_heldout_psnr": psnr0}


def cmd_aniso(args, out: Outputs) -> dict:
    root = Path(args.out)
    per_seed = []
    for seed in range(args.seeds):
        per_seed.append({"seed": seed, "rows": synth.anisotropy_experiment(seed=seed)})
    ordered = all(r["rmse_anisotropic"] >= r["rmse_isotropic"] for s in per_seed for r in s["rows"])
    out.write_text(root / "anisotropy.json", json.dumps({"seeds": per_seed, "ordering_holds": ordered}, indent=1) + "\n")
    text = ["# Kernel anisotropy and SH fitting error", ""]
    for s in per_seed:
        text += [f"## field seed {s['seed']}", "", synth.format_anisotropy_table(s["rows"])]
    text.append(f"Anisotropic RMSE >= isotropic RMSE for every degree and seed: {ordered}\n")
    out.write_text(root / "anisotropy.md", "\n".join(text))
    return {"seeds": args.seeds, "ordering_holds": ordered}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="microsplat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("train", help="generate the configured scene and train on it")
    t.add_argument("--config", required=True)
    t.add_argument("--out-dir", help="override output.dir from the config")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render a PLY model from a manifest camera to PNG")
    r.add_argument("--model", required=True)
    r.add_argument("--camera", required=True, help="JSON array of camera records")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("compact", help="prune and merge a PLY model once")
    c.add_argument("--model", required=True)
    c.add_argument("--q", type=float, help="prune percentage (default 2)")
    c.add_argument("--txyz", type=float, help="merge distance; 0 disables merging")
    c.add_argument("--tcol", type=float)
    c.add_argument("--tscale", type=float)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compact)

    s = sub.add_parser("stats", help="count, size, radius histogram and importance summary")
    s.add_argument("--model", required=True)
    s.add_argument("--cameras")
    s.set_defaults(func=cmd_stats)

    y = sub.add_parser("synth", help="write the configured synthetic scene")
    y.add_argument("--config", required=True)
    y.add_argument("--out-dir")
    y.set_defaults(func=cmd_synth)

    a = sub.add_parser("aniso-demo", help="SH fitting error under isotropic and anisotropic kernels")
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int, default=10)
    a.set_defaults(func=cmd_aniso)
    return p


def _fail(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    except CliError as exc:
        _fail(exc.kind, str(exc))
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    out = Outputs()
    try:
        result = args.func(args, out)
    except CliError as exc:
        kind, msg = exc.kind, str(exc)
    except ConfigError as exc:
        kind, msg = "invalid_config", str(exc)
    except FileNotFoundError as exc:
        kind, msg = "not_found", f"{exc.filename}: no such file"
    except ValueError as exc:
        kind, msg = "invalid_input", str(exc)
    except Exception as exc:  # noqa: BLE001 - any failure maps to one error line
        kind, msg = type(exc).__name__, str(exc)
    else:
        sys.stdout.write(json.dumps(result) + "\n")
        return 0
    out.rollback()
    _fail(kind, msg.replace("\n", " "))
    return 1


if __name__ == "__main__":
    sys.exit(main())
