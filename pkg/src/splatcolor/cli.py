"""Command-line interface tying the pipeline together.

Subcommands: colorize, render, segment, baseline, metrics, synth. Exit codes:
0 on success, 1 for input errors, 2 for numerical failures. Every subcommand
is deterministic given its flags and seed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io
from .baseline import OptimizerConfig, optimize, write_trace
from .metrics import image_metrics
from .rasterizer import RasterConfig, render
from .scene import GaussianScene
from .sh import basis_size
from .solver import SolveConfig, colorize, refine, segment
from .synthetic import fixture


def _expand_band_lambdas(band_values: list[float], sh_order: int) -> np.ndarray:
    if len(band_values) != sh_order + 1:
        raise ValueError(
            f"--lambda needs one value per SH band ({sh_order + 1} for order {sh_order}), "
            f"got {len(band_values)}"
        )
    out: list[float] = []
    for band, value in enumerate(band_values):
        out.extend([value] * (2 * band + 1))
    return np.asarray(out)


def _load_targets(cams: io.CameraSet, directory) -> list:
    return [io.read_image(p) for p in cams.resolve_images(directory)]


def _reshape_bank(scene: GaussianScene, channels: int, sh_order: int) -> GaussianScene:
    """Zero coefficient bank matching the requested channels/order, if needed."""
    if scene.channels == channels and scene.sh_order == sh_order:
        return scene
    bank = np.zeros((scene.n_gaussians, channels, basis_size(sh_order)))
    return scene.with_coeffs(bank, sh_order=sh_order)


def _cmd_colorize(args) -> int:
    scene = io.read_ply(args.scene)
    cams = io.read_cameras(args.cameras)
    targets = _load_targets(cams, args.targets)
    channels = targets[0].channels
    for rec, t in zip(cams.records, targets):
        if t.channels != channels:
            raise ValueError(f"view '{rec.id}': target has {t.channels} channels, expected {channels}")

    lam = _expand_band_lambdas(args.lam, args.sh_order) if args.lam else None
    config = SolveConfig(
        sh_order=args.sh_order,
        lambda_schedule=lam,
        n_refine=args.refine,
        min_total_visibility=args.min_visibility,
    )
    scene = _reshape_bank(scene, channels, args.sh_order)
    views = cams.cameras()
    report = colorize(scene, views, targets, config, threads=args.threads)
    if config.n_refine > 0:
        report.refine_trace = refine(
            scene, views, targets, report.systems, config, threads=args.threads
        )
    io.write_ply(scene, args.out)
    print(report.to_text())
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, default=str)
    return 0


def _cmd_render(args) -> int:
    scene = io.read_ply(args.scene)
    cams = io.read_cameras(args.cameras)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = RasterConfig()
    for rec in cams.records:
        img = render(scene, rec.camera, config, threads=args.threads)
        path = out_dir / f"{rec.id}.{args.format}"
        io.write_image(img, path, clamp=args.clamp)
        print(f"wrote {path}")
    return 0


def _cmd_segment(args) -> int:
    scene = io.read_ply(args.scene)
    cams = io.read_cameras(args.cameras)
    masks = _load_targets(cams, args.masks)
    filtered, values = segment(
        scene, cams.cameras(), masks, args.threshold, threads=args.threads
    )
    io.write_ply(filtered, args.out)
    n_unsolved = int(np.count_nonzero(np.isnan(values)))
    print(
        f"kept {filtered.n_gaussians}/{scene.n_gaussians} gaussians "
        f"(threshold {args.threshold}, {n_unsolved} unsolved)"
    )
    return 0


def _cmd_baseline(args) -> int:
    scene = io.read_ply(args.scene)
    cams = io.read_cameras(args.cameras)
    targets = _load_targets(cams, args.targets)
    views = cams.cameras()
    if args.holdout >= len(views):
        raise ValueError(f"--holdout {args.holdout} leaves no training views")
    split = len(views) - args.holdout
    test_views = views[split:] if args.holdout else None
    test_targets = targets[split:] if args.holdout else None

    scene = _reshape_bank(scene, targets[0].channels, args.sh_order)
    opt = OptimizerConfig(
        method=args.method,
        learning_rate=args.lr,
        max_steps=args.steps,
        time_budget=args.time_budget,
    )
    rows = optimize(
        scene,
        views[:split],
        targets[:split],
        opt,
        test_views=test_views,
        test_targets=test_targets,
        threads=args.threads,
    )
    write_trace(rows, args.trace)
    if args.out:
        io.write_ply(scene, args.out)
    last = rows[-1]
    print(
        f"{args.method}: {last.step} steps in {last.seconds:.2f}s, "
        f"train L2 {last.train_l2:.6g}, test L2 {last.test_l2:.6g}"
    )
    return 0


def _fmt_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.2f}"


def _cmd_metrics(args) -> int:
    rendered_dir, reference_dir = Path(args.rendered), Path(args.reference)
    names = sorted(
        {p.name for p in rendered_dir.iterdir()} & {p.name for p in reference_dir.iterdir()}
    )
    if not names:
        raise ValueError(f"no common image files between {rendered_dir} and {reference_dir}")
    rows = []
    for name in names:
        m = image_metrics(io.read_image(rendered_dir / name), io.read_image(reference_dir / name))
        rows.append(m)
        print(f"{name}: L1 {m['l1']:.6g}  L2 {m['l2']:.6g}  PSNR {_fmt_psnr(m['psnr'])}")
    mean_l1 = float(np.mean([r["l1"] for r in rows]))
    mean_l2 = float(np.mean([r["l2"] for r in rows]))
    mean_psnr = float(np.mean([r["psnr"] for r in rows]))
    print(f"mean: L1 {mean_l1:.6g}  L2 {mean_l2:.6g}  PSNR {_fmt_psnr(mean_psnr)}")
    return 0


def _cmd_synth(args) -> int:
    scene, views, targets = fixture(
        args.splats, args.views, args.seed, image_size=args.size, channels=args.channels
    )
    out = Path(args.out)
    (out / "targets").mkdir(parents=True, exist_ok=True)
    io.write_ply(scene, out / "scene.ply")
    records = []
    for j, (view, target) in enumerate(zip(views, targets)):
        name = f"v{j:03d}.rfi"
        io.write_image(target, out / "targets" / name)
        records.append(io.CameraRecord(id=f"v{j:03d}", camera=view, image=name))
    io.write_cameras(io.CameraSet(records=records), out / "cameras.json")
    print(f"wrote {out / 'scene.ply'} ({args.splats} splats, {args.views} views)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatcolor",
        description="Project posed 2D images back onto a Gaussian-splat scene.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=1, help="worker threads (results identical)")

    p = sub.add_parser("colorize", help="solve new SH coefficients from target images")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--targets", required=True, help="directory with per-view target images")
    p.add_argument("--out", required=True, help="output PLY")
    p.add_argument("--sh-order", type=int, default=3)
    p.add_argument("--refine", type=int, default=5, help="residual refinement passes")
    p.add_argument("--lambda", dest="lam", type=float, nargs="+", default=None,
                   help="per-band ridge weights (one value per SH band)")
    p.add_argument("--min-visibility", type=float, default=1e-6)
    p.add_argument("--report", default=None, help="write the solve report as JSON")
    add_threads(p)
    p.set_defaults(func=_cmd_colorize)

    p = sub.add_parser("render", help="render every manifest view")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clamp", action="store_true", help="clip to [0, 1] for display")
    p.add_argument("--format", choices=("png", "rfi"), default="png")
    add_threads(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("segment", help="lift per-view masks to 3D and filter the scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--masks", required=True, help="directory with per-view mask images")
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--out", required=True, help="filtered output PLY")
    add_threads(p)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("baseline", help="gradient-descent colorization for comparison")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--method", choices=("adam", "adamw", "rmsprop", "adagrad"), required=True)
    p.add_argument("--lr", type=float, default=None, help="method default if omitted")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--time-budget", type=float, default=None, help="seconds")
    p.add_argument("--holdout", type=int, default=0, help="reserve the last N views for test loss")
    p.add_argument("--sh-order", type=int, default=3)
    p.add_argument("--trace", required=True, help="CSV loss trace output")
    p.add_argument("--out", default=None, help="optional output PLY")
    add_threads(p)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("metrics", help="compare two directories of images by filename")
    p.add_argument("--rendered", required=True)
    p.add_argument("--reference", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("synth", help="generate a synthetic round-trip fixture")
    p.add_argument("--splats", type=int, required=True)
    p.add_argument("--views", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=64, help="square image size in pixels")
    p.add_argument("--channels", type=int, default=3)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
