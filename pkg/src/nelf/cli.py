"""Command-line front end: make-synth, train, render, eval, refocus.

Exit codes: 0 success, 2 validation error, 3 runtime/numeric error, 4 I/O
error. Heavy imports happen inside commands so --threads / NELF_THREADS can
cap BLAS pools before numpy loads. All randomness flows from seeds in the
config; reruns with identical inputs produce identical outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

_THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS")


def _apply_thread_cap(argv: list[str]) -> None:
    threads = os.environ.get("NELF_THREADS", "0")
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    try:
        n = int(threads)
    except ValueError:
        return  # reported properly by argparse later
    if n > 0:
        for var in _THREAD_ENV_VARS:
            os.environ.setdefault(var, str(n))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=0,
                   help="worker/BLAS thread cap (0 = automatic); NELF_THREADS also works")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nelf",
        description="Neural 4D light fields: train an MLP on two-plane ray "
                    "coordinates, then render, refocus, and evaluate novel views.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synth", help="generate a synthetic light-field dataset")
    p.add_argument("--scene", default="two-plane-checker",
                   help="built-in scene name or a scene spec JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--rows", type=int, default=5)
    p.add_argument("--cols", type=int, default=5)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--spacing", type=float, default=0.3, help="camera grid spacing")
    p.add_argument("--focal", type=float, default=32.0, help="focal length in pixels")
    p.add_argument("--grid-z", type=float, default=0.0, help="camera plane height")
    p.add_argument("--uv-depth", type=float, default=None,
                   help="override the scene's uv parameterization plane depth")
    _add_common(p)
    p.set_defaults(func=cmd_make_synth)

    p = sub.add_parser("train", help="train a light-field network")
    p.add_argument("--data", required=True, help="dataset directory or manifest path")
    p.add_argument("--out", required=True, help="output directory for checkpoints/logs")
    p.add_argument("--preset", choices=("paper", "desk"), default="paper")
    p.add_argument("--ablate", choices=("no-fsl", "no-rbl"), default=None,
                   help="zero out one regularizer (spectral or bundle)")
    p.add_argument("--config", default=None, help="JSON config file (flags override it)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--progress", type=float, default=None,
                   help="print progress every N seconds")
    for flag, typ in (("--iterations", int), ("--batch-size", int), ("--loss-res", int),
                      ("--bundle-rays", int), ("--sigma", float), ("--frequencies", int),
                      ("--hidden-layers", int), ("--hidden-width", int), ("--base-lr", float),
                      ("--half-life", int), ("--theta", float), ("--bundle-size", int),
                      ("--lambda-s", float), ("--lambda-r", float), ("--seed-init", int),
                      ("--seed-shuffle", int), ("--seed-virtual", int), ("--seed-bundles", int),
                      ("--checkpoint-interval", int), ("--log-interval", int)):
        p.add_argument(flag, type=typ, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render novel views from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", default=None, help="manifest supplying grid-view poses")
    p.add_argument("--view", default=None, metavar="R,C", help="grid view to render")
    p.add_argument("--path", default=None, metavar="R1,C1:R2,C2",
                   help="interpolate a camera path between two grid views")
    p.add_argument("--frames", type=int, default=8, help="frame count for --path")
    p.add_argument("--pose-file", default=None, help="JSON pose specification")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--format", choices=("png", "ppm"), default="png")
    p.add_argument("--clamp", action="store_true",
                   help="clamp out-of-field coordinates to the trained box")
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="evaluate a checkpoint against stored views")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="manifest of reference views")
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=None,
                   help="split the grid and evaluate on the held-out part")
    p.add_argument("--diff-maps", action="store_true",
                   help="write per-view |difference| heat images")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("refocus", help="synthetic-aperture refocused rendering")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--view", default=None, metavar="R,C")
    p.add_argument("--pose-file", default=None)
    p.add_argument("--depth", type=float, default=None, help="focal plane z")
    p.add_argument("--sweep", default=None, metavar="Z0:Z1:N",
                   help="render N refocused images across a depth range")
    p.add_argument("--aperture", type=float, default=0.25)
    p.add_argument("--rays", type=int, default=16, help="aperture samples per pixel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sharpness-csv", default=None,
                   help="write depth,sharpness rows for the rendered depths")
    _add_common(p)
    p.set_defaults(func=cmd_refocus)
    return parser


# ---------------------------------------------------------------------------
# Commands


def cmd_make_synth(args) -> int:
    from .data import builtin_scene, generate_synthetic_dataset, load_scene_spec

    if os.path.exists(args.scene):
        scene = load_scene_spec(args.scene)
    else:
        scene = builtin_scene(args.scene)
    if args.uv_depth is not None:
        scene = dataclasses.replace(scene, uv_depth=args.uv_depth)
    manifest = generate_synthetic_dataset(scene, args.rows, args.cols, args.width,
                                          args.height, args.spacing, args.focal,
                                          args.out, grid_z=args.grid_z)
    print(f"wrote {len(manifest.views)} views to {args.out}")
    return 0


def _build_train_config(args):
    import dataclasses as dc

    from .losses import BundleConfig, LossWeights
    from .trainer import PRESETS, Seeds, config_from_dict, config_to_dict

    config = PRESETS[args.preset]()
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        merged = config_to_dict(config)
        for key, value in doc.items():
            if key not in merged:
                from .errors import ConfigError
                raise ConfigError(f"unknown config key '{key}' in {args.config}")
            if isinstance(merged[key], dict):
                merged[key].update(value)
            else:
                merged[key] = value
        config = config_from_dict(merged)

    simple = {"iterations": args.iterations, "batch_size": args.batch_size,
              "loss_resolution": args.loss_res, "bundle_rays": args.bundle_rays,
              "sigma": args.sigma, "num_frequencies": args.frequencies,
              "hidden_layers": args.hidden_layers, "hidden_width": args.hidden_width,
              "base_lr": args.base_lr, "lr_half_life": args.half_life,
              "checkpoint_interval": args.checkpoint_interval,
              "log_interval": args.log_interval}
    overrides = {k: v for k, v in simple.items() if v is not None}
    weights = config.weights
    if args.lambda_s is not None:
        weights = dc.replace(weights, lambda_s=args.lambda_s)
    if args.lambda_r is not None:
        weights = dc.replace(weights, lambda_r=args.lambda_r)
    if args.ablate == "no-fsl":
        weights = dc.replace(weights, lambda_s=0.0)
    if args.ablate == "no-rbl":
        weights = dc.replace(weights, lambda_r=0.0)
    bundle = config.bundle
    if args.theta is not None:
        bundle = dc.replace(bundle, theta_deg=args.theta)
    if args.bundle_size is not None:
        bundle = dc.replace(bundle, T=args.bundle_size)
    seeds = config.seeds
    seed_overrides = {name: getattr(args, f"seed_{name}") for name in
                      ("init", "shuffle", "virtual", "bundles")
                      if getattr(args, f"seed_{name}") is not None}
    if seed_overrides:
        seeds = dc.replace(seeds, **seed_overrides)
    return dc.replace(config, weights=weights, bundle=bundle, seeds=seeds, **overrides)


def cmd_train(args) -> int:
    from .trainer import config_to_dict, train

    config = _build_train_config(args)
    os.makedirs(args.out, exist_ok=True)
    run_meta = {"config": config_to_dict(config), "dataset": os.path.abspath(args.data),
                "preset": args.preset, "ablate": args.ablate}
    with open(os.path.join(args.out, "run_config.json"), "w", encoding="utf-8") as fh:
        json.dump(run_meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    state, final_path = train(config, args.data, args.out, resume_from=args.resume,
                              progress=args.progress)
    print(f"trained {state.iteration} iterations; final checkpoint {final_path}")
    return 0


def _parse_view(text: str):
    from .errors import ConfigError
    try:
        row, col = (int(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--view expects 'row,col', got {text!r}") from exc
    return row, col


def _grid_pose(data_path: str, view_text: str):
    from .data import load_manifest
    from .errors import ConfigError

    manifest = load_manifest(data_path)
    row, col = _parse_view(view_text)
    for v in manifest.views:
        if v.row == row and v.col == col:
            return v.pose
    raise ConfigError(f"view {row},{col} not present in {data_path}")


def _pose_from_file(path: str):
    import numpy as np

    from .errors import ConfigError
    from .geometry import CameraPose

    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("position", "focal_px", "width", "height"):
        if key not in doc:
            raise ConfigError(f"{path}: pose file missing key '{key}'")
    rotation = np.asarray(doc.get("rotation", np.eye(3).tolist()), dtype=np.float64)
    pp = doc.get("principal_point", (doc["width"] / 2.0, doc["height"] / 2.0))
    return CameraPose(np.asarray(doc["position"], dtype=np.float64), rotation,
                      float(doc["focal_px"]), tuple(pp), int(doc["width"]),
                      int(doc["height"]))


def _resolve_pose(args):
    from .errors import ConfigError

    if args.pose_file:
        return _pose_from_file(args.pose_file)
    if args.view is not None:
        if not args.data:
            raise ConfigError("--view requires --data to supply the grid poses")
        return _grid_pose(args.data, args.view)
    raise ConfigError("provide a pose via --view + --data or --pose-file")


def cmd_render(args) -> int:
    from .data import save_image
    from .errors import ConfigError
    from .model import load_checkpoint
    from .renderer import RenderRequest, interpolate_poses, render

    model = load_checkpoint(args.ckpt).model
    os.makedirs(args.out, exist_ok=True)
    if args.path:
        if not args.data:
            raise ConfigError("--path requires --data to supply the grid poses")
        try:
            a_text, b_text = args.path.split(":")
        except ValueError as exc:
            raise ConfigError(f"--path expects 'R1,C1:R2,C2', got {args.path!r}") from exc
        poses = interpolate_poses(_grid_pose(args.data, a_text),
                                  _grid_pose(args.data, b_text), args.frames)
    else:
        poses = [_resolve_pose(args)]

    stats_rows = ["frame,pixels,evals,wall_time_s,out_of_field"]
    for i, pose in enumerate(poses):
        width = args.width or pose.width
        height = args.height or pose.height
        img, stats = render(model, RenderRequest(pose, width, height),
                            clamp_coords=args.clamp)
        name = f"frame_{i:03d}.{args.format}" if len(poses) > 1 else f"render.{args.format}"
        save_image(img, os.path.join(args.out, name))
        stats_rows.append(f"{name},{stats.pixels},{stats.evals},{stats.wall_time:.6f},"
                          f"{stats.out_of_field}")
        print(f"{name}: {stats.pixels} px, {stats.evals} evals, "
              f"{stats.wall_time * 1e3:.2f} ms, {stats.out_of_field} out-of-field")
    with open(os.path.join(args.out, "render_stats.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(stats_rows) + "\n")
    return 0


_HEAT_STOPS = [(0.0, (0.0, 0.0, 0.0)), (1 / 3, (0.7, 0.0, 0.0)),
               (2 / 3, (1.0, 0.7, 0.0)), (1.0, (1.0, 1.0, 1.0))]


def _heat_map(diff):
    import numpy as np

    t = np.clip(diff / 0.25, 0.0, 1.0)
    xs = [s for s, _ in _HEAT_STOPS]
    out = np.empty(t.shape + (3,))
    for c in range(3):
        out[..., c] = np.interp(t, xs, [col[c] for _, col in _HEAT_STOPS])
    return out


def cmd_eval(args) -> int:
    import numpy as np

    from .data import load_image, load_manifest, save_image, subsample_grid
    from .metrics import evaluate, write_eval_csv
    from .model import load_checkpoint
    from .renderer import RenderRequest, render

    model = load_checkpoint(args.ckpt).model
    manifest = load_manifest(args.data)
    if args.stride is not None:
        _, manifest = subsample_grid(manifest, args.stride)
    os.makedirs(args.out, exist_ok=True)
    report = evaluate(model, manifest)
    write_eval_csv(report, os.path.join(args.out, "eval.csv"))
    if args.diff_maps:
        for view in manifest.views:
            reference = load_image(manifest.image_path(view))
            rendered, _ = render(model, RenderRequest(view.pose, manifest.width,
                                                      manifest.height))
            diff = np.mean(np.abs(rendered - reference), axis=2)
            save_image(_heat_map(diff),
                       os.path.join(args.out, f"diff_{view.row:02d}_{view.col:02d}.png"))
    print(f"{len(report.rows)} views: mean PSNR {report.mean_psnr:.3f} dB, "
          f"mean SSIM {report.mean_ssim:.4f}")
    return 0


def sharpness(img) -> float:
    """Mean gradient energy: average squared forward difference, both axes."""
    import numpy as np

    img = np.asarray(img, dtype=np.float64)
    gx = np.diff(img, axis=1)
    gy = np.diff(img, axis=0)
    return float(np.mean(gx * gx) + np.mean(gy * gy))


def cmd_refocus(args) -> int:
    from .data import save_image
    from .errors import ConfigError
    from .model import load_checkpoint
    from .renderer import RefocusRequest, refocus

    model = load_checkpoint(args.ckpt).model
    pose = _resolve_pose(args)
    if args.sweep:
        try:
            z0, z1, count = args.sweep.split(":")
            depths = [float(z0) + (float(z1) - float(z0)) * i / max(1, int(count) - 1)
                      for i in range(int(count))]
        except ValueError as exc:
            raise ConfigError(f"--sweep expects 'Z0:Z1:N', got {args.sweep!r}") from exc
    elif args.depth is not None:
        depths = [args.depth]
    else:
        raise ConfigError("provide --depth or --sweep")
    os.makedirs(args.out, exist_ok=True)
    sharp_rows = ["depth,sharpness"]
    for depth in depths:
        img, stats = refocus(model, RefocusRequest(pose, depth, args.aperture, args.rays,
                                                   seed=args.seed))
        name = f"refocus_{depth:08.3f}.png"
        save_image(img, os.path.join(args.out, name))
        sharp_rows.append(f"{depth},{sharpness(img):.8g}")
        print(f"{name}: {stats.evals} evals, {stats.wall_time * 1e3:.2f} ms")
    if args.sharpness_csv:
        with open(args.sharpness_csv, "w", encoding="utf-8") as fh:
            fh.write("\n".join(sharp_rows) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Entry point


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _apply_thread_cap(argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    from .errors import (CheckpointError, ConfigError, DatasetFormatError, InvalidHyperparam,
                         InvalidStride, NelfError, NonPowerOfTwo, ShapeMismatch)

    try:
        return args.func(args)
    except (ConfigError, InvalidHyperparam, DatasetFormatError, InvalidStride,
            NonPowerOfTwo, ShapeMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except NelfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
