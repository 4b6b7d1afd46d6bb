"""Command-line entry points: train, render, eval, gen-scene, plot-intervals, ablate."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import TrainConfig, apply_overrides, load_config
from .images import write_image
from .plyio import write_points_ply
from .scene import SceneSpec, generate_scene
from .train import (evaluate, load_checkpoint, run_ablation, run_training,
                    save_checkpoint, write_explicit_dump)


def _load_cfg(path: str, overrides: list[str]) -> TrainConfig:
    cfg = load_config(path) if path else TrainConfig()
    return apply_overrides(cfg, overrides or [])


def _cmd_train(args) -> int:
    cfg = _load_cfg(args.config, args.set)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    scene = generate_scene(SceneSpec.from_config(cfg))
    model, trainer = run_training(cfg, scene)

    ckpt_path = os.path.join(out_dir, "model.mdgs")
    save_checkpoint(ckpt_path, model, cfg, cfg.local_iters, trainer.optimizer)
    with open(os.path.join(out_dir, "metrics.tsv"), "w") as fh:
        fh.write("\n".join(trainer.metrics_rows) + ("\n" if trainer.metrics_rows else ""))
    with open(os.path.join(out_dir, "intervals.tsv"), "w") as fh:
        fh.write("\n".join(trainer.interval_rows) + ("\n" if trainer.interval_rows else ""))
    from .train import _derived_batch
    if model.kind == "scaffold":
        write_points_ply(os.path.join(out_dir, "anchors.ply"),
                         model.anchors.positions.values)
    write_points_ply(os.path.join(out_dir, "gaussians.ply"),
                     _derived_batch(model, scene.cameras[0], 0.0).centers.values)

    record = evaluate(model, scene, "test", checkpoint_path=ckpt_path)
    for key in ("psnr", "ssim", "storage_bytes"):
        print(f"{key}={record[key]}")
    print(f"checkpoint={ckpt_path}")
    return 0


def _cmd_render(args) -> int:
    model, cfg, _ = load_checkpoint(args.checkpoint)
    scene = generate_scene(SceneSpec.from_config(cfg))
    if not (0 <= args.camera < len(scene.cameras)):
        raise ValueError(f"camera index {args.camera} out of range")
    image, _ = model.render_at(scene.cameras[args.camera], args.time)
    write_image(args.out, image.pixels.values)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg_file = _load_cfg(args.config, args.set) if args.config else None
    model, cfg, _ = load_checkpoint(args.checkpoint)
    if cfg_file is not None:
        cfg = cfg_file
    scene = generate_scene(SceneSpec.from_config(cfg))
    record = evaluate(model, scene, args.split, checkpoint_path=args.checkpoint)
    print(f"psnr\t{record['psnr']:.6f}")
    print(f"ssim\t{record['ssim']:.6f}")
    print(f"storage_bytes\t{record['storage_bytes']}")
    for row in record["per_frame"]:
        print(f"frame\t{row['camera']}\t{row['frame']}\t{row['psnr']:.6f}\t{row['ssim']:.6f}")
    return 0


def _cmd_gen_scene(args) -> int:
    cfg = _load_cfg(args.spec, args.set)
    spec = SceneSpec.from_config(cfg)
    scene = generate_scene(spec)
    os.makedirs(args.out, exist_ok=True)
    for ci in range(len(scene.cameras)):
        for fi in range(spec.frames):
            write_image(os.path.join(args.out, f"cam{ci}_frame{fi:03d}.png"),
                        scene.frame(ci, fi))
    manifest = {
        "frames": spec.frames,
        "cameras": len(scene.cameras),
        "timestamps": scene.timestamps.tolist(),
        "train_frames": scene.train_frames.tolist(),
        "test_frames": scene.test_frames.tolist(),
        "resolution": spec.resolution,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    write_points_ply(os.path.join(args.out, "points.ply"),
                     scene.centers_at(0.0))
    print(f"wrote {len(scene.cameras) * spec.frames} frames to {args.out}")
    return 0


def _cmd_plot_intervals(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    iters, histories = [], []
    with open(args.log) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            iters.append(int(parts[0]))
            histories.append([float(v) for v in parts[1:]])
    fig, ax = plt.subplots(figsize=(7, 4))
    if histories:
        data = np.asarray(histories)
        for b in range(data.shape[1]):
            ax.plot(iters, data[:, b], marker="o", markersize=2.5,
                    label=f"boundary {b + 1}")
        ax.legend(fontsize=7, ncol=2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("segment boundary")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("temporal interval evolution")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_cfg(args.config, args.set)
    out_dir = args.out or os.path.join(cfg.out_dir, "ablation")
    results = run_ablation(cfg, out_dir)
    print("row\tpsnr\tssim\tstorage_bytes")
    for rec in results:
        print(f"{rec['row']}\t{rec['psnr']:.4f}\t{rec['ssim']:.4f}"
              f"\t{rec['storage_bytes']}")
    with open(os.path.join(out_dir, "ablation.tsv"), "w") as fh:
        fh.write("row\tpsnr\tssim\tstorage_bytes\n")
        for rec in results:
            fh.write(f"{rec['row']}\t{rec['psnr']:.6f}\t{rec['ssim']:.6f}"
                     f"\t{rec['storage_bytes']}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynsplat",
        description="Compact dynamic Gaussian splatting at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run both training stages")
    p.add_argument("config", help="key = value config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render a checkpoint at a timestamp")
    p.add_argument("checkpoint")
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--camera", type=int, default=0)
    p.add_argument("--out", required=True, help="output image (.png or .ppm)")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("config", nargs="?", default=None,
                   help="optional config overriding the embedded one")
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gen-scene", help="materialize a synthetic scene")
    p.add_argument("spec", help="config file holding the scene_* keys")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("plot-intervals", help="chart a TIA interval log")
    p.add_argument("log")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot_intervals)

    p = sub.add_parser("ablate", help="run the ablation row grid")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
