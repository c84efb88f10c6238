"""Command-line interface.

Commands: mask, derain, eval, brisque, synth. Every command honors a
global --seed and is byte-for-byte reproducible. Configuration comes from
an optional key=value file (--config) plus repeatable --opt key=value
overrides; --seed wins over both.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import agent, rainmask, rng
from .brisque import ScorerError, brisque_score, default_scorer_path, load_scorer
from .config import ConfigError, RunConfig, SynthConfig, apply_overrides, load_config, with_seed
from .image import ImageError, load_image, psnr, save_image, ssim
from .nn import WeightsError, load_params, save_params


def synth_streaks(clean: np.ndarray, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Overlay additive bright streaks; returns (rain image, streak mask).

    The mask marks exactly the painted pixels, so generated pairs double
    as ground truth for mask-quality checks. Streaks brighten, never
    darken: rain >= clean everywhere.
    """
    h, w = clean.shape[:2]
    gen = rng.stream_rng(cfg.seed, rng.STREAM_SYNTH)
    rain = clean.copy()
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(cfg.count):
        cy = gen.random() * h
        cx = gen.random() * w
        ang = math.radians(cfg.angle + gen.uniform(-cfg.angle_jitter, cfg.angle_jitter))
        length = cfg.length * (1.0 + cfg.length_jitter * (2.0 * gen.random() - 1.0))
        inten = cfg.intensity * (1.0 - cfg.intensity_jitter * gen.random())
        dy, dx = math.cos(ang), math.sin(ang)  # angle measured from vertical
        py, px = -dx, dy
        half = (cfg.width - 1) / 2.0
        for t in np.arange(-length / 2.0, length / 2.0, 0.5):
            for j in range(cfg.width):
                o = j - half
                yy = int(round(cy + t * dy + o * py))
                xx = int(round(cx + t * dx + o * px))
                if 0 <= yy < h and 0 <= xx < w:
                    mask[yy, xx] = True
                    rain[yy, xx] = np.clip(clean[yy, xx] + inten, 0.0, 1.0)
    return rain, mask


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.opt:
        cfg = apply_overrides(cfg, args.opt)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    return cfg


def _scorer(cfg: RunConfig):
    return load_scorer(cfg.scorer_path or default_scorer_path())


def cmd_mask(args) -> int:
    cfg = _build_config(args)
    img = load_image(args.input)
    mask = rainmask.compute_rdp(img, cfg.mask)
    rainmask.save_mask(mask, args.output)
    print(f"mask density: {100.0 * float(mask.mean()):.2f}%")
    return 0


def cmd_derain(args) -> int:
    cfg = _build_config(args)
    img = load_image(args.input)
    if args.mask:
        mask = rainmask.load_mask(args.mask)
        if mask.shape != img.shape[:2]:
            raise ImageError(f"mask {args.mask} is {mask.shape}, image is {img.shape[:2]}")
    else:
        mask = rainmask.compute_rdp(img, cfg.mask)

    rl_cfg = replace(cfg.rl, image_channels=img.shape[2])
    scorer = _scorer(cfg) if rl_cfg.lambda_brisque > 0 else None
    if args.weights_in:
        params = load_params(args.weights_in)
        log = None
    else:
        params, log = agent.train(img, mask, rl_cfg, scorer)
    out = agent.derain(img, mask, params, rl_cfg.t_max)
    save_image(out, args.output)
    if args.weights_out:
        save_params(params, args.weights_out)
    if args.log:
        if log is None:
            raise ValueError("--log needs a training run; it cannot be combined with --weights-in")
        log.to_csv(args.log)
    print(f"derained {args.input} -> {args.output} ({100.0 * float(mask.mean()):.2f}% rain pixels)")
    return 0


def _eval_one(rain_path: str, gt_path: str | None, scorer_path: str):
    scorer = load_scorer(scorer_path)
    img = load_image(rain_path)
    row = {"name": Path(rain_path).name, "brisque": brisque_score(img, scorer)}
    if gt_path is not None:
        gt = load_image(gt_path)
        row["psnr"] = psnr(img, gt)
        row["ssim"] = ssim(img, gt)
    return row


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    in_dir = Path(args.input_dir)
    names = sorted(p.name for p in in_dir.glob("*.png"))
    if not names:
        raise ImageError(f"no PNG files in {in_dir}")
    gt_dir = Path(args.gt) if args.gt else None
    if gt_dir is not None:
        missing = [n for n in names if not (gt_dir / n).exists()]
        if missing:
            raise ImageError(f"ground-truth dir {gt_dir} is missing: {', '.join(missing)}")

    scorer_path = cfg.scorer_path or default_scorer_path()
    jobs = [(str(in_dir / n), str(gt_dir / n) if gt_dir else None, scorer_path) for n in names]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_eval_one, *zip(*jobs)))
    else:
        rows = [_eval_one(*job) for job in jobs]

    metrics = ["psnr", "ssim", "brisque"] if gt_dir else ["brisque"]
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        fh.write("name," + ",".join(metrics) + "\n")
        for row in rows:
            fh.write(row["name"] + "," + ",".join(repr(row[m]) for m in metrics) + "\n")
        means = [float(np.mean([row[m] for row in rows])) for m in metrics]
        fh.write("mean," + ",".join(repr(v) for v in means) + "\n")
    print(f"wrote {len(rows)} + 1 rows to {args.output}")
    return 0


def cmd_brisque(args) -> int:
    cfg = _build_config(args)
    scorer = load_scorer(args.model or cfg.scorer_path or default_scorer_path())
    score = brisque_score(load_image(args.input), scorer)
    print(f"{score:.4f}")
    return 0


def cmd_synth(args) -> int:
    cfg = _build_config(args)
    clean = load_image(args.clean)
    rain, mask = synth_streaks(clean, cfg.synth)
    save_image(rain, args.out_rain)
    rainmask.save_mask(mask, args.out_mask)
    print(f"painted {int(mask.sum())} rain pixels ({100.0 * float(mask.mean()):.2f}%)")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides config)")
    p.add_argument(
        "--opt", action="append", default=[], metavar="KEY=VALUE", help="config override, repeatable"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="derainkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="compute the rain mask of an image")
    p.add_argument("input")
    p.add_argument("output")
    _add_common(p)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("derain", help="train per-image agents and derain")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mask", help="use this mask PNG instead of computing one")
    p.add_argument("--weights-in", help="load trained weights and skip training")
    p.add_argument("--weights-out", help="save trained weights here")
    p.add_argument("--log", help="write the training log CSV here")
    _add_common(p)
    p.set_defaults(func=cmd_derain)

    p = sub.add_parser("eval", help="score a directory of images into a CSV")
    p.add_argument("input_dir")
    p.add_argument("output")
    p.add_argument("--gt", help="matching ground-truth directory (enables PSNR/SSIM)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("brisque", help="print the no-reference score of an image")
    p.add_argument("input")
    p.add_argument("--model", help="scorer model file (default: packaged model)")
    _add_common(p)
    p.set_defaults(func=cmd_brisque)

    p = sub.add_parser("synth", help="overlay synthetic rain streaks on a clean image")
    p.add_argument("clean")
    p.add_argument("out_rain")
    p.add_argument("out_mask")
    _add_common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ImageError, ScorerError, WeightsError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
