"""Command line entry point: ``stformer-sci <subcommand> ...``.

On failure the last stderr line is a JSON object ``{"error": ..., "message": ...}``
and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import complexity, io
from . import forward as fwd
from .metrics import eval_dataset
from .model import ModelConfig, build_model
from .pipeline import TrainConfig, encode_video, load_checkpoint, load_video, reconstruct, save_checkpoint, train


def _write_text(path, text):
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n")


def cmd_mask(args):
    m = fwd.gen_masks(args.nx, args.ny, args.frames, args.seed, args.p)
    io.write_stf1(args.out, m.values)


def cmd_encode(args):
    video = load_video(args.video).astype(args.dtype)
    masks = io.read_stf1(args.masks)
    y = encode_video(video, masks, args.sigma, args.seed, args.color)
    io.write_stf1(args.out, y.astype(args.dtype))


def _load_config(path) -> TrainConfig:
    return TrainConfig.from_json(Path(path).read_text()) if path else TrainConfig()


def cmd_init(args):
    cfg = _load_config(args.config)
    model_cfg = cfg.model_config() if args.config else ModelConfig.preset(args.preset)
    if args.dtype:
        model_cfg.dtype = args.dtype
    seed = cfg.seed if args.seed is None else args.seed
    params = build_model(model_cfg, seed)
    save_checkpoint(args.out, params)
    print(json.dumps({"checkpoint": args.out, "params": params.count()}))


def cmd_train(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.dtype:
        cfg.model = {**cfg.model, "dtype": args.dtype}
    if args.out:
        cfg.out_dir = args.out
    _, manifest = train(cfg)
    print(manifest.to_json())


def cmd_reconstruct(args):
    params = load_checkpoint(args.checkpoint)
    y = io.read_stf1(args.measurement).astype(params.config.dtype)
    masks = io.read_stf1(args.masks)
    io.write_stf1(args.out, reconstruct(y, masks, params))


def cmd_eval(args):
    recon, truth = load_video(args.recon), load_video(args.truth)
    _write_text(args.out, eval_dataset(recon, truth, args.peak).to_json())


def cmd_flops(args):
    if args.dims:
        h, w, d, c = args.dims
        bd = complexity.count_macs_attention(h, w, d, c, args.heads, *args.window)
        text = bd.to_json()
    else:
        reports = [complexity.preset_report(p, args.nx, args.ny, args.frames) for p in args.preset]
        h, w = args.nx // 2, args.ny // 2
        c = ModelConfig.preset(args.preset[0]).channels
        scaling = {"flops_st(H,W)": complexity.flops_st(h, w, args.frames, c),
                   "flops_st(2H,W)": complexity.flops_st(2 * h, w, args.frames, c)}
        text = json.dumps({"presets": reports, "linear_hw_scaling": scaling}, indent=2)
    _write_text(args.out, text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stformer-sci", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="generate a random binary mask cube")
    p.add_argument("--nx", type=int, default=256)
    p.add_argument("--ny", type=int, default=256)
    p.add_argument("--frames", "-B", type=int, default=8)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("encode", help="simulate snapshot measurements from a video")
    p.add_argument("--video", required=True, help="STF1 cube or directory of PGM/PPM frames")
    p.add_argument("--masks", required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--color", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("init", help="write a freshly initialized checkpoint")
    p.add_argument("--config")
    p.add_argument("--preset", default="S", choices=["S", "B", "L"])
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=["f32", "f64"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="staged training from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=["f32", "f64"])
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct video from measurement(s)")
    p.add_argument("--measurement", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="per-frame PSNR/SSIM report")
    p.add_argument("--recon", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="complexity audit")
    p.add_argument("--preset", nargs="+", default=["S", "B", "L"], choices=["S", "B", "L"])
    p.add_argument("--dims", type=int, nargs=4, metavar=("H", "W", "D", "C"),
                   help="audit attention kernels at these token-field dims instead")
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--window", type=int, nargs=2, default=[7, 7])
    p.add_argument("--nx", type=int, default=256)
    p.add_argument("--ny", type=int, default=256)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_flops)
    return ap


_DTYPES = {"f32": "float32", "f64": "float64", None: None}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "dtype"):
        args.dtype = _DTYPES[args.dtype]
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
