"""Command-line entry point wiring the whole pipeline.

Subcommands: synth, filter, train, sample, eval. Every command is
deterministic given its flags and config; flags win over the config file.
Each output directory receives the fully-resolved config snapshot
(config.json). Exit codes: 0 success, 2 usage/config error, 1 runtime error.

By design `sample` accepts no point-map input: inference needs only the
first frame and the motion sequence.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import datapipe, diffusion, trainer
from .config import RunConfig, load_config, save_config
from .errors import ConfigError, EgosimError, ParseError, PreconditionError
from .motion import STYLES, MotionSequence
from .rng import substream
from .tensorio import read_tensor, write_tensor


def _resolve_config(config_path: str | None) -> RunConfig:
    if config_path:
        return load_config(config_path)
    return RunConfig()


def _styles_arg(text: str) -> tuple[str, ...]:
    styles = tuple(s.strip() for s in text.split(",") if s.strip())
    for s in styles:
        if s not in STYLES:
            raise ConfigError(f"unknown style {s!r}; choose from {', '.join(STYLES)}")
    if not styles:
        raise ConfigError("empty style list")
    return styles


def cmd_synth(args) -> int:
    cfg = _resolve_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.num is not None:
        cfg = dataclasses.replace(cfg, datapipe=dataclasses.replace(cfg.datapipe, num_samples=args.num))
    if args.frames is not None:
        cfg = dataclasses.replace(cfg, datapipe=dataclasses.replace(cfg.datapipe, frames=args.frames))
    if args.styles is not None:
        cfg = dataclasses.replace(cfg, datapipe=dataclasses.replace(cfg.datapipe, styles=_styles_arg(args.styles)))
    if cfg.datapipe.num_samples < 1:
        raise PreconditionError("--num must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = datapipe.write_corpus(
        out, cfg.datapipe.num_samples, cfg.datapipe.frames, cfg.seed,
        cfg.datapipe.styles, pipe=cfg.datapipe, geo=cfg.geometry,
    )
    save_config(cfg, out / "config.json")
    print(f"wrote {len(manifest)} samples to {out} (manifest.tsv)")
    return 0


def cmd_filter(args) -> int:
    manifest = datapipe.read_manifest(args.manifest)
    filtered = datapipe.filter_top_fraction(manifest, args.fraction)
    datapipe.write_manifest(filtered, args.manifest)
    removed = sum(1 for r in filtered.rows if not r.kept)
    print(f"filtered {removed} of {len(filtered)} samples (fraction {args.fraction})")
    return 0


def _load_corpus(model, manifest_path: Path, coarse: bool, styles: tuple[str, ...]):
    manifest = datapipe.read_manifest(manifest_path)
    base = manifest_path.parent
    samples = []
    for row in manifest.rows:
        if not row.kept:
            continue
        record = datapipe.load_sample(base, row)
        caption = trainer.caption_for_index(row.id, styles) if coarse else None
        samples.append(trainer.prepare_sample(model, record, coarse=coarse, caption_id=caption))
    if not samples:
        raise PreconditionError(f"no kept samples in {manifest_path}")
    return samples


def cmd_train(args) -> int:
    cfg = _resolve_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, trainer=dataclasses.replace(cfg.trainer, steps=args.steps))
    manifest_path = Path(args.corpus)
    if not manifest_path.exists():
        raise PreconditionError(f"corpus manifest not found: {manifest_path}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.stage == "finetune":
        if not args.resume:
            raise PreconditionError("--stage finetune requires --resume STAGE1_CKPT")
        model, _ = trainer.load_checkpoint(args.resume)
        model.cfg.trainer = cfg.trainer
        cfg = model.cfg
    else:
        if args.resume:
            model, _ = trainer.load_checkpoint(args.resume)
            model.cfg.trainer = cfg.trainer
            cfg = model.cfg
        else:
            model = diffusion.WorldModel(cfg)

    coarse = args.stage == "pretrain"
    samples = _load_corpus(model, manifest_path, coarse, cfg.datapipe.styles)
    if args.stage == "pretrain":
        result = trainer.train_stage1(model, samples, cfg.trainer, seed=cfg.seed)
    else:
        result = trainer.train_stage2(model, samples, cfg.trainer, seed=cfg.seed)
    if not result.frozen_intact:
        raise EgosimError(f"freeze contract violated in stage {args.stage}")

    ckpt = out / "checkpoint.egc"
    trainer.save_checkpoint(
        model, ckpt, stage=args.stage,
        extra_meta={"train": {"stage": args.stage, "step0_loss": result.step0_loss,
                              "final_loss": result.final_loss, "seed": cfg.seed}},
    )
    trainer.write_train_log(result.log, out / "train_log.tsv")
    save_config(cfg, out / "config.json")
    print(
        f"stage {args.stage}: eval loss {result.step0_loss:.6f} -> {result.final_loss:.6f}; "
        f"checkpoint {ckpt}"
    )
    return 0


def cmd_sample(args) -> int:
    model, _ = trainer.load_checkpoint(args.ckpt)
    first = read_tensor(args.first_frame)
    if first.ndim != 3 or first.shape[-1] != 3:
        raise PreconditionError(f"first frame must be (H, W, 3), got {first.shape}")
    params = read_tensor(args.motion).astype(np.float64)
    motion_seq = MotionSequence(params=params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    video = diffusion.sample(
        model, first, motion_seq, steps=args.steps, cfg=args.cfg, seed=args.seed
    )
    write_tensor(out / "video.egt", video)
    save_config(model.cfg, out / "config.json")
    print(f"sampled {video.shape[0]} frames -> {out / 'video.egt'}")
    return 0


def cmd_eval(args) -> int:
    model, _ = trainer.load_checkpoint(args.ckpt)
    manifest_path = Path(args.corpus)
    manifest = datapipe.read_manifest(manifest_path)
    records = [
        datapipe.load_sample(manifest_path.parent, row)
        for row in manifest.rows
        if row.kept
    ]
    if not records:
        raise PreconditionError("no kept samples to evaluate")
    report = trainer.evaluate(
        model, records, steps=args.steps, cfg_scale=args.cfg, seed=args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer.write_report(report, out / "report.tsv")
    save_config(model.cfg, out / "config.json")
    print(
        f"evaluated {len(records)} samples: psnr {report.psnr:.2f} dB, ssim {report.ssim:.4f}, "
        f"mpjpe {report.mpjpe:.4f}, mrrpe {report.mrrpe:.4f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egosim",
        description="Desk-scale egocentric world-simulator pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic ego-exo corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num", type=int, default=None, help="number of samples")
    p.add_argument("--frames", type=int, default=None, help="frames per sample")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--styles", default=None, help="comma-separated style list")
    p.add_argument("--config", default=None, help="JSON config file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("filter", help="drop the highest reprojection-error samples")
    p.add_argument("--manifest", required=True, help="manifest.tsv to update in place")
    p.add_argument("--fraction", type=float, default=0.10, help="fraction to remove")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", required=True, choices=("pretrain", "finetune"))
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--corpus", required=True, help="corpus manifest.tsv")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint to start from")
    p.add_argument("--steps", type=int, default=None, help="override training steps")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate a video from a first frame + motion")
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--first-frame", required=True, help="(H, W, 3) tensor file")
    p.add_argument("--motion", required=True, help="(k, 159) motion tensor file")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--cfg", type=float, default=7.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True, help="corpus manifest.tsv")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--cfg", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ConfigError, PreconditionError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (EgosimError, ParseError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
