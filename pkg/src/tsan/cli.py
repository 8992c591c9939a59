"""Command-line entry point: prepare, train, eval, infer, analyze, gradcheck.

Exit codes: 0 ok, 1 usage error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .analysis import analyze
from .data import DatasetManifest, ImageIOError, bicubic_resize, make_dataset, read_png, to_uint8, write_png
from .gradsuite import LEVELS, run_level
from .metrics import EvalReport, format_reports
from .model import VARIANTS, ModelConfig, build_variant
from .trainer import (
    CheckpointError,
    NonFiniteLossError,
    TrainConfig,
    load_checkpoint,
    super_resolve,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("tsan")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _shape(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("extents must be positive")
    return h, w


def _shave(text: str) -> str | int:
    if text == "auto":
        return text
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("shave must be 'auto' or a non-negative integer") from None
    if v < 0:
        raise argparse.ArgumentTypeError("shave must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tsan", description="Two-stage attentive super-resolution on a numpy autodiff engine.")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS worker threads (default: $TSAN_THREADS, else library default)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", help="build an LR/HR training set and manifest from HR PNGs")
    s.add_argument("--hr", required=True, type=Path)
    s.add_argument("--scale", required=True, type=int, choices=(2, 3, 4))
    s.add_argument("--out", required=True, type=Path)

    s = sub.add_parser("train", help="train a variant on a manifest")
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--variant", default="default", help=f"one of: {', '.join(VARIANTS)}")
    s.add_argument("--scale", type=int, choices=(2, 3, 4), help="must match the manifest (default: manifest scale)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iters", type=int, help="iterations to run (default: the full epoch budget)")
    s.add_argument("--out", required=True, type=Path, help="checkpoint path")
    s.add_argument("--log", type=Path, help="loss log CSV (default: <out>.log.csv)")
    s.add_argument("--resume", type=Path, help="checkpoint to continue from")
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--patch", type=int, default=48)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--halve-every", type=int, default=200, help="epochs between learning-rate halvings")
    s.add_argument("--epochs", type=int, default=1000)
    s.add_argument("--iters-per-epoch", type=int, default=1000)
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--no-augment", action="store_true")

    s = sub.add_parser("eval", help="Y-channel PSNR/SSIM of sr1, sr2 and bicubic")
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--ckpt", type=Path, help="omit to report only the bicubic baseline")
    s.add_argument("--shave", type=_shave, default="auto", help="border pixels to ignore; auto = scale")
    s.add_argument("--out", type=Path, help="directory for per-method CSV reports")

    s = sub.add_parser("infer", help="upscale one PNG")
    s.add_argument("--ckpt", required=True, type=Path)
    s.add_argument("--in", dest="input", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--emit-coarse", action="store_true", help="also write the coarse output as <out>_coarse.png")

    s = sub.add_parser("analyze", help="parameters, FLOPs and receptive fields")
    s.add_argument("--variant", default="default", help=f"one of: {', '.join(VARIANTS)}")
    s.add_argument("--scale", type=int, default=2, choices=(2, 3, 4))
    s.add_argument("--input", type=_shape, default=(48, 48), help="LR input extent HxW")
    s.add_argument("--csv", type=Path, help="write the per-layer breakdown here")

    s = sub.add_parser("gradcheck", help="64-bit finite-difference gradient suites")
    s.add_argument("--level", choices=LEVELS, default="ops")
    s.add_argument("--seed", type=int, default=0)
    return p


def _variant(name: str, scale: int, **overrides):
    if name not in VARIANTS:
        raise UsageError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return build_variant(name, scale, **overrides)


def cmd_prepare(args) -> int:
    m = make_dataset(args.hr, args.scale, args.out)
    print(f"wrote {len(m.pairs)} pairs, rgb_mean {m.rgb_mean}, to {args.out / 'manifest.json'}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    scale = args.scale if args.scale is not None else manifest.scale
    if scale != manifest.scale:
        raise UsageError(f"--scale {scale} does not match manifest scale {manifest.scale}")
    if args.iters is not None and args.iters < 0:
        raise UsageError("--iters must be >= 0")
    try:
        tcfg = TrainConfig(batch=args.batch, lr0=args.lr, halve_every=args.halve_every, epochs=args.epochs,
                           iters_per_epoch=args.iters_per_epoch, seed=args.seed, patch=args.patch,
                           augment=not args.no_augment, checkpoint_every=args.checkpoint_every)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    resume = None
    if args.resume is not None:
        resume = load_checkpoint(args.resume)
        cfg = ModelConfig.from_dict(resume.model_config)
        if cfg.scale != scale:
            raise UsageError(f"resume checkpoint is x{cfg.scale}, manifest is x{scale}")
    else:
        cfg = _variant(args.variant, scale, rgb_mean=manifest.rgb_mean)
    log_path = args.log or args.out.with_name(args.out.name + ".log.csv")
    ckpt, log = train(cfg, tcfg, manifest, args.iters, args.out, log_path, resume)
    if log:
        print(f"iter {log[-1]['iter']} loss {log[-1]['loss']:.4f}; checkpoint {args.out}, log {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    model = None
    if args.ckpt is not None:
        model = load_checkpoint(args.ckpt).build_model()
        if model.cfg.scale != manifest.scale:
            raise UsageError(f"checkpoint is x{model.cfg.scale} but manifest is x{manifest.scale}")
    scale = manifest.scale
    shave = scale if args.shave == "auto" else args.shave
    reports = {"bicubic": EvalReport(scale, shave)}
    if model is not None:
        reports["sr1"] = EvalReport(scale, shave)
        reports["sr2"] = EvalReport(scale, shave)
    for (hr_path, _), (lr, hr) in zip(manifest.paths(), manifest.load_pairs()):
        h, w = lr.shape[0] * scale, lr.shape[1] * scale
        hr = hr[:h, :w]
        reports["bicubic"].add(hr_path.name, to_uint8(bicubic_resize(lr, w, h)), hr)
        if model is not None:
            sr1, sr2 = super_resolve(model, lr)
            reports["sr1"].add(hr_path.name, to_uint8(sr1), hr)
            reports["sr2"].add(hr_path.name, to_uint8(sr2), hr)
    print(format_reports(reports))
    if args.out is not None:
        try:
            args.out.mkdir(parents=True, exist_ok=True)
            for name, rep in reports.items():
                (args.out / f"eval_{name}.csv").write_text(rep.to_csv(), encoding="utf-8")
        except OSError as exc:
            raise ImageIOError(f"{args.out}: cannot write reports ({exc})") from None
    return EXIT_OK


def cmd_infer(args) -> int:
    model = load_checkpoint(args.ckpt).build_model()
    img = read_png(args.input)
    sr1, sr2 = super_resolve(model, img)
    write_png(to_uint8(sr2), args.out)
    if args.emit_coarse:
        coarse = args.out.with_name(args.out.stem + "_coarse" + args.out.suffix)
        write_png(to_uint8(sr1), coarse)
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _variant(args.variant, args.scale)
    h, w = args.input
    report = analyze(cfg, (1, 3, h, w))
    print(f"variant {args.variant}")
    print(report.to_text(), end="")
    if args.csv is not None:
        try:
            args.csv.write_text(report.layers_csv(), encoding="utf-8")
        except OSError as exc:
            raise ImageIOError(f"{args.csv}: cannot write ({exc})") from None
    else:
        print(report.layers_csv(), end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_level(args.level, args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {args.level}/{r.name} seed={r.seed} max_rel_err={r.error:.3e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


def _threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("TSAN_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"TSAN_THREADS must be an integer, got {env!r}") from None
    return None


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = _threads(args)
        if threads is not None and threads < 1:
            raise UsageError("--threads must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageIOError, CheckpointError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
