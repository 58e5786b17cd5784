"""``roma`` command line: make-toy, train, translate, evaluate.

Exit codes: 0 success, 1 usage / configuration, 2 data, 3 runtime.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from .config import TrainConfig, load_config, parse_config, toy_config
from .errors import ConfigError, DatasetError, TrainingError, WeightsLoadError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fail(code: int, message: str) -> int:
    print(f"roma: error: {message}", file=sys.stderr)
    return code


def cmd_make_toy(args) -> int:
    from .data import make_toy_dataset

    try:
        make_toy_dataset(args.out, seed=args.seed, clips=args.clips,
                         frames_per_clip=args.frames, size=args.size)
    except OSError as exc:
        return _fail(EXIT_DATA, str(exc))
    print(f"wrote toy dataset to {args.out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    base = toy_config() if args.preset == "toy" else TrainConfig()
    if args.config:
        with open(args.config) as fh:
            base = parse_config(fh.read(), base=base)
    overrides = "\n".join(args.set or [])
    if args.steps is not None:
        overrides += f"\nsteps = {args.steps}"
    if args.seed is not None:
        overrides += f"\nseed = {args.seed}"
    return parse_config(overrides, base=base) if overrides.strip() else base


def cmd_train(args) -> int:
    from .trainer import train

    try:
        config = _train_config(args)
    except (ConfigError, OSError) as exc:
        return _fail(EXIT_USAGE, str(exc))
    data = args.data or config.data_root
    if not data:
        return _fail(EXIT_USAGE, "no dataset given (--data or data_root in the config)")
    try:
        trainer = train(config, data, args.out, resume=args.resume)
    except DatasetError as exc:
        return _fail(EXIT_DATA, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except (TrainingError, WeightsLoadError, FileNotFoundError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    print(f"trained to step {trainer.step}; checkpoint {Path(args.out) / 'latest.ckpt'}")
    return EXIT_OK


def cmd_translate(args) -> int:
    from .data import load_frame, save_frame
    from .metrics import _load_generator

    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        return _fail(EXIT_DATA, f"checkpoint not found: {ckpt}")
    src = Path(args.inp)
    if not src.is_dir():
        return _fail(EXIT_DATA, f"input directory not found: {src}")
    try:
        net, config = _load_generator(ckpt)
    except (ValueError, ConfigError, WeightsLoadError) as exc:
        return _fail(EXIT_RUNTIME, f"cannot load {ckpt}: {exc}")
    frames = sorted(src.rglob("*.png"))
    if not frames:
        return _fail(EXIT_DATA, f"no PNG frames under {src}")
    out = Path(args.out)
    with torch.no_grad():
        for path in frames:
            x = load_frame(path, config.in_channels, config.resolution)
            save_frame(net(x.unsqueeze(0))[0], out / path.relative_to(src))
    print(f"translated {len(frames)} frames into {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import evaluate

    if not Path(args.checkpoint).is_file():
        return _fail(EXIT_DATA, f"checkpoint not found: {args.checkpoint}")
    try:
        report = evaluate(args.checkpoint, args.data, args.backend, out_path=args.report,
                          per_frame_csv=args.csv)
    except DatasetError as exc:
        return _fail(EXIT_DATA, str(exc))
    except (ValueError, WeightsLoadError) as exc:
        return _fail(EXIT_RUNTIME, str(exc))
    print(f"fid[{report['backend']}] = {report['fid']:.6f}  "
          f"structure_score = {report['structure_score']:.4f}  n = {report['n_translated']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="roma", description="Unpaired video translation with "
                     "cross-domain region similarity matching.", formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-toy", help="write the synthetic toy dataset", formatter_class=fmt)
    p.add_argument("--out", default="toy_data", help="output dataset root")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--clips", type=int, default=2, help="clips per domain")
    p.add_argument("--frames", type=int, default=8, help="frames per clip")
    p.add_argument("--size", type=int, default=64, help="frame side in pixels")
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("train", help="train a generator", formatter_class=fmt)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--preset", choices=("default", "toy"), default="default",
                   help="base settings the config file is applied on top of")
    p.add_argument("--data", default=None, help="dataset root (overrides data_root)")
    p.add_argument("--out", default="run", help="output directory for log and checkpoints")
    p.add_argument("--steps", type=int, default=None, help="override total steps")
    p.add_argument("--seed", type=int, default=None, help="override seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=None,
                   help="override any config key (repeatable)")
    p.add_argument("--resume", action="store_true", default=False,
                   help="continue from OUT/latest.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate frames with a checkpoint",
                       formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--in", dest="inp", required=True, help="directory of input PNG frames")
    p.add_argument("--out", required=True, help="output directory (same relative layout)")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="FID and structure score of a checkpoint",
                       formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset split root (source/ and target/)")
    p.add_argument("--backend", default="surrogate",
                   help="feature backend: surrogate or inception:<weights path>")
    p.add_argument("--report", default=None, help="write the metric report here")
    p.add_argument("--csv", default=None, help="write per-frame structure scores here")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
