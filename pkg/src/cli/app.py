"""``swincd`` command line: synth, tile, train, predict, eval and gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Callable, Optional, Sequence

import numpy as np

from swincd import __version__
from swincd.autograd.tensor import default_dtype
from swincd.diagnostics import SECTIONS
from swincd.errors import ConfigError, DataError, NumericError, ShapeError
from swincd.pipeline.training import EpochLog
from swincd.settings import ModelConfig

from .schemas import RunConfig, load_config
from .services import CHECKPOINT_NAME, AppServices, build_services

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors surface as ``ConfigError`` instead of exiting."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _section(value: str) -> str:
    if value not in SECTIONS:
        raise argparse.ArgumentTypeError(f"unknown section {value!r}; choose from {', '.join(SECTIONS)}")
    return value


def build_parser() -> argparse.ArgumentParser:
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="swincd", description="Siamese Swin change detection.", formatter_class=formatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    synth = commands.add_parser("synth", help="write a synthetic dataset", formatter_class=formatter)
    synth.add_argument("--out", required=True, help="output dataset folder")
    synth.add_argument("--n", type=int, default=8, help="number of pairs")
    synth.add_argument("--size", type=int, default=64, help="image side in pixels")
    synth.add_argument("--seed", type=int, default=0, help="generator seed")

    tile = commands.add_parser("tile", help="cut a dataset into square tiles", formatter_class=formatter)
    tile.add_argument("--in", dest="source", required=True, help="input dataset folder or manifest")
    tile.add_argument("--out", required=True, help="output dataset folder")
    tile.add_argument("--size", type=int, default=256, help="tile side in pixels")
    tile.add_argument("--resize", type=int, default=None, help="resample each tile to this side")

    train = commands.add_parser("train", help="train a model", formatter_class=formatter)
    train.add_argument("--config", default=None, help="run config file; defaults apply when omitted")
    train.add_argument("--data", default=None, help="training dataset (overrides paths.data)")
    train.add_argument("--out", default=None, help="run directory (overrides paths.out)")
    train.add_argument("--resume", default=None, help="checkpoint to continue from")

    predict = commands.add_parser("predict", help="write change maps", formatter_class=formatter)
    predict.add_argument("--ckpt", default=None, help="checkpoint (overrides paths.ckpt)")
    predict.add_argument("--data", default=None, help="dataset to predict (overrides paths.data)")
    predict.add_argument("--out", default=None, help="prediction folder (overrides paths.out)")
    predict.add_argument("--config", default=None, help="run config; defaults to the one beside the checkpoint")
    predict.add_argument("--threshold", type=float, default=None, help="binary threshold (train.threshold)")
    predict.add_argument("--sides", action="store_true", help="also write the five side-output maps")

    evaluate = commands.add_parser("eval", help="score predictions against masks", formatter_class=formatter)
    evaluate.add_argument("--pred", required=True, help="prediction folder")
    evaluate.add_argument("--gt", required=True, help="ground-truth dataset folder or manifest")
    evaluate.add_argument("--out", required=True, help="report folder")
    evaluate.add_argument("--threshold", type=float, default=0.5, help="binary threshold")

    grad = commands.add_parser("gradcheck", help="run the finite-difference gradient suite", formatter_class=formatter)
    grad.add_argument("--config", default=None, help="run config; the toy model when omitted")
    grad.add_argument("--tol", type=float, default=1e-4, help="relative error tolerance")
    grad.add_argument("--instances", type=int, default=5, help="random instances per component")
    grad.add_argument("--seed", type=int, default=0, help="generator seed")
    grad.add_argument("--sections", nargs="+", type=_section, default=list(SECTIONS), help="suite sections to run")
    return parser


def _require_path(value: Optional[str], flag: str, key: str) -> str:
    if not value:
        raise ConfigError(f"{flag} is required (or set {key} in the config)")
    return value


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------
def cmd_synth(args: argparse.Namespace, services: AppServices) -> int:
    manifest = services.datasets.synth(args.out, n=args.n, size=args.size, seed=args.seed)
    print(f"wrote {args.n} pairs: {manifest}")
    return EXIT_OK


def cmd_tile(args: argparse.Namespace, services: AppServices) -> int:
    manifest, count = services.datasets.tile(args.source, args.out, size=args.size, resize=args.resize)
    print(f"wrote {count} tiles: {manifest}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, services: AppServices) -> int:
    config = load_config(args.config)
    data = _require_path(args.data or config.paths.data, "--data", "paths.data")
    out = _require_path(args.out or config.paths.out, "--out", "paths.out")

    def _report(log: EpochLog) -> None:
        print(log.line(), flush=True)

    result = services.training.train(config, data, out, resume=args.resume, on_epoch=_report)
    print(f"checkpoint: {out}/{CHECKPOINT_NAME} (step {result.checkpoint.step})")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, services: AppServices) -> int:
    ckpt = args.ckpt
    config: Optional[RunConfig] = None
    if ckpt is None and args.config is not None:
        config = load_config(args.config)
        ckpt = config.paths.ckpt
    ckpt = _require_path(ckpt, "--ckpt", "paths.ckpt")
    config = config or services.prediction.resolve_config(ckpt, args.config)
    data = _require_path(args.data or config.paths.data, "--data", "paths.data")
    out = _require_path(args.out or config.paths.out, "--out", "paths.out")
    count = services.prediction.predict(ckpt, data, out, config=config, threshold=args.threshold, sides=args.sides)
    print(f"wrote {count} predictions: {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, services: AppServices) -> int:
    report = services.evaluation.evaluate(args.pred, args.gt, threshold=args.threshold)
    path = services.evaluation.write_report(report, args.out)
    print(f"f1={report.f1:.6f} iou={report.iou:.6f} oa={report.oa:.6f} mba={report.mba:.6f}")
    print(f"report: {path}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace, services: AppServices) -> int:
    config = load_config(args.config) if args.config else RunConfig.from_settings(model=ModelConfig.toy())
    results = services.gradcheck.run(
        config, tol=args.tol, instances=args.instances, seed=args.seed, sections=args.sections
    )
    for result in results:
        print(result.line())
    failed = [r.component for r in results if not r.passed]
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)}")
    print(f"all {len(results)} components within tolerance")
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, AppServices], int]] = {
    "synth": cmd_synth,
    "tile": cmd_tile,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def configure_logging(level: str) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


def main(argv: Optional[Sequence[str]] = None, services: Optional[AppServices] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        services = services or build_services()
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    configure_logging(services.settings.log_level)
    dtype = np.float32 if services.settings.precision == 32 else np.float64
    try:
        with default_dtype(dtype):
            return COMMANDS[args.command](args, services)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except NumericError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_DATA


def run() -> None:
    sys.exit(main())


__all__ = ["build_parser", "main", "run"]
