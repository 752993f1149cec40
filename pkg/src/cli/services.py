"""Service layer wiring the command-line surface to the swincd pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
import logging
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import anyio
import anyio.to_thread

# Load .env for local runs; variables already set in the environment win because override=False
from dotenv import load_dotenv

from swincd import __version__
from swincd.diagnostics import SECTIONS, ComponentResult, run_gradient_suite
from swincd.errors import DataError
from swincd.metrics import MetricsReport, merge_scores
from swincd.nn.network import ChangeDetector
from swincd.pipeline.checkpoint import load_checkpoint, save_checkpoint
from swincd.pipeline.data import (
    ManifestEntry,
    SamplePair,
    load_dataset,
    load_pair,
    read_manifest,
    resize_pair,
    save_dataset,
    synth_dataset,
    tile,
)
from swincd.pipeline.inference import PairScore, export_predictions, predict, score_pair
from swincd.pipeline.training import EpochLog, Trainer, TrainResult, build_optimizer
from swincd.settings import ModelConfig, RuntimeSettings

from .schemas import CONFIG_NAME, RunConfig, load_config, render_config

load_dotenv(override=False)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.tync"
VERSION_NAME = "VERSION"
TRAIN_LOG_NAME = "train_log.txt"
LOSSES_NAME = "losses.txt"
METRICS_TEXT_NAME = "metrics.txt"
METRICS_JSON_NAME = "metrics.json"


# ---------------------------------------------------------------------------
# Run directories
# ---------------------------------------------------------------------------
def prepare_run_dir(out: str | Path, config: RunConfig) -> Path:
    """Create ``out`` and stamp it with the effective config and the package version."""

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(render_config(config), encoding="utf-8")
    (out / VERSION_NAME).write_text(f"swincd {__version__}\n", encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------
class DatasetService:
    def synth(self, out: str | Path, *, n: int, size: int, seed: int,
              model: Optional[ModelConfig] = None) -> Path:
        pairs = synth_dataset(n, size, seed, model=model)
        manifest = save_dataset(pairs, out)
        logger.info("wrote %d synthetic pairs to %s", len(pairs), manifest)
        return manifest

    def tile(self, source: str | Path, out: str | Path, *, size: int = 256,
             resize: Optional[int] = None) -> tuple[Path, int]:
        """Tile every manifest pair; tiles are resized to ``resize`` when given."""

        tiles: list[SamplePair] = []
        entries = read_manifest(source)
        for entry in entries:
            pieces = tile(load_pair(entry), size)
            if resize is not None and resize != size:
                pieces = [resize_pair(piece, resize) for piece in pieces]
            tiles.extend(pieces)
        manifest = save_dataset(tiles, out)
        logger.info("tiled %d pairs into %d tiles of %d px under %s", len(entries), len(tiles), size, out)
        return manifest, len(tiles)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------
class TrainingService:
    def train(
        self,
        config: RunConfig,
        data: str | Path,
        out: str | Path,
        *,
        resume: Optional[str | Path] = None,
        on_epoch: Optional[Callable[[EpochLog], None]] = None,
    ) -> TrainResult:
        model_cfg, train_cfg = config.model_settings(), config.train_settings()
        dataset = load_dataset(data)
        model = ChangeDetector(model_cfg)
        optimizer = build_optimizer(model, train_cfg)
        start_step = 0
        if resume is not None:
            checkpoint = load_checkpoint(resume)
            checkpoint.restore(model, optimizer)
            start_step = checkpoint.step
            logger.info("resuming from %s at step %d", resume, start_step)
        run_dir = prepare_run_dir(out, config)

        trainer = Trainer(model, train_cfg, config.loss_settings(), optimizer=optimizer, start_step=start_step)
        result = trainer.fit(dataset, on_epoch)
        save_checkpoint(run_dir / CHECKPOINT_NAME, result.checkpoint)
        (run_dir / TRAIN_LOG_NAME).write_text("".join(log.line() + "\n" for log in result.history), encoding="utf-8")
        (run_dir / LOSSES_NAME).write_text("".join(f"{loss!r}\n" for loss in result.step_losses), encoding="utf-8")
        return result


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------
class PredictionService:
    def load_model(self, ckpt: str | Path, config: RunConfig) -> ChangeDetector:
        model = ChangeDetector(config.model_settings())
        load_checkpoint(ckpt).restore(model)
        return model

    def resolve_config(self, ckpt: str | Path, config_path: Optional[str | Path]) -> RunConfig:
        """An explicit config wins; otherwise the one echoed next to the checkpoint."""

        if config_path is None:
            echoed = Path(ckpt).parent / CONFIG_NAME
            if echoed.exists():
                config_path = echoed
        return load_config(config_path)

    def predict(
        self,
        ckpt: str | Path,
        data: str | Path,
        out: str | Path,
        *,
        config: RunConfig,
        threshold: Optional[float] = None,
        sides: bool = False,
    ) -> int:
        model = self.load_model(ckpt, config)
        threshold = config.train.threshold if threshold is None else threshold
        pairs = load_dataset(data)
        run_dir = prepare_run_dir(out, config)
        predictions = predict(model, pairs, threshold=threshold, batch=config.train.batch, sides=sides)
        export_predictions(predictions, run_dir)
        logger.info("wrote %d predictions to %s", len(predictions), run_dir)
        return len(predictions)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------
class EvaluationService:
    """Scores prediction folders; pairs are scored on worker threads and merged in manifest order."""

    def __init__(self, workers: int = 4) -> None:
        self.workers = workers

    async def _score_all(
        self,
        pred_dir: Path,
        entries: Sequence[ManifestEntry],
        threshold: float,
    ) -> list[PairScore]:
        limiter = anyio.CapacityLimiter(self.workers)
        results: list[Optional[PairScore]] = [None] * len(entries)
        failures: list[Optional[BaseException]] = [None] * len(entries)

        async def _score(index: int, entry: ManifestEntry) -> None:
            def _work() -> PairScore:
                return score_pair(pred_dir, load_pair(entry), threshold=threshold)

            try:
                results[index] = await anyio.to_thread.run_sync(_work, limiter=limiter)
            except Exception as exc:
                failures[index] = exc

        async with anyio.create_task_group() as tg:
            for index, entry in enumerate(entries):
                tg.start_soon(_score, index, entry)
        for failure in failures:
            if failure is not None:
                raise failure
        return [r for r in results if r is not None]

    @staticmethod
    def _side_f1(scores: Iterable[PairScore]) -> dict[str, float]:
        scores = list(scores)
        levels = {len(s.side_counts) for s in scores}
        if len(levels) != 1 or 0 in levels:
            if len(levels) > 1:
                logger.warning("side maps missing for some pairs; side metrics skipped")
            return {}
        f1 = {}
        for level in range(levels.pop()):
            total = sum((s.side_counts[level] for s in scores[1:]), scores[0].side_counts[level])
            f1[f"side{level + 1}"] = total.f1
        return f1

    def evaluate(self, pred_dir: str | Path, gt: str | Path, *, threshold: float = 0.5) -> MetricsReport:
        entries = read_manifest(gt)
        if not entries:
            raise DataError(f"no pairs listed under {gt}")
        scores = anyio.run(partial(self._score_all, Path(pred_dir), entries, threshold))
        report = merge_scores([s.score for s in scores], self._side_f1(scores))
        logger.info("evaluated %d pairs: f1=%.4f iou=%.4f mba=%.4f", report.images, report.f1, report.iou, report.mba)
        return report

    def write_report(self, report: MetricsReport, out: str | Path) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / METRICS_TEXT_NAME).write_text(report.to_text(), encoding="utf-8")
        (out / METRICS_JSON_NAME).write_text(report.model_dump_json(indent=2), encoding="utf-8")
        return out / METRICS_TEXT_NAME


# ---------------------------------------------------------------------------
# Gradient checks
# ---------------------------------------------------------------------------
class GradCheckService:
    def run(
        self,
        config: RunConfig,
        *,
        tol: float = 1e-4,
        instances: int = 5,
        seed: int = 0,
        sections: Sequence[str] = SECTIONS,
    ) -> list[ComponentResult]:
        return run_gradient_suite(
            config.model_settings(),
            tol=tol,
            instances=instances,
            seed=seed,
            sections=sections,
            loss_cfg=config.loss_settings(),
        )


# ---------------------------------------------------------------------------
# Service container exposed to the command handlers
# ---------------------------------------------------------------------------
@dataclass
class AppServices:
    settings: RuntimeSettings
    datasets: DatasetService
    training: TrainingService
    prediction: PredictionService
    evaluation: EvaluationService
    gradcheck: GradCheckService


def build_services(settings: Optional[RuntimeSettings] = None) -> AppServices:
    settings = settings or RuntimeSettings.from_env()
    return AppServices(
        settings=settings,
        datasets=DatasetService(),
        training=TrainingService(),
        prediction=PredictionService(),
        evaluation=EvaluationService(workers=settings.workers),
        gradcheck=GradCheckService(),
    )


__all__ = [
    "AppServices",
    "DatasetService",
    "EvaluationService",
    "GradCheckService",
    "PredictionService",
    "TrainingService",
    "build_services",
    "prepare_run_dir",
]
