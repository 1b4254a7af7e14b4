"""The experiment output directory.

    <root>/
        config.snapshot.json
        weights/       model.pt, surrogate.pt (+ .json sidecars), ablation rows
        advsets/       cached attack sets, one directory per (attack, key)
        reports/       eval_report.json and its rendered table, figures
        records/       train_record.csv and train_timings.csv per trained model
        checkpoints/   per-model resumable training state

One directory has one writer; separate experiments use separate directories.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

from config import ExperimentConfig, parse_config
from constants import (
    ADVSETS_DIR,
    CHECKPOINTS_DIR,
    CONFIG_SNAPSHOT,
    EVAL_REPORT_JSON,
    EVAL_REPORT_TABLE,
    MODEL_WEIGHTS,
    MSG_CHECKPOINTS_CLEARED,
    MSG_REPORT_WRITTEN,
    MSG_WEIGHTS_WRITTEN,
    RECORDS_DIR,
    REPORTS_DIR,
    TRAIN_RECORD,
    TRAIN_TIMINGS,
    WEIGHTS_DIR,
)
from data_io import DatasetHandle
from evalkit import EvalReport
from models import BackboneSpec, build, save_weights
from trainer import (
    TrainConfig,
    TrainRecord,
    clear_checkpoints,
    latest_checkpoint,
    load_checkpoint,
    train,
)
from utils import hash_payload, read_json, write_json

logger = logging.getLogger(__name__)


def slugify(label: str) -> str:
    return "".join(c if c.isalnum() else "-" for c in label.lower()).strip("-")


@dataclass(frozen=True)
class ExperimentDir:
    root: Path

    @property
    def weights(self) -> Path:
        return self.root / WEIGHTS_DIR

    @property
    def advsets(self) -> Path:
        return self.root / ADVSETS_DIR

    @property
    def reports(self) -> Path:
        return self.root / REPORTS_DIR

    @property
    def records(self) -> Path:
        return self.root / RECORDS_DIR

    @property
    def checkpoints(self) -> Path:
        return self.root / CHECKPOINTS_DIR

    @property
    def snapshot(self) -> Path:
        return self.root / CONFIG_SNAPSHOT

    def prepare(self) -> "ExperimentDir":
        for directory in (self.weights, self.advsets, self.reports, self.records):
            directory.mkdir(parents=True, exist_ok=True)
        return self

    def model_path(self, tag: str = "") -> Path:
        return self.weights / (f"{slugify(tag)}.pt" if tag else MODEL_WEIGHTS)

    def record_paths(self, tag: str = "") -> tuple[Path, Path]:
        base = self.records / slugify(tag) if tag else self.records
        return base / TRAIN_RECORD, base / TRAIN_TIMINGS

    def checkpoint_dir(self, tag: str = "") -> Path:
        return self.checkpoints / (slugify(tag) if tag else "model")

    def report_paths(self, stem: str = "") -> tuple[Path, Path]:
        if not stem:
            return self.reports / EVAL_REPORT_JSON, self.reports / EVAL_REPORT_TABLE
        return self.reports / f"{slugify(stem)}.json", self.reports / f"{slugify(stem)}.txt"


def open_experiment(cfg: ExperimentConfig) -> ExperimentDir:
    """Creates the output tree and stores the config snapshot beside the artifacts."""
    exp = ExperimentDir(cfg.output_path).prepare()
    write_json(exp.snapshot, cfg.to_dict())
    return exp


def read_snapshot(exp: ExperimentDir) -> ExperimentConfig:
    return parse_config(read_json(exp.snapshot))


# --- Training Runs ---
def run_key(spec: BackboneSpec, dataset: DatasetHandle, train_cfg: TrainConfig) -> str:
    """Identity of a training run: backbone, training data and trajectory-shaping config."""
    return hash_payload(
        {
            "train": train_cfg.config_hash(),
            "backbone": spec.identity(),
            "dataset": [dataset.name, dataset.split, dataset.length],
        }
    )


def run_training(
    exp: ExperimentDir,
    spec: BackboneSpec,
    dataset: DatasetHandle,
    train_cfg: TrainConfig,
    tag: str = "",
    *,
    show_progress: bool = False,
) -> tuple[Path, TrainRecord]:
    """Trains (or resumes) one model and persists its weights and record.

    The run resumes from the newest checkpoint under the tag when that checkpoint was
    written by the same run (see `run_key`); otherwise stale checkpoints are removed
    and training starts from epoch 1.
    """
    key = run_key(spec, dataset, train_cfg)
    checkpoint_dir = exp.checkpoint_dir(tag)
    resume = None
    found = latest_checkpoint(checkpoint_dir)
    if found is not None:
        resume = load_checkpoint(found, key)
        if resume is None:
            removed = clear_checkpoints(checkpoint_dir)
            logger.info(MSG_CHECKPOINTS_CLEARED.format(n=removed, path=checkpoint_dir))
    model = build(spec)
    model, record = train(
        model,
        dataset,
        train_cfg,
        checkpoint_dir,
        resume,
        show_progress=show_progress,
        checkpoint_key=key,
    )
    weights = exp.model_path(tag)
    save_weights(model, weights, key)
    logger.info(MSG_WEIGHTS_WRITTEN.format(path=weights))
    record.save(*exp.record_paths(tag))
    return weights, record


def load_record(exp: ExperimentDir, tag: str = "") -> TrainRecord:
    return TrainRecord.load(*exp.record_paths(tag))


# --- Reports ---
def save_report(exp: ExperimentDir, report: EvalReport, stem: str = "") -> Path:
    json_path, table_path = exp.report_paths(stem)
    report.save(json_path, table_path)
    logger.info(MSG_REPORT_WRITTEN.format(path=json_path))
    return json_path
