import argparse
import logging
from dataclasses import replace
from pathlib import Path

from config import ExperimentConfig, load_config
from constants import MSG_ERROR_GENERIC, MSG_ERROR_MISSING_WEIGHTS, MSG_ERROR_NO_SURROGATE
from data_io import DatasetHandle, load_dataset
from errors import ConfigError, LisardError, WeightsLoadError
from evalkit import ModelEntry
from experiment import ExperimentDir, run_training
from models import BackboneSpec, load_weights
from trainer import TrainConfig
from utils import select_device

logger = logging.getLogger(__name__)

SURROGATE_TAG = "surrogate"


# --- Error Handling ---
def handle_error(e: Exception) -> int:
    """Logs a failure and returns the process exit status."""
    if isinstance(e, LisardError):
        logger.error(f"{type(e).__name__}: {e}")
    else:
        logger.error(MSG_ERROR_GENERIC.format(e), exc_info=True)
    return 1


# --- Config & Data ---
def load_experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config", "a config file or preset name is required")
    strict = True if getattr(args, "strict_determinism", False) else None
    return load_config(args.config, args.set, args.seed, strict)


def progress_enabled(args: argparse.Namespace) -> bool:
    return not getattr(args, "no_progress", False)


def load_splits(cfg: ExperimentConfig) -> tuple[DatasetHandle, DatasetHandle]:
    return load_dataset(cfg.dataset, "train"), load_dataset(cfg.dataset, "test")


# --- Models ---
def load_entry(name: str, path: Path) -> ModelEntry:
    """A trained model ready for evaluation, identified by its weights hash."""
    if not Path(path).is_file():
        raise WeightsLoadError(MSG_ERROR_MISSING_WEIGHTS.format(path))
    model = load_weights(path).to(select_device()).eval()
    return ModelEntry(name=name, model=model)


def load_surrogate(cfg: ExperimentConfig) -> ModelEntry:
    path = cfg.surrogate_path()
    if not path.is_file():
        msg = f"{MSG_ERROR_NO_SURROGATE}: {path}"
        raise WeightsLoadError(msg)
    return load_entry(SURROGATE_TAG, path)


def load_targets(cfg: ExperimentConfig, exp: ExperimentDir) -> list[ModelEntry]:
    """The protocol's targets, or the experiment's own trained model when none are listed."""
    if not cfg.protocol.targets:
        return [load_entry(cfg.name, exp.model_path())]
    return [load_entry(t.name, cfg.resolve(t.path)) for t in cfg.protocol.targets]


def surrogate_setup(
    cfg: ExperimentConfig, dataset: DatasetHandle
) -> tuple[BackboneSpec, TrainConfig]:
    """Standard training with the target's architecture and data under an independent seed."""
    spec = replace(cfg.model.backbone(dataset), init_seed=cfg.surrogate_seed)
    train_cfg = replace(cfg.train, mode="standard", seed=cfg.surrogate_seed)
    return spec, train_cfg


def ensure_surrogate(
    cfg: ExperimentConfig, exp: ExperimentDir, dataset: DatasetHandle, *, show_progress: bool
) -> ModelEntry:
    """Loads the configured surrogate; trains one when the protocol names none and none exists."""
    path = cfg.surrogate_path()
    if path.is_file() or cfg.protocol.surrogate is not None:
        return load_surrogate(cfg)
    spec, train_cfg = surrogate_setup(cfg, dataset)
    run_training(exp, spec, dataset, train_cfg, SURROGATE_TAG, show_progress=show_progress)
    return load_surrogate(cfg)
