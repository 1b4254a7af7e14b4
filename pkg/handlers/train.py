import argparse
import logging

from data_io import load_dataset
from experiment import open_experiment, run_training
from handlers.commons import (
    SURROGATE_TAG,
    load_experiment_config,
    progress_enabled,
    surrogate_setup,
)
from utils import format_duration, format_percent

logger = logging.getLogger(__name__)


def cmd_train(args: argparse.Namespace) -> int:
    """Trains the experiment's model (or, with --surrogate, its gray-box surrogate)."""
    cfg = load_experiment_config(args)
    exp = open_experiment(cfg)
    dataset = load_dataset(cfg.dataset, "train")

    if args.surrogate:
        spec, train_cfg = surrogate_setup(cfg, dataset)
        tag = SURROGATE_TAG
    else:
        spec, train_cfg = cfg.model.backbone(dataset), cfg.train
        tag = ""

    weights, record = run_training(
        exp, spec, dataset, train_cfg, tag, show_progress=progress_enabled(args)
    )
    last = record.rows[-1] if record.rows else None
    summary = f"{spec.name} ({train_cfg.mode}) -> {weights}"
    if last is not None:
        summary += (
            f" | epochs {len(record)} | train accuracy {format_percent(last.train_accuracy)}%"
            f" | time {format_duration(record.total_wall_time)}"
        )
    print(summary)
    return 0
