import argparse
import logging
from dataclasses import replace

import pandas as pd

from attacks import AttackSpec
from config import ExperimentConfig
from constants import (
    CIFAR_EPSILON,
    COMPONENTS_SUITE,
    LOSS_TERMS_SUITE,
    MSG_ERROR_UNKNOWN_SUITE,
    MSG_REPORT_WRITTEN,
    PERTURB_SUITE,
    SUITES,
)
from errors import ConfigError
from evalkit import EvalReport, GrayBoxProtocol, ModelEntry, run_graybox
from experiment import ExperimentDir, open_experiment, run_training, save_report, slugify
from handlers.commons import (
    ensure_surrogate,
    load_entry,
    load_experiment_config,
    load_splits,
    progress_enabled,
)
from trainer import TrainConfig, TrainRecord
from utils import format_duration, format_percent

logger = logging.getLogger(__name__)


# --- Grids ---
def _companion_attack(cfg: ExperimentConfig, kind: str) -> AttackSpec:
    if cfg.train.attack is not None:
        epsilon = cfg.train.attack.epsilon
    elif cfg.attacks:
        epsilon = cfg.attacks[0].epsilon
    else:
        epsilon = CIFAR_EPSILON
    return AttackSpec(kind=kind, epsilon=epsilon, seed=cfg.seed)


def suite_rows(cfg: ExperimentConfig, suite: str) -> list[tuple[str, TrainConfig]]:
    """Row label and training config of every grid point in an ablation suite."""
    base = replace(cfg.train, mode="lisard")
    if suite == "perturb-mode":
        rows = []
        for mode in PERTURB_SUITE:
            if mode == "random":
                rows.append(("Random noise", replace(base, perturb_mode="random")))
            else:
                attack = _companion_attack(cfg, mode)
                rows.append((mode.upper(), replace(base, perturb_mode=mode, attack=attack)))
        return rows
    if suite == "loss-terms":
        return [
            (label, replace(base, class_terms=terms)) for label, terms in LOSS_TERMS_SUITE.items()
        ]
    if suite == "components":
        rows = []
        for label, (keep_alpha, keep_tau) in COMPONENTS_SUITE.items():
            weights = replace(
                base.weights,
                delta=base.weights.delta if keep_alpha else 0.0,
                tau=base.weights.tau if keep_tau else 1.0,
            )
            rows.append((label, replace(base, weights=weights)))
        return rows
    raise ConfigError("suite", MSG_ERROR_UNKNOWN_SUITE.format(suite, ", ".join(SUITES)))


def comparison_table(
    report: EvalReport, records: dict[str, TrainRecord]
) -> pd.DataFrame:
    """Accuracies (%) per grid row and attack, plus the training wall time."""
    table = report.to_frame().map(format_percent)
    table["Time (h:mm:ss)"] = [
        format_duration(records[label].total_wall_time) for label in table.index
    ]
    table.index.name = "configuration"
    return table


def save_table(exp: ExperimentDir, suite: str, table: pd.DataFrame) -> None:
    stem = exp.reports / f"ablate-{slugify(suite)}"
    table.to_csv(stem.with_suffix(".csv"))
    stem.with_suffix(".txt").write_text(table.to_string() + "\n", encoding="utf-8")
    logger.info(MSG_REPORT_WRITTEN.format(path=stem.with_suffix(".csv")))


def cmd_ablate(args: argparse.Namespace) -> int:
    """Trains one LISArD model per grid row and compares them under the same attack sets."""
    cfg = load_experiment_config(args)
    if args.suite not in SUITES:
        raise ConfigError("suite", MSG_ERROR_UNKNOWN_SUITE.format(args.suite, ", ".join(SUITES)))
    rows = suite_rows(cfg, args.suite)
    exp = open_experiment(cfg)
    show_progress = progress_enabled(args)
    train_set, test_set = load_splits(cfg)
    surrogate = ensure_surrogate(cfg, exp, train_set, show_progress=show_progress)

    spec = cfg.model.backbone(train_set)
    targets: list[ModelEntry] = []
    records: dict[str, TrainRecord] = {}
    for label, train_cfg in rows:
        logger.info(f"Ablation {args.suite}: training '{label}'")
        tag = f"ablate-{args.suite}-{label}"
        weights, records[label] = run_training(
            exp, spec, train_set, train_cfg, tag, show_progress=show_progress
        )
        targets.append(load_entry(label, weights))

    specs = [cfg.attack(name) for name in args.attack] if args.attack else cfg.attacks
    protocol = GrayBoxProtocol(
        surrogate=surrogate,
        targets=targets,
        attack_specs=specs,
        dataset=test_set,
        advset_root=exp.advsets,
        allow_generate=cfg.protocol.allow_generate,
        enforce_separation=cfg.protocol.enforce_graybox,
    )
    report = run_graybox(protocol, show_progress=show_progress)
    save_report(exp, report, f"ablate-{args.suite}-report")
    table = comparison_table(report, records)
    save_table(exp, args.suite, table)
    print(table.to_string())
    return 0
