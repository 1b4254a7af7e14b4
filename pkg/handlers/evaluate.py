import argparse
import logging
from pathlib import Path

from attacks import AdvSetArtifact, ensure_advset
from data_io import DatasetHandle, load_dataset
from evalkit import (
    GrayBoxProtocol,
    ModelEntry,
    overlap_values,
    plot_failures,
    plot_overlap,
    run_graybox,
    run_whitebox,
)
from experiment import ExperimentDir, open_experiment, save_report, slugify
from handlers.commons import load_experiment_config, load_surrogate, load_targets, progress_enabled

logger = logging.getLogger(__name__)


def emit_plots(
    exp: ExperimentDir,
    targets: list[ModelEntry],
    artifacts: list[AdvSetArtifact],
    dataset: DatasetHandle,
    suffix: str = "png",
) -> list[Path]:
    """One overlap figure and one failure grid per (target, attack) pair."""
    figures = exp.reports / "figures"
    clean = dataset.images()
    written = []
    for target in targets:
        for artifact in artifacts:
            stem = f"{slugify(target.name)}-{slugify(artifact.name)}"
            clean_values, adv_values, result, statistic = overlap_values(
                target.model, clean, artifact.images
            )
            written.append(
                plot_overlap(
                    clean_values,
                    adv_values,
                    result,
                    figures / f"overlap-{stem}.{suffix}",
                    title=f"{target.name} / {artifact.name}",
                    statistic=statistic,
                )
            )
            failures = plot_failures(
                target.model, artifact.images, dataset.labels, figures / f"failures-{stem}.{suffix}"
            )
            if failures is not None:
                written.append(failures)
    return written


def cmd_eval(args: argparse.Namespace) -> int:
    """Gray-box evaluation of every target against the surrogate's attack sets."""
    cfg = load_experiment_config(args)
    exp = open_experiment(cfg)
    dataset = load_dataset(cfg.dataset, "test")
    surrogate = load_surrogate(cfg)
    targets = load_targets(cfg, exp)
    specs = [cfg.attack(name) for name in args.attack] if args.attack else cfg.attacks

    protocol = GrayBoxProtocol(
        surrogate=surrogate,
        targets=targets,
        attack_specs=specs,
        dataset=dataset,
        advset_root=exp.advsets,
        allow_generate=cfg.protocol.allow_generate,
        enforce_separation=cfg.protocol.enforce_graybox,
    )
    report = run_graybox(protocol, show_progress=progress_enabled(args))
    save_report(exp, report)
    print(report.render_table())

    if args.whitebox:
        whitebox = run_whitebox(targets, dataset, specs)
        save_report(exp, whitebox, "whitebox_report")
        print()
        print(whitebox.render_table())

    if args.plots:
        artifacts = [
            ensure_advset(None, dataset, spec, exp.advsets, surrogate.weights_hash)[0]
            for spec in specs
        ]
        emit_plots(exp, targets, artifacts, dataset, args.plot_format)
    return 0
