import argparse
import logging

from attacks import advset_dir, ensure_advset
from data_io import load_dataset
from errors import ArtifactError
from experiment import open_experiment
from handlers.commons import load_experiment_config, load_surrogate, progress_enabled

logger = logging.getLogger(__name__)


def cmd_gen_advset(args: argparse.Namespace) -> int:
    """Builds (or finds cached) attack sets from the surrogate on the test split."""
    cfg = load_experiment_config(args)
    exp = open_experiment(cfg)
    surrogate = load_surrogate(cfg)
    dataset = load_dataset(cfg.dataset, "test")
    clean = dataset.images()

    specs = [cfg.attack(name) for name in args.attack] if args.attack else cfg.attacks
    for spec in specs:
        artifact, cache_hit = ensure_advset(
            surrogate.model,
            dataset,
            spec,
            exp.advsets,
            surrogate.weights_hash,
            show_progress=progress_enabled(args),
        )
        violations = artifact.budget_violations(clean)
        if violations:
            msg = f"{violations} samples of {spec.name} leave the epsilon ball or pixel range"
            raise ArtifactError(msg)
        status = "cache hit" if cache_hit else "generated"
        print(f"{spec.name}: {status} -> {advset_dir(exp.advsets, spec, artifact.key)}")
    return 0
