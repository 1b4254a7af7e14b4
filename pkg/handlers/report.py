import argparse
import logging
from pathlib import Path

from constants import MSG_ERROR_NO_REPORT
from errors import ArtifactError
from evalkit import EvalReport
from experiment import ExperimentDir
from handlers.commons import load_experiment_config

logger = logging.getLogger(__name__)


def cmd_report(args: argparse.Namespace) -> int:
    """Prints a stored evaluation report and any ablation tables beside it."""
    if args.report:
        path = Path(args.report)
        reports_dir = path.parent
    else:
        exp = ExperimentDir(load_experiment_config(args).output_path)
        path, _ = exp.report_paths()
        reports_dir = exp.reports
    if not path.is_file():
        raise ArtifactError(MSG_ERROR_NO_REPORT.format(path))

    report = EvalReport.load(path)
    print(report.render_table())
    for table in sorted(reports_dir.glob("ablate-*.txt")):
        if table.stem.endswith("-report"):
            continue
        print()
        print(table.stem)
        print(table.read_text(encoding="utf-8").rstrip())
    return 0
