import argparse
import logging
import sys
from collections.abc import Callable

from constants import SUITES
from handlers.ablate import cmd_ablate
from handlers.commons import handle_error
from handlers.evaluate import cmd_eval
from handlers.gen_advset import cmd_gen_advset
from handlers.report import cmd_report
from handlers.train import cmd_train

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Subcommands share the config flags; each adds its own options."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file or preset name")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config leaf by dotted path, e.g. train.epochs=20",
    )
    common.add_argument("--seed", type=int, help="reseed the whole experiment")
    common.add_argument(
        "--strict-determinism",
        action="store_true",
        help="bit-reproducible kernels (slower)",
    )
    common.add_argument("--verbose", action="store_true", help="debug logging")
    common.add_argument("--no-progress", action="store_true", help="hide progress bars")

    attack = argparse.ArgumentParser(add_help=False)
    attack.add_argument(
        "--attack",
        action="append",
        help="fgsm, pgd, aa or an attack name from the config (repeatable); default all",
    )

    parser = argparse.ArgumentParser(
        prog="lisard",
        description="Similarity-regularized adversarial defense: train, attack, evaluate.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", parents=[common], help="train the model")
    train.add_argument(
        "--surrogate", action="store_true", help="train the gray-box surrogate instead"
    )

    commands.add_parser(
        "gen-advset", parents=[common, attack], help="build attack sets from the surrogate"
    )

    evaluate = commands.add_parser("eval", parents=[common, attack], help="gray-box evaluation")
    evaluate.add_argument("--plots", action="store_true", help="write overlap and failure figures")
    evaluate.add_argument("--plot-format", choices=("png", "svg"), default="png")
    evaluate.add_argument(
        "--whitebox", action="store_true", help="also attack every target with its own gradients"
    )

    ablate = commands.add_parser("ablate", parents=[common, attack], help="run an ablation grid")
    ablate.add_argument("--suite", required=True, help=f"one of: {', '.join(SUITES)}")

    report = commands.add_parser("report", parents=[common], help="print stored reports")
    report.add_argument("--report", help="path to an eval_report.json")
    return parser


def main(argv: list[str] | None = None) -> int:
    """Parses the command line and dispatches to the handler of the subcommand."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        level=logging.DEBUG if args.verbose else logging.INFO,
    )

    command_map: dict[str, Callable[[argparse.Namespace], int]] = {
        "train": cmd_train,
        "gen-advset": cmd_gen_advset,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "report": cmd_report,
    }

    try:
        return command_map[args.command](args)
    except Exception as e:  # noqa: BLE001
        return handle_error(e)


if __name__ == "__main__":
    sys.exit(main())
