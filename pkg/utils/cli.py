import argparse
import logging
import sys
from typing import Dict, List, Optional

from .config import Command, Setting, build_run_spec, load_config_file
from .errors import ConfigError, ExposureLabError
from .harness import TABLE_REPS, check_acceptance, default_cells, render_report, run

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exposure-lab",
        description="Simulate network interference, test researcher-defined exposure "
                    "mappings against a learned one, and estimate direct effects.")
    parser.add_argument("--command", choices=[c.value for c in Command],
                        help="what to run (required unless given in --config)")
    parser.add_argument("--setting", help="comma list of S1, S2, S3, DIRECT")
    parser.add_argument("--n", help="comma list of sample sizes")
    parser.add_argument("--reps", type=int, help="replications per (setting, n)")
    parser.add_argument("--seed", type=int, help="base seed (default 2024)")
    parser.add_argument("--L", dest="l", type=int, help="cells of the learned-exposure partition")
    parser.add_argument("--folds", type=int, help="cross-fitting folds (default 2 if n <= 500, else 5)")
    parser.add_argument("--hidden-width", type=int, help="GCA hidden layer width")
    parser.add_argument("--lr", type=float, help="GCA learning rate")
    parser.add_argument("--epochs", type=int, help="GCA training epochs")
    parser.add_argument("--optimizer", choices=["adam", "sgd"])
    parser.add_argument("--activation", choices=["relu", "identity"])
    parser.add_argument("--aggregation", choices=["dml2", "dml1"])
    parser.add_argument("--trim", type=float, help="propensity trimming bound")
    parser.add_argument("--method", choices=["ipw", "dr"], help="direct-effect estimator")
    parser.add_argument("--workers", type=int, help="parallel worker processes")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--export-graph", help="simulate: write the graph edge-list here")
    parser.add_argument("--export-data", help="simulate: write the dataset CSV here")
    parser.add_argument("--config", help="key = value file; flags override it")
    parser.add_argument("--check", action="store_true", default=None,
                        help="exit with status 1 when reproduction thresholds fail")
    parser.add_argument("--log-level", default=None,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def collect_values(args: argparse.Namespace) -> Dict[str, object]:
    """Config-file values overlaid with the flags given on the command line."""
    values: Dict[str, object] = {}
    if args.config:
        values.update(load_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if k != "config" and v is not None}
    values.update(flags)
    if "command" in values:
        try:
            command = Command(values["command"])
        except ValueError as e:
            raise ConfigError(f"unknown command {values['command']!r}") from e
        settings, sizes = default_cells(command)
        if command is Command.REPRODUCE_TABLE2:
            values["setting"] = Setting.DIRECT.value
        values.setdefault("setting", ",".join(s.value for s in settings))
        values.setdefault("n", ",".join(str(n) for n in sizes))
        if command in (Command.REPRODUCE_TABLE1, Command.REPRODUCE_TABLE2):
            values.setdefault("reps", TABLE_REPS)
    return values


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        values = collect_values(args)
    except ExposureLabError as e:
        logging.basicConfig(level=logging.INFO)
        logger.error("%s", e)
        return 2
    logging.basicConfig(level=str(values.pop("log_level", "INFO")).upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if "command" not in values:
        logger.error("no command given; use --command or a config file")
        return 2
    try:
        spec = build_run_spec(values)
    except ConfigError as e:
        logger.error("%s", e)
        return 2
    try:
        report = run(spec)
    except ExposureLabError as e:
        logger.error("%s", e)
        return 1
    print(render_report(report))
    if spec.check:
        failures = check_acceptance(report)
        for failure in failures:
            logger.error("check failed: %s", failure)
        if failures:
            return 1
        logger.info("all reproduction checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
