import os
import sys
import argparse
import time
from typing import Any, Optional
from datetime import datetime
import logging
from logging.handlers import RotatingFileHandler

from ..config import Defaults, apply_overrides, load_run_config
from ..errors import RobustFpcaError
from ..ingestor import run_breakdown, run_fpca, run_ingest, run_median, run_simulate
from ..log import AccumulatingLogHandler, find_accumulating_handler

COMMANDS = {
    "median": run_median,
    "fpca": run_fpca,
    "simulate": run_simulate,
    "breakdown": run_breakdown,
    "ingest": run_ingest,
}


def setup_logging(log_dir: str = "debug") -> RotatingFileHandler:
    logging.basicConfig(level=logging.INFO)
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_file_name = os.path.join(log_dir, f"run_{timestamp}.txt")
    if not os.path.isdir(log_dir):
        os.makedirs(log_dir)
    file_handler = RotatingFileHandler(log_file_name, maxBytes=1024*1024*1024, backupCount=50)
    formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')
    file_handler.setFormatter(formatter)
    logging.getLogger().addHandler(file_handler)
    if find_accumulating_handler() is None:
        logging.getLogger().addHandler(AccumulatingLogHandler())
    return file_handler


def handle_command(
    command: str,
    config: Optional[str] = None,
    seed: Optional[int] = None,
    psi: Optional[float] = None,
    components: Optional[int] = None,
    method: Optional[str] = None,
    **kwargs: Any,
) -> int:
    """
    Loads the configuration, applies command-line overrides and runs the command.
    """
    start_time = time.time()
    try:
        run_config = apply_overrides(load_run_config(config), seed=seed, psi=psi, components=components, method=method)
    except RobustFpcaError as e:
        logging.getLogger().error(f"Error: {e}")
        return e.exit_code

    ret = COMMANDS[command](run_config, start_time)
    if ret == 0:
        logging.getLogger().info(f"Successfully ran {command} config: {config}")
    return ret


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=Defaults.PACKAGE_DESCRIPTION, epilog=Defaults.PACKAGE_URL)

    # Subparsers for the main commands
    subparsers = parser.add_subparsers(title="commands", dest="command", required=True)

    helps = {
        "median": "Pointwise Fréchet median trajectory of a sample",
        "fpca": "Robust functional PCA of a sample",
        "simulate": "Generate a seeded synthetic sample",
        "breakdown": "Monte Carlo robustness curves under contamination",
        "ingest": "Bin event records into daily Laplacian trajectories",
    }
    for name, help_text in helps.items():
        command_parser = subparsers.add_parser(name, help=help_text)
        command_parser.add_argument(
            "-c",
            "--config",
            type=str,
            help="configuration file",
        )
        if name in ("simulate", "breakdown"):
            command_parser.add_argument("--seed", type=int, default=None, help="master seed")
        if name in ("fpca", "breakdown"):
            command_parser.add_argument("--psi", type=float, default=None, help="cutoff quantile level in (0, 1]")
        if name == "fpca":
            command_parser.add_argument(
                "--components",
                type=int,
                default=None,
                help="number of components (default: smallest reaching the fve level)",
            )
            command_parser.add_argument(
                "--method",
                type=str,
                default=None,
                choices=["wpu", "dm", "spatial-sign", "classical"],
                help="covariance estimator",
            )
        command_parser.set_defaults(
            func=lambda args: handle_command(**vars(args))
        )
    return parser


def main(argv=None) -> None:
    parser = build_parser()

    # Parse the command-line arguments
    args = parser.parse_args(argv)

    file_handler = setup_logging()
    try:
        ret = args.func(args)
    finally:
        logging.getLogger().removeHandler(file_handler)
        file_handler.close()
    sys.exit(ret)


if __name__ == "__main__":
    main()
