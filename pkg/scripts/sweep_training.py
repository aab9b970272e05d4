#!/usr/bin/env python3
"""
Sweep the training-set fraction for every method and BS.

Usage:
    python sweep_training.py [--config PATH] [--out DIR] [--fractions 0.125 0.25 0.5 1.0]
                             [--lams 0.1 0.5 1.0]
"""

import sys
import argparse
from pathlib import Path

# Add shared scripts to path
sys.path.insert(0, str(Path(__file__).parent.parent / "shared" / "scripts"))

from core import ExperimentConfig, cmd_sweep, report_failure
from utils import setup_logger


def main():
    parser = argparse.ArgumentParser(description="Training-size sweep (sample efficiency)")
    parser.add_argument("--config", "-c", help="Experiment definition (YAML or JSON)")
    parser.add_argument("--out", "-o", default="runs/default", help="Output directory (holds data/)")
    parser.add_argument("--seed", type=int, help="Run a single training seed and offset every BS scene seed")
    parser.add_argument("--scenario", "-s", help="Scenario preset from config/scenarios.yaml")
    parser.add_argument("--fractions", type=float, nargs="+", default=[0.125, 0.25, 0.5, 1.0],
                        help="Training fractions in (0, 1]")
    parser.add_argument("--lams", type=float, nargs="+",
                        help="Physics-loss weights to sweep (default: train.sweep_lams)")
    parser.add_argument("--log-file", help="Also write the log to this file")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose output")

    args = parser.parse_args()

    # Setup logging
    logger = setup_logger(level="DEBUG" if args.verbose else "INFO", log_file=args.log_file)

    try:
        config = ExperimentConfig.load(args.config, scenario=args.scenario, seed=args.seed)
        logger.info(f"Loaded {config}")

        result = cmd_sweep(config, args.out, args.fractions, args.lams)

        for entry in result["crossovers"]:
            fraction = entry["fraction"]
            reached = f"{fraction:g}" if fraction is not None else "never"
            logger.info(f"BS {entry['bs_id']} {entry['split']}: physics (lam {entry['lam']:g}) "
                        f"matches full-data baseline1 at fraction {reached}")
        return 0

    except Exception as e:
        logger.error(f"Error: {e}")
        if args.verbose:
            import traceback
            traceback.print_exc()
        return report_failure(e)


if __name__ == "__main__":
    sys.exit(main())
