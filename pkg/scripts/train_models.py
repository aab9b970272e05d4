#!/usr/bin/env python3
"""
Train the physics model and the baselines on every BS.

Usage:
    python train_models.py [--config PATH] [--out DIR] [--seed INT] [--scenario NAME]
"""

import sys
import argparse
from pathlib import Path

# Add shared scripts to path
sys.path.insert(0, str(Path(__file__).parent.parent / "shared" / "scripts"))

from core import ExperimentConfig, cmd_train, report_failure
from utils import setup_logger


def main():
    parser = argparse.ArgumentParser(description="Train RSS map predictors per BS")
    parser.add_argument("--config", "-c", help="Experiment definition (YAML or JSON)")
    parser.add_argument("--out", "-o", default="runs/default", help="Output directory (holds data/)")
    parser.add_argument("--seed", type=int, help="Run a single training seed and offset every BS scene seed")
    parser.add_argument("--scenario", "-s", help="Scenario preset from config/scenarios.yaml")
    parser.add_argument("--log-file", help="Also write the log to this file")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose output")

    args = parser.parse_args()

    # Setup logging
    logger = setup_logger(level="DEBUG" if args.verbose else "INFO", log_file=args.log_file)

    try:
        config = ExperimentConfig.load(args.config, scenario=args.scenario, seed=args.seed)
        logger.info(f"Loaded {config}")

        result = cmd_train(config, args.out)

        for row in result["improvements"]:
            logger.info(f"BS {row['bs_id']} {row['split']} vs {row['baseline']}: "
                        f"MAE {row['mae_pct']:+.1f}%  RMSE {row['rmse_pct']:+.1f}%")
        logger.info(f"Metrics written to {args.out}/metrics")
        return 0

    except Exception as e:
        logger.error(f"Error: {e}")
        if args.verbose:
            import traceback
            traceback.print_exc()
        return report_failure(e)


if __name__ == "__main__":
    sys.exit(main())
