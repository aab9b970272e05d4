#!/usr/bin/env python3
"""
Run a collaborative adaptation scenario against its baselines.

Usage:
    python adapt_scenario.py --scenario val1-bs45 [--config PATH] [--out DIR]
                             [--detect] [--budgets 12 25 50 100]
"""

import sys
import argparse
from pathlib import Path

# Add shared scripts to path
sys.path.insert(0, str(Path(__file__).parent.parent / "shared" / "scripts"))

from core import ExperimentConfig, cmd_adapt, report_failure
from utils import setup_logger


def main():
    parser = argparse.ArgumentParser(description="Collaborative domain adaptation scenario")
    parser.add_argument("--config", "-c", help="Experiment definition (YAML or JSON)")
    parser.add_argument("--out", "-o", default="runs/default", help="Output directory (holds models/)")
    parser.add_argument("--seed", type=int, help="Run a single training seed and offset every BS scene seed")
    parser.add_argument("--scenario", "-s", required=True,
                        help="Scenario preset from config/scenarios.yaml")
    parser.add_argument("--detect", action="store_true",
                        help="Adapt only when the rolling-RMSE detector fires")
    parser.add_argument("--budgets", type=int, nargs="+",
                        help="Also sweep these adaptation sample budgets")
    parser.add_argument("--log-file", help="Also write the log to this file")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose output")

    args = parser.parse_args()

    # Setup logging
    logger = setup_logger(level="DEBUG" if args.verbose else "INFO", log_file=args.log_file)

    try:
        config = ExperimentConfig.load(args.config, scenario=args.scenario, seed=args.seed)
        logger.info(f"Loaded {config}")

        result = cmd_adapt(config, args.out, force_shift=not args.detect, budgets=args.budgets)

        for summary in result["summary"]:
            logger.info(f"BS {summary['bs_id']}: reaches fine-tuning RMSE "
                        f"{summary['target_rmse']:.3f} dB with sample ratio "
                        f"{summary['sample_ratio']} and FLOPs ratio {summary['flops_ratio']}")
        return 0

    except Exception as e:
        logger.error(f"Error: {e}")
        if args.verbose:
            import traceback
            traceback.print_exc()
        return report_failure(e)


if __name__ == "__main__":
    sys.exit(main())
