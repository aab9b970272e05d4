#!/usr/bin/env python3
"""
Monte Carlo check of the physics-restricted sample-complexity bound.

Usage:
    python verify_pac.py [--config PATH] [--out DIR] [--scenario NAME] [--random-configs N]
"""

import sys
import argparse
from pathlib import Path

# Add shared scripts to path
sys.path.insert(0, str(Path(__file__).parent.parent / "shared" / "scripts"))

from core import ExperimentConfig, cmd_pac, report_failure
from utils import setup_logger


def main():
    parser = argparse.ArgumentParser(description="Verify the sample-complexity bound")
    parser.add_argument("--config", "-c", help="Experiment definition (YAML or JSON)")
    parser.add_argument("--out", "-o", default="runs/default", help="Output directory")
    parser.add_argument("--seed", type=int, help="Run a single training seed and offset every BS scene seed")
    parser.add_argument("--scenario", "-s", help="Scenario preset from config/scenarios.yaml")
    parser.add_argument("--random-configs", type=int, default=0,
                        help="Also verify this many random planted configurations")
    parser.add_argument("--log-file", help="Also write the log to this file")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose output")

    args = parser.parse_args()

    # Setup logging
    logger = setup_logger(level="DEBUG" if args.verbose else "INFO", log_file=args.log_file)

    try:
        config = ExperimentConfig.load(args.config, scenario=args.scenario, seed=args.seed)
        logger.info(f"Loaded {config}")

        result = cmd_pac(config, args.out, args.random_configs)
        report = result["verification"]
        failed = sum(1 for r in result["random_configs"] if not r["passed"])

        logger.info(f"m={report['m']} for |Theta(eps0)|={report['restricted_size']}: "
                    f"success {report['success_worst']:.3f} (target {report['target']:.3f})")
        if failed:
            logger.warning(f"{failed} random configuration(s) fell below the target")
        return 0 if report["passed"] else 1

    except Exception as e:
        logger.error(f"Error: {e}")
        if args.verbose:
            import traceback
            traceback.print_exc()
        return report_failure(e)


if __name__ == "__main__":
    sys.exit(main())
