"""Script to train over several seeds and report the median test accuracy."""
import sys
import os
import argparse
import logging
from pathlib import Path

import numpy as np

# Add the backend directory to Python path
backend_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, backend_dir)

from src.config import Settings, load_run_config, setup_logging  # noqa: E402

TARGET_MEDIAN_ACCURACY = 0.90


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="Train once per seed and summarise test accuracy")
    parser.add_argument("--config", type=Path, help="INI run configuration")
    parser.add_argument("--dataset", type=Path, help="dataset CSV; simulated per seed when omitted")
    parser.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --first-seed")
    parser.add_argument("--first-seed", type=int, default=0)
    parser.add_argument("--output-dir", type=Path, default=Path("runs/seed_sweep"))
    parser.add_argument("--paper-faithful", action="store_true")
    return parser.parse_args(argv)


def main(argv=None):
    """Run the sweep with console and file logging."""
    args = parse_args(argv)
    settings = Settings()
    log_file = setup_logging(settings.log_level, settings.log_dir or Path(backend_dir) / "logs")

    logger = logging.getLogger(__name__)
    logger.info(f"Using log file: {log_file}")

    # Only import after logging is configured
    from src.handlers.command_handler import cmd_simulate, cmd_train

    accuracies = []
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        run_dir = args.output_dir / f"seed_{seed}"
        overrides = {"seed": seed, "output_dir": str(run_dir)}
        if args.paper_faithful:
            overrides["preprocess"] = {"paper_faithful": True}
        try:
            if args.dataset is None:
                simulated = cmd_simulate(load_run_config(args.config, overrides))
                overrides["dataset"] = simulated["data"]["dataset"]
            else:
                overrides["dataset"] = str(args.dataset)
            result = cmd_train(load_run_config(args.config, overrides))
        except Exception as e:
            logger.error(f"Seed {seed} failed: {str(e)}", exc_info=True)
            raise

        accuracy = result["data"]["test_accuracy"]
        accuracies.append(accuracy)
        logger.info(f"Seed {seed}: test accuracy {accuracy:.4f} "
                    f"(best epoch {result['data']['best_epoch']})")

    median = float(np.median(accuracies))
    status = "PASS" if median >= TARGET_MEDIAN_ACCURACY else "FAIL"
    logger.info(f"Median test accuracy {median:.4f} over {len(accuracies)} seeds: {status}")
    print(f"median_accuracy={median:.4f} seeds={len(accuracies)} {status}")
    return 0 if status == "PASS" else 1


if __name__ == "__main__":
    sys.exit(main())
