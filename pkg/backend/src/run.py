"""Run the CLI with file logging enabled by default."""
from pathlib import Path
import logging
import sys

from src.config import Settings
from src.main import main as cli_main

DEFAULT_LOG_DIR = Path(__file__).resolve().parents[1] / "logs"


def main() -> int:
    """Run a subcommand, logging to ``KNEEOA_LOG_DIR`` or backend/logs."""
    argv = sys.argv[1:]
    if "--log-dir" not in argv:
        log_dir = Settings().log_dir or DEFAULT_LOG_DIR
        argv = [*argv, "--log-dir", str(log_dir)]

    code = cli_main(argv)
    logging.getLogger(__name__).info(f"Exit code {code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
