"""
Main entry point for the orthoconv command line.
"""
import sys
from typing import List, Optional

from orthoconv.cli import EXIT_ERROR, run
from orthoconv.logger import get_logger

logger = get_logger()


def main(argv: Optional[List[str]] = None) -> int:
    """Run one orthoconv subcommand and return its exit code."""
    try:
        logger.debug("Starting orthoconv")
        return run(argv)
    except Exception as e:
        logger.error(f"Unhandled exception: {e}", exc_info=True)
        print(f"An error occurred: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
