"""
Command-line entry point: `orthoconv <subcommand> [flags]`.

Reports go to standard output as JSON; logs and errors go to standard error.
Exit codes: 0 on success, 1 on a domain or numerical error, 2 on a usage error.
"""
import argparse
import logging
import sys
from typing import List, Optional

from orthoconv.commands import get_command_manager
from orthoconv.exceptions import OrthoConvError
from orthoconv.io import report_json
from orthoconv.logger import get_logger

logger = get_logger()

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def common_flags() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--kernel", metavar="PATH.npy", help="kernel tensor [M, C, k, k] in NPY format")
    parent.add_argument("--preset", help="named geometry: fig3, fig2b-desk or sec48-sigma")
    parent.add_argument("--input-shape", metavar="C,H,W", help="layer input shape")
    parent.add_argument("--stride", type=_positive_int, help="layer stride S (default 1 or the preset's)")
    parent.add_argument("--padding", type=int, default=0, help="layer zero padding p (default 0)")
    parent.add_argument("--mode", choices=["row", "col", "kernel-row", "kernel-col"],
                        help="orthogonality form")
    parent.add_argument("--lambda", dest="lam", type=float, help="regularization weight (default 0.1)")
    parent.add_argument("--seed", type=_u64, help="random seed")
    parent.add_argument("--epsilon", type=float, default=1e-2,
                        help="tolerance for counting singular values as 1 (default 0.01)")
    parent.add_argument("--out", metavar="PATH", help="output file")
    parent.add_argument("--threads", type=_positive_int, default=1, help="worker threads (default 1)")
    parent.add_argument("--verbose", action="store_true", help="print a readable summary to standard error")
    return parent


def build_parser() -> argparse.ArgumentParser:
    manager = get_command_manager()
    if not manager.get_all_commands():
        manager.load_commands()
    parser = argparse.ArgumentParser(prog="orthoconv",
                                     description="Orthogonal convolution regularization toolkit")
    subparsers = parser.add_subparsers(dest="command", metavar="<subcommand>")
    subparsers.required = True
    parent = common_flags()
    for name in manager.get_command_names():
        plugin = manager.get_command(name)
        sub = subparsers.add_parser(name, parents=[parent], help=plugin.get_description(),
                                    description=plugin.get_description())
        plugin.add_arguments(sub)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """
    Parse `argv` and execute one subcommand.

    Returns:
        Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.verbose:
        logger.setLevel(min(logger.level or logging.INFO, logging.INFO))

    manager = get_command_manager()
    try:
        report = manager.execute_command(args.command, args)
    except OrthoConvError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        logger.error(f"{args.command} failed on file access: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR

    sys.stdout.write(report_json(report))
    if args.verbose:
        print(manager.get_command(args.command).summarize(report), file=sys.stderr)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
