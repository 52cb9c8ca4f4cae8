"""
Siamleaf — Command-Line Factory.

Builds the click command group, configures logging, and registers the
dataset, training and evaluation commands.  Run directly:

    python app.py --help
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Optional

import click

import config
from commands import CliState


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Route log records to stderr with the Siamleaf format."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else config.LOG_LEVEL
    logging.basicConfig(level=level, format=config.LOG_FORMAT, stream=sys.stderr, force=True)


def create_cli() -> click.Group:
    """Build and configure the command group.

    Returns:
        A ``click.Group`` with every command registered.
    """

    @click.group(context_settings={"help_option_names": ["-h", "--help"]})
    @click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
                  help="Experiment config (JSON).")
    @click.option("--seed", type=int, default=None, help="Override every seed.")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None,
                  help=f"Output directory (default: {config.OUTPUT_DIR}).")
    @click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
    @click.option("-q", "--quiet", is_flag=True, help="Warnings only, no progress bars.")
    @click.pass_context
    def cli(ctx: click.Context, config_path: Optional[Path], seed: Optional[int], out_dir: Optional[Path],
            verbose: bool, quiet: bool) -> None:
        """Siamese leaf-disease classification with five-support majority voting."""
        configure_logging(verbose, quiet)
        ctx.obj = CliState(config_path, seed, out_dir, progress=not quiet and sys.stderr.isatty())

    # ── Register commands ────────────────────────────────────────────────
    from commands.dataset import augment, prepare, summary, synth
    from commands.experiment import evaluate, grid, query
    from commands.training import train

    for command in (prepare, augment, synth, summary, train, evaluate, grid, query):
        cli.add_command(command)

    return cli


def main() -> None:
    create_cli()(prog_name="siamleaf")


if __name__ == "__main__":
    main()
