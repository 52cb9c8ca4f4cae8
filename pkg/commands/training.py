"""
Siamleaf — Training Command.
"""

from __future__ import annotations

import logging
from pathlib import Path

import click

import config
from commands import CliState, handles_errors, pass_state
from services.experiment import default_config_dict, run_train
from utils.io import write_json

logger = logging.getLogger(__name__)


@click.command()
@click.option("--init", "init_config", is_flag=True,
              help="Write a default config (to --config, or config.json under --out) and exit.")
@click.option("--dataset", default=None, help="Dataset path written into the --init config.")
@pass_state
@handles_errors
def train(state: CliState, init_config: bool, dataset: str | None) -> None:
    """Train the Siamese backbone from an experiment config."""
    if init_config:
        target = state.config_path or state.output(config.OUTPUT_DIR) / "config.json"
        payload = default_config_dict(dataset) if dataset else default_config_dict()
        write_json(Path(target), payload)
        click.echo(f"default config written to {target}")
        return

    cfg = state.experiment()
    result = run_train(cfg, progress=state.progress)
    click.echo(f"trained {len(result.records)} steps; final mean loss {result.epoch_losses[-1]:.6f}")
    click.echo(f"checkpoint: {result.checkpoints[-1]}")
    click.echo(f"loss curve: {result.loss_csv}")
