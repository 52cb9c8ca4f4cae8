"""
Siamleaf — Command Groups.

Shared state and error handling for the click commands registered by
``app.create_cli``.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import click

from services.errors import EXIT_RUNTIME, SiamleafError
from services.experiment import ExperimentConfig, load_config

logger = logging.getLogger(__name__)


@dataclass
class CliState:
    """Global options, resolved once by the root group."""

    config_path: Optional[Path]
    seed: Optional[int]
    out_dir: Optional[Path]
    progress: bool

    def experiment(self) -> ExperimentConfig:
        """Load ``--config`` and apply the ``--seed`` / ``--out`` overrides."""
        if self.config_path is None:
            raise click.UsageError("this command needs --config (see 'python app.py train --init')")
        cfg = load_config(self.config_path)
        if self.seed is not None:
            cfg = cfg.with_seed(self.seed)
        if self.out_dir is not None:
            cfg = cfg.with_output(self.out_dir)
        return cfg

    def output(self, default: Path) -> Path:
        return self.out_dir if self.out_dir is not None else Path(default)


pass_state = click.make_pass_decorator(CliState)


def handles_errors(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Map domain errors to a stderr message and their exit code.

    Unexpected exceptions are logged with a traceback and exit with the
    runtime code.
    """

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except SiamleafError as exc:
            logger.debug("Command failed", exc_info=True)
            click.echo(f"error: {exc}", err=True)
            code = exc.exit_code
        except (click.ClickException, click.exceptions.Exit, click.Abort):
            raise
        except Exception as exc:
            logger.exception("Unexpected failure: %s", exc)
            click.echo(f"error: {exc}", err=True)
            code = EXIT_RUNTIME
        raise click.exceptions.Exit(code)

    return wrapper
