"""
Siamleaf — Evaluation Commands.

``eval`` scores a checkpoint by majority voting, ``grid`` runs the
training-fraction sweep and ``query`` classifies a single image.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import click

import config
from commands import CliState, handles_errors, pass_state
from services.backbone import load_checkpoint
from services.dataset_service import DEDICATED, FRACTION, KFOLD, SplitSpec, load_manifest
from services.experiment import checkpoint_training_manifest, load_dataset, run_eval, run_grid, run_query

logger = logging.getLogger(__name__)


@click.command(name="eval")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(path_type=Path),
              help="Dataset (manifest or folder); overrides the config's.")
@click.option("--mode", type=click.Choice([FRACTION, KFOLD, DEDICATED]), default=None)
@click.option("--train-fraction", type=float, default=None)
@click.option("-k", "--folds", type=int, default=None)
@click.option("--test-manifest", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--gallery-seed", type=int, default=None)
@click.option("--resample-gallery", is_flag=True, help="Fresh supports for every query.")
@pass_state
@handles_errors
def evaluate(state: CliState, checkpoint: Path, manifest_path: Optional[Path], mode: Optional[str],
             train_fraction: Optional[float], folds: Optional[int], test_manifest: Optional[str],
             gallery_seed: Optional[int], resample_gallery: bool) -> None:
    """Evaluate CHECKPOINT with five-support majority voting."""
    if state.config_path is not None:
        cfg = state.experiment()
        dataset, split, seed = cfg.dataset, cfg.split, cfg.gallery_seed
        resample = cfg.resample_gallery
        out_dir = Path(cfg.output_dir)
    else:
        if manifest_path is None:
            raise click.UsageError("eval needs --config or --manifest")
        dataset, split = str(manifest_path), SplitSpec(FRACTION, train_fraction=0.8, seed=state.seed or 0)
        seed, resample = state.seed or 0, False
        out_dir = state.output(config.OUTPUT_DIR)

    if manifest_path is not None:
        dataset = str(manifest_path)
    overrides = {k: v for k, v in {"mode": mode, "train_fraction": train_fraction, "k": folds,
                                   "test_manifest": test_manifest}.items() if v is not None}
    if overrides:
        split = SplitSpec(**{**split.to_dict(), **overrides})
    if gallery_seed is not None:
        seed = gallery_seed
    resample = resample or resample_gallery

    outcome = run_eval(load_checkpoint(checkpoint), load_dataset(dataset), split, seed, out_dir / "eval", resample,
                       config_echo={"checkpoint": str(checkpoint), "dataset": dataset},
                       trained_on=checkpoint_training_manifest(checkpoint), progress=state.progress)
    for index, report in enumerate(outcome.reports, start=1):
        label = f"fold {index}" if len(outcome.reports) > 1 else "accuracy"
        click.echo(f"{label}: {report.overall_accuracy:.4f} ({report.sample_count} samples, "
                   f"{report.tie_breaks} tie-breaks)")
    if outcome.summary:
        click.echo(f"mean accuracy: {outcome.summary['mean_accuracy']:.4f} "
                   f"± {outcome.summary['std_accuracy']:.4f}")
    if outcome.trained_overlap:
        click.echo(f"warning: {outcome.trained_overlap} evaluated samples were used to train this checkpoint; "
                   "accuracy is optimistic", err=True)
    click.echo(f"reports written to {out_dir / 'eval'}")


@click.command()
@click.option("--fractions", default=None,
              help="Comma-separated training fractions (default: 1.0,0.75,0.5).")
@pass_state
@handles_errors
def grid(state: CliState, fractions: Optional[str]) -> None:
    """Train and evaluate at several training-data fractions."""
    cfg = state.experiment()
    values = config.GRID_FRACTIONS
    if fractions:
        try:
            values = tuple(float(f) for f in fractions.split(","))
        except ValueError as exc:
            raise click.BadParameter(f"not a list of numbers: {fractions}", param_hint="--fractions") from exc
    target = run_grid(cfg, values, progress=state.progress)
    click.echo(f"grid written to {target}")


@click.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("image", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--train-manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True,
              help="Training manifest the supports are drawn from.")
@click.option("--gallery-seed", type=int, default=None)
@pass_state
@handles_errors
def query(state: CliState, checkpoint: Path, image: Path, train_manifest: Path,
          gallery_seed: Optional[int]) -> None:
    """Classify IMAGE against supports from a training manifest."""
    seed = gallery_seed if gallery_seed is not None else (state.seed or 0)
    prediction, classes = run_query(load_checkpoint(checkpoint), load_manifest(train_manifest), image, seed)
    columns = prediction.distances.shape[1]
    header = " ".join(f"{f's{j + 1}':>9}" for j in range(columns))
    click.echo(f"{'class':<32} {header} {'votes':>5} {'mean':>9}")
    for c, name in enumerate(classes):
        row = " ".join(f"{d:>9.4f}" for d in prediction.distances[c])
        click.echo(f"{name:<32} {row} {prediction.votes[c]:>5} {prediction.average_distances[c]:>9.4f}")
    winners = ", ".join(classes[w] for w in prediction.column_winners)
    click.echo(f"column winners: {winners}")
    suffix = " (tie-break)" if prediction.tie_break_used else ""
    click.echo(f"prediction: {classes[prediction.predicted]}{suffix}")
