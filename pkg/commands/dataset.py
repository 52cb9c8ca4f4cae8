"""
Siamleaf — Dataset Commands.

``prepare``, ``augment``, ``synth`` and ``summary``.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import click

import config
from commands import CliState, handles_errors, pass_state
from services.backbone import DEFAULT_BACKBONE, layer_summary, param_count
from services.dataset_service import (
    augment_manifest,
    count_report,
    generate_synthetic,
    load_manifest,
    save_manifest,
    scan_folder,
)
from services.errors import IngestionError
from utils.io import human_size

logger = logging.getLogger(__name__)


def _echo_counts(manifest) -> None:
    report = count_report(manifest)
    reference = report["reference"]
    if reference:
        click.echo(f"reference dataset: {reference}")
    click.echo(f"{'class':<40} {'found':>7} {'documented':>11}")
    for name, found, documented in report["rows"]:
        click.echo(f"{name:<40} {found:>7} {'' if documented is None else documented:>11}")
    click.echo(f"{'total':<40} {report['found_total']:>7} "
               f"{'' if report['documented_total'] is None else report['documented_total']:>11}")
    if reference and report["documented_total"] != report["documented_class_sum"]:
        click.echo(f"note: documented class counts sum to {report['documented_class_sum']}, "
                   f"not the documented total {report['documented_total']}")


@click.command()
@click.argument("root", type=click.Path(path_type=Path))
@click.option("--name", default="manifest.json", show_default=True, help="Manifest file name under --out.")
@click.option("--workers", type=int, default=None, help="Decode threads.")
@pass_state
@handles_errors
def prepare(state: CliState, root: Path, name: str, workers: Optional[int]) -> None:
    """Scan a class-per-folder image tree into a manifest."""
    if not root.is_dir():
        raise IngestionError(f"dataset folder not found: {root}")
    manifest = scan_folder(root, workers=workers, progress=state.progress)
    target = save_manifest(manifest, state.output(config.OUTPUT_DIR) / name)
    _echo_counts(manifest)
    if manifest.skipped:
        click.echo(f"skipped {len(manifest.skipped)} unreadable or non-image file(s)")
    click.echo(f"manifest written to {target}")


@click.command()
@click.argument("manifest_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--name", default="manifest_augmented.json", show_default=True,
              help="Augmented manifest file name under --out.")
@click.option("--workers", type=int, default=None, help="Writer threads.")
@pass_state
@handles_errors
def augment(state: CliState, manifest_path: Path, name: str, workers: Optional[int]) -> None:
    """Materialize seven augmentations of every image in a manifest."""
    out_dir = state.output(config.OUTPUT_DIR)
    manifest = load_manifest(manifest_path)
    augmented = augment_manifest(manifest, out_dir / "augmented", workers=workers, progress=state.progress)
    target = save_manifest(augmented, out_dir / name)
    click.echo(f"{len(manifest)} images -> {len(augmented)} samples; manifest written to {target}")


@click.command()
@click.option("--classes", type=int, default=3, show_default=True)
@click.option("--per-class", type=int, default=30, show_default=True)
@click.option("--counts", default=None, help="Comma-separated per-class counts (imbalanced data).")
@pass_state
@handles_errors
def synth(state: CliState, classes: int, per_class: int, counts: Optional[str]) -> None:
    """Generate a procedural class-per-folder dataset."""
    per_class_counts = None
    if counts:
        try:
            per_class_counts = [int(c) for c in counts.split(",")]
        except ValueError as exc:
            raise click.BadParameter(f"not a list of integers: {counts}", param_hint="--counts") from exc
    out_dir = state.output(config.OUTPUT_DIR) / "synthetic"
    manifest = generate_synthetic(classes, per_class, state.seed or 0, out_dir, counts=per_class_counts)
    _echo_counts(manifest)
    click.echo(f"manifest written to {out_dir / 'manifest.json'}")


@click.command()
def summary() -> None:
    """Print the backbone layer table and parameter count."""
    click.echo(f"{'block':>5}  {'layer':<10} {'output':<16} {'params':>10}")
    for row in layer_summary(DEFAULT_BACKBONE):
        shape = "x".join(str(d) for d in row["output"])
        click.echo(f"{row['block']:>5}  {row['layer']:<10} {shape:<16} {row['params']:>10,}")
    total = param_count(DEFAULT_BACKBONE)
    click.echo(f"total parameters: {total:,} ({human_size(total * 4)} as float32)")
