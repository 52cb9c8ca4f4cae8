"""
Siamleaf — Experiment Orchestration.

Loads and validates JSON experiment configs, and runs the train / eval / grid
workflows the CLI exposes.  Every artifact goes under the configured output
directory; inputs are never modified.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

import config
from services.backbone import DEFAULT_BACKBONE, BackboneSpec, NetworkParams, load_checkpoint
from services.dataset_service import (
    DEDICATED,
    FRACTION,
    DatasetManifest,
    SplitSpec,
    augment_manifest,
    load_image,
    load_manifest,
    make_split,
    save_manifest,
    scan_folder,
    subsample,
)
from services.errors import ConfigError, SiamleafError, SplitError
from services.trainer import TrainConfig, TrainResult, train
from services.voting import EvalReport, Prediction, build_gallery, classify, evaluate
from utils.io import append_csv_row, read_json, write_json

logger = logging.getLogger(__name__)

GRID_CSV_HEADER: tuple[str, ...] = ("dataset", "fraction", "overall_acc", "per_class_json")

_REQUIRED_FIELDS: tuple[str, ...] = ("dataset", "split", "train")
_OPTIONAL_FIELDS: tuple[str, ...] = (
    "name", "augmentation", "gallery_seed", "resample_gallery", "output_dir", "backbone",
)


# ── Configuration ────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a run.

    Attributes:
        dataset: Manifest JSON or class-per-folder image directory.
        split: How training and evaluation data are separated.
        train: Training hyperparameters.
        name: Dataset label used in grid CSV rows.
        augmentation: Materialize the seven augmentations of the training split.
        gallery_seed: Support selection seed.
        resample_gallery: Draw a fresh gallery for every query.
        output_dir: Root of every artifact.
        backbone: Network geometry; narrower widths make quick trial runs.
    """

    dataset: str
    split: SplitSpec
    train: TrainConfig
    name: str = "dataset"
    augmentation: bool = False
    gallery_seed: int = 0
    resample_gallery: bool = False
    output_dir: str = str(config.OUTPUT_DIR)
    backbone: BackboneSpec = DEFAULT_BACKBONE

    def with_seed(self, seed: int) -> ExperimentConfig:
        """Override every seed (training, split, gallery) with *seed*."""
        return replace(self, split=replace(self.split, seed=seed), train=replace(self.train, seed=seed),
                       gallery_seed=seed)

    def with_output(self, output_dir: Path) -> ExperimentConfig:
        return replace(self, output_dir=str(output_dir))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dataset": self.dataset,
            "split": self.split.to_dict(),
            "augmentation": self.augmentation,
            "train": self.train.to_dict(),
            "gallery_seed": self.gallery_seed,
            "resample_gallery": self.resample_gallery,
            "output_dir": self.output_dir,
            "backbone": self.backbone.to_dict(),
        }


def default_config_dict(dataset: str = "runs/manifest.json") -> dict:
    """The config written by ``train --init``."""
    return ExperimentConfig(
        dataset=dataset,
        split=SplitSpec(FRACTION, train_fraction=0.8),
        train=TrainConfig(),
        name=Path(dataset).stem,
    ).to_dict()


def _build(kind: type, payload: Any, section: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = set(kind.__dataclass_fields__)
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"unknown fields in {section!r}", [f"{section}.{k}" for k in unknown])
    try:
        return kind(**payload)
    except (TypeError, SiamleafError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def parse_config(payload: Any, check_paths: bool = True) -> ExperimentConfig:
    """Validate a decoded JSON config.

    Raises:
        ConfigError: Listing missing or unknown fields, invalid values, or
            referenced paths that do not exist.
    """
    if not isinstance(payload, dict):
        raise ConfigError("config must be a JSON object")
    missing = [f for f in _REQUIRED_FIELDS if f not in payload]
    if isinstance(payload.get("split"), dict) and "mode" not in payload["split"]:
        missing.append("split.mode")
    if missing:
        raise ConfigError("missing config fields", missing)
    unknown = sorted(set(payload) - set(_REQUIRED_FIELDS) - set(_OPTIONAL_FIELDS))
    if unknown:
        raise ConfigError("unknown config fields", unknown)

    split = _build(SplitSpec, payload["split"], "split")
    train_cfg = _build(TrainConfig, payload["train"], "train")
    if train_cfg.learning_rate <= 0:
        raise ConfigError("train.learning_rate must be greater than 0")

    options = {k: payload[k] for k in _OPTIONAL_FIELDS if k in payload}
    if "backbone" in options:
        backbone = _build(BackboneSpec, options["backbone"], "backbone")
        if (backbone.input_size, backbone.in_channels) != (config.IMAGE_SIZE, config.IMAGE_CHANNELS):
            expected = f"{config.IMAGE_CHANNELS}x{config.IMAGE_SIZE}x{config.IMAGE_SIZE}"
            raise ConfigError(f"backbone input must be {expected}", ["backbone.input_size", "backbone.in_channels"])
        options["backbone"] = backbone
    options.setdefault("name", Path(str(payload["dataset"])).stem)
    cfg = ExperimentConfig(dataset=str(payload["dataset"]), split=split, train=train_cfg, **options)

    if check_paths:
        missing_paths = [p for p in (cfg.dataset, cfg.split.test_manifest if split.mode == DEDICATED else None)
                         if p is not None and not Path(p).exists()]
        if missing_paths:
            raise ConfigError("referenced paths do not exist", missing_paths)
    return cfg


def load_config(path: Path) -> ExperimentConfig:
    """Read and validate an experiment config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = read_json(path)
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(payload)


def load_dataset(path: str | Path) -> DatasetManifest:
    """A manifest JSON file, or a class-per-folder directory scanned on the fly."""
    path = Path(path)
    return scan_folder(path) if path.is_dir() else load_manifest(path)


# ── Workflows ────────────────────────────────────────────────────────────────


def _training_manifest(manifest: DatasetManifest, cfg: ExperimentConfig, work_dir: Path,
                       progress: bool) -> DatasetManifest:
    if cfg.augmentation and not manifest.is_augmented:
        return augment_manifest(manifest, work_dir / "augmented", progress=progress)
    return manifest


def run_train(cfg: ExperimentConfig, progress: bool = False) -> TrainResult:
    """Train on the first split leg and echo config plus split manifests.

    In k-fold mode the first leg trains on every fold but the first.
    Outputs go to ``<output_dir>/train``.
    """
    out_dir = Path(cfg.output_dir) / "train"
    manifest = load_dataset(cfg.dataset)
    train_part, eval_part = make_split(manifest, cfg.split).legs()[0]

    write_json(out_dir / "config.json", cfg.to_dict())
    save_manifest(train_part, out_dir / "train_manifest.json")
    if eval_part is not None:
        save_manifest(eval_part, out_dir / "eval_manifest.json")

    train_manifest = _training_manifest(train_part, cfg, out_dir, progress)
    return train(cfg.train, train_manifest, out_dir, spec=cfg.backbone, progress=progress)


@dataclass
class EvalOutcome:
    """Reports of one evaluation run.

    Attributes:
        reports: One report per leg (fold).
        summary: k-fold mean and spread; empty for single-leg runs.
        trained_overlap: Evaluated samples that the checkpoint was trained on.
    """

    reports: list[EvalReport]
    summary: dict = field(default_factory=dict)
    trained_overlap: int = 0


def checkpoint_training_manifest(checkpoint: Path) -> Optional[DatasetManifest]:
    """The ``train_manifest.json`` written next to *checkpoint* by ``run_train``, if present."""
    path = Path(checkpoint).parent / "train_manifest.json"
    if not path.is_file():
        return None
    return load_manifest(path)


def _summary(reports: list[EvalReport]) -> dict:
    accuracies = [r.overall_accuracy for r in reports]
    return {
        "folds": len(reports),
        "fold_accuracies": accuracies,
        "fold_sizes": [r.sample_count for r in reports],
        "mean_accuracy": float(np.mean(accuracies)),
        "std_accuracy": float(np.std(accuracies, ddof=1)) if len(accuracies) > 1 else 0.0,
    }


def run_eval(params: NetworkParams, manifest: DatasetManifest, split: SplitSpec, gallery_seed: int,
             out_dir: Path, resample_gallery: bool = False, config_echo: Optional[dict] = None,
             trained_on: Optional[DatasetManifest] = None, progress: bool = False) -> EvalOutcome:
    """Evaluate one checkpoint with majority voting.

    Fraction and dedicated-test modes give one report; k-fold mode gives one
    report per fold (supports drawn from the other folds) plus a mean ± sd
    summary.

    When *trained_on* lists the checkpoint's training samples, evaluated
    samples found in it are counted, logged as a warning and echoed as
    ``trained_overlap`` in each report.  A checkpoint trained on one fraction
    split and scored with k-fold or another seed sees such samples.

    Raises:
        SplitError: If an evaluation split is empty.
    """
    out_dir = Path(out_dir)
    legs = make_split(manifest, split).legs()
    seen = frozenset(trained_on.paths) if trained_on is not None else frozenset()
    reports: list[EvalReport] = []
    trained_overlap = 0
    for index, (train_part, eval_part) in enumerate(legs):
        if eval_part is None or not len(eval_part):
            raise SplitError("evaluation split is empty; use a train_fraction below 1.0, "
                             "k-fold or a dedicated test set")
        gallery = build_gallery(params, train_part, gallery_seed)
        report = evaluate(gallery, params, eval_part, resample_from=train_part if resample_gallery else None,
                          progress=progress)
        report.config_echo = dict(config_echo or {}, split=split.to_dict(), gallery_seed=gallery_seed,
                                  resample_gallery=resample_gallery)
        overlap = len(seen.intersection(eval_part.paths))
        if overlap:
            logger.warning("%d of %d evaluated samples (leg %d) were used to train this checkpoint",
                           overlap, len(eval_part), index + 1)
            report.config_echo["trained_overlap"] = overlap
            trained_overlap += overlap
        stem = f"fold_{index + 1:02d}" if len(legs) > 1 else "report"
        report.write(out_dir, stem)
        reports.append(report)

    outcome = EvalOutcome(reports, trained_overlap=trained_overlap)
    if len(reports) > 1:
        outcome.summary = _summary(reports)
        outcome.summary["trained_overlap"] = trained_overlap
        write_json(out_dir / "summary.json", outcome.summary)
        logger.info("k-fold accuracy %.4f ± %.4f over %d folds", outcome.summary["mean_accuracy"],
                    outcome.summary["std_accuracy"], len(reports))
    return outcome


def evaluate_experiment(cfg: ExperimentConfig, checkpoint: Path, progress: bool = False) -> EvalOutcome:
    """``run_eval`` driven by an experiment config; outputs go to ``<output_dir>/eval``."""
    return run_eval(load_checkpoint(checkpoint), load_dataset(cfg.dataset), cfg.split, cfg.gallery_seed,
                    Path(cfg.output_dir) / "eval", cfg.resample_gallery,
                    config_echo={"checkpoint": str(checkpoint), "dataset": cfg.dataset},
                    trained_on=checkpoint_training_manifest(checkpoint), progress=progress)


def run_grid(cfg: ExperimentConfig, fractions: tuple[float, ...] = config.GRID_FRACTIONS,
             progress: bool = False) -> Path:
    """Train and evaluate at each training-data fraction; one CSV row per fraction.

    Fractions subsample the training side of every leg only, so the
    evaluation data is identical across rows.  Rows are appended as each
    fraction completes; a failing leg aborts the grid and keeps earlier rows.

    Returns:
        Path of ``grid.csv``.
    """
    out_dir = Path(cfg.output_dir) / "grid"
    if out_dir.exists():
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True)
    write_json(out_dir / "config.json", cfg.to_dict())
    grid_csv = out_dir / "grid.csv"

    manifest = load_dataset(cfg.dataset)
    legs = make_split(manifest, cfg.split).legs()

    for fraction in fractions:
        leg_reports: list[EvalReport] = []
        train_counts = np.zeros(len(manifest.classes), dtype=np.int64)
        for index, (train_part, eval_part) in enumerate(legs):
            if eval_part is None or not len(eval_part):
                raise SplitError("grid needs a non-empty evaluation split")
            leg_dir = out_dir / f"fraction_{round(fraction * 100):03d}" / f"leg_{index + 1:02d}"
            subset = subsample(train_part, fraction, cfg.split.seed)
            train_manifest = _training_manifest(subset, cfg, leg_dir, progress)
            train_counts += np.asarray(train_manifest.counts)

            logger.info("Grid leg fraction=%.2f leg=%d/%d — %d training samples", fraction, index + 1,
                        len(legs), len(train_manifest))
            result = train(replace(cfg.train, train_fraction=1.0), train_manifest, leg_dir, spec=cfg.backbone,
                           progress=progress)
            gallery = build_gallery(result.params, train_manifest, cfg.gallery_seed)
            report = evaluate(gallery, result.params, eval_part,
                              resample_from=train_manifest if cfg.resample_gallery else None, progress=progress)
            report.write(leg_dir)
            leg_reports.append(report)

        overall = float(np.mean([r.overall_accuracy for r in leg_reports]))
        per_class = {}
        for c, name in enumerate(manifest.classes):
            values = [r.per_class_accuracy[name] for r in leg_reports if r.per_class_accuracy[name] is not None]
            per_class[name] = {
                "accuracy": float(np.mean(values)) if values else None,
                "train_samples": int(train_counts[c]),
            }
        append_csv_row(grid_csv, GRID_CSV_HEADER,
                       (cfg.name, fraction, repr(overall), json.dumps(per_class, sort_keys=True)))
        logger.info("Grid row fraction=%.2f — accuracy %.4f", fraction, overall)

    return grid_csv


def run_query(params: NetworkParams, train_manifest: DatasetManifest, image_path: Path,
              gallery_seed: int) -> tuple[Prediction, tuple[str, ...]]:
    """Classify a single image file against a gallery drawn from *train_manifest*."""
    gallery = build_gallery(params, train_manifest, gallery_seed)
    return classify(gallery, params, load_image(image_path)), gallery.classes
