"""
Siamleaf — Majority-Voting Inference.

A support gallery holds five embedded training images per class.  A query is
compared with every support; in each of the five columns the class of the
nearest support wins that column, and the class winning most columns is the
prediction.  When several classes share the top vote count, the one with the
smallest mean distance over its five supports wins; any remaining exact tie
goes to the lowest class index and is flagged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from tqdm import tqdm

import config
from services.backbone import EVAL, NetworkParams, embed, forward
from services.dataset_service import DatasetManifest, load_images
from services.errors import ContaminationError, GalleryError, ProvenanceError
from utils.io import write_csv, write_json

logger = logging.getLogger(__name__)

REPORT_CSV_HEADER: tuple[str, ...] = ("class", "samples", "correct", "accuracy")


# ── Gallery ──────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class SupportGallery:
    """``n × 5`` support embeddings fixed for one evaluation run.

    Attributes:
        classes: Ordered class names (rows).
        embeddings: Array of shape ``(n, 5, D)``.
        support_paths: Source image of every support, row by row.
        seed: Selection seed.
        params_fingerprint: Fingerprint of the parameters that embedded the supports.
    """

    classes: tuple[str, ...]
    embeddings: np.ndarray
    support_paths: tuple[tuple[str, ...], ...]
    seed: int
    params_fingerprint: str

    @property
    def provenance(self) -> dict:
        return {
            "seed": self.seed,
            "params_fingerprint": self.params_fingerprint,
            "supports": {c: list(p) for c, p in zip(self.classes, self.support_paths)},
        }

    @property
    def paths(self) -> frozenset[str]:
        return frozenset(p for row in self.support_paths for p in row)


def select_supports(manifest: DatasetManifest, rng: np.random.Generator,
                    per_class: int = config.SUPPORT_PER_CLASS) -> list[np.ndarray]:
    """Pick *per_class* distinct sample indices of every class.

    Raises:
        GalleryError: If a class has fewer than *per_class* samples.
    """
    chosen: list[np.ndarray] = []
    for label, name in enumerate(manifest.classes):
        members = manifest.indices_of(label)
        if len(members) < per_class:
            raise GalleryError(
                f"class {name!r} has {len(members)} training samples; {per_class} supports are required"
            )
        chosen.append(rng.choice(members, size=per_class, replace=False))
    return chosen


def build_gallery(params: NetworkParams, train_manifest: DatasetManifest, seed: int) -> SupportGallery:
    """Embed five randomly chosen training images per class (eval mode).

    Args:
        params: Backbone parameters.
        train_manifest: Training split; supports never come from evaluation data.
        seed: Selection seed; equal seeds choose equal supports.

    Raises:
        GalleryError: If a class has fewer than five training samples.
    """
    rng = np.random.default_rng(seed)
    chosen = select_supports(train_manifest, rng)
    paths = tuple(tuple(train_manifest.samples[int(i)].path for i in row) for row in chosen)
    flat = [p for row in paths for p in row]
    vectors = embed(params, load_images(flat))
    n = len(train_manifest.classes)
    embeddings = vectors.reshape(n, config.SUPPORT_PER_CLASS, -1)
    embeddings.flags.writeable = False
    return SupportGallery(train_manifest.classes, embeddings, paths, seed, params.fingerprint)


# ── Voting ───────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Prediction:
    """Decision for one query.

    Attributes:
        predicted: Predicted class index.
        column_winners: Winning class of each support column.
        votes: Column wins per class.
        average_distances: Mean distance to each class's supports.
        tie_break_used: The top vote count was shared.
        exact_tie: Tied classes also shared the smallest mean distance.
        distances: The ``n × 5`` distance matrix.
    """

    predicted: int
    column_winners: tuple[int, ...]
    votes: tuple[int, ...]
    average_distances: tuple[float, ...]
    tie_break_used: bool
    exact_tie: bool
    distances: np.ndarray = field(repr=False, compare=False)


def vote(distances: np.ndarray) -> Prediction:
    """Majority vote over an ``n × j`` query-to-support distance matrix.

    Column ties go to the lowest class index, as do exact ties between the
    mean distances of vote-tied classes.
    """
    distances = np.asarray(distances, dtype=np.float64)
    n = distances.shape[0]
    winners = np.argmin(distances, axis=0)
    votes = np.bincount(winners, minlength=n)
    averages = distances.mean(axis=1)

    tied = np.flatnonzero(votes == votes.max())
    exact_tie = False
    if len(tied) == 1:
        predicted = int(tied[0])
    else:
        tied_averages = averages[tied]
        best = tied_averages.min()
        predicted = int(tied[np.argmin(tied_averages)])
        exact_tie = int(np.count_nonzero(tied_averages == best)) > 1

    return Prediction(
        predicted=predicted,
        column_winners=tuple(int(w) for w in winners),
        votes=tuple(int(v) for v in votes),
        average_distances=tuple(float(a) for a in averages),
        tie_break_used=len(tied) > 1,
        exact_tie=exact_tie,
        distances=distances,
    )


def gallery_distances(gallery: SupportGallery, embedding: np.ndarray) -> np.ndarray:
    """``d[i, j]`` between one query embedding and support ``j`` of class ``i``."""
    diff = gallery.embeddings.astype(np.float64) - np.asarray(embedding, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _check_lineage(gallery: SupportGallery, params: NetworkParams) -> None:
    if gallery.params_fingerprint != params.fingerprint:
        raise ProvenanceError(
            "gallery was embedded with different parameters "
            f"({gallery.params_fingerprint[:12]} != {params.fingerprint[:12]})"
        )


def classify(gallery: SupportGallery, params: NetworkParams, query: np.ndarray) -> Prediction:
    """Classify one ``3×128×128`` query image against *gallery*.

    Raises:
        ProvenanceError: If *gallery* was not embedded with *params*.
    """
    _check_lineage(gallery, params)
    embedding, _ = forward(params, query, EVAL)
    return vote(gallery_distances(gallery, embedding))


# ── Evaluation ───────────────────────────────────────────────────────────────


@dataclass
class EvalReport:
    """Accuracy summary of one evaluation run.

    Overall accuracy is correct / total; per-class accuracy is per-class
    recall (``confusion[c, c] / rowsum(confusion[c])``), ``None`` for classes
    without evaluation samples.
    """

    classes: tuple[str, ...]
    confusion: np.ndarray
    provenance: dict
    tie_breaks: int = 0
    exact_ties: int = 0
    config_echo: dict = field(default_factory=dict)

    @property
    def sample_count(self) -> int:
        return int(self.confusion.sum())

    @property
    def overall_accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0

    @property
    def per_class_accuracy(self) -> dict[str, Optional[float]]:
        rows = self.confusion.sum(axis=1)
        return {
            name: (float(self.confusion[c, c] / rows[c]) if rows[c] else None)
            for c, name in enumerate(self.classes)
        }

    def merge(self, other: EvalReport) -> EvalReport:
        """Combine two reports over disjoint query sets."""
        return EvalReport(self.classes, self.confusion + other.confusion, self.provenance,
                          self.tie_breaks + other.tie_breaks, self.exact_ties + other.exact_ties,
                          self.config_echo)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "class_samples": {name: int(n) for name, n in zip(self.classes, self.confusion.sum(axis=1))},
            "confusion": self.confusion.tolist(),
            "sample_count": self.sample_count,
            "tie_breaks": self.tie_breaks,
            "exact_ties": self.exact_ties,
            "gallery": self.provenance,
            "config": self.config_echo,
        }

    def write(self, out_dir: Path, stem: str = "report") -> tuple[Path, Path]:
        """Write ``<stem>.json`` and the flat ``<stem>.csv`` (class-wise accuracy plot data)."""
        out_dir = Path(out_dir)
        rows = []
        for c, name in enumerate(self.classes):
            samples = int(self.confusion[c].sum())
            accuracy = self.per_class_accuracy[name]
            rows.append((name, samples, int(self.confusion[c, c]), "" if accuracy is None else repr(accuracy)))
        json_path = write_json(out_dir / f"{stem}.json", self.to_dict())
        csv_path = write_csv(out_dir / f"{stem}.csv", REPORT_CSV_HEADER, rows)
        return json_path, csv_path


def evaluate(gallery: SupportGallery, params: NetworkParams, eval_manifest: DatasetManifest,
             batch_size: int = config.EVAL_BATCH_SIZE, resample_from: Optional[DatasetManifest] = None,
             progress: bool = False) -> EvalReport:
    """Classify every sample of *eval_manifest* and aggregate a confusion matrix.

    Args:
        gallery: Support gallery built from the training split.
        params: Parameters the gallery was embedded with.
        eval_manifest: Evaluation samples.
        batch_size: Queries embedded per forward pass.
        resample_from: When set, every query gets its own gallery drawn from
            this training manifest with seed ``(gallery.seed, query index)``.
        progress: Show a progress bar.

    Raises:
        ProvenanceError: If *gallery* was not embedded with *params*.
        GalleryError: If the evaluation classes differ from the gallery's.
        ContaminationError: If an evaluation image is also a support image.
    """
    _check_lineage(gallery, params)
    if eval_manifest.classes != gallery.classes:
        raise GalleryError("evaluation classes differ from gallery classes")

    support_paths = gallery.paths
    pool = resample_from
    if pool is not None:
        support_paths = frozenset(pool.paths)
    overlap = support_paths.intersection(eval_manifest.paths)
    if overlap:
        raise ContaminationError(
            f"{len(overlap)} evaluation sample(s) are support images, e.g. {sorted(overlap)[0]}"
        )

    n = len(gallery.classes)
    confusion = np.zeros((n, n), dtype=np.int64)
    tie_breaks = exact_ties = 0
    pool_cache: dict[int, np.ndarray] = {}

    starts = range(0, len(eval_manifest), batch_size)
    for start in tqdm(starts, desc="evaluate", disable=not progress, leave=False):
        chunk = eval_manifest.samples[start:start + batch_size]
        embeddings = embed(params, load_images([s.path for s in chunk]), batch_size)
        for offset, (sample, embedding) in enumerate(zip(chunk, embeddings)):
            active = gallery
            if pool is not None:
                active = _resampled_gallery(gallery, params, pool, start + offset, pool_cache)
            prediction = vote(gallery_distances(active, embedding))
            confusion[sample.label, prediction.predicted] += 1
            tie_breaks += prediction.tie_break_used
            exact_ties += prediction.exact_tie

    if exact_ties:
        logger.warning("%d queries needed the lowest-index rule after an exact distance tie", exact_ties)
    report = EvalReport(gallery.classes, confusion, gallery.provenance, tie_breaks, exact_ties)
    logger.info("Evaluated %d samples — accuracy %.4f", report.sample_count, report.overall_accuracy)
    return report


def _resampled_gallery(base: SupportGallery, params: NetworkParams, pool: DatasetManifest,
                       query_index: int, cache: dict[int, np.ndarray]) -> SupportGallery:
    """Per-query gallery; pool embeddings are computed once and cached by sample index."""
    rng = np.random.default_rng([base.seed, query_index])
    chosen = select_supports(pool, rng)
    missing = sorted({int(i) for row in chosen for i in row} - set(cache))
    if missing:
        vectors = embed(params, load_images([pool.samples[i].path for i in missing]))
        cache.update(zip(missing, vectors))
    embeddings = np.stack([np.stack([cache[int(i)] for i in row]) for row in chosen])
    paths = tuple(tuple(pool.samples[int(i)].path for i in row) for row in chosen)
    return SupportGallery(base.classes, embeddings, paths, base.seed, base.params_fingerprint)
