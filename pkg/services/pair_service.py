"""
Siamleaf — Pair Sampling Service.

Draws labeled image pairs for contrastive training.  Similar pairs (``Y = 0``)
pick a class uniformly among classes with at least two samples, then two
distinct samples of it; dissimilar pairs (``Y = 1``) pick two distinct classes
uniformly, then one sample from each.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from services.dataset_service import DatasetManifest
from services.errors import SamplingError
from utils.io import read_csv, write_csv

logger = logging.getLogger(__name__)

SIMILAR: int = 0
DISSIMILAR: int = 1

PAIR_CSV_HEADER: tuple[str, ...] = ("path1", "path2", "Y")


@dataclass(frozen=True)
class LabeledPair:
    """Two sample indices of one manifest and their similarity label.

    Attributes:
        first: Index of the first sample.
        second: Index of the second sample (never equal to *first*).
        label: ``0`` when both samples share a class, ``1`` otherwise.
    """

    first: int
    second: int
    label: int


def sample_pairs(manifest: DatasetManifest, count: int, similar_ratio: float,
                 seed: int) -> list[LabeledPair]:
    """Draw *count* labeled pairs from *manifest*.

    Exactly ``round(count × similar_ratio)`` pairs are similar; the rest are
    dissimilar.  The list is shuffled so batches mix both kinds.  The result
    depends only on the arguments.

    Args:
        manifest: Training manifest.
        count: Total number of pairs.
        similar_ratio: Share of similar pairs, in ``[0, 1]``.
        seed: Generator seed.

    Returns:
        The pairs, in draw order after shuffling.

    Raises:
        SamplingError: If a required kind of pair cannot be formed.
    """
    if count < 0:
        raise SamplingError(f"pair count must be non-negative, got {count}")
    if not 0.0 <= similar_ratio <= 1.0:
        raise SamplingError(f"similar_ratio must lie in [0, 1], got {similar_ratio}")

    n_similar = int(math.floor(count * similar_ratio + 0.5))
    n_dissimilar = count - n_similar

    members = [manifest.indices_of(label) for label in range(len(manifest.classes))]
    pairable = [label for label, idx in enumerate(members) if len(idx) >= 2]
    populated = [label for label, idx in enumerate(members) if len(idx) >= 1]

    if n_similar and not pairable:
        raise SamplingError("similar pairs need at least one class with two or more samples")
    if n_dissimilar and len(populated) < 2:
        raise SamplingError(
            f"dissimilar pairs need at least two populated classes, found {len(populated)}"
        )

    rng = np.random.default_rng(seed)
    pairs: list[LabeledPair] = []

    for _ in range(n_similar):
        label = pairable[int(rng.integers(len(pairable)))]
        first, second = rng.choice(members[label], size=2, replace=False)
        pairs.append(LabeledPair(int(first), int(second), SIMILAR))

    for _ in range(n_dissimilar):
        a, b = rng.choice(populated, size=2, replace=False)
        first = members[a][int(rng.integers(len(members[a])))]
        second = members[b][int(rng.integers(len(members[b])))]
        pairs.append(LabeledPair(int(first), int(second), DISSIMILAR))

    order = rng.permutation(len(pairs))
    return [pairs[i] for i in order]


def write_pairs_csv(pairs: list[LabeledPair], manifest: DatasetManifest, path: Path) -> Path:
    """Dump *pairs* as ``path1,path2,Y`` for audit and replay."""
    rows = [(manifest.samples[p.first].path, manifest.samples[p.second].path, p.label) for p in pairs]
    return write_csv(Path(path), PAIR_CSV_HEADER, rows)


def read_pairs_csv(path: Path, manifest: DatasetManifest) -> list[LabeledPair]:
    """Replay a pair dump against *manifest*.

    Raises:
        SamplingError: If a path is not part of the manifest or a label
            disagrees with the manifest's classes.
    """
    index = {s.path: i for i, s in enumerate(manifest.samples)}
    pairs: list[LabeledPair] = []
    for row in read_csv(Path(path)):
        try:
            first, second = index[row["path1"]], index[row["path2"]]
        except KeyError as exc:
            raise SamplingError(f"pair dump references unknown sample {exc}") from exc
        label = int(row["Y"])
        same = manifest.samples[first].label == manifest.samples[second].label
        if label != (SIMILAR if same else DISSIMILAR):
            raise SamplingError(f"label {label} disagrees with classes for {row['path1']}, {row['path2']}")
        pairs.append(LabeledPair(first, second, label))
    return pairs
