"""Tests for services.pair_service."""

from __future__ import annotations

import numpy as np
import pytest

from services.errors import SamplingError
from services.pair_service import (
    DISSIMILAR,
    SIMILAR,
    read_pairs_csv,
    sample_pairs,
    write_pairs_csv,
)
from tests.conftest import make_manifest


def test_similar_share_and_labels():
    manifest = make_manifest([5, 7, 3])
    pairs = sample_pairs(manifest, 101, 0.5, seed=0)
    assert len(pairs) == 101
    assert sum(p.label == SIMILAR for p in pairs) == 51
    for p in pairs:
        assert p.first != p.second
        same = manifest.samples[p.first].label == manifest.samples[p.second].label
        assert p.label == (SIMILAR if same else DISSIMILAR)


@pytest.mark.parametrize("ratio,similar", [(0.0, 0), (1.0, 40), (0.25, 10)])
def test_similar_count_rounds_half_up(ratio, similar):
    pairs = sample_pairs(make_manifest([4, 4]), 40, ratio, seed=1)
    assert sum(p.label == SIMILAR for p in pairs) == similar


def test_pairs_are_shuffled():
    pairs = sample_pairs(make_manifest([10, 10]), 200, 0.5, seed=2)
    labels = [p.label for p in pairs]
    assert labels != sorted(labels)


def test_same_seed_same_pairs():
    manifest = make_manifest([6, 6, 6])
    assert sample_pairs(manifest, 50, 0.5, seed=9) == sample_pairs(manifest, 50, 0.5, seed=9)
    assert sample_pairs(manifest, 50, 0.5, seed=9) != sample_pairs(manifest, 50, 0.5, seed=10)


def test_similar_classes_chosen_uniformly():
    counts = [30, 3, 10, 5, 8, 2, 12, 4, 6, 20]
    manifest = make_manifest(counts)
    pairs = sample_pairs(manifest, 10_000, 1.0, seed=4)
    tally = np.bincount([manifest.samples[p.first].label for p in pairs], minlength=10) / 10_000
    assert np.all(np.abs(tally - 0.1) <= 0.02)


def test_dissimilar_pairs_skip_empty_classes():
    manifest = make_manifest([4, 0, 4])
    pairs = sample_pairs(manifest, 30, 0.0, seed=0)
    used = {manifest.samples[i].label for p in pairs for i in (p.first, p.second)}
    assert used == {0, 2}


def test_similar_pairs_need_a_pairable_class():
    with pytest.raises(SamplingError, match="two or more"):
        sample_pairs(make_manifest([1, 1, 1]), 4, 0.5, seed=0)


def test_dissimilar_pairs_need_two_classes():
    with pytest.raises(SamplingError, match="two populated"):
        sample_pairs(make_manifest([5, 0]), 4, 0.5, seed=0)


def test_single_class_similar_only_is_allowed():
    pairs = sample_pairs(make_manifest([5, 0]), 4, 1.0, seed=0)
    assert all(p.label == SIMILAR for p in pairs)


@pytest.mark.parametrize("count,ratio", [(-1, 0.5), (4, 1.5), (4, -0.1)])
def test_invalid_arguments(count, ratio):
    with pytest.raises(SamplingError):
        sample_pairs(make_manifest([3, 3]), count, ratio, seed=0)


def test_pair_dump_replays(tmp_path):
    manifest = make_manifest([4, 4])
    pairs = sample_pairs(manifest, 12, 0.5, seed=3)
    path = write_pairs_csv(pairs, manifest, tmp_path / "pairs.csv")
    assert path.read_text(encoding="utf-8").splitlines()[0] == "path1,path2,Y"
    assert read_pairs_csv(path, manifest) == pairs


def test_pair_dump_with_wrong_label_is_rejected(tmp_path):
    manifest = make_manifest([2, 2])
    a, b = manifest.samples[0].path, manifest.samples[1].path
    path = tmp_path / "pairs.csv"
    path.write_text(f"path1,path2,Y\n{a},{b},1\n", encoding="utf-8")
    with pytest.raises(SamplingError, match="disagrees"):
        read_pairs_csv(path, manifest)
