"""Shared fixtures: small on-disk datasets and tiny float64 networks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from services.backbone import BackboneSpec, init_params
from services.dataset_service import DatasetManifest, Sample, generate_synthetic, load_manifest

# 8×8 inputs, two channels everywhere: the full block layout at gradient-check scale.
TINY_SPEC = BackboneSpec(
    input_size=8,
    in_channels=2,
    conv_channels=(2, 2, 2, 2, 2, 2),
    fc_sizes=(6, 5, 4),
)

# Real 128×128 inputs with narrow layers, for fast training loops.
NARROW_SPEC = BackboneSpec(conv_channels=(4, 4, 4, 4, 4, 4), fc_sizes=(16, 8, 4))


def make_manifest(counts: list[int], prefix: str = "/data") -> DatasetManifest:
    """In-memory manifest with *counts* samples per class; files do not exist."""
    classes = tuple(f"class_{c}" for c in range(len(counts)))
    samples = tuple(
        Sample(f"{prefix}/{classes[c]}/{i:04d}.png", c)
        for c, n in enumerate(counts)
        for i in range(n)
    )
    return DatasetManifest(classes, samples)


@pytest.fixture
def tiny_spec() -> BackboneSpec:
    return TINY_SPEC


@pytest.fixture
def tiny_params():
    return init_params(3, TINY_SPEC, "float64")


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory) -> Path:
    """Three classes × eight procedural images, shared by the whole session."""
    root = tmp_path_factory.mktemp("synthetic")
    generate_synthetic(3, 8, seed=0, out_dir=root)
    return root


@pytest.fixture(scope="session")
def synthetic_manifest(synthetic_dir: Path) -> DatasetManifest:
    return load_manifest(synthetic_dir / "manifest.json")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def numeric_gradient(f, x: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. *x*, perturbed in place.

    Only *indices* (flat) are evaluated when given; other entries stay zero.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in (range(x.size) if indices is None else indices):
        original = flat[i]
        flat[i] = original + h
        plus = f()
        flat[i] = original - h
        minus = f()
        flat[i] = original
        gflat[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))))
