"""
Siamleaf — Dataset Ingestion Service.

Turns class-per-folder image trees into immutable manifests, decodes images
into ``3×128×128`` float arrays in ``[0, 1]``, materializes the seven-way
augmentation (three clockwise rotations, two mirrors, two brightness shifts),
and produces stratified fraction splits, k-fold partitions and synthetic
desk-scale datasets.
"""

from __future__ import annotations

import colorsys
import io
import logging
import math
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np
from PIL import Image, ImageOps, UnidentifiedImageError
from sklearn.model_selection import StratifiedKFold, train_test_split
from tqdm import tqdm

import config
from services.errors import DecodeError, IngestionError, SplitError
from utils.file_validator import is_image_file
from utils.io import canonical_json, read_json, sha256_text, write_json

# Protect against Decompression Bombs globally
Image.MAX_IMAGE_PIXELS = config.MAX_IMAGE_PIXELS

logger = logging.getLogger(__name__)

ORIGINAL: str = "original"
AUGMENTED: str = "augmented"
_ORIGINS: frozenset[str] = frozenset({ORIGINAL, AUGMENTED})

T = TypeVar("T")
R = TypeVar("R")


# ── Manifest types ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Sample:
    """One image of a manifest.

    Attributes:
        path: POSIX path of the encoded image file.
        label: Index into the manifest's ``classes``.
        origin: ``"original"`` or ``"augmented"``.
    """

    path: str
    label: int
    origin: str = ORIGINAL


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable listing of samples, class names and split membership.

    Attributes:
        classes: Ordered, unique class names.
        samples: Samples in manifest order.
        seed: Seed that produced the manifest (synthetic data / splits), if any.
        skipped: Files rejected during scanning.  Not serialized.
    """

    classes: tuple[str, ...]
    samples: tuple[Sample, ...]
    seed: Optional[int] = None
    skipped: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "skipped", tuple(self.skipped))

        if len(set(self.classes)) != len(self.classes):
            raise IngestionError("class names must be unique")
        n = len(self.classes)
        for sample in self.samples:
            if not 0 <= sample.label < n:
                raise IngestionError(
                    f"class index {sample.label} out of range for {n} classes ({sample.path})"
                )
            if sample.origin not in _ORIGINS:
                raise IngestionError(f"unknown origin flag {sample.origin!r} ({sample.path})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def counts(self) -> tuple[int, ...]:
        """Per-class sample counts, aligned with ``classes``."""
        tally = np.bincount(self.labels, minlength=len(self.classes))
        return tuple(int(c) for c in tally)

    @property
    def labels(self) -> np.ndarray:
        return np.fromiter((s.label for s in self.samples), dtype=np.int64, count=len(self.samples))

    @property
    def paths(self) -> tuple[str, ...]:
        return tuple(s.path for s in self.samples)

    @property
    def is_augmented(self) -> bool:
        return any(s.origin == AUGMENTED for s in self.samples)

    def indices_of(self, label: int) -> np.ndarray:
        """Sample indices belonging to class *label*, in manifest order."""
        return np.flatnonzero(self.labels == label)

    def subset(self, indices: Iterable[int], seed: Optional[int] = None) -> DatasetManifest:
        """Manifest restricted to *indices* (kept in the given order)."""
        chosen = tuple(self.samples[int(i)] for i in indices)
        return DatasetManifest(self.classes, chosen, seed=self.seed if seed is None else seed)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "samples": [
                {"path": s.path, "class": s.label, "origin": s.origin} for s in self.samples
            ],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> DatasetManifest:
        try:
            samples = tuple(
                Sample(str(item["path"]), int(item["class"]), str(item.get("origin", ORIGINAL)))
                for item in payload["samples"]
            )
            return cls(tuple(payload["classes"]), samples, seed=payload.get("seed"))
        except (KeyError, TypeError) as exc:
            raise IngestionError(f"malformed manifest: missing {exc}") from exc

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form; identifies a dataset in sidecars."""
        return sha256_text(canonical_json(self.to_dict()))


def save_manifest(manifest: DatasetManifest, path: Path) -> Path:
    """Write *manifest* as stable-key-order UTF-8 JSON."""
    return write_json(Path(path), manifest.to_dict())


def load_manifest(path: Path) -> DatasetManifest:
    """Read a manifest JSON file.

    Raises:
        IngestionError: If the file is missing or malformed.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"manifest not found: {path}")
    try:
        payload = read_json(path)
    except ValueError as exc:
        raise IngestionError(f"manifest {path} is not valid JSON: {exc}") from exc
    return DatasetManifest.from_dict(payload)


# ── Helpers ──────────────────────────────────────────────────────────────────


def _ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: Optional[int] = None,
                 desc: Optional[str] = None, progress: bool = False) -> list[R]:
    """Apply *fn* concurrently, returning results in input order."""
    workers = workers or config.NUM_WORKERS
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = pool.map(fn, items)
        return list(tqdm(results, total=len(items), desc=desc, disable=not progress, leave=False))


def _verify_image(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError, Image.DecompressionBombError):
        return False


# ── Folder scanning ──────────────────────────────────────────────────────────


def scan_folder(root: Path, workers: Optional[int] = None, progress: bool = False) -> DatasetManifest:
    """Build a manifest from a folder holding one subdirectory per class.

    Classes are ordered lexicographically by directory name; the class index
    of each sample is its directory's ordinal.  Files with an unsupported
    extension, a wrong signature or undecodable contents are skipped and
    reported through ``manifest.skipped``.

    Args:
        root: Dataset root directory.
        workers: Thread count for decodability checks.
        progress: Show a progress bar.

    Returns:
        The populated ``DatasetManifest``.

    Raises:
        IngestionError: If *root* is missing, holds no class directories, or a
            class directory holds no usable image.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"dataset folder not found: {root}")

    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if not class_dirs:
        raise IngestionError(f"no classes found in {root}")

    samples: list[Sample] = []
    skipped: list[str] = []

    for label, class_dir in enumerate(class_dirs):
        files = sorted((f for f in class_dir.iterdir() if f.is_file()), key=lambda f: f.name)
        candidates = [f for f in files if is_image_file(f)]
        accepted = set(candidates)
        skipped.extend(f.resolve().as_posix() for f in files if f not in accepted)

        readable = _ordered_map(_verify_image, candidates, workers,
                                desc=class_dir.name, progress=progress)
        kept = [f for f, ok in zip(candidates, readable) if ok]
        skipped.extend(f.resolve().as_posix() for f, ok in zip(candidates, readable) if not ok)

        if not kept:
            raise IngestionError(f"class directory {class_dir} contains no readable images")
        samples.extend(Sample(f.resolve().as_posix(), label) for f in kept)

    if skipped:
        logger.warning("Skipped %d unreadable or unsupported file(s) under %s", len(skipped), root)

    manifest = DatasetManifest(tuple(d.name for d in class_dirs), tuple(samples), skipped=tuple(skipped))
    logger.info("Scanned %s — %d classes, %d images", root, len(manifest.classes), len(manifest))
    return manifest


def count_report(manifest: DatasetManifest) -> dict:
    """Compare folder counts with documented counts of a known dataset.

    A reference dataset matches when its class names (case-insensitive) cover
    the manifest's classes.  Both the documented total and the sum of the
    documented class counts are reported; neither is asserted.

    Returns:
        ``{"reference", "rows", "found_total", "documented_total",
        "documented_class_sum"}``; ``reference`` is ``None`` when nothing matches.
    """
    names = {c.lower(): c for c in manifest.classes}
    counts = dict(zip(manifest.classes, manifest.counts))
    for key, ref in config.REFERENCE_DATASETS.items():
        documented = {k.lower(): v for k, v in ref["classes"].items()}
        if set(names) <= set(documented):
            rows = [(c, counts[c], documented[c.lower()]) for c in manifest.classes]
            return {
                "reference": key,
                "rows": rows,
                "found_total": len(manifest),
                "documented_total": ref["total"],
                "documented_class_sum": sum(ref["classes"].values()),
            }
    return {
        "reference": None,
        "rows": [(c, counts[c], None) for c in manifest.classes],
        "found_total": len(manifest),
        "documented_total": None,
        "documented_class_sum": None,
    }


# ── Decoding ─────────────────────────────────────────────────────────────────


# 16-bit greyscale PNGs open in one of these modes with samples in 0..65535.
_HIGH_DEPTH_MODES: frozenset[str] = frozenset({"I", "I;16", "I;16B", "I;16L", "I;16N"})


def _apply_exif_orientation(image: Image.Image) -> Image.Image:
    """Upright *image* according to its EXIF Orientation tag.

    Unreadable EXIF data leaves the image as stored.
    """
    try:
        return ImageOps.exif_transpose(image)
    except (OSError, ValueError, KeyError, TypeError, SyntaxError) as exc:
        logger.debug("Ignoring unreadable EXIF orientation: %s", exc)
        return image


def _float_bands(image: Image.Image) -> list[Image.Image]:
    """Three ``F``-mode bands on the 8-bit ``0..255`` scale.

    High-depth greyscale is rescaled from ``0..65535`` instead of being
    clipped by an RGB conversion.
    """
    if image.mode in _HIGH_DEPTH_MODES:
        samples = np.asarray(image, dtype=np.float32) * np.float32(255.0 / 65535.0)
        band = Image.fromarray(np.ascontiguousarray(samples))
        return [band, band, band]
    return [band.convert("F") for band in image.convert("RGB").split()]


def decode_resize(data: bytes, path: Optional[str] = None, size: int = config.IMAGE_SIZE) -> np.ndarray:
    """Decode encoded image bytes into a ``3×size×size`` float32 array in ``[0, 1]``.

    The EXIF orientation is applied first.  Grayscale and palette images are
    expanded to RGB, 16-bit greyscale is scaled down from its full range, and
    alpha is dropped.  Resampling uses Pillow's bilinear filter on float
    bands, so no 8-bit rounding happens between the horizontal and vertical
    passes.

    Args:
        data: JPEG or PNG bytes.
        path: Source path, used in error messages only.
        size: Output width and height.

    Raises:
        DecodeError: If the bytes are not a decodable raster image.
    """
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            bands = _float_bands(_apply_exif_orientation(img))
    except (UnidentifiedImageError, OSError, ValueError, Image.DecompressionBombError) as exc:
        raise DecodeError(path, str(exc)) from exc

    if bands[0].size != (size, size):
        bands = [band.resize((size, size), Image.Resampling.BILINEAR) for band in bands]
    arr = np.stack([np.asarray(band, dtype=np.float32) for band in bands]) / np.float32(255.0)
    return np.ascontiguousarray(np.clip(arr, 0.0, 1.0), dtype=np.float32)


def load_image(path: str | Path) -> np.ndarray:
    """Read and decode the image at *path*.

    Raises:
        DecodeError: If the file cannot be read or decoded.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(str(path), str(exc)) from exc
    return decode_resize(data, path=str(path))


@lru_cache(maxsize=config.IMAGE_CACHE_SIZE)
def _cached_image(path: str) -> np.ndarray:
    image = load_image(path)
    image.flags.writeable = False
    return image


def load_images(paths: Sequence[str], workers: Optional[int] = None) -> np.ndarray:
    """Decode *paths* (cached) and stack them into an ``N×3×H×W`` batch."""
    images = _ordered_map(_cached_image, list(paths), workers)
    return np.stack(images)


def save_image(image: np.ndarray, path: Path) -> Path:
    """Write a ``3×H×W`` float image as a lossless PNG."""
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, compress_level=6)
    return path


# ── Augmentation ─────────────────────────────────────────────────────────────


class AugmentationService:
    """Stateless rotate / mirror / brightness operations on ``3×H×W`` arrays."""

    @staticmethod
    def rotate(image: np.ndarray, degrees: int) -> np.ndarray:
        """Rotate *image* clockwise by a multiple of 90 degrees."""
        if degrees % 90:
            raise ValueError(f"rotation must be a multiple of 90 degrees, got {degrees}")
        return np.ascontiguousarray(np.rot90(image, k=-(degrees // 90) % 4, axes=(1, 2)))

    @staticmethod
    def flip(image: np.ndarray, horizontal: bool = False, vertical: bool = False) -> np.ndarray:
        """Mirror *image*; horizontal swaps left and right, vertical swaps top and bottom."""
        if horizontal:
            image = image[:, :, ::-1]
        if vertical:
            image = image[:, ::-1, :]
        return np.ascontiguousarray(image)

    @staticmethod
    def brightness(image: np.ndarray, factor: float) -> np.ndarray:
        """Scale intensities by *factor*, clamped to ``[0, 1]``."""
        return np.clip(image * np.asarray(factor, dtype=image.dtype), 0.0, 1.0)

    @classmethod
    def augment(cls, image: np.ndarray) -> list[np.ndarray]:
        """Return the seven augmented variants in ``config.AUGMENTATION_NAMES`` order.

        The original is not included; callers keep it separately.
        """
        return [
            cls.rotate(image, 90),
            cls.rotate(image, 180),
            cls.rotate(image, 270),
            cls.flip(image, horizontal=True),
            cls.flip(image, vertical=True),
            cls.brightness(image, config.BRIGHTNESS_UP),
            cls.brightness(image, config.BRIGHTNESS_DOWN),
        ]


def augment(sample: np.ndarray) -> list[np.ndarray]:
    """Seven augmentations of one ``PixelImage`` (see ``AugmentationService.augment``)."""
    return AugmentationService.augment(sample)


def augment_manifest(manifest: DatasetManifest, out_dir: Path, workers: Optional[int] = None,
                     progress: bool = False) -> DatasetManifest:
    """Materialize seven augmentations per original and return the enlarged manifest.

    Augmented images are written as PNG under ``out_dir/<class>/``.  The output
    lists each original followed by its seven variants, in manifest order.

    Raises:
        IngestionError: If *manifest* is empty or already contains augmented samples.
        DecodeError: If an original cannot be decoded.
    """
    if not len(manifest):
        raise IngestionError("cannot augment an empty manifest")
    if manifest.is_augmented:
        raise IngestionError(
            "manifest already contains augmented samples; augment the originals-only manifest instead"
        )

    out_dir = Path(out_dir)

    def _materialize(item: tuple[int, Sample]) -> list[Sample]:
        index, sample = item
        image = load_image(sample.path)
        class_dir = out_dir / manifest.classes[sample.label]
        stem = Path(sample.path).stem
        produced = [sample]
        for name, variant in zip(config.AUGMENTATION_NAMES, augment(image)):
            target = save_image(variant, class_dir / f"{index:06d}_{stem}__{name}.png")
            produced.append(Sample(target.resolve().as_posix(), sample.label, AUGMENTED))
        return produced

    groups = _ordered_map(_materialize, list(enumerate(manifest.samples)), workers,
                          desc="augment", progress=progress)
    samples = tuple(s for group in groups for s in group)
    logger.info("Augmented %d originals into %d samples under %s", len(manifest), len(samples), out_dir)
    return DatasetManifest(manifest.classes, samples, seed=manifest.seed)


# ── Splits ───────────────────────────────────────────────────────────────────

FRACTION: str = "fraction"
KFOLD: str = "k-fold"
DEDICATED: str = "dedicated-test"
_SPLIT_MODES: frozenset[str] = frozenset({FRACTION, KFOLD, DEDICATED})


@dataclass(frozen=True)
class SplitSpec:
    """How to partition a manifest into training and evaluation data.

    Attributes:
        mode: ``"fraction"``, ``"k-fold"`` or ``"dedicated-test"``.
        train_fraction: Share of each class kept for training (fraction mode).
        k: Number of folds (k-fold mode).
        test_manifest: External evaluation manifest (dedicated-test mode).
        seed: Shuffling seed.
    """

    mode: str = FRACTION
    train_fraction: float = 1.0
    k: int = 10
    test_manifest: Optional[str] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in _SPLIT_MODES:
            raise SplitError(f"unknown split mode {self.mode!r}; expected one of {sorted(_SPLIT_MODES)}")
        if self.mode == FRACTION and not 0.0 < self.train_fraction <= 1.0:
            raise SplitError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.mode == KFOLD and self.k < 2:
            raise SplitError(f"k must be at least 2, got {self.k}")
        if self.mode == DEDICATED and not self.test_manifest:
            raise SplitError("dedicated-test mode requires test_manifest")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "train_fraction": self.train_fraction,
            "k": self.k,
            "test_manifest": self.test_manifest,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Split:
    """Result of ``make_split``.

    ``eval`` is set in fraction and dedicated-test modes; ``folds`` in k-fold mode.
    """

    train: DatasetManifest
    eval: Optional[DatasetManifest] = None
    folds: tuple[DatasetManifest, ...] = ()

    def legs(self) -> list[tuple[DatasetManifest, DatasetManifest]]:
        """``(train, eval)`` pairs: one per fold in k-fold mode, otherwise one."""
        if not self.folds:
            return [(self.train, self.eval)]
        legs = []
        for held_out in self.folds:
            excluded = set(held_out.paths)
            rest = [i for i, s in enumerate(self.train.samples) if s.path not in excluded]
            legs.append((self.train.subset(rest), held_out))
        return legs


def _fraction_indices(manifest: DatasetManifest, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    n_train = 0
    for label, name in enumerate(manifest.classes):
        count = len(manifest.indices_of(label))
        if not count:
            continue
        share = int(math.floor(fraction * count + 0.5))
        if share == 0:
            raise SplitError(
                f"train_fraction={fraction} leaves class {name!r} ({count} samples) without training data"
            )
        n_train += share
    if n_train >= len(manifest):
        return list(range(len(manifest))), []
    try:
        train, held_out = train_test_split(
            np.arange(len(manifest)),
            train_size=n_train,
            stratify=manifest.labels,
            random_state=seed,
            shuffle=True,
        )
    except ValueError as exc:
        raise SplitError(f"train_fraction={fraction}: {exc}") from exc
    return sorted(int(i) for i in train), sorted(int(i) for i in held_out)


def make_split(manifest: DatasetManifest, spec: SplitSpec) -> Split:
    """Partition *manifest* according to *spec*.

    Fraction mode draws ``sum_c round(train_fraction × count_c)`` training
    samples with scikit-learn's stratified shuffle, so each class gets its
    proportional share to within one sample.  K-fold mode
    returns ``k`` disjoint, covering, per-class stratified folds.  Dedicated
    mode keeps the whole manifest for training and loads the external test
    manifest for evaluation.  Membership lists keep manifest order and depend
    only on (manifest, spec).

    Raises:
        SplitError: On an empty manifest, a class left without training data,
            an infeasible fold count, or a test manifest with other classes.
    """
    if not len(manifest):
        raise SplitError("cannot split an empty manifest")

    if spec.mode == FRACTION:
        train_idx, eval_idx = _fraction_indices(manifest, spec.train_fraction, spec.seed)
        return Split(manifest.subset(train_idx), manifest.subset(eval_idx))

    if spec.mode == KFOLD:
        if spec.k > len(manifest):
            raise SplitError(f"cannot make {spec.k} folds from {len(manifest)} samples")
        skf = StratifiedKFold(n_splits=spec.k, shuffle=True, random_state=spec.seed)
        try:
            folds = tuple(
                manifest.subset(np.sort(test_idx))
                for _, test_idx in skf.split(np.zeros(len(manifest)), manifest.labels)
            )
        except ValueError as exc:
            raise SplitError(str(exc)) from exc
        return Split(manifest, folds=folds)

    test = load_manifest(Path(spec.test_manifest))
    if test.classes != manifest.classes:
        raise SplitError(
            f"test manifest classes {list(test.classes)} differ from training classes {list(manifest.classes)}"
        )
    return Split(manifest, test)


def subsample(manifest: DatasetManifest, fraction: float, seed: int) -> DatasetManifest:
    """Stratified training subset holding *fraction* of every class."""
    if fraction >= 1.0:
        return manifest
    return make_split(manifest, SplitSpec(FRACTION, train_fraction=fraction, seed=seed)).train


# ── Synthetic data ───────────────────────────────────────────────────────────


def _synthetic_image(label: int, n_classes: int, rng: np.random.Generator, size: int) -> np.ndarray:
    """One textured image whose hue and stripe orientation identify its class."""
    hue = label / n_classes
    color = np.asarray(colorsys.hsv_to_rgb(hue, 0.7, 0.8), dtype=np.float64)
    angle = math.pi * label / n_classes
    frequency = 3.0 + 2.0 * (label % 3)

    yy, xx = np.mgrid[0:size, 0:size] / size
    phase = rng.uniform(0.0, 2.0 * math.pi)
    stripes = np.sin(2.0 * math.pi * frequency * (xx * math.cos(angle) + yy * math.sin(angle)) + phase)
    shade = 0.7 + 0.25 * stripes + rng.uniform(-0.05, 0.05)

    image = color[:, None, None] * shade[None, :, :]
    image += rng.normal(0.0, 0.04, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def generate_synthetic(classes: int, per_class: int, seed: int, out_dir: Optional[Path] = None,
                       counts: Optional[Sequence[int]] = None,
                       size: int = config.IMAGE_SIZE) -> DatasetManifest:
    """Write a procedurally generated class-per-folder dataset and return its manifest.

    Each class has its own hue and stripe orientation; every image adds seeded
    phase, brightness and pixel noise.  The same seed reproduces byte-identical
    PNG files.  A ``manifest.json`` is written next to the class folders.

    Args:
        classes: Number of classes (at least 2).
        per_class: Images per class (at least 6: five supports plus one query).
        seed: Generator seed.
        out_dir: Target folder; a fresh temporary directory when omitted.
        counts: Optional per-class image counts overriding *per_class*
            (used to build deliberately imbalanced datasets).
        size: Image width and height.

    Raises:
        IngestionError: If the class or per-class counts are too small.
    """
    if classes < 2:
        raise IngestionError(f"synthetic data needs at least 2 classes, got {classes}")
    counts = list(counts) if counts is not None else [per_class] * classes
    if len(counts) != classes:
        raise IngestionError(f"expected {classes} per-class counts, got {len(counts)}")
    if min(counts) < 6:
        raise IngestionError(f"each class needs at least 6 images (5 supports + 1 query), got {min(counts)}")

    out_dir = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="siamleaf-synth-"))
    rng = np.random.default_rng(seed)
    names = tuple(f"class_{c:02d}" for c in range(classes))

    samples: list[Sample] = []
    for label, (name, count) in enumerate(zip(names, counts)):
        for i in range(count):
            image = _synthetic_image(label, classes, rng, size)
            target = save_image(image, out_dir / name / f"{i:04d}.png")
            samples.append(Sample(target.resolve().as_posix(), label))

    manifest = DatasetManifest(names, tuple(samples), seed=seed)
    save_manifest(manifest, out_dir / "manifest.json")
    logger.info("Generated synthetic dataset at %s — %d classes, %d images", out_dir, classes, len(manifest))
    return manifest
