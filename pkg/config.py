"""
Siamleaf — Centralized Application Configuration.

All tuneable constants are defined here. Override via environment variables
where noted, or edit the defaults directly for development.  Run-specific
settings (training hyperparameters, splits, seeds) live in the JSON experiment
config; the values below are its defaults.
"""

import os
from pathlib import Path

BASE_DIR: Path = Path(__file__).resolve().parent

# ── Environment ───────────────────────────────────────────────────────────────
LOG_LEVEL: str = os.environ.get("SIAMLEAF_LOG_LEVEL", "INFO").upper()
LOG_FORMAT: str = "%(asctime)s [siamleaf] %(levelname)s  %(message)s"

# All command outputs land under this directory unless --out is given.
OUTPUT_DIR: Path = Path(os.environ.get("SIAMLEAF_OUTPUT_DIR", "runs"))

# Thread pool size for decoding / augmentation / image verification.
NUM_WORKERS: int = int(os.environ.get("SIAMLEAF_NUM_WORKERS", min(8, os.cpu_count() or 1)))

# Decoded images kept in memory while training / evaluating.
IMAGE_CACHE_SIZE: int = int(os.environ.get("SIAMLEAF_IMAGE_CACHE_SIZE", 20_000))

# ── Image ingestion ──────────────────────────────────────────────────────────
IMAGE_SIZE: int = 128
IMAGE_CHANNELS: int = 3
ALLOWED_EXTENSIONS: set[str] = {"png", "jpg", "jpeg"}

# Mitigate Decompression Bombs
MAX_IMAGE_PIXELS: int = int(os.environ.get("SIAMLEAF_MAX_IMAGE_PIXELS", 50_000_000))

# Stored in checkpoint metadata so inference decodes exactly like training.
PIXEL_NORMALIZATION: str = "scale-0-1"

# ── Augmentation ─────────────────────────────────────────────────────────────
BRIGHTNESS_UP: float = 1.25
BRIGHTNESS_DOWN: float = 0.75
AUGMENTATION_NAMES: tuple[str, ...] = (
    "rot90",
    "rot180",
    "rot270",
    "mirror_h",
    "mirror_v",
    "bright_up",
    "bright_down",
)

# ── Network ──────────────────────────────────────────────────────────────────
EMBEDDING_DIM: int = 32
# float32 keeps desk-scale training fast; gradient checks run in float64.
DTYPE: str = os.environ.get("SIAMLEAF_DTYPE", "float32")
CHECKPOINT_FORMAT_VERSION: int = 1

# ── Training defaults ────────────────────────────────────────────────────────
EPOCHS: int = 10
BATCH_SIZE: int = 8
LEARNING_RATE: float = 0.001
WEIGHT_DECAY: float = 0.0001
MARGIN: float = 2.0
SIMILAR_RATIO: float = 0.5
ADAM_BETA1: float = 0.9
ADAM_BETA2: float = 0.999
ADAM_EPS: float = 1e-8

# ── Inference ────────────────────────────────────────────────────────────────
SUPPORT_PER_CLASS: int = 5
EVAL_BATCH_SIZE: int = 32

# ── Experiment grid ──────────────────────────────────────────────────────────
GRID_FRACTIONS: tuple[float, ...] = (1.0, 0.75, 0.5)

# ── Documented dataset class counts ─────────────────────────────────────────
# Used only for count reports; folder contents are always authoritative.
REFERENCE_DATASETS: dict[str, dict] = {
    "plantvillage-tomato": {
        "total": 14_531,
        "classes": {
            "Bacterial spot": 1702,
            "Early blight": 800,
            "Late blight": 1528,
            "Leaf mold": 762,
            "Septoria leaf spot": 1417,
            "Target spot": 1124,
            "Mosaic virus": 299,
            "Yellow leaf curl virus": 4286,
            "Two-spotted spider mite": 1341,
            "Healthy": 1272,
        },
    },
    "taiwan-tomato": {
        # Stated total; the class counts below sum to 612.
        "total": 622,
        "classes": {
            "Bacterial spot": 100,
            "Black mold": 67,
            "Gray spot": 84,
            "Healthy": 106,
            "Late blight": 98,
            "Powdery mildew": 157,
        },
    },
}
