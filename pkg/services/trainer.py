"""
Siamleaf — Contrastive Trainer.

Euclidean distance between embeddings, the contrastive loss

    L = (1 - Y) · ½ · D²  +  Y · ½ · max(0, m - D)²

with ``Y = 0`` for similar and ``Y = 1`` for dissimilar pairs, Adam with
L2 weight decay folded into the gradient, and the epoch loop that writes
checkpoints and the loss curve.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from tqdm import tqdm

import config
from services.backbone import (
    DEFAULT_BACKBONE,
    TRAIN,
    BackboneSpec,
    NetworkParams,
    backward,
    forward,
    init_params,
    save_checkpoint,
)
from services.dataset_service import DatasetManifest, load_images, subsample
from services.errors import ContractError, DimensionError, StructuralError, TrainingError
from services.pair_service import sample_pairs, write_pairs_csv
from utils.io import write_csv

logger = logging.getLogger(__name__)

LOSS_CSV_HEADER: tuple[str, ...] = ("step", "epoch", "loss")
PARTIAL_MARKER: str = "PARTIAL"


# ── Configuration ────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    Attributes:
        epochs: Passes over the pair stream.
        batch_size: Pairs per optimizer step.
        learning_rate: Adam step size (constant, no schedule).
        weight_decay: L2 coefficient added to gradients.
        margin: Contrastive margin ``m``.
        seed: Seeds initialization, pair sampling and dropout.
        train_fraction: Stratified share of the training manifest to use.
        similar_ratio: Share of similar pairs per epoch.
        pairs_per_epoch: Pairs per epoch; the training-sample count when ``None``.
        beta1: Adam first-moment decay.
        beta2: Adam second-moment decay.
        eps: Adam denominator guard.
        dump_pairs: Write each epoch's pair list to ``pairs_epoch_XX.csv``
            when training has an output directory.
    """

    epochs: int = config.EPOCHS
    batch_size: int = config.BATCH_SIZE
    learning_rate: float = config.LEARNING_RATE
    weight_decay: float = config.WEIGHT_DECAY
    margin: float = config.MARGIN
    seed: int = 0
    train_fraction: float = 1.0
    similar_ratio: float = config.SIMILAR_RATIO
    pairs_per_epoch: Optional[int] = None
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    eps: float = config.ADAM_EPS
    dump_pairs: bool = False

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ContractError(f"margin must be greater than 0, got {self.margin}")
        # Zero is accepted for frozen-weight runs; config files require > 0.
        if self.learning_rate < 0:
            raise ContractError(f"learning_rate must not be negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be at least 1, got {self.epochs}")
        if self.weight_decay < 0:
            raise ContractError(f"weight_decay must not be negative, got {self.weight_decay}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ContractError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if not 0.0 <= self.similar_ratio <= 1.0:
            raise ContractError(f"similar_ratio must lie in [0, 1], got {self.similar_ratio}")
        if self.pairs_per_epoch is not None and self.pairs_per_epoch < 1:
            raise ContractError(f"pairs_per_epoch must be positive, got {self.pairs_per_epoch}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossRecord:
    step: int
    epoch: int
    loss: float
    timestamp: float


@dataclass
class TrainResult:
    """Outcome of ``train``: final parameters, loss curve and written files."""

    params: NetworkParams
    records: list[LossRecord]
    epoch_losses: list[float]
    checkpoints: list[Path] = field(default_factory=list)
    loss_csv: Optional[Path] = None


# ── Distance and loss ────────────────────────────────────────────────────────


def euclidean_distance(e1: np.ndarray, e2: np.ndarray) -> float:
    """``D = ||e1 - e2||₂``.

    Raises:
        DimensionError: If the embeddings are not vectors of equal length.
    """
    a = np.asarray(e1, dtype=np.float64)
    b = np.asarray(e2, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"cannot compare embeddings of shapes {a.shape} and {b.shape}")
    diff = a - b
    return float(np.sqrt(np.dot(diff, diff)))


def contrastive_loss(distance: float, label: int, margin: float = config.MARGIN) -> float:
    """Contrastive loss of one pair.

    Raises:
        ContractError: If ``distance < 0``, ``margin <= 0`` or the label is not 0/1.
    """
    if distance < 0:
        raise ContractError(f"distance must be non-negative, got {distance}")
    if margin <= 0:
        raise ContractError(f"margin must be greater than 0, got {margin}")
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label}")
    hinge = max(0.0, margin - distance)
    return (1 - label) * 0.5 * distance * distance + label * 0.5 * hinge * hinge


def contrastive_loss_grad(distance: float, label: int, margin: float = config.MARGIN) -> float:
    """``∂L/∂D``: ``D`` for similar pairs, ``-(m - D)`` for dissimilar pairs inside the margin."""
    return (1 - label) * distance - label * max(0.0, margin - distance)


def pair_loss_and_grads(params: NetworkParams, first: np.ndarray, second: np.ndarray,
                        labels: np.ndarray, margin: float = config.MARGIN, mode: str = TRAIN,
                        dropout_seed: int = 0) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Batch-mean contrastive loss of a pair batch and its parameter gradient.

    Both streams are stacked into one forward pass through the single
    parameter set, so the returned gradient already sums both streams'
    contributions.

    Returns:
        ``(mean loss, gradients by tensor name, per-pair distances)``.
    """
    batch = len(labels)
    if first.shape != second.shape or len(first) != batch:
        raise StructuralError("pairs", f"stream shapes {first.shape} / {second.shape} for {batch} labels")
    labels = np.asarray(labels, dtype=np.float64)

    embeddings, trace = forward(params, np.concatenate([first, second]), mode, dropout_seed)
    diff = embeddings[:batch].astype(np.float64) - embeddings[batch:].astype(np.float64)
    distances = np.sqrt(np.sum(diff * diff, axis=1))
    hinge = np.maximum(0.0, margin - distances)
    loss = float(np.mean((1.0 - labels) * 0.5 * distances ** 2 + labels * 0.5 * hinge ** 2))

    # d/de1 of ½D² is diff; of ½max(0, m-D)² is -(m-D)·diff/D, taken as 0 at D = 0.
    safe = np.where(distances > 0, distances, 1.0)
    coef = ((1.0 - labels) - labels * hinge / safe * (distances > 0)) / batch
    grad_first = coef[:, None] * diff
    output_gradient = np.concatenate([grad_first, -grad_first]).astype(params.dtype)

    return loss, backward(trace, output_gradient), distances


# ── Adam ─────────────────────────────────────────────────────────────────────


@dataclass
class AdamState:
    """First / second moment estimates and the step counter."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: NetworkParams) -> AdamState:
        return cls(
            0,
            {name: np.zeros_like(t) for name, t in params.items()},
            {name: np.zeros_like(t) for name, t in params.items()},
        )


def adam_step(params: NetworkParams, gradients: dict[str, np.ndarray], state: AdamState,
              lr: float, weight_decay: float = 0.0, beta1: float = config.ADAM_BETA1,
              beta2: float = config.ADAM_BETA2,
              eps: float = config.ADAM_EPS) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update with coupled L2 decay (``g += wd · p``).

    Returns:
        New parameters and new state; the inputs are left untouched.

    Raises:
        StructuralError: If names or shapes of params, gradients and moments disagree.
    """
    t = state.step + 1
    new_tensors: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    for name, param in params.items():
        if name not in gradients or name not in state.m or name not in state.v:
            raise StructuralError(name, "missing gradient or moment estimate")
        grad = gradients[name]
        if grad.shape != param.shape or state.m[name].shape != param.shape or state.v[name].shape != param.shape:
            raise StructuralError(name, f"shape mismatch: param {param.shape}, gradient {grad.shape}")

        grad = grad + weight_decay * param
        m = beta1 * state.m[name] + (1.0 - beta1) * grad
        v = beta2 * state.v[name] + (1.0 - beta2) * grad * grad
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        new_tensors[name] = (param - update).astype(param.dtype, copy=False)
        new_m[name], new_v[name] = m, v

    return params.replace(new_tensors), AdamState(t, new_m, new_v)


# ── Training loop ────────────────────────────────────────────────────────────


def write_loss_csv(records: list[LossRecord], path: Path) -> Path:
    """Write the loss curve as ``step,epoch,loss`` (full float precision)."""
    return write_csv(Path(path), LOSS_CSV_HEADER, ((r.step, r.epoch, repr(r.loss)) for r in records))


def _sidecar(cfg: TrainConfig, manifest: DatasetManifest, epoch: int, step: int) -> dict:
    return {
        "train_config": cfg.to_dict(),
        "manifest_fingerprint": manifest.fingerprint(),
        "train_samples": len(manifest),
        "classes": list(manifest.classes),
        "epoch": epoch,
        "step": step,
        "pixel_normalization": config.PIXEL_NORMALIZATION,
    }


def train(cfg: TrainConfig, manifest: DatasetManifest, out_dir: Optional[Path] = None,
          spec: BackboneSpec = DEFAULT_BACKBONE, init: Optional[NetworkParams] = None,
          dtype: str = config.DTYPE, progress: bool = False) -> TrainResult:
    """Train the backbone on contrastive pairs drawn from *manifest*.

    Every epoch draws a fresh pair list, walks it in batches of
    ``cfg.batch_size`` pairs, and applies one Adam step per batch.  All
    randomness flows from ``cfg.seed``, so a rerun reproduces the loss curve
    and checkpoints bit for bit on the same machine.

    When *out_dir* is given, ``epoch_XX.npz`` and ``final.npz`` checkpoints
    (each with a JSON sidecar) and ``loss.csv`` are written there.  A
    ``PARTIAL`` marker exists while the run is incomplete and stays behind if
    it fails.  With ``cfg.dump_pairs`` each epoch's pairs go to
    ``pairs_epoch_XX.csv``.

    Raises:
        TrainingError: If a batch loss is not finite.
        SamplingError: If pairs cannot be drawn from *manifest*.
    """
    if cfg.train_fraction < 1.0:
        manifest = subsample(manifest, cfg.train_fraction, cfg.seed)

    rng = np.random.default_rng(cfg.seed)
    params = init if init is not None else init_params(cfg.seed, spec, dtype)
    state = AdamState.zeros(params)
    pairs_per_epoch = cfg.pairs_per_epoch or len(manifest)

    marker: Optional[Path] = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        marker = out_dir / PARTIAL_MARKER
        marker.write_text("training in progress\n", encoding="utf-8")

    logger.info(
        "Training on %d samples / %d classes — epochs=%d, batch=%d, lr=%g, wd=%g, margin=%g, seed=%d",
        len(manifest), len(manifest.classes), cfg.epochs, cfg.batch_size, cfg.learning_rate,
        cfg.weight_decay, cfg.margin, cfg.seed,
    )

    records: list[LossRecord] = []
    epoch_losses: list[float] = []
    checkpoints: list[Path] = []
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            pairs = sample_pairs(manifest, pairs_per_epoch, cfg.similar_ratio, int(rng.integers(2**63)))
            if cfg.dump_pairs and out_dir is not None:
                write_pairs_csv(pairs, manifest, out_dir / f"pairs_epoch_{epoch:02d}.csv")
            batches = range(0, len(pairs), cfg.batch_size)
            losses: list[float] = []
            for start in tqdm(batches, desc=f"epoch {epoch}/{cfg.epochs}", disable=not progress, leave=False):
                batch = pairs[start:start + cfg.batch_size]
                first = load_images([manifest.samples[p.first].path for p in batch])
                second = load_images([manifest.samples[p.second].path for p in batch])
                labels = np.array([p.label for p in batch])

                loss, grads, _ = pair_loss_and_grads(params, first, second, labels, cfg.margin,
                                                     TRAIN, int(rng.integers(2**63)))
                step += 1
                if not math.isfinite(loss):
                    composition = [(manifest.samples[p.first].path, manifest.samples[p.second].path, p.label)
                                   for p in batch]
                    raise TrainingError(f"non-finite loss {loss} at step {step} (epoch {epoch})",
                                        step=step, batch=composition)

                params, state = adam_step(params, grads, state, cfg.learning_rate, cfg.weight_decay,
                                          cfg.beta1, cfg.beta2, cfg.eps)
                records.append(LossRecord(step, epoch, loss, time.time()))
                losses.append(loss)

            epoch_losses.append(float(np.mean(losses)))
            logger.info("Epoch %d/%d — mean loss %.6f over %d steps", epoch, cfg.epochs, epoch_losses[-1],
                        len(losses))
            params.metadata.update({"epoch": epoch, "step": step})
            if out_dir is not None:
                checkpoints.append(save_checkpoint(params, out_dir / f"epoch_{epoch:02d}.npz",
                                                   _sidecar(cfg, manifest, epoch, step)))
    except Exception as exc:
        if marker is not None:
            marker.write_text(f"training failed at step {step}: {exc}\n", encoding="utf-8")
        raise

    result = TrainResult(params, records, epoch_losses, checkpoints)
    if out_dir is not None:
        checkpoints.append(save_checkpoint(params, out_dir / "final.npz",
                                           _sidecar(cfg, manifest, cfg.epochs, step)))
        result.loss_csv = write_loss_csv(records, out_dir / "loss.csv")
        marker.unlink(missing_ok=True)
    return result
