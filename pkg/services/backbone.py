"""
Siamleaf — Backbone Network.

The nine-block convolutional network ``G`` that maps a ``3×128×128`` image to a
32-d embedding:

    1  Conv 5×5 (64, p1) → ReLU → LRN → MaxPool 3/2
    2  Conv 3×3 (96, p2) → ReLU
    3  Conv 3×3 (128, p2) → ReLU
    4  Conv 3×3 (96, p2) → ReLU → LRN → MaxPool 3/2 → Dropout 0.2
    5  Conv 1×1 (64, p1) → ReLU → Dropout 0.2
    6  Conv 1×1 (32, p1) → ReLU → MaxPool 3/2 → Dropout 0.2
    7  Flatten → FC 256 → ReLU → Dropout 0.5
    8  FC 64 → ReLU
    9  FC 32

Both streams of the Siamese pair run through one ``NetworkParams`` instance;
there is no second copy of the weights anywhere.  ``BackboneSpec`` keeps the
block layout fixed while letting tests shrink the geometry.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterator, Optional

import numpy as np

import config
from services import layers
from services.errors import StructuralError
from utils.io import read_json, write_json

logger = logging.getLogger(__name__)

TRAIN: str = "train"
EVAL: str = "eval"


# ── Network layout ───────────────────────────────────────────────────────────


@dataclass(frozen=True)
class BackboneSpec:
    """Geometry of the backbone.  The defaults give the full-size network.

    Attributes:
        input_size: Input width and height.
        in_channels: Input channels.
        conv_channels: Output channels of conv1..conv6.
        conv_kernels: Kernel sizes of conv1..conv6.
        conv_pads: Zero padding of conv1..conv6 (stride is always 1).
        fc_sizes: Output sizes of fc7, fc8, fc9; the last is the embedding size.
        pool_size: Max-pool window.
        pool_stride: Max-pool stride.
        lrn_size: LRN window (channels).
        lrn_alpha: LRN multiplicative factor.
        lrn_beta: LRN exponent.
        lrn_k: LRN additive factor.
        conv_dropout: Drop probability after blocks 4, 5 and 6.
        fc_dropout: Drop probability after fc7.
    """

    input_size: int = config.IMAGE_SIZE
    in_channels: int = config.IMAGE_CHANNELS
    conv_channels: tuple[int, ...] = (64, 96, 128, 96, 64, 32)
    conv_kernels: tuple[int, ...] = (5, 3, 3, 3, 1, 1)
    conv_pads: tuple[int, ...] = (1, 2, 2, 2, 1, 1)
    fc_sizes: tuple[int, ...] = (256, 64, config.EMBEDDING_DIM)
    pool_size: int = 3
    pool_stride: int = 2
    lrn_size: int = 5
    lrn_alpha: float = 0.0001
    lrn_beta: float = 0.75
    lrn_k: float = 2.0
    conv_dropout: float = 0.2
    fc_dropout: float = 0.5

    def __post_init__(self) -> None:
        for name in ("conv_channels", "conv_kernels", "conv_pads", "fc_sizes"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not (len(self.conv_channels) == len(self.conv_kernels) == len(self.conv_pads) == 6):
            raise StructuralError("spec", "the backbone has exactly six convolution layers")
        if len(self.fc_sizes) != 3:
            raise StructuralError("spec", "the backbone has exactly three fully connected layers")

    @property
    def embedding_dim(self) -> int:
        return self.fc_sizes[-1]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> BackboneSpec:
        return cls(**payload)


DEFAULT_BACKBONE = BackboneSpec()


@dataclass(frozen=True)
class LayerStep:
    """One entry of the forward plan."""

    name: str
    kind: str  # conv | relu | lrn | pool | dropout | flatten | fc
    p: float = 0.0


def layer_plan(spec: BackboneSpec) -> tuple[LayerStep, ...]:
    """The ordered layers of blocks 1–9."""
    cd, fd = spec.conv_dropout, spec.fc_dropout
    return (
        LayerStep("conv1", "conv"), LayerStep("relu1", "relu"), LayerStep("norm1", "lrn"),
        LayerStep("pool1", "pool"),
        LayerStep("conv2", "conv"), LayerStep("relu2", "relu"),
        LayerStep("conv3", "conv"), LayerStep("relu3", "relu"),
        LayerStep("conv4", "conv"), LayerStep("relu4", "relu"), LayerStep("norm4", "lrn"),
        LayerStep("pool4", "pool"), LayerStep("drop4", "dropout", cd),
        LayerStep("conv5", "conv"), LayerStep("relu5", "relu"), LayerStep("drop5", "dropout", cd),
        LayerStep("conv6", "conv"), LayerStep("relu6", "relu"), LayerStep("pool6", "pool"),
        LayerStep("drop6", "dropout", cd),
        LayerStep("flatten", "flatten"),
        LayerStep("fc7", "fc"), LayerStep("relu7", "relu"), LayerStep("drop7", "dropout", fd),
        LayerStep("fc8", "fc"), LayerStep("relu8", "relu"),
        LayerStep("fc9", "fc"),
    )


def shape_chain(spec: BackboneSpec = DEFAULT_BACKBONE) -> dict[str, tuple[int, ...]]:
    """Per-sample output shape of every layer, derived from *spec*.

    Convolutions produce ``n + 2p - k + 1``; pooling produces
    ``floor((n - size) / stride) + 1``.

    Raises:
        StructuralError: If a layer would produce an empty map.
    """
    shapes: dict[str, tuple[int, ...]] = {}
    channels, side = spec.in_channels, spec.input_size
    fc_index = 0
    for step in layer_plan(spec):
        if step.kind == "conv":
            i = int(step.name[-1]) - 1
            side = side + 2 * spec.conv_pads[i] - spec.conv_kernels[i] + 1
            channels = spec.conv_channels[i]
        elif step.kind == "pool":
            side = (side - spec.pool_size) // spec.pool_stride + 1
        elif step.kind == "flatten":
            shapes[step.name] = (channels * side * side,)
            continue
        elif step.kind == "fc":
            shapes[step.name] = (spec.fc_sizes[fc_index],)
            fc_index += 1
            continue
        elif step.kind in ("relu", "dropout") and fc_index:
            shapes[step.name] = (spec.fc_sizes[fc_index - 1],)
            continue
        if side < 1:
            raise StructuralError(step.name, f"input size {spec.input_size} collapses to {side}")
        shapes[step.name] = (channels, side, side)
    return shapes


def flatten_size(spec: BackboneSpec = DEFAULT_BACKBONE) -> int:
    return shape_chain(spec)["flatten"][0]


def param_shapes(spec: BackboneSpec = DEFAULT_BACKBONE) -> dict[str, tuple[int, ...]]:
    """Name → shape of every trainable tensor, in layer order."""
    shapes: dict[str, tuple[int, ...]] = {}
    in_channels = spec.in_channels
    for i, (out_channels, kernel) in enumerate(zip(spec.conv_channels, spec.conv_kernels), start=1):
        shapes[f"conv{i}.weight"] = (out_channels, in_channels, kernel, kernel)
        shapes[f"conv{i}.bias"] = (out_channels,)
        in_channels = out_channels
    fan_in = flatten_size(spec)
    for i, out_features in zip((7, 8, 9), spec.fc_sizes):
        shapes[f"fc{i}.weight"] = (out_features, fan_in)
        shapes[f"fc{i}.bias"] = (out_features,)
        fan_in = out_features
    return shapes


# ── Parameters ───────────────────────────────────────────────────────────────


@dataclass(eq=False)
class NetworkParams:
    """All trainable weights and biases of one backbone.

    Tensors are read-only once wrapped; optimizers return a new instance.
    """

    spec: BackboneSpec
    tensors: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = param_shapes(self.spec)
        if list(self.tensors) != list(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise StructuralError("params", f"tensor names differ (missing={missing}, unexpected={extra})")
        for name, shape in expected.items():
            tensor = self.tensors[name]
            if tensor.shape != shape:
                raise StructuralError(name, f"expected shape {shape}, got {tensor.shape}")
            tensor.flags.writeable = False

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["conv1.weight"].dtype

    @cached_property
    def fingerprint(self) -> str:
        """SHA-256 over names, shapes and raw bytes; identifies a checkpoint lineage."""
        digest = hashlib.sha256()
        for name, tensor in self.tensors.items():
            digest.update(name.encode("utf-8"))
            digest.update(str(tensor.shape).encode("ascii"))
            digest.update(np.ascontiguousarray(tensor).tobytes())
        return digest.hexdigest()

    def replace(self, tensors: dict[str, np.ndarray]) -> NetworkParams:
        return NetworkParams(self.spec, tensors, dict(self.metadata))


def init_params(seed: int, spec: BackboneSpec = DEFAULT_BACKBONE,
                dtype: str | np.dtype = config.DTYPE) -> NetworkParams:
    """Fan-in scaled uniform weights (bound ``sqrt(6 / fan_in)``), zero biases.

    Args:
        seed: Generator seed; equal seeds give identical parameters.
        spec: Network geometry.
        dtype: Floating point type of every tensor.
    """
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = math.sqrt(6.0 / int(np.prod(shape[1:])))
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return NetworkParams(spec, tensors, {"init_seed": seed})


def param_count(params: NetworkParams | BackboneSpec) -> int:
    """Exact number of trainable scalars."""
    if isinstance(params, BackboneSpec):
        return sum(int(np.prod(s)) for s in param_shapes(params).values())
    return sum(int(t.size) for t in params.tensors.values())


def layer_param_counts(spec: BackboneSpec = DEFAULT_BACKBONE) -> dict[str, int]:
    """Weight + bias count per conv / fc layer."""
    counts: dict[str, int] = {}
    for name, shape in param_shapes(spec).items():
        layer = name.split(".")[0]
        counts[layer] = counts.get(layer, 0) + int(np.prod(shape))
    return counts


def layer_summary(spec: BackboneSpec = DEFAULT_BACKBONE) -> list[dict[str, Any]]:
    """Rows of ``(block, layer, output shape, parameters)`` for every layer."""
    counts = layer_param_counts(spec)
    shapes = shape_chain(spec)
    block = 0
    rows = [{"block": 0, "layer": "input", "output": (spec.in_channels, spec.input_size, spec.input_size),
             "params": 0}]
    for step in layer_plan(spec):
        if step.kind in ("conv", "fc"):
            block = int(step.name[-1])
        rows.append({
            "block": block,
            "layer": step.name,
            "output": shapes[step.name],
            "params": counts.get(step.name, 0),
        })
    return rows


# ── Forward / backward ───────────────────────────────────────────────────────


@dataclass
class ForwardTrace:
    """Per-layer caches of one forward call, plus the recorded output shapes."""

    params: NetworkParams
    mode: str
    batched: bool
    caches: list[tuple[LayerStep, Any]] = field(default_factory=list)
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def spatial_sizes(self) -> list[int]:
        """Spatial side after every conv / pool layer, in order."""
        return [self.shapes[s.name][-1] for s, _ in self.caches if s.kind in ("conv", "pool")]


def _conv_index(step: LayerStep) -> int:
    return int(step.name[-1]) - 1


def forward(params: NetworkParams, image: np.ndarray, mode: str = EVAL,
            dropout_seed: int = 0) -> tuple[np.ndarray, ForwardTrace]:
    """Run the backbone on one image (``C×H×W``) or a batch (``N×C×H×W``).

    In eval mode dropout is the identity.  In train mode each dropout layer
    draws its mask from one generator seeded with *dropout_seed*, so the
    forward pass is a pure function of ``(params, image, dropout_seed)``.

    Returns:
        ``(embedding, trace)`` where the embedding is ``(D,)`` for a single
        image and ``(N, D)`` for a batch.

    Raises:
        StructuralError: If the input or any layer output disagrees with the
            shape chain of ``params.spec``.
    """
    if mode not in (TRAIN, EVAL):
        raise ValueError(f"mode must be {TRAIN!r} or {EVAL!r}, got {mode!r}")
    spec = params.spec
    batched = image.ndim == 4
    x = image if batched else image[None]
    expected_input = (spec.in_channels, spec.input_size, spec.input_size)
    if x.ndim != 4 or x.shape[1:] != expected_input:
        raise StructuralError("input", f"expected {expected_input}, got {image.shape}")
    x = x.astype(params.dtype, copy=False)

    chain = shape_chain(spec)
    trace = ForwardTrace(params, mode, batched)
    rng = np.random.default_rng(dropout_seed)
    train = mode == TRAIN

    for step in layer_plan(spec):
        try:
            if step.kind == "conv":
                i = _conv_index(step)
                x, cache = layers.conv_forward(x, params[f"{step.name}.weight"], params[f"{step.name}.bias"],
                                               pad=spec.conv_pads[i])
            elif step.kind == "relu":
                x, cache = layers.relu_forward(x)
            elif step.kind == "lrn":
                x, cache = layers.lrn_forward(x, spec.lrn_size, spec.lrn_alpha, spec.lrn_beta, spec.lrn_k)
            elif step.kind == "pool":
                x, cache = layers.maxpool_forward(x, spec.pool_size, spec.pool_stride)
            elif step.kind == "dropout":
                x, cache = layers.dropout_forward(x, step.p, train, rng)
            elif step.kind == "flatten":
                cache = x.shape
                x = x.reshape(x.shape[0], -1)
            else:
                x, cache = layers.fc_forward(x, params[f"{step.name}.weight"], params[f"{step.name}.bias"])
        except ValueError as exc:
            raise StructuralError(step.name, str(exc)) from exc

        if x.shape[1:] != chain[step.name]:
            raise StructuralError(step.name, f"expected {chain[step.name]}, got {x.shape[1:]}")
        trace.shapes[step.name] = tuple(x.shape[1:])
        trace.caches.append((step, cache))

    return (x if batched else x[0]), trace


def backward(trace: ForwardTrace, output_gradient: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of ``sum(embedding * output_gradient)`` w.r.t. every parameter.

    Train-mode traces reuse the dropout masks drawn during the forward call.

    Raises:
        StructuralError: If *output_gradient* does not match the traced output
            or the trace does not cover the full network.
    """
    params = trace.params
    expected = len(layer_plan(params.spec))
    if len(trace.caches) != expected:
        raise StructuralError("trace", f"trace holds {len(trace.caches)} layers, network has {expected}")

    grad = np.asarray(output_gradient, dtype=params.dtype)
    if not trace.batched:
        grad = grad[None]
    last_step, last_cache = trace.caches[-1]
    batch = last_cache[0].shape[0]
    if grad.shape != (batch, params.spec.embedding_dim):
        raise StructuralError("output", f"gradient shape {np.shape(output_gradient)} does not match the embedding")

    grads: dict[str, np.ndarray] = {}
    for step, cache in reversed(trace.caches):
        if step.kind == "conv":
            grad, dw, db = layers.conv_backward(grad, cache)
            grads[f"{step.name}.weight"], grads[f"{step.name}.bias"] = dw, db
        elif step.kind == "relu":
            grad = layers.relu_backward(grad, cache)
        elif step.kind == "lrn":
            grad = layers.lrn_backward(grad, cache)
        elif step.kind == "pool":
            grad = layers.maxpool_backward(grad, cache)
        elif step.kind == "dropout":
            grad = layers.dropout_backward(grad, cache)
        elif step.kind == "flatten":
            grad = grad.reshape(cache)
        else:
            grad, dw, db = layers.fc_backward(grad, cache)
            grads[f"{step.name}.weight"], grads[f"{step.name}.bias"] = dw, db

    return {name: grads[name] for name in params}


def embed(params: NetworkParams, images: np.ndarray, batch_size: int = config.EVAL_BATCH_SIZE) -> np.ndarray:
    """Eval-mode embeddings of an ``N×C×H×W`` stack, computed in chunks."""
    chunks = [forward(params, images[i:i + batch_size], EVAL)[0] for i in range(0, len(images), batch_size)]
    if not chunks:
        return np.zeros((0, params.spec.embedding_dim), dtype=params.dtype)
    return np.concatenate(chunks)


# ── Checkpoints ──────────────────────────────────────────────────────────────


def save_checkpoint(params: NetworkParams, path: Path, sidecar: Optional[dict] = None) -> Path:
    """Write *params* to an ``.npz`` archive of named tensors.

    The archive also stores the format version, the network spec and the
    pixel normalization.  When *sidecar* is given it is written as
    ``<path>.json`` next to the archive.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": config.CHECKPOINT_FORMAT_VERSION,
        "spec": params.spec.to_dict(),
        "pixel_normalization": config.PIXEL_NORMALIZATION,
        "metadata": params.metadata,
    }
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True)), **params.tensors}
    # Same layout as np.savez, with fixed entry timestamps so reruns write identical bytes.
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name, array in arrays.items():
            entry = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with archive.open(entry, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(array), allow_pickle=False)
    if sidecar is not None:
        write_json(path.with_suffix(".json"), sidecar)
    logger.info("Saved checkpoint %s", path)
    return path


def load_checkpoint(path: Path) -> NetworkParams:
    """Read a checkpoint written by ``save_checkpoint``; round-trips bit-exactly.

    Raises:
        StructuralError: If the archive is missing, has an unknown format
            version, or its tensors do not match its spec.
    """
    path = Path(path)
    if not path.is_file():
        raise StructuralError("checkpoint", f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["__header__"]))
        if header.get("format_version") != config.CHECKPOINT_FORMAT_VERSION:
            raise StructuralError("checkpoint", f"unsupported format version {header.get('format_version')}")
        spec = BackboneSpec.from_dict(header["spec"])
        tensors = {name: archive[name].copy() for name in param_shapes(spec) if name in archive.files}
    return NetworkParams(spec, tensors, header.get("metadata", {}))


def load_sidecar(path: Path) -> dict:
    sidecar = Path(path).with_suffix(".json")
    return read_json(sidecar) if sidecar.is_file() else {}
