"""
Siamleaf — Error Types.

Every failure the library reports on purpose derives from ``SiamleafError``
and carries the process exit code the CLI should use.  Each class also
inherits the builtin it specializes, so ``except ValueError`` keeps working
for callers that do not know about this module.
"""

from __future__ import annotations

EXIT_INPUT: int = 2
EXIT_RUNTIME: int = 3


class SiamleafError(Exception):
    """Base class for all Siamleaf errors."""

    exit_code: int = EXIT_RUNTIME


# ── Input / validation errors (exit 2) ───────────────────────────────────────


class IngestionError(SiamleafError, ValueError):
    """An image folder or manifest cannot be turned into a dataset."""

    exit_code = EXIT_INPUT


class DecodeError(SiamleafError, ValueError):
    """Encoded image bytes could not be decoded."""

    exit_code = EXIT_INPUT

    def __init__(self, path: str | None, reason: str) -> None:
        self.path = path
        super().__init__(f"cannot decode image {path or '<bytes>'}: {reason}")


class SplitError(SiamleafError, ValueError):
    """A split request cannot be applied to a manifest."""

    exit_code = EXIT_INPUT


class SamplingError(SiamleafError, ValueError):
    """Pairs cannot be drawn from the given manifest."""

    exit_code = EXIT_INPUT


class ContractError(SiamleafError, ValueError):
    """An argument violates a documented precondition."""

    exit_code = EXIT_INPUT


class ConfigError(SiamleafError, ValueError):
    """An experiment / training config file failed validation."""

    exit_code = EXIT_INPUT

    def __init__(self, message: str, fields: list[str] | None = None) -> None:
        self.fields = list(fields or [])
        if self.fields:
            message = f"{message}: {', '.join(self.fields)}"
        super().__init__(message)


class GalleryError(SiamleafError, ValueError):
    """A support gallery cannot be built from the training split."""

    exit_code = EXIT_INPUT


class ProvenanceError(SiamleafError, ValueError):
    """A gallery and a parameter set come from different checkpoints."""

    exit_code = EXIT_INPUT


class ContaminationError(SiamleafError, ValueError):
    """Evaluation samples overlap with the support images."""

    exit_code = EXIT_INPUT


# ── Runtime errors (exit 3) ──────────────────────────────────────────────────


class StructuralError(SiamleafError, RuntimeError):
    """A tensor shape disagrees with the network layout."""

    exit_code = EXIT_RUNTIME

    def __init__(self, layer: str, message: str) -> None:
        self.layer = layer
        super().__init__(f"[{layer}] {message}")


class DimensionError(SiamleafError, ValueError):
    """Two embeddings of different lengths were compared."""

    exit_code = EXIT_RUNTIME


class TrainingError(SiamleafError, RuntimeError):
    """Training diverged or otherwise cannot continue."""

    exit_code = EXIT_RUNTIME

    def __init__(self, message: str, step: int | None = None,
                 batch: list[tuple[str, str, int]] | None = None) -> None:
        self.step = step
        self.batch = list(batch or [])
        super().__init__(message)
