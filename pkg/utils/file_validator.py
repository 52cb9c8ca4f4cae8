"""
Siamleaf — File Validator Utilities.

Extension checking and binary signature (magic-number) validation used when
scanning image folders, so that stray files are skipped before Pillow is asked
to decode them.
"""

from __future__ import annotations

from pathlib import Path
from typing import BinaryIO

from config import ALLOWED_EXTENSIONS

# ── Magic byte signatures for supported formats ──────────────────────────────
_MAGIC_SIGNATURES: dict[str, bytes] = {
    "jpeg": b"\xff\xd8\xff",
    "png": b"\x89PNG\r\n\x1a\n",
}

_MAX_MAGIC_LENGTH: int = max(len(sig) for sig in _MAGIC_SIGNATURES.values())


def validate_extension(filename: str) -> bool:
    """Check that *filename* has an allowed image extension.

    Args:
        filename: The filename to validate (e.g. ``"leaf_001.jpg"``).

    Returns:
        ``True`` if the extension is in the allowed set, ``False`` otherwise.
    """
    if "." not in filename:
        return False
    ext: str = filename.rsplit(".", 1)[1].lower()
    return ext in ALLOWED_EXTENSIONS


def validate_magic_bytes(stream: BinaryIO) -> bool:
    """Verify the binary signature of an image file.

    Args:
        stream: A readable binary stream positioned at the start of the file.

    Returns:
        ``True`` if the stream starts with a JPEG or PNG signature.

    Note:
        The stream position is reset to the beginning after reading.
    """
    header: bytes = stream.read(_MAX_MAGIC_LENGTH)
    stream.seek(0)

    if not header:
        return False
    return any(header.startswith(sig) for sig in _MAGIC_SIGNATURES.values())


def is_image_file(path: Path) -> bool:
    """Return ``True`` when *path* is a regular file that looks like an image.

    Unreadable files count as non-images.
    """
    if not path.is_file() or not validate_extension(path.name):
        return False
    try:
        with path.open("rb") as fh:
            return validate_magic_bytes(fh)
    except OSError:
        return False
