"""Small helpers for the versioned little-endian binary artifacts."""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

from citysplat import ARTIFACT_VERSION


class FormatError(ValueError):
    """Raised when a binary artifact has the wrong magic or version."""


def pack_header(magic: bytes, *counts: int) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    return magic + struct.pack("<I", ARTIFACT_VERSION) + struct.pack(f"<{len(counts)}Q", *counts)


def unpack_header(buf: bytes, magic: bytes, n_counts: int) -> tuple[tuple[int, ...], int]:
    """Return the header counts and the byte offset of the payload."""
    size = 12 + 8 * n_counts
    if len(buf) < size or buf[:8] != magic:
        raise FormatError(f"not a {magic.decode(errors='replace').strip()} file")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != ARTIFACT_VERSION:
        raise FormatError(f"artifact version {version} != supported {ARTIFACT_VERSION}")
    counts = struct.unpack_from(f"<{n_counts}Q", buf, 12)
    return counts, size


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
