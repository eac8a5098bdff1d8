# Small shared helpers: deterministic seed derivation, atomic file writes,
# and the whitespace token count used for transcript length accounting.

from __future__ import annotations

import hashlib
import os
from pathlib import Path


def derive_seed(*parts) -> int:
    """Derive a reproducible 63-bit seed from any hashable parts.

    All randomness in the pipeline flows through named seeds; per-task seeds
    are derived from a master seed plus stable identifiers so that reruns are
    bit-identical and independent of worker scheduling.
    """
    payload = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def count_tokens(text: str) -> int:
    """Whitespace token count; the fixed length measure for transcripts."""
    return len(text.split())


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: str | Path, content: str) -> None:
    """Write content to path via a temp file + rename so readers never see
    a partially written artifact. Newlines are always '\\n'."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def normalize_ws(text: str) -> str:
    """Collapse all whitespace runs to single spaces (for quote matching)."""
    return " ".join(text.split())
