"""Binary shard formats: IMG1 for raw images, EMB1 for embedding vectors.

Both are little-endian and self-describing. Readers validate the magic, every
record header, and that the file is consumed exactly, so a shard either
round-trips bit-exactly or fails loudly. Writers go through a temp file and
rename, so a failed write never leaves a partial shard behind.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ImageRecord
from .features import KIND_DIMS, EmbeddingRecord

IMAGE_MAGIC = b"IMG1"
EMBEDDING_MAGIC = b"EMB1"

_KIND_TO_BYTE = {"dct64": 0, "cls768": 1, "tokens_raw": 2}
_BYTE_TO_KIND = {v: k for k, v in _KIND_TO_BYTE.items()}


class ShardError(ValueError):
    """Malformed or truncated shard file."""


class _Reader:
    """Cursor over shard bytes that raises ShardError on truncation."""

    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ShardError(f"{self.path}: truncated (need {n} bytes at offset {self.pos})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise ShardError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _pack_record_header(image_id: str, species: int | None) -> bytes:
    id_bytes = image_id.encode("utf-8")
    if len(id_bytes) > 0xFFFF:
        raise ShardError(f"record id too long: {image_id[:32]!r}...")
    out = struct.pack("<H", len(id_bytes)) + id_bytes
    if species is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<BQ", 1, species)
    return out


def _read_record_header(r: _Reader) -> tuple[str, int | None]:
    (id_len,) = r.unpack("<H")
    image_id = r.take(id_len).decode("utf-8")
    (has_label,) = r.unpack("<B")
    if has_label not in (0, 1):
        raise ShardError(f"{r.path}: bad has_label byte {has_label} for {image_id!r}")
    species = r.unpack("<Q")[0] if has_label else None
    return image_id, species


def _write_atomic(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def pack_image_shard(path: Path | str, records: Sequence[ImageRecord]) -> None:
    """Write records as an IMG1 shard. Refuses an empty list (no file created)."""
    if not records:
        raise ShardError("refusing to write an empty image shard")
    path = Path(path)
    parts = [IMAGE_MAGIC, struct.pack("<I", len(records))]
    for rec in records:
        h, w, _ = rec.pixels.shape
        if h > 0xFFFF or w > 0xFFFF:
            raise ShardError(f"record {rec.image_id!r}: image too large for shard format")
        parts.append(_pack_record_header(rec.image_id, rec.species))
        parts.append(struct.pack("<HH", h, w))
        parts.append(np.ascontiguousarray(rec.pixels).tobytes())
    _write_atomic(path, b"".join(parts))


def load_image_shard(path: Path | str) -> list[ImageRecord]:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != IMAGE_MAGIC:
        raise ShardError(f"{path}: bad magic, not an IMG1 shard")
    (count,) = r.unpack("<I")
    records = []
    for _ in range(count):
        image_id, species = _read_record_header(r)
        h, w = r.unpack("<HH")
        if h < 1 or w < 1:
            raise ShardError(f"{path}: record {image_id!r} has empty dimensions {h}x{w}")
        pixels = np.frombuffer(r.take(h * w * 3), dtype=np.uint8).reshape(h, w, 3).copy()
        records.append(ImageRecord(image_id=image_id, pixels=pixels, species=species))
    r.finish()
    return records


def pack_embedding_shard(path: Path | str, records: Sequence[EmbeddingRecord]) -> None:
    """Write records as an EMB1 shard. All records must share one kind."""
    if not records:
        raise ShardError("refusing to write an empty embedding shard")
    kind = records[0].kind
    if any(rec.kind != kind for rec in records):
        raise ShardError("mixed embedding kinds in one shard")
    dim = KIND_DIMS[kind]
    path = Path(path)
    parts = [EMBEDDING_MAGIC, struct.pack("<IIB", len(records), dim, _KIND_TO_BYTE[kind])]
    for rec in records:
        parts.append(_pack_record_header(rec.image_id, rec.species))
        parts.append(np.asarray(rec.vector, dtype="<f4").tobytes())
    _write_atomic(path, b"".join(parts))


def _parse_embedding_shard(path: Path) -> tuple[str, int, list[EmbeddingRecord]]:
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != EMBEDDING_MAGIC:
        raise ShardError(f"{path}: bad magic, not an EMB1 shard")
    count, dim, kind_byte = r.unpack("<IIB")
    kind = _BYTE_TO_KIND.get(kind_byte)
    if kind is None:
        raise ShardError(f"{path}: unknown kind byte {kind_byte}")
    if dim != KIND_DIMS[kind]:
        raise ShardError(f"{path}: kind {kind} requires dim {KIND_DIMS[kind]}, header says {dim}")
    records = []
    for _ in range(count):
        image_id, species = _read_record_header(r)
        vector = np.frombuffer(r.take(4 * dim), dtype="<f4").astype(np.float32)
        if not np.all(np.isfinite(vector)):
            raise ShardError(f"{path}: non-finite values in record {image_id!r}")
        records.append(EmbeddingRecord(image_id=image_id, kind=kind, vector=vector, species=species))
    r.finish()
    return kind, dim, records


def load_embedding_shard(path: Path | str) -> list[EmbeddingRecord]:
    return _parse_embedding_shard(Path(path))[2]


def validate_embedding_shard(path: Path | str) -> tuple[str, int, int]:
    """Fully parse an EMB1 shard; returns (kind, dim, record_count).

    This is the conformance check external exporters are validated against.
    """
    kind, dim, records = _parse_embedding_shard(Path(path))
    return kind, dim, len(records)


def shard_paths(directory: Path | str, suffix: str) -> list[Path]:
    """Shard files under a directory, sorted by name for deterministic order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(directory.glob(f"*{suffix}"))
