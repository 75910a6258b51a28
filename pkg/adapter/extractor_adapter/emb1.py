"""Minimal EMB1 shard writer.

Layout (little-endian): magic "EMB1", u32 record count, u32 dim, u8 kind
byte, then per record a u16 id length, the UTF-8 id, a label flag byte
(0 or 1), a u64 species id when the flag is 1, and dim float32 values.
"""

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
KIND_BYTES = {"cls768": 1, "tokens_raw": 2}
KIND_DIMS = {"cls768": 768, "tokens_raw": 196608}


def pack_record(image_id: str, species: int | None, vector: np.ndarray) -> bytes:
    id_bytes = image_id.encode("utf-8")
    if len(id_bytes) > 0xFFFF:
        raise ValueError(f"record id too long: {image_id[:32]!r}...")
    header = struct.pack("<H", len(id_bytes)) + id_bytes
    header += struct.pack("<BQ", 1, species) if species is not None else struct.pack("<B", 0)
    return header + np.asarray(vector, dtype="<f4").tobytes()


def write_shard(
    path: Path | str,
    kind: str,
    records: list[tuple[str, int | None, np.ndarray]],
) -> None:
    """Write records (in the given order) as one EMB1 shard, atomically."""
    if kind not in KIND_BYTES:
        raise ValueError(f"unknown embedding kind {kind!r}")
    if not records:
        raise ValueError("refusing to write an empty shard")
    dim = KIND_DIMS[kind]
    parts = [MAGIC, struct.pack("<IIB", len(records), dim, KIND_BYTES[kind])]
    for image_id, species, vector in records:
        flat = np.asarray(vector).reshape(-1)
        if flat.shape[0] != dim:
            raise ValueError(f"record {image_id!r}: expected {dim} values, got {flat.shape[0]}")
        if not np.all(np.isfinite(flat)):
            raise ValueError(f"record {image_id!r}: non-finite values")
        parts.append(pack_record(image_id, species, flat))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)
