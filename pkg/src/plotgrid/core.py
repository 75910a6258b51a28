"""Species catalog, label encoding, and the record types shared by every stage."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np


@dataclass(frozen=True)
class ImageRecord:
    """One image keyed by id. `species` is set only for training records."""

    image_id: str
    pixels: np.ndarray  # H x W x 3, uint8
    species: Optional[int] = None

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError(
                f"record {self.image_id!r}: pixels must be HxWx3 uint8, "
                f"got shape {getattr(p, 'shape', None)} dtype {getattr(p, 'dtype', None)}"
            )
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"record {self.image_id!r}: empty image")
        if self.species is not None and self.species < 0:
            raise ValueError(f"record {self.image_id!r}: negative species id {self.species}")


@dataclass(frozen=True)
class PlotLabelSet:
    """Ground-truth species set for one plot image."""

    plot_id: str
    species: frozenset[int]

    def __post_init__(self):
        if not self.plot_id:
            raise ValueError("plot_id must be non-empty")
        if any(s < 0 for s in self.species):
            raise ValueError(f"plot {self.plot_id!r}: negative species id")


class SpeciesCatalog:
    """Immutable bijection between species ids and contiguous class indices.

    Class indices are assigned in ascending species id, so a catalog built from
    the same multiset of records is identical regardless of input order.
    """

    def __init__(self, counts: dict[int, int]):
        for sid, n in counts.items():
            if sid < 0:
                raise ValueError(f"negative species id {sid}")
            if n < 1:
                raise ValueError(f"species {sid}: image count must be >= 1, got {n}")
        self._entries: tuple[tuple[int, int], ...] = tuple(sorted(counts.items()))
        self._index: dict[int, int] = {sid: i for i, (sid, _) in enumerate(self._entries)}

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __contains__(self, species_id: int) -> bool:
        return species_id in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, SpeciesCatalog) and self._entries == other._entries

    def __repr__(self) -> str:
        return f"SpeciesCatalog({len(self._entries)} species)"

    @property
    def species_ids(self) -> tuple[int, ...]:
        return tuple(sid for sid, _ in self._entries)

    def image_count(self, species_id: int) -> int:
        return self._entries[self.encode(species_id)][1]

    def encode(self, species_id: int) -> int:
        """Map a species id to its class index in [0, C)."""
        try:
            return self._index[species_id]
        except KeyError:
            raise KeyError(f"species {species_id} not in catalog") from None

    def decode(self, index: int) -> int:
        """Inverse of encode."""
        if not 0 <= index < len(self._entries):
            raise IndexError(f"class index {index} out of range [0, {len(self._entries)})")
        return self._entries[index][0]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["species_id", "image_count"])
        for sid, n in self._entries:
            writer.writerow([sid, n])
        return buf.getvalue()

    def save_csv(self, path: Path | str) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8", newline="")

    @classmethod
    def from_csv_text(cls, text: str) -> "SpeciesCatalog":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["species_id", "image_count"]:
            raise ValueError(f"bad catalog header: {header!r}")
        counts: dict[int, int] = {}
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"bad catalog row: {row!r}")
            sid, n = int(row[0]), int(row[1])
            if sid in counts:
                raise ValueError(f"duplicate species {sid} in catalog")
            counts[sid] = n
        return cls(counts)

    @classmethod
    def load_csv(cls, path: Path | str) -> "SpeciesCatalog":
        return cls.from_csv_text(Path(path).read_text(encoding="utf-8"))


def build_catalog(records: Iterable[ImageRecord]) -> SpeciesCatalog:
    """Count species occurrences over labeled records and build the catalog.

    Rejects any record without a species label, naming the record id.
    """
    counts: dict[int, int] = {}
    for rec in records:
        if rec.species is None:
            raise ValueError(f"record {rec.image_id!r} has no species label")
        counts[rec.species] = counts.get(rec.species, 0) + 1
    return SpeciesCatalog(counts)
