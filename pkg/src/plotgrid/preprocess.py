"""Deterministic image normalization: center square crop, bilinear resize to a
fixed side, and class-imbalance filtering of the species catalog.

All operations are pure functions of their inputs. The resize kernel is plain
bilinear with half-pixel-centered sampling so every output value can be
recomputed by hand; no antialiasing, channels independent.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .core import ImageRecord, SpeciesCatalog
from .shards import load_image_shard, pack_image_shard, shard_paths  # noqa: F401

DEFAULT_SIDE = 128
DEFAULT_MIN_IMAGES = 100


def crop_square(pixels: np.ndarray) -> np.ndarray:
    """Center square crop: side = min(H, W), offsets floor((H-s)/2), floor((W-s)/2)."""
    h, w = pixels.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return pixels[top : top + side, left : left + side]


def resize_bilinear_array(pixels: np.ndarray, side: int) -> np.ndarray:
    """Bilinear resize of a square uint8 image with half-pixel-centered sampling.

    Source coordinate of output pixel i is (i + 0.5) * in/out - 0.5, clamped to
    the valid range; values interpolate in float64 and round half up.
    """
    h, w = pixels.shape[:2]
    if h != w:
        raise ValueError(f"resize needs a square input, got {h}x{w}")
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    if h == side:
        return pixels.copy()

    src = np.clip((np.arange(side) + 0.5) * (h / side) - 0.5, 0.0, h - 1.0)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, h - 1)
    frac = src - lo

    values = pixels.astype(np.float64)
    rows = values[lo] * (1.0 - frac)[:, None, None] + values[hi] * frac[:, None, None]
    out = rows[:, lo] * (1.0 - frac)[None, :, None] + rows[:, hi] * frac[None, :, None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def center_square_crop(record: ImageRecord) -> ImageRecord:
    return ImageRecord(
        image_id=record.image_id,
        pixels=crop_square(record.pixels).copy(),
        species=record.species,
    )


def resize_bilinear(record: ImageRecord, side: int) -> ImageRecord:
    return ImageRecord(
        image_id=record.image_id,
        pixels=resize_bilinear_array(record.pixels, side),
        species=record.species,
    )


def process_image(record: ImageRecord, side: int = DEFAULT_SIDE) -> ImageRecord:
    """Crop to a centered square and resize; the output is exactly side x side."""
    return resize_bilinear(center_square_crop(record), side)


def filter_min_images(catalog: SpeciesCatalog, min_count: int) -> SpeciesCatalog:
    """Retain species with at least min_count images; indices re-compact ascending."""
    if min_count < 0:
        raise ValueError(f"min_count must be >= 0, got {min_count}")
    return SpeciesCatalog({sid: n for sid, n in catalog if n >= min_count})


def load_png(path: Path | str, species: int | None = None) -> ImageRecord:
    """Decode one PNG into a record; the id is the file stem."""
    path = Path(path)
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return ImageRecord(image_id=path.stem, pixels=pixels, species=species)


def save_png(path: Path | str, pixels: np.ndarray) -> None:
    Image.fromarray(pixels, mode="RGB").save(Path(path), format="PNG")


def iter_input_images(path: Path | str) -> Iterable[ImageRecord]:
    """Yield records from a directory of PNGs or of IMG1 shards, or one shard.

    PNGs sitting in a subdirectory whose name is a bare integer are labeled
    with that integer as their species id; everything else is unlabeled.
    Iteration order is sorted paths, so it is deterministic.
    """
    path = Path(path)
    if path.is_file():
        yield from load_image_shard(path)
        return
    if not path.is_dir():
        raise FileNotFoundError(f"input path not found: {path}")
    shards = shard_paths(path, ".img1")
    pngs = sorted(path.rglob("*.png"))
    if not shards and not pngs:
        raise FileNotFoundError(f"no .img1 shards or .png images under {path}")
    for shard in shards:
        yield from load_image_shard(shard)
    for png in pngs:
        parent = png.parent.name
        species = int(parent) if parent.isdigit() else None
        yield load_png(png, species=species)
