"""Synthetic benchmark data: striped two-tone textures per species, single
species training images, and collage plot images built from a grid of cells.

Textures are deterministic in (species id, rng stream). Hue, stripe frequency,
and orientation all derive from the species id, so classes stay visually
separable; phase and pixel noise vary per image. Collage cells are rendered at
the same resolution as training images, which means grid tiles that line up
with cells see in-distribution data while a whole-collage downscale does not.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ImageRecord, SpeciesCatalog, build_catalog

DEFAULT_CELL_SIDE = 128

GOLDEN = 0.6180339887498949
PLASTIC = 0.7548776662466927


def species_palette(species_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Two-tone palette for a species: a bright face color and a dark
    counter-color half a hue turn away."""
    hue = (species_id * GOLDEN) % 1.0
    bright = np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.90))
    dark = np.array(colorsys.hsv_to_rgb((hue + 0.5) % 1.0, 0.70, 0.35))
    return bright, dark


def texture(species_id: int, side: int, rng: np.random.Generator) -> np.ndarray:
    """One striped texture image, uint8 HxWx3.

    Stripe frequency and orientation are fixed per species; the stripe phase
    and additive noise come from the rng, so repeated calls give distinct
    images of the same class.
    """
    if side < 1:
        raise ValueError(f"side must be >= 1, got {side}")
    bright, dark = species_palette(species_id)
    freq = 4.0 + (species_id * 2) % 9
    angle = ((species_id * PLASTIC) % 1.0) * np.pi
    phase = rng.uniform(0.0, 2.0 * np.pi)

    coords = (np.arange(side) + 0.5) / side
    xx, yy = np.meshgrid(coords, coords)
    wave = np.sin(2.0 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
    mix = 0.5 + 0.5 * wave

    pixels = mix[..., None] * bright + (1.0 - mix[..., None]) * dark
    pixels = pixels + rng.normal(0.0, 0.02, size=(side, side, 3))
    return np.clip(np.floor(pixels * 255.0 + 0.5), 0, 255).astype(np.uint8)


def assign_cells(species: Sequence[int], grid_n: int, rng: np.random.Generator) -> list[int]:
    """Spread the chosen species over grid_n**2 cells, each at least once."""
    cells = grid_n * grid_n
    if not species:
        raise ValueError("no species to place")
    if len(set(species)) != len(species):
        raise ValueError("species for a plot must be distinct")
    if len(species) > cells:
        raise ValueError(f"{len(species)} species will not fit in {cells} cells")
    tiled = [species[i % len(species)] for i in range(cells)]
    order = rng.permutation(cells)
    return [tiled[i] for i in order]


def render_plot_image(
    cell_species: Sequence[int],
    grid_n: int,
    rng: np.random.Generator,
    cell_side: int = DEFAULT_CELL_SIDE,
) -> np.ndarray:
    """Assemble a collage from per-cell species assignments, row-major."""
    if len(cell_species) != grid_n * grid_n:
        raise ValueError(f"expected {grid_n * grid_n} cell assignments, got {len(cell_species)}")
    rows = []
    for r in range(grid_n):
        row_cells = [
            texture(cell_species[r * grid_n + c], cell_side, rng) for c in range(grid_n)
        ]
        rows.append(np.concatenate(row_cells, axis=1))
    return np.concatenate(rows, axis=0)


@dataclass(frozen=True)
class Benchmark:
    training: tuple[ImageRecord, ...]
    plots: tuple[ImageRecord, ...]
    truth: dict[str, frozenset[int]]
    catalog: SpeciesCatalog


def make_benchmark(
    num_species: int,
    images_per_species: int,
    num_plots: int,
    species_per_plot: int,
    grid_n: int,
    seed: int,
    cell_side: int = DEFAULT_CELL_SIDE,
) -> Benchmark:
    """Build a full labeled benchmark from one seed.

    Species ids are spaced out (100, 103, 106, ...) so nothing downstream can
    get away with treating ids as dense indices.
    """
    if num_species < 1 or images_per_species < 1 or num_plots < 1:
        raise ValueError("species, image, and plot counts must all be >= 1")
    if species_per_plot < 1 or species_per_plot > num_species:
        raise ValueError(
            f"species_per_plot must be in [1, {num_species}], got {species_per_plot}"
        )
    if species_per_plot > grid_n * grid_n:
        raise ValueError("species_per_plot cannot exceed the cell count")

    species_ids = [100 + 3 * i for i in range(num_species)]
    rng = np.random.default_rng(seed)

    training = []
    for sid in species_ids:
        for j in range(images_per_species):
            training.append(
                ImageRecord(
                    image_id=f"train_{sid}_{j:04d}",
                    pixels=texture(sid, cell_side, rng),
                    species=sid,
                )
            )

    plots = []
    truth: dict[str, frozenset[int]] = {}
    for p in range(num_plots):
        chosen = sorted(
            int(s) for s in rng.choice(species_ids, size=species_per_plot, replace=False)
        )
        cells = assign_cells(chosen, grid_n, rng)
        plot_id = f"plot_{p:03d}"
        plots.append(
            ImageRecord(
                image_id=plot_id,
                pixels=render_plot_image(cells, grid_n, rng, cell_side),
                species=None,
            )
        )
        truth[plot_id] = frozenset(chosen)

    return Benchmark(
        training=tuple(training),
        plots=tuple(plots),
        truth=truth,
        catalog=build_catalog(training),
    )
