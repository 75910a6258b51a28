"""Multi-label prediction for plot images: full-image scoring, or an N x N
grid of tiles aggregated by argmax-per-tile or top-K/top-L.

Plot images are tiled at their original resolution; only individual tiles get
cropped and resized before embedding. Ties anywhere break toward the lower
class index, and final rankings sort by descending score with species id as
the deterministic tie-breaker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import LinearModel, predict_log_probs
from .core import SpeciesCatalog
from .features import ToyEmbedder
from .preprocess import crop_square, resize_bilinear_array

COLUMN_SUM_TOL = 1e-5

MODES = ("full_image", "grid_argmax", "grid_topk")


@dataclass(frozen=True)
class InferenceConfig:
    grid_n: int = 3
    top_k: int = 10
    top_l: int = 5
    mode: str = "grid_argmax"
    # False pools the per-tile top-K candidates first and cuts to the top-L
    # once, globally. Default applies the top-L cut inside each tile.
    per_tile_top_l: bool = True

    def __post_init__(self):
        if self.grid_n < 1:
            raise ValueError(f"grid_n must be >= 1, got {self.grid_n}")
        if self.top_k < 1 or self.top_l < 1:
            raise ValueError("top_k and top_l must be >= 1")
        if self.top_l > self.top_k:
            raise ValueError(f"top_l ({self.top_l}) cannot exceed top_k ({self.top_k})")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def num_tiles(self) -> int:
        return self.grid_n * self.grid_n


@dataclass(frozen=True)
class PredictionSet:
    """Ranked, deduplicated species predictions for one plot."""

    plot_id: str
    ranked: tuple[tuple[int, float], ...]

    def __post_init__(self):
        ids = [sid for sid, _ in self.ranked]
        if len(ids) != len(set(ids)):
            raise ValueError(f"plot {self.plot_id!r}: duplicate species in prediction set")
        scores = [score for _, score in self.ranked]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError(f"plot {self.plot_id!r}: scores not nonincreasing")

    @property
    def species(self) -> tuple[int, ...]:
        return tuple(sid for sid, _ in self.ranked)

    @property
    def scores(self) -> tuple[float, ...]:
        return tuple(score for _, score in self.ranked)


def tile_grid(pixels: np.ndarray, n: int) -> list[np.ndarray]:
    """Split an image into n*n tiles that exactly partition it, row-major.

    Tile (r, c) spans rows [floor(r*H/n), floor((r+1)*H/n)) and the analogous
    columns, so remainder pixels land in later tiles.
    """
    h, w = pixels.shape[:2]
    if n < 1:
        raise ValueError(f"grid size must be >= 1, got {n}")
    if h < n or w < n:
        raise ValueError(f"image {h}x{w} smaller than {n}x{n} grid")
    row_edges = [r * h // n for r in range(n + 1)]
    col_edges = [c * w // n for c in range(n + 1)]
    return [
        pixels[row_edges[r] : row_edges[r + 1], col_edges[c] : col_edges[c + 1]]
        for r in range(n)
        for c in range(n)
    ]


def _tile_probabilities(model: LinearModel, tile: np.ndarray, embedder: ToyEmbedder) -> np.ndarray:
    prepared = resize_bilinear_array(crop_square(tile), ToyEmbedder.SIDE)
    vector = embedder.feature(prepared, model.input_kind)
    return np.exp(predict_log_probs(model, vector))


def score_tiles(
    model: LinearModel, tiles: Sequence[np.ndarray], embedder: ToyEmbedder
) -> np.ndarray:
    """Probability matrix P with P[i, j] = probability of class i in tile j."""
    if not tiles:
        raise ValueError("no tiles to score")
    return np.column_stack([_tile_probabilities(model, t, embedder) for t in tiles])


def _check_tile_probs(probs: np.ndarray) -> None:
    if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
        raise ValueError(f"probability matrix must be 2-D and non-empty, got {probs.shape}")
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValueError("probabilities outside [0, 1]")
    sums = probs.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > COLUMN_SUM_TOL):
        raise ValueError(f"tile probability columns must sum to 1, got sums {sums}")


def _ranked_dedup(pairs: list[tuple[int, float]]) -> tuple[tuple[int, float], ...]:
    """Sort candidates by descending score (species id breaks ties), keep the
    first occurrence of each species."""
    ordered = sorted(pairs, key=lambda p: (-p[1], p[0]))
    return dedup_preserve_order(ordered)


def dedup_preserve_order(
    pairs: Sequence[tuple[int, float]],
) -> tuple[tuple[int, float], ...]:
    """Drop repeated species, keeping the first (and highest-scored) occurrence.

    The input must already be sorted by nonincreasing score.
    """
    scores = [score for _, score in pairs]
    if any(b > a for a, b in zip(scores, scores[1:])):
        raise ValueError("dedup input must be sorted by nonincreasing score")
    seen: set[int] = set()
    out = []
    for sid, score in pairs:
        if sid not in seen:
            seen.add(sid)
            out.append((sid, float(score)))
    return tuple(out)


def _top_indices(column: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ordered by (-value, index)."""
    order = np.lexsort((np.arange(column.shape[0]), -column))
    return order[:k]


def aggregate_argmax(probs: np.ndarray, catalog: SpeciesCatalog, plot_id: str) -> PredictionSet:
    """One winner per tile: argmax class with its probability, then rank and dedup."""
    _check_tile_probs(probs)
    pairs = []
    for j in range(probs.shape[1]):
        winner = int(np.argmax(probs[:, j]))  # ties resolve to the lower index
        pairs.append((catalog.decode(winner), float(probs[winner, j])))
    return PredictionSet(plot_id=plot_id, ranked=_ranked_dedup(pairs))


def topk_candidates(
    probs: np.ndarray, config: InferenceConfig, catalog: SpeciesCatalog
) -> list[tuple[int, float]]:
    """Pre-dedup candidate list for top-K aggregation, tile by tile.

    Each tile contributes its top-K classes cut to the top-L, so a 3x3 grid
    with L=5 yields 45 candidates. With per_tile_top_l=False the L cut is
    skipped here and applied globally by aggregate_topk instead.
    """
    _check_tile_probs(probs)
    if config.top_k > probs.shape[0]:
        raise ValueError(f"top_k {config.top_k} exceeds class count {probs.shape[0]}")
    per_tile = config.top_l if config.per_tile_top_l else config.top_k
    candidates = []
    for j in range(probs.shape[1]):
        column = probs[:, j]
        kept = _top_indices(column, config.top_k)[:per_tile]
        candidates.extend((catalog.decode(int(i)), float(column[i])) for i in kept)
    return candidates


def aggregate_topk(
    probs: np.ndarray, config: InferenceConfig, catalog: SpeciesCatalog, plot_id: str
) -> PredictionSet:
    """Union the per-tile candidates, rank globally, dedup keeping the best."""
    ranked = _ranked_dedup(topk_candidates(probs, config, catalog))
    if not config.per_tile_top_l:
        ranked = ranked[: config.top_l]
    return PredictionSet(plot_id=plot_id, ranked=ranked)


def predict_full_image(
    model: LinearModel,
    pixels: np.ndarray,
    embedder: ToyEmbedder,
    top_l: int,
    plot_id: str,
) -> PredictionSet:
    """Score the whole image once and keep the top_l most probable species."""
    if top_l < 1 or top_l > model.num_classes:
        raise ValueError(f"top_l {top_l} out of range [1, {model.num_classes}]")
    probs = _tile_probabilities(model, pixels, embedder)
    kept = _top_indices(probs, top_l)
    ranked = tuple((model.catalog.decode(int(i)), float(probs[i])) for i in kept)
    return PredictionSet(plot_id=plot_id, ranked=ranked)


def predict_plot(
    model: LinearModel,
    pixels: np.ndarray,
    embedder: ToyEmbedder,
    config: InferenceConfig,
    plot_id: str,
) -> PredictionSet:
    """Dispatch one plot image through the configured inference mode."""
    if config.mode == "full_image":
        return predict_full_image(model, pixels, embedder, config.top_l, plot_id)
    tiles = tile_grid(pixels, config.grid_n)
    probs = score_tiles(model, tiles, embedder)
    if config.mode == "grid_argmax":
        return aggregate_argmax(probs, model.catalog, plot_id)
    return aggregate_topk(probs, config, model.catalog, plot_id)


def write_predictions(path: Path | str, predictions: Sequence[PredictionSet]) -> None:
    """One JSON object per line: plot_id, species ids, and scores, rank order."""
    lines = []
    for pred in predictions:
        lines.append(
            json.dumps(
                {
                    "plot_id": pred.plot_id,
                    "species": list(pred.species),
                    "scores": [float(s) for s in pred.scores],
                }
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_predictions(path: Path | str) -> list[PredictionSet]:
    """Parse a predictions JSONL file, reporting bad lines by number."""
    predictions = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            ranked = tuple(zip((int(s) for s in obj["species"]), map(float, obj["scores"])))
            if len(obj["species"]) != len(obj["scores"]):
                raise ValueError("species/scores length mismatch")
            predictions.append(PredictionSet(plot_id=str(obj["plot_id"]), ranked=ranked))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: bad prediction on line {lineno}: {exc}") from exc
    return predictions
