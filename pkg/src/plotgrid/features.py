"""Embedding variants: orthonormal 2-D DCT coefficients, [CLS] vectors, and a
deterministic toy patch-token extractor that stands in for a real ViT.

The toy extractor produces the same shapes as a ViT-B/14 backbone (256 patch
tokens plus one [CLS] vector, 768 dims each) so every downstream contract is
exercised identically whether features come from here or from an external
checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

TOKEN_COUNT = 256  # 16 x 16 patch grid
TOKEN_DIM = 768

# Vector length per embedding kind. "tokens_raw" is the interchange kind used
# by external extractors: the flattened 256x768 patch-token matrix, which this
# module reduces to dct64.
KIND_DIMS = {
    "dct64": 64,
    "cls768": 768,
    "tokens_raw": TOKEN_COUNT * TOKEN_DIM,
}


@dataclass(frozen=True)
class PatchTokenMatrix:
    """Per-patch token matrix (256x768) plus the separate [CLS] vector."""

    tokens: np.ndarray
    cls: np.ndarray

    def __post_init__(self):
        if self.tokens.shape != (TOKEN_COUNT, TOKEN_DIM):
            raise ValueError(f"tokens must be {TOKEN_COUNT}x{TOKEN_DIM}, got {self.tokens.shape}")
        if self.cls.shape != (TOKEN_DIM,):
            raise ValueError(f"cls must have length {TOKEN_DIM}, got {self.cls.shape}")
        if not np.all(np.isfinite(self.tokens)) or not np.all(np.isfinite(self.cls)):
            raise ValueError("non-finite token values")


@dataclass(frozen=True)
class EmbeddingRecord:
    """One image's feature vector, keyed by image id."""

    image_id: str
    kind: str
    vector: np.ndarray
    species: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KIND_DIMS:
            raise ValueError(f"record {self.image_id!r}: unknown kind {self.kind!r}")
        want = KIND_DIMS[self.kind]
        if self.vector.shape != (want,):
            raise ValueError(
                f"record {self.image_id!r}: kind {self.kind} needs length {want}, "
                f"got {self.vector.shape}"
            )
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"record {self.image_id!r}: non-finite vector values")


@lru_cache(maxsize=None)
def _dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis: B[k, m] = s_k * cos(pi*(2m+1)*k / (2n))."""
    m = np.arange(n)
    k = np.arange(n)[:, None]
    basis = np.cos(np.pi * (2 * m + 1) * k / (2 * n))
    basis *= np.sqrt(2.0 / n)
    basis[0] *= np.sqrt(0.5)
    basis.flags.writeable = False
    return basis


def dct2_orthonormal(matrix: np.ndarray) -> np.ndarray:
    """Type-II DCT with orthonormal scaling, applied along rows then columns.

    Orthonormality gives Parseval (Frobenius norm preserved) and makes
    `idct2_orthonormal` an exact inverse up to float64 rounding.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"need a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite input to dct2")
    rows, cols = m.shape
    return _dct_basis(rows) @ m @ _dct_basis(cols).T


def idct2_orthonormal(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct2_orthonormal (DCT-III with matching scaling)."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise ValueError(f"need a non-empty 2-D matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("non-finite input to idct2")
    rows, cols = c.shape
    return _dct_basis(rows).T @ c @ _dct_basis(cols)


def dct_coefficients(patch: PatchTokenMatrix, filter_size: int = 8) -> np.ndarray:
    """Low-frequency DCT block of the token matrix, flattened row-major.

    Transforms the full 256x768 matrix, keeps the top-left
    filter_size x filter_size block, and flattens it (64 values by default).
    """
    if filter_size < 1 or filter_size > min(patch.tokens.shape):
        raise ValueError(f"filter_size {filter_size} out of range for {patch.tokens.shape}")
    coeffs = dct2_orthonormal(patch.tokens)
    return coeffs[:filter_size, :filter_size].reshape(-1).copy()


def cls_embedding(patch: PatchTokenMatrix) -> np.ndarray:
    """The [CLS] vector, verbatim."""
    return np.array(patch.cls, dtype=np.float64, copy=True)


def dct_from_raw_tokens(flat_tokens: np.ndarray, filter_size: int = 8) -> np.ndarray:
    """dct_coefficients over a flattened 256x768 token matrix (tokens_raw kind)."""
    flat = np.asarray(flat_tokens, dtype=np.float64)
    if flat.shape != (TOKEN_COUNT * TOKEN_DIM,):
        raise ValueError(f"raw token vector must have length {TOKEN_COUNT * TOKEN_DIM}")
    tokens = flat.reshape(TOKEN_COUNT, TOKEN_DIM)
    if filter_size < 1 or filter_size > min(tokens.shape):
        raise ValueError(f"filter_size {filter_size} out of range for {tokens.shape}")
    return dct2_orthonormal(tokens)[:filter_size, :filter_size].reshape(-1).copy()


class ToyEmbedder:
    """Deterministic stand-in for the ViT: per-patch color statistics pushed
    through a fixed seeded random projection.

    The 128x128 input splits into a 16x16 grid of 8x8 patches (row-major).
    Each patch's token is the projection of its (mean RGB, std RGB) statistics
    to 768 dims; the [CLS] vector is the mean of all 256 tokens. Output is a
    pure function of (pixels, seed).
    """

    PATCH = 8
    SIDE = 128

    def __init__(self, seed: int):
        self.seed = seed
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((TOKEN_DIM, 6)) / np.sqrt(6.0)

    def tokens(self, pixels: np.ndarray) -> PatchTokenMatrix:
        if pixels.shape != (self.SIDE, self.SIDE, 3) or pixels.dtype != np.uint8:
            raise ValueError(
                f"toy extractor needs {self.SIDE}x{self.SIDE}x3 uint8 input, "
                f"got {pixels.shape} {pixels.dtype}"
            )
        g = self.SIDE // self.PATCH
        patches = (
            pixels.reshape(g, self.PATCH, g, self.PATCH, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(TOKEN_COUNT, self.PATCH * self.PATCH, 3)
            .astype(np.float64)
            / 255.0
        )
        stats = np.concatenate([patches.mean(axis=1), patches.std(axis=1)], axis=1)
        tokens = stats @ self._projection.T
        return PatchTokenMatrix(tokens=tokens, cls=tokens.mean(axis=0))

    def feature(self, pixels: np.ndarray, kind: str) -> np.ndarray:
        """Embedding vector of the requested kind for one 128x128 image."""
        patch = self.tokens(pixels)
        if kind == "dct64":
            return dct_coefficients(patch)
        if kind == "cls768":
            return cls_embedding(patch)
        raise ValueError(f"cannot extract kind {kind!r} directly")


@lru_cache(maxsize=8)
def _cached_embedder(seed: int) -> ToyEmbedder:
    return ToyEmbedder(seed)


def toy_embed(pixels: np.ndarray, seed: int) -> PatchTokenMatrix:
    """Token matrix for one processed image under the seeded toy extractor."""
    return _cached_embedder(seed).tokens(pixels)
