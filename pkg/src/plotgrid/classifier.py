"""Single-layer linear classifier trained with minibatch SGD + momentum on the
mean negative log-likelihood.

Training is bit-reproducible under a fixed seed: weight init and per-epoch
shuffling come from one seeded generator, parameters and gradients stay in
float32, and the loss trace accumulates in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import SpeciesCatalog
from .features import EmbeddingRecord

MODEL_MAGIC = b"LIN1"

_KIND_TO_BYTE = {"dct64": 0, "cls768": 1}
_BYTE_TO_KIND = {v: k for k, v in _KIND_TO_BYTE.items()}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    weight_init_scale: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.weight_init_scale <= 0:
            raise ValueError(f"weight_init_scale must be positive, got {self.weight_init_scale}")


@dataclass
class LinearModel:
    """Weights (C x D) and bias (C) yielding per-species log-probabilities."""

    weights: np.ndarray
    bias: np.ndarray
    catalog: SpeciesCatalog
    input_kind: str

    def __post_init__(self):
        if self.input_kind not in _KIND_TO_BYTE:
            raise ValueError(f"unsupported input kind {self.input_kind!r}")
        c, d = self.weights.shape
        if self.bias.shape != (c,):
            raise ValueError(f"bias shape {self.bias.shape} does not match C={c}")
        if c != len(self.catalog):
            raise ValueError(f"weight rows {c} != catalog size {len(self.catalog)}")
        want_d = 64 if self.input_kind == "dct64" else 768
        if d != want_d:
            raise ValueError(f"kind {self.input_kind} needs D={want_d}, got {d}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite model parameters")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class TrainResult:
    model: LinearModel
    epoch_losses: list[float] = field(default_factory=list)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically safe log-softmax via max subtraction; shift invariant."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"logits must be a non-empty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite logits")
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def nll_loss(log_probs: np.ndarray, label: int) -> float:
    """Negative log-likelihood of the labeled class."""
    lp = np.asarray(log_probs)
    if not 0 <= label < lp.shape[0]:
        raise IndexError(f"label {label} out of range [0, {lp.shape[0]})")
    return float(-lp[label])


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def gradient(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of the mean NLL over a batch.

    Per sample the logit gradient is softmax(logits) - onehot(label),
    back-propagated through the linear map. Math runs in the common dtype of
    the inputs, so a float64 model gets a float64 gradient.
    """
    x = np.atleast_2d(features)
    y = np.asarray(labels)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != weights.shape[1]:
        raise ValueError(f"feature dim {x.shape[1]} != weight dim {weights.shape[1]}")
    if y.shape != (x.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match batch size {x.shape[0]}")
    logits = x @ weights.T + bias
    g = _softmax_rows(logits)
    g[np.arange(x.shape[0]), y] -= 1.0
    batch = x.shape[0]
    return (g.T @ x) / batch, g.mean(axis=0)


def _batch_mean_nll(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(logits.shape[0]), labels]
    return float(np.mean((lse - picked).astype(np.float64)))


def train(
    records: Sequence[EmbeddingRecord],
    catalog: SpeciesCatalog,
    config: TrainConfig,
) -> TrainResult:
    """Fit a linear model on labeled embedding records.

    All records must carry a label present in the catalog and share one
    embedding kind. Deterministic for a fixed config: two runs produce
    bit-identical parameters.
    """
    if len(catalog) == 0:
        raise ValueError("empty catalog")
    if not records:
        raise ValueError("no training records")
    kind = records[0].kind
    if any(rec.kind != kind for rec in records):
        raise ValueError("kind mismatch: training records must share one embedding kind")
    if kind not in _KIND_TO_BYTE:
        raise ValueError(f"cannot train on kind {kind!r}")
    labels = np.empty(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        if rec.species is None:
            raise ValueError(f"record {rec.image_id!r} has no label")
        labels[i] = catalog.encode(rec.species)
    features = np.stack([rec.vector for rec in records]).astype(np.float32)

    num_classes, dim = len(catalog), features.shape[1]
    rng = np.random.default_rng(config.seed)
    scale = config.weight_init_scale / np.sqrt(dim)
    weights = rng.uniform(-scale, scale, size=(num_classes, dim)).astype(np.float32)
    bias = np.zeros(num_classes, dtype=np.float32)
    vel_w = np.zeros_like(weights)
    vel_b = np.zeros_like(bias)

    losses: list[float] = []
    n = len(records)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = features[idx], labels[idx]
            logits = xb @ weights.T + bias
            epoch_loss += _batch_mean_nll(logits, yb) * len(idx)
            grad_w, grad_b = gradient(weights, bias, xb, yb)
            vel_w = config.momentum * vel_w + grad_w
            vel_b = config.momentum * vel_b + grad_b
            weights = weights - config.learning_rate * vel_w
            bias = bias - config.learning_rate * vel_b
        losses.append(epoch_loss / n)

    model = LinearModel(weights=weights, bias=bias, catalog=catalog, input_kind=kind)
    return TrainResult(model=model, epoch_losses=losses)


def predict_log_probs(model: LinearModel, vector: np.ndarray) -> np.ndarray:
    """log_softmax(W v + b) for one embedding vector, computed in float64."""
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (model.dim,):
        raise ValueError(f"vector shape {v.shape} does not match model dim {model.dim}")
    logits = model.weights.astype(np.float64) @ v + model.bias.astype(np.float64)
    return log_softmax(logits)


def save_model(path: Path | str, model: LinearModel) -> None:
    """Serialize to the LIN1 format with the catalog CSV embedded."""
    c, d = model.weights.shape
    catalog_blob = model.catalog.to_csv_text().encode("utf-8")
    payload = b"".join(
        [
            MODEL_MAGIC,
            struct.pack("<IIB", c, d, _KIND_TO_BYTE[model.input_kind]),
            np.ascontiguousarray(model.weights, dtype="<f4").tobytes(),
            np.ascontiguousarray(model.bias, dtype="<f4").tobytes(),
            struct.pack("<I", len(catalog_blob)),
            catalog_blob,
        ]
    )
    Path(path).write_bytes(payload)


def load_model(path: Path | str) -> LinearModel:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a LIN1 model file")
    c, d, kind_byte = struct.unpack_from("<IIB", data, 4)
    if kind_byte not in _BYTE_TO_KIND:
        raise ValueError(f"{path}: unknown input kind byte {kind_byte}")
    offset = 4 + struct.calcsize("<IIB")
    w_bytes = 4 * c * d
    weights = np.frombuffer(data, dtype="<f4", count=c * d, offset=offset).reshape(c, d).copy()
    offset += w_bytes
    bias = np.frombuffer(data, dtype="<f4", count=c, offset=offset).copy()
    offset += 4 * c
    (blob_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    blob = data[offset : offset + blob_len]
    if len(blob) != blob_len or offset + blob_len != len(data):
        raise ValueError(f"{path}: truncated or trailing bytes in model file")
    catalog = SpeciesCatalog.from_csv_text(blob.decode("utf-8"))
    return LinearModel(
        weights=weights, bias=bias, catalog=catalog, input_kind=_BYTE_TO_KIND[kind_byte]
    )
