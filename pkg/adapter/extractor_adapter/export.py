"""Run a pretrained ViT backbone over an image directory and write EMB1.

The backbone must produce 257x768 token matrices (one CLS token plus a
16x16 patch grid at 768 hidden dims); anything else is a checkpoint
mismatch and aborts the run. Unreadable images are skipped and logged,
everything else flows through in sorted input order.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from extractor_adapter.emb1 import KIND_DIMS, write_shard

log = logging.getLogger("extractor_adapter")

EXPECTED_TOKENS = 257
EXPECTED_HIDDEN = 768
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}

# kind names accepted on the wire; the long form marks raw tokens destined
# for the downstream dct64 path
KIND_ALIASES = {
    "cls768": "cls768",
    "tokens_raw": "tokens_raw",
    "dct64_tokens_raw": "tokens_raw",
}

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class AdapterError(RuntimeError):
    """Configuration or checkpoint problem that must abort the export."""


@dataclass(frozen=True)
class AdapterConfig:
    model_id: str
    input_dir: Path
    output_path: Path
    kind: str = "cls768"
    batch_size: int = 16

    def __post_init__(self):
        if self.kind not in KIND_ALIASES:
            raise AdapterError(
                f"kind must be one of {sorted(KIND_ALIASES)}, got {self.kind!r}"
            )
        if self.batch_size < 1:
            raise AdapterError(f"batch_size must be positive, got {self.batch_size}")
        object.__setattr__(self, "input_dir", Path(self.input_dir))
        object.__setattr__(self, "output_path", Path(self.output_path))

    @property
    def canonical_kind(self) -> str:
        return KIND_ALIASES[self.kind]


@dataclass
class ExtractResult:
    output_path: Path
    record_count: int
    skipped: list[str] = field(default_factory=list)


def discover_images(input_dir: Path) -> list[tuple[str, Path, int | None]]:
    """(id, path, species) per image file, sorted by relative path.

    The record id is the file stem. A species label is attached when the
    immediate parent directory name is an integer, the usual label-folder
    layout; otherwise the record is unlabeled.
    """
    if not input_dir.is_dir():
        raise AdapterError(f"input directory not found: {input_dir}")
    found = []
    for path in sorted(p for p in input_dir.rglob("*") if p.is_file()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        parent = path.parent.name
        species = int(parent) if parent.lstrip("-").isdigit() else None
        found.append((path.stem, path, species))
    if not found:
        raise AdapterError(f"no image files under {input_dir}")
    return found


def _load_backbone(model_id: str):
    import torch
    from transformers import AutoModel

    try:
        model = AutoModel.from_pretrained(model_id)
    except Exception as exc:
        raise AdapterError(f"cannot load checkpoint {model_id!r}: {exc}") from exc
    config = model.config
    hidden = getattr(config, "hidden_size", None)
    if hidden is not None and hidden != EXPECTED_HIDDEN:
        raise AdapterError(
            f"checkpoint mismatch: hidden size {hidden}, need {EXPECTED_HIDDEN}"
        )
    image_size = getattr(config, "image_size", None)
    patch_size = getattr(config, "patch_size", None)
    if image_size and patch_size:
        tokens = (image_size // patch_size) ** 2 + 1
        if tokens != EXPECTED_TOKENS:
            raise AdapterError(
                f"checkpoint mismatch: {tokens} tokens per image, need {EXPECTED_TOKENS}"
            )
    model.eval()
    torch.set_grad_enabled(False)
    return model


def _make_transform(model_id: str, config):
    """Pixel transform matching the checkpoint.

    Prefer the processor stored with the checkpoint; checkpoints saved
    without one get the standard ViT transform (square resize to the
    configured input size, ImageNet normalization).
    """
    try:
        from transformers import AutoImageProcessor

        processor = AutoImageProcessor.from_pretrained(model_id)

        def via_processor(images: list[Image.Image]):
            return processor(images=images, return_tensors="pt").pixel_values

        log.info("using the checkpoint's own image processor")
        return via_processor
    except Exception:
        pass

    import torch

    side = int(getattr(config, "image_size", 224))

    def fallback(images: list[Image.Image]):
        arrays = []
        for image in images:
            resized = image.resize((side, side), Image.Resampling.BICUBIC)
            arr = np.asarray(resized, dtype=np.float32) / 255.0
            arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
            arrays.append(arr.transpose(2, 0, 1))
        return torch.from_numpy(np.stack(arrays))

    log.info("checkpoint has no stored processor; using %dpx resize + ImageNet norm", side)
    return fallback


def _forward(model, pixel_values) -> np.ndarray:
    hidden = model(pixel_values=pixel_values).last_hidden_state
    if hidden.shape[1] != EXPECTED_TOKENS or hidden.shape[2] != EXPECTED_HIDDEN:
        raise AdapterError(
            "checkpoint mismatch: model emitted "
            f"{hidden.shape[1]}x{hidden.shape[2]} tokens, need "
            f"{EXPECTED_TOKENS}x{EXPECTED_HIDDEN}"
        )
    return hidden.numpy()


def extract_shard(cfg: AdapterConfig) -> ExtractResult:
    """Export one EMB1 shard for every decodable image under cfg.input_dir."""
    entries = discover_images(cfg.input_dir)
    model = _load_backbone(cfg.model_id)
    transform = _make_transform(cfg.model_id, model.config)
    kind = cfg.canonical_kind

    records: list[tuple[str, int | None, np.ndarray]] = []
    skipped: list[str] = []
    batch_meta: list[tuple[str, int | None]] = []
    batch_images: list[Image.Image] = []

    def flush():
        if not batch_images:
            return
        hidden = _forward(model, transform(batch_images))
        for (image_id, species), tokens in zip(batch_meta, hidden):
            if kind == "cls768":
                vector = tokens[0]
            else:
                vector = tokens[1:].reshape(-1)  # patch tokens only, row-major
            records.append((image_id, species, vector.astype(np.float32)))
        batch_meta.clear()
        batch_images.clear()

    for image_id, path, species in entries:
        try:
            with Image.open(path) as handle:
                image = handle.convert("RGB")
        except Exception as exc:
            skipped.append(image_id)
            log.warning("skipped %s: %s", image_id, exc)
            continue
        batch_meta.append((image_id, species))
        batch_images.append(image)
        if len(batch_images) == cfg.batch_size:
            flush()
    flush()

    if not records:
        raise AdapterError(f"no decodable images under {cfg.input_dir}")
    write_shard(cfg.output_path, kind, records)
    log.info(
        "wrote %s: %d records, kind %s (dim %d), %d skipped",
        cfg.output_path, len(records), kind, KIND_DIMS[kind], len(skipped),
    )
    return ExtractResult(cfg.output_path, len(records), skipped)
