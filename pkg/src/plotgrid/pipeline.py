"""Batch orchestration for the full workflow: preprocess -> embed -> train ->
infer -> evaluate -> submit, driven by one declarative INI config.

Every stage is a pure function from input files plus parameters to output
files, so staleness is decided by content hash: a stage is skipped when its
recorded fingerprint (parameters + input bytes) matches and its outputs still
exist. Reruns from an unchanged config are therefore no-ops, and artifacts are
bit-identical across cold and warm runs. A failing stage removes its partial
outputs and halts the run with the stage name attached.

Relative paths in a config resolve against the config file's directory, so a
config and its data can move together.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .classifier import TrainConfig, load_model, save_model, train
from .collage import make_benchmark
from .core import SpeciesCatalog, build_catalog
from .features import KIND_DIMS, EmbeddingRecord, ToyEmbedder, dct_from_raw_tokens
from .inference import InferenceConfig, PredictionSet, predict_plot, read_predictions, write_predictions
from .metrics import MetricsReport, evaluate, load_truth_csv, save_truth_csv, write_report
from .preprocess import (
    DEFAULT_MIN_IMAGES,
    DEFAULT_SIDE,
    filter_min_images,
    iter_input_images,
    pack_image_shard,
    process_image,
)
from .shards import load_embedding_shard, pack_embedding_shard, shard_paths

logger = logging.getLogger(__name__)

STATE_FILE = ".state.json"
DEFAULT_SUBMISSION_CAP = 5
SUBMISSION_HEADER = "plot_id;species_ids"

_MODE_ALIASES = {
    "full": "full_image",
    "grid-argmax": "grid_argmax",
    "grid-topk": "grid_topk",
    "full_image": "full_image",
    "grid_argmax": "grid_argmax",
    "grid_topk": "grid_topk",
}

_TRAINABLE_KINDS = ("dct64", "cls768")


class PipelineError(RuntimeError):
    pass


def worker_count() -> int:
    """Worker pool size: PLOTGRID_WORKERS if set, else available parallelism."""
    env = os.environ.get("PLOTGRID_WORKERS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise PipelineError(f"PLOTGRID_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise PipelineError(f"PLOTGRID_WORKERS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Apply fn to every item, fanning out to threads, preserving input order."""
    workers = min(worker_count(), max(len(items), 1))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- stage bodies -----------------------------------------------------------


def run_preprocess(
    input_path: Path | str,
    out_dir: Path | str,
    side: int = DEFAULT_SIDE,
    min_count: int = DEFAULT_MIN_IMAGES,
) -> tuple[Path, Path]:
    """Crop+resize every input image into a shard and write the species
    catalog filtered by min_count. Images of dropped species stay in the
    shard; the catalog is what downstream training selects against."""
    out_dir = Path(out_dir)
    records = list(iter_input_images(input_path))
    if not records:
        raise PipelineError(f"no input images under {input_path}")
    processed = parallel_map(lambda rec: process_image(rec, side), records)

    labeled = [r for r in processed if r.species is not None]
    catalog = filter_min_images(build_catalog(labeled), min_count) if labeled else SpeciesCatalog({})

    out_dir.mkdir(parents=True, exist_ok=True)
    shard_path = out_dir / "images-000.img1"
    pack_image_shard(shard_path, processed)
    catalog_path = out_dir / "catalog.csv"
    catalog.save_csv(catalog_path)
    return shard_path, catalog_path


def load_embedding_shards(path: Path | str) -> tuple[str, list[EmbeddingRecord]]:
    """Read one .emb1 file or every .emb1 in a directory (sorted order).

    All shards must agree on kind.
    """
    path = Path(path)
    files = [path] if path.is_file() else shard_paths(path, ".emb1")
    if not files:
        raise PipelineError(f"no embedding shards under {path}")
    kind = None
    records: list[EmbeddingRecord] = []
    for f in files:
        loaded = load_embedding_shard(f)
        if kind is None:
            kind = loaded[0].kind
        elif loaded[0].kind != kind:
            raise PipelineError(f"mixed embedding kinds across shards under {path}")
        records.extend(loaded)
    return kind, records


def _convert_external(records: list[EmbeddingRecord], kind: str) -> list[EmbeddingRecord]:
    source = records[0].kind
    if source == kind:
        return records
    if source == "tokens_raw" and kind == "dct64":
        return [
            EmbeddingRecord(r.image_id, "dct64", dct_from_raw_tokens(r.vector), r.species)
            for r in records
        ]
    raise PipelineError(f"cannot derive {kind} embeddings from an external {source} shard")


def run_embed(
    input_path: Path | str,
    out_path: Path | str,
    kind: str,
    extractor: str = "toy",
    seed: int = 0,
) -> Path:
    """Produce one embedding shard of the requested kind.

    extractor=toy reads image shards and embeds in-process. extractor=external
    reads an already-extracted .emb1 (same kind passes through; raw-token
    shards can be reduced to dct64) and re-emits it through our writer so any
    malformed input is rejected here, not at train time.
    """
    if kind not in KIND_DIMS:
        raise PipelineError(f"unknown embedding kind {kind!r}")
    out_path = Path(out_path)
    if out_path.suffix != ".emb1":
        out_path.mkdir(parents=True, exist_ok=True)
        out_path = out_path / "embeddings-000.emb1"
    out_path.parent.mkdir(parents=True, exist_ok=True)

    if extractor == "toy":
        images = list(iter_input_images(input_path))
        if not images:
            raise PipelineError(f"no input images under {input_path}")
        embedder = ToyEmbedder(seed)
        records = parallel_map(
            lambda rec: EmbeddingRecord(
                rec.image_id, kind, embedder.feature(rec.pixels, kind), rec.species
            ),
            images,
        )
    elif extractor == "external":
        _, external = load_embedding_shards(input_path)
        records = _convert_external(external, kind)
    else:
        raise PipelineError(f"unknown extractor {extractor!r}")

    pack_embedding_shard(out_path, records)
    return out_path


def run_train(
    embeddings_path: Path | str,
    catalog_path: Path | str,
    out_model: Path | str,
    config: TrainConfig,
) -> list[float]:
    """Train on the embeddings whose species survive in the catalog; save the
    model; return the per-epoch loss trace."""
    catalog = SpeciesCatalog.load_csv(catalog_path)
    _, records = load_embedding_shards(embeddings_path)
    usable = [r for r in records if r.species is not None and r.species in catalog]
    result = train(usable, catalog, config)
    save_model(out_model, result.model)
    return result.epoch_losses


def run_infer(
    model_path: Path | str,
    images_path: Path | str,
    config: InferenceConfig,
    out_path: Path | str,
    embed_seed: int = 0,
) -> list[PredictionSet]:
    """Predict a species set per plot image and write the JSONL file.

    embed_seed must match the seed used for the training embeddings, otherwise
    tile features come from a different projection than the model was fit to.
    """
    model = load_model(model_path)
    embedder = ToyEmbedder(embed_seed)
    plots = list(iter_input_images(images_path))
    if not plots:
        raise PipelineError(f"no plot images under {images_path}")
    predictions = parallel_map(
        lambda rec: predict_plot(model, rec.pixels, embedder, config, rec.image_id),
        plots,
    )
    write_predictions(out_path, predictions)
    return predictions


def run_evaluate(pred_path: Path | str, truth_path: Path | str, report_path: Path | str) -> MetricsReport:
    predictions = read_predictions(pred_path)
    seen: set[str] = set()
    for p in predictions:
        if p.plot_id in seen:
            raise PipelineError(f"duplicate plot id {p.plot_id!r} in {pred_path}")
        seen.add(p.plot_id)
    pred_sets = {p.plot_id: frozenset(p.species) for p in predictions}
    report = evaluate(pred_sets, load_truth_csv(truth_path))
    write_report(report_path, report)
    return report


# --- submission format ------------------------------------------------------


def format_submission(predictions: Sequence[PredictionSet], cap: int) -> str:
    """Render predictions as the submission CSV: `plot_id;[id1, id2, ...]`,
    at most cap ids per row, rank order preserved, LF line endings."""
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    lines = [SUBMISSION_HEADER]
    for pred in predictions:
        ids = ", ".join(str(s) for s in pred.species[:cap])
        lines.append(f"{pred.plot_id};[{ids}]")
    return "\n".join(lines) + "\n"


def parse_submission(text: str) -> dict[str, list[int]]:
    """Inverse of format_submission (scores are not recoverable)."""
    lines = text.splitlines()
    if not lines or lines[0] != SUBMISSION_HEADER:
        raise ValueError(f"submission must start with header {SUBMISSION_HEADER!r}")
    out: dict[str, list[int]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        pid, sep, ids_field = line.partition(";")
        ids_field = ids_field.strip()
        if not sep or not pid or not (ids_field.startswith("[") and ids_field.endswith("]")):
            raise ValueError(f"submission line {lineno}: expected 'plot_id;[ids]', got {line!r}")
        if pid in out:
            raise ValueError(f"submission line {lineno}: duplicate plot id {pid!r}")
        inner = ids_field[1:-1].strip()
        try:
            out[pid] = [int(tok) for tok in inner.split(",")] if inner else []
        except ValueError:
            raise ValueError(f"submission line {lineno}: bad species list {ids_field!r}") from None
    return out


def run_submit(pred_path: Path | str, out_path: Path | str, cap: int = DEFAULT_SUBMISSION_CAP) -> Path:
    text = format_submission(read_predictions(pred_path), cap)
    out_path = Path(out_path)
    out_path.write_text(text, encoding="utf-8")
    return out_path


# --- collage fixture --------------------------------------------------------


@dataclass(frozen=True)
class CollageSpec:
    num_species: int = 10
    images_per_species: int = 50
    plots: int = 20
    grid_n: int = 3
    species_per_plot: int = 4
    seed: int = 7


def make_collage_dataset(spec: CollageSpec, out_dir: Path | str) -> dict[str, Path]:
    """Write the synthetic benchmark to disk: single-species training shards,
    unlabeled plot-image shards, and the truth CSV."""
    out_dir = Path(out_dir)
    bench = make_benchmark(
        num_species=spec.num_species,
        images_per_species=spec.images_per_species,
        num_plots=spec.plots,
        species_per_plot=spec.species_per_plot,
        grid_n=spec.grid_n,
        seed=spec.seed,
    )
    train_dir = out_dir / "train"
    plots_dir = out_dir / "plots"
    train_dir.mkdir(parents=True, exist_ok=True)
    plots_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": train_dir / "images-000.img1",
        "plots": plots_dir / "plots-000.img1",
        "truth": out_dir / "truth.csv",
    }
    pack_image_shard(paths["train"], bench.training)
    pack_image_shard(paths["plots"], bench.plots)
    save_truth_csv(paths["truth"], bench.truth)
    return paths


# --- config file ------------------------------------------------------------


_SCHEMA: dict[str, set[str]] = {
    "pipeline": {"workdir"},
    "preprocess": {"input", "side", "min_count"},
    "embed": {"kind", "extractor", "seed", "external_input"},
    "train": {"learning_rate", "momentum", "batch_size", "epochs", "seed", "weight_init_scale"},
    "infer": {"images", "mode", "grid", "top_k", "top_l"},
    "evaluate": {"truth"},
    "submit": {"cap"},
}

_REQUIRED = {"pipeline": {"workdir"}, "preprocess": {"input"}, "infer": {"images"}}


@dataclass(frozen=True)
class PipelineConfig:
    workdir: Path
    train_input: Path
    side: int = DEFAULT_SIDE
    min_count: int = DEFAULT_MIN_IMAGES
    kind: str = "cls768"
    extractor: str = "toy"
    external_input: Path | None = None
    embed_seed: int = 0
    train_config: TrainConfig = field(default_factory=TrainConfig)
    infer_images: Path = Path(".")
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    truth: Path | None = None
    submission_cap: int = DEFAULT_SUBMISSION_CAP


def _typed(section, key: str, cast: Callable, default):
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise PipelineError(f"[{section.name}] {key}: cannot parse {raw!r}") from None


def parse_pipeline_config(path: Path | str) -> PipelineConfig:
    """Load and fully validate an INI config before any stage runs."""
    path = Path(path)
    if not path.is_file():
        raise PipelineError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise PipelineError(f"bad config: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise PipelineError(f"unknown config section [{section}]")
        extra = set(parser[section]) - _SCHEMA[section]
        if extra:
            raise PipelineError(f"unknown keys in [{section}]: {sorted(extra)}")
    for section, keys in _REQUIRED.items():
        if section not in parser:
            raise PipelineError(f"missing required config section [{section}]")
        for key in keys:
            if key not in parser[section]:
                raise PipelineError(f"missing required key {key!r} in [{section}]")

    base = path.parent

    def _path(raw: str) -> Path:
        p = Path(raw)
        return p if p.is_absolute() else base / p

    pre = parser["preprocess"]
    emb = parser["embed"] if "embed" in parser else {}
    trn = parser["train"] if "train" in parser else {}
    inf = parser["infer"]

    kind = emb.get("kind", "cls768") if emb else "cls768"
    if kind not in _TRAINABLE_KINDS:
        raise PipelineError(f"[embed] kind must be one of {_TRAINABLE_KINDS}, got {kind!r}")
    extractor = emb.get("extractor", "toy") if emb else "toy"
    if extractor not in ("toy", "external"):
        raise PipelineError(f"[embed] extractor must be 'toy' or 'external', got {extractor!r}")
    external_raw = emb.get("external_input") if emb else None
    if extractor == "external" and not external_raw:
        raise PipelineError("[embed] extractor=external requires external_input")

    mode_raw = inf.get("mode", "grid-argmax")
    if mode_raw not in _MODE_ALIASES:
        raise PipelineError(f"[infer] mode must be one of {sorted(set(_MODE_ALIASES))}, got {mode_raw!r}")

    try:
        train_config = TrainConfig(
            learning_rate=_typed(trn, "learning_rate", float, 1e-3) if trn else 1e-3,
            momentum=_typed(trn, "momentum", float, 0.9) if trn else 0.9,
            batch_size=_typed(trn, "batch_size", int, 64) if trn else 64,
            epochs=_typed(trn, "epochs", int, 50) if trn else 50,
            seed=_typed(trn, "seed", int, 7) if trn else 7,
            weight_init_scale=_typed(trn, "weight_init_scale", float, 1.0) if trn else 1.0,
        )
        inference = InferenceConfig(
            grid_n=_typed(inf, "grid", int, 3),
            top_k=_typed(inf, "top_k", int, 10),
            top_l=_typed(inf, "top_l", int, 5),
            mode=_MODE_ALIASES[mode_raw],
        )
    except ValueError as exc:
        raise PipelineError(f"bad config value: {exc}") from exc

    truth_raw = parser["evaluate"].get("truth") if "evaluate" in parser else None
    cap = _typed(parser["submit"], "cap", int, DEFAULT_SUBMISSION_CAP) if "submit" in parser else DEFAULT_SUBMISSION_CAP
    if cap < 1:
        raise PipelineError(f"[submit] cap must be >= 1, got {cap}")

    side = _typed(pre, "side", int, DEFAULT_SIDE)
    min_count = _typed(pre, "min_count", int, DEFAULT_MIN_IMAGES)
    if side < 1 or min_count < 0:
        raise PipelineError("[preprocess] side must be >= 1 and min_count >= 0")

    return PipelineConfig(
        workdir=_path(parser["pipeline"]["workdir"]),
        train_input=_path(pre["input"]),
        side=side,
        min_count=min_count,
        kind=kind,
        extractor=extractor,
        external_input=_path(external_raw) if external_raw else None,
        embed_seed=_typed(emb, "seed", int, 0) if emb else 0,
        train_config=train_config,
        infer_images=_path(inf["images"]),
        inference=inference,
        truth=_path(truth_raw) if truth_raw else None,
        submission_cap=cap,
    )


# --- staged run -------------------------------------------------------------


@dataclass(frozen=True)
class _Stage:
    name: str
    inputs: tuple[Path, ...]
    params: str
    outputs: tuple[Path, ...]
    action: Callable[[], object]


def _digest_paths(paths: Sequence[Path]) -> "hashlib._Hash":
    digest = hashlib.sha256()
    for p in sorted(paths):
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                digest.update(str(f.relative_to(p)).encode())
                digest.update(f.read_bytes())
        elif p.is_file():
            digest.update(p.name.encode())
            digest.update(p.read_bytes())
        else:
            raise PipelineError(f"missing input: {p}")
    return digest


def _fingerprint(stage: _Stage) -> str:
    digest = _digest_paths(stage.inputs)
    digest.update(stage.params.encode())
    return digest.hexdigest()


def _remove(path: Path) -> None:
    if path.is_dir():
        shutil.rmtree(path, ignore_errors=True)
    else:
        path.unlink(missing_ok=True)


def build_stages(cfg: PipelineConfig) -> list[_Stage]:
    work = cfg.workdir
    images_dir = work / "images"
    catalog_csv = images_dir / "catalog.csv"
    emb_shard = work / "embeddings" / "embeddings-000.emb1"
    model_path = work / "model.lin1"
    pred_path = work / "predictions.jsonl"
    report_path = work / "report.json"
    submission_path = work / "submission.csv"

    embed_input = cfg.external_input if cfg.extractor == "external" else images_dir

    stages = [
        _Stage(
            "preprocess",
            inputs=(cfg.train_input,),
            params=f"side={cfg.side} min_count={cfg.min_count}",
            outputs=(images_dir,),
            action=lambda: run_preprocess(cfg.train_input, images_dir, cfg.side, cfg.min_count),
        ),
        _Stage(
            "embed",
            inputs=(embed_input,),
            params=f"kind={cfg.kind} extractor={cfg.extractor} seed={cfg.embed_seed}",
            outputs=(emb_shard.parent,),
            action=lambda: run_embed(embed_input, emb_shard, cfg.kind, cfg.extractor, cfg.embed_seed),
        ),
        _Stage(
            "train",
            inputs=(emb_shard.parent, catalog_csv),
            params=repr(cfg.train_config),
            outputs=(model_path,),
            action=lambda: run_train(emb_shard.parent, catalog_csv, model_path, cfg.train_config),
        ),
        _Stage(
            "infer",
            inputs=(model_path, cfg.infer_images),
            params=f"{cfg.inference!r} embed_seed={cfg.embed_seed}",
            outputs=(pred_path,),
            action=lambda: run_infer(model_path, cfg.infer_images, cfg.inference, pred_path, cfg.embed_seed),
        ),
    ]
    if cfg.truth is not None:
        stages.append(
            _Stage(
                "evaluate",
                inputs=(pred_path, cfg.truth),
                params="",
                outputs=(report_path,),
                action=lambda: run_evaluate(pred_path, cfg.truth, report_path),
            )
        )
    stages.append(
        _Stage(
            "submit",
            inputs=(pred_path,),
            params=f"cap={cfg.submission_cap}",
            outputs=(submission_path,),
            action=lambda: run_submit(pred_path, submission_path, cfg.submission_cap),
        )
    )
    return stages


def run_pipeline(cfg: PipelineConfig) -> list[str]:
    """Run all stages in order, skipping the fresh ones. Returns a log of
    '<stage>: ran' / '<stage>: skipped' entries in execution order."""
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    state_path = cfg.workdir / STATE_FILE
    state: dict[str, str] = {}
    if state_path.is_file():
        try:
            state = json.loads(state_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            state = {}

    outcomes = []
    for stage in build_stages(cfg):
        fingerprint = _fingerprint(stage)
        fresh = state.get(stage.name) == fingerprint and all(p.exists() for p in stage.outputs)
        if fresh:
            logger.info("%s: outputs up to date, skipping", stage.name)
            outcomes.append(f"{stage.name}: skipped")
            continue
        logger.info("%s: running", stage.name)
        try:
            stage.action()
        except Exception as exc:
            for out in stage.outputs:
                _remove(out)
            state.pop(stage.name, None)
            state_path.write_text(json.dumps(state, indent=2, sort_keys=True), encoding="utf-8")
            raise PipelineError(f"stage {stage.name} failed: {exc}") from exc
        state[stage.name] = fingerprint
        state_path.write_text(json.dumps(state, indent=2, sort_keys=True), encoding="utf-8")
        outcomes.append(f"{stage.name}: ran")
    return outcomes
