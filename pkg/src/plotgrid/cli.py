"""Command line entry points. Thin wrappers: every subcommand parses flags,
calls the matching stage function, and prints a one-line outcome."""

from __future__ import annotations

import functools
import logging
from pathlib import Path

import click

from .classifier import TrainConfig
from .inference import InferenceConfig
from .pipeline import (
    DEFAULT_SUBMISSION_CAP,
    CollageSpec,
    PipelineError,
    make_collage_dataset,
    parse_pipeline_config,
    run_embed,
    run_evaluate,
    run_infer,
    run_pipeline,
    run_preprocess,
    run_submit,
    run_train,
)
from .preprocess import DEFAULT_MIN_IMAGES, DEFAULT_SIDE
from .shards import ShardError

_CLI_MODES = {"full": "full_image", "grid-argmax": "grid_argmax", "grid-topk": "grid_topk"}


def _surface_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, PipelineError, ShardError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group()
def main():
    """Plot-image species prediction: preprocess, embed, train, infer,
    evaluate, and package submissions."""
    logging.basicConfig(level=logging.INFO, format="%(message)s")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--output", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--side", default=DEFAULT_SIDE, show_default=True, type=int)
@click.option("--min-count", default=DEFAULT_MIN_IMAGES, show_default=True, type=int)
@_surface_errors
def preprocess(input_path: Path, out_dir: Path, side: int, min_count: int):
    """Crop, resize, and shard training images; write the filtered catalog."""
    shard, catalog = run_preprocess(input_path, out_dir, side, min_count)
    click.echo(f"wrote {shard} and {catalog}")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--output", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--kind", default="cls768", show_default=True, type=click.Choice(["dct64", "cls768"]))
@click.option("--extractor", default="toy", show_default=True, type=click.Choice(["toy", "external"]))
@click.option("--seed", default=0, show_default=True, type=int)
@_surface_errors
def embed(input_path: Path, out_path: Path, kind: str, extractor: str, seed: int):
    """Turn image shards (or an externally extracted shard) into embeddings."""
    shard = run_embed(input_path, out_path, kind, extractor, seed)
    click.echo(f"wrote {shard}")


@main.command()
@click.option("--embeddings", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--catalog", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_model", required=True, type=click.Path(path_type=Path))
@click.option("--lr", default=1e-3, show_default=True, type=float)
@click.option("--momentum", default=0.9, show_default=True, type=float)
@click.option("--batch", default=64, show_default=True, type=int)
@click.option("--epochs", default=50, show_default=True, type=int)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--init-scale", default=1.0, show_default=True, type=float)
@_surface_errors
def train(embeddings: Path, catalog: Path, out_model: Path, lr: float, momentum: float,
          batch: int, epochs: int, seed: int, init_scale: float):
    """Fit the linear classifier and save it."""
    config = TrainConfig(
        learning_rate=lr, momentum=momentum, batch_size=batch,
        epochs=epochs, seed=seed, weight_init_scale=init_scale,
    )
    losses = run_train(embeddings, catalog, out_model, config)
    click.echo(f"wrote {out_model} (loss {losses[0]:.4f} -> {losses[-1]:.4f})")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--images", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--mode", default="grid-argmax", show_default=True,
              type=click.Choice(sorted(_CLI_MODES)))
@click.option("--grid", default=3, show_default=True, type=int)
@click.option("--top-k", default=10, show_default=True, type=int)
@click.option("--top-l", default=5, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int,
              help="Seed of the toy extractor used for the training embeddings.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@_surface_errors
def infer(model_path: Path, images: Path, mode: str, grid: int, top_k: int, top_l: int,
          seed: int, out_path: Path):
    """Predict a ranked species set for each plot image."""
    config = InferenceConfig(grid_n=grid, top_k=top_k, top_l=top_l, mode=_CLI_MODES[mode])
    predictions = run_infer(model_path, images, config, out_path, seed)
    click.echo(f"wrote {out_path} ({len(predictions)} plots)")


@main.command()
@click.option("--pred", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--truth", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--report", "report_path", default="report.json", show_default=True,
              type=click.Path(path_type=Path))
@_surface_errors
def evaluate(pred: Path, truth: Path, report_path: Path):
    """Score predictions against truth and write the report."""
    report = run_evaluate(pred, truth, report_path)
    click.echo(
        f"macro F1 over plots {report.macro_f1_plots:.4f} | "
        f"macro F1 over species {report.macro_f1_species:.4f} | "
        f"micro F1 {report.micro_f1:.4f}"
    )


@main.command()
@click.option("--pred", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", default="submission.csv", show_default=True,
              type=click.Path(path_type=Path))
@click.option("--cap", default=DEFAULT_SUBMISSION_CAP, show_default=True, type=int)
@_surface_errors
def submit(pred: Path, out_path: Path, cap: int):
    """Format predictions as a submission CSV."""
    run_submit(pred, out_path, cap)
    click.echo(f"wrote {out_path}")


@main.command("make-collage")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--species", default=10, show_default=True, type=int)
@click.option("--images-per-species", default=50, show_default=True, type=int)
@click.option("--plots", default=20, show_default=True, type=int)
@click.option("--grid", default=3, show_default=True, type=int)
@click.option("--species-per-plot", default=4, show_default=True, type=int)
@click.option("--seed", default=7, show_default=True, type=int)
@_surface_errors
def make_collage(out_dir: Path, species: int, images_per_species: int, plots: int,
                 grid: int, species_per_plot: int, seed: int):
    """Generate the synthetic collage benchmark (train shards, plot shards, truth)."""
    spec = CollageSpec(
        num_species=species, images_per_species=images_per_species, plots=plots,
        grid_n=grid, species_per_plot=species_per_plot, seed=seed,
    )
    paths = make_collage_dataset(spec, out_dir)
    for name, p in paths.items():
        click.echo(f"{name}: {p}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, path_type=Path))
@_surface_errors
def run(config_path: Path):
    """Run every pipeline stage from a config file, skipping fresh stages."""
    outcomes = run_pipeline(parse_pipeline_config(config_path))
    for line in outcomes:
        click.echo(line)


if __name__ == "__main__":
    main()
