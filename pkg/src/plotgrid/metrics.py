"""Set-based F1 scoring of multi-label plot predictions.

Three aggregates, all with the 0/0 -> 0 convention:

* macro over plots: per-plot F1 = 2|P & T| / (|P| + |T|), averaged over plots
* macro over species: per-species F1 from TP/FP/FN pooled across plots,
  averaged over species that occur at all (tp + fp + fn > 0)
* micro: 2 * sum(TP) / (2 * sum(TP) + sum(FP) + sum(FN)) over every
  (plot, species) decision
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

TRUTH_HEADER = ["plot_id", "species_ids"]

PlotSets = Mapping[str, frozenset[int]]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2.0 * self.tp / denom if denom else 0.0


@dataclass(frozen=True)
class MetricsReport:
    macro_f1_plots: float
    macro_f1_species: float
    micro_f1: float
    plot_count: int
    species_scored: int
    per_plot: tuple[tuple[str, float], ...] = ()
    per_species: tuple[tuple[int, ConfusionCounts], ...] = ()

    def to_dict(self) -> dict:
        return {
            "macro_f1_plots": self.macro_f1_plots,
            "macro_f1_species": self.macro_f1_species,
            "micro_f1": self.micro_f1,
            "plot_count": self.plot_count,
            "species_scored": self.species_scored,
            "per_plot": {pid: f1 for pid, f1 in self.per_plot},
            "per_species": {
                str(sid): {"tp": c.tp, "fp": c.fp, "fn": c.fn, "f1": c.f1}
                for sid, c in self.per_species
            },
        }


def plot_f1(predicted: frozenset[int], truth: frozenset[int]) -> float:
    denom = len(predicted) + len(truth)
    return 2.0 * len(predicted & truth) / denom if denom else 0.0


def _aligned_sets(predictions: PlotSets, truth: PlotSets) -> list[tuple[frozenset[int], frozenset[int]]]:
    unknown = sorted(set(predictions) - set(truth))
    if unknown:
        raise ValueError(f"predictions for plots absent from the truth set: {unknown}")
    if not truth:
        raise ValueError("truth set is empty")
    # Plots without a prediction count as predicting nothing.
    empty: frozenset[int] = frozenset()
    return [(predictions.get(pid, empty), truth[pid]) for pid in sorted(truth)]


def macro_f1_over_plots(predictions: PlotSets, truth: PlotSets) -> float:
    pairs = _aligned_sets(predictions, truth)
    return sum(plot_f1(p, t) for p, t in pairs) / len(pairs)


def species_confusions(predictions: PlotSets, truth: PlotSets) -> dict[int, ConfusionCounts]:
    """TP/FP/FN per species, pooled over all truth plots."""
    counts: dict[int, ConfusionCounts] = {}
    for predicted, actual in _aligned_sets(predictions, truth):
        for sid in predicted | actual:
            delta = ConfusionCounts(
                tp=int(sid in predicted and sid in actual),
                fp=int(sid in predicted and sid not in actual),
                fn=int(sid not in predicted and sid in actual),
            )
            counts[sid] = counts.get(sid, ConfusionCounts()) + delta
    return counts


def macro_f1_over_species(predictions: PlotSets, truth: PlotSets) -> float:
    scored = [c.f1 for c in species_confusions(predictions, truth).values() if c.total > 0]
    return sum(scored) / len(scored) if scored else 0.0


def micro_f1(predictions: PlotSets, truth: PlotSets) -> float:
    total = ConfusionCounts()
    for counts in species_confusions(predictions, truth).values():
        total = total + counts
    return total.f1


def evaluate(predictions: PlotSets, truth: PlotSets) -> MetricsReport:
    pairs = _aligned_sets(predictions, truth)
    per_plot = tuple(
        (pid, plot_f1(p, t)) for pid, (p, t) in zip(sorted(truth), pairs)
    )
    confusions = species_confusions(predictions, truth)
    per_species = tuple(sorted(confusions.items()))
    scored = [c.f1 for c in confusions.values() if c.total > 0]
    total = ConfusionCounts()
    for counts in confusions.values():
        total = total + counts
    return MetricsReport(
        macro_f1_plots=sum(f1 for _, f1 in per_plot) / len(per_plot),
        macro_f1_species=sum(scored) / len(scored) if scored else 0.0,
        micro_f1=total.f1,
        plot_count=len(truth),
        species_scored=len(scored),
        per_plot=per_plot,
        per_species=per_species,
    )


def write_report(path: Path | str, report: MetricsReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def truth_to_csv_text(truth: PlotSets) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=";", lineterminator="\n")
    writer.writerow(TRUTH_HEADER)
    for pid in sorted(truth):
        writer.writerow([pid, " ".join(str(s) for s in sorted(truth[pid]))])
    return buf.getvalue()


def truth_from_csv_text(text: str) -> dict[str, frozenset[int]]:
    rows = list(csv.reader(io.StringIO(text), delimiter=";"))
    if not rows or rows[0] != TRUTH_HEADER:
        raise ValueError(f"truth CSV must start with header {';'.join(TRUTH_HEADER)!r}")
    truth: dict[str, frozenset[int]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"truth CSV line {lineno}: expected 2 fields, got {len(row)}")
        pid, ids_field = row[0].strip(), row[1].strip()
        if not pid:
            raise ValueError(f"truth CSV line {lineno}: empty plot id")
        if pid in truth:
            raise ValueError(f"truth CSV line {lineno}: duplicate plot id {pid!r}")
        try:
            truth[pid] = frozenset(int(tok) for tok in ids_field.split()) if ids_field else frozenset()
        except ValueError as exc:
            raise ValueError(f"truth CSV line {lineno}: bad species id ({ids_field!r})") from exc
    if not truth:
        raise ValueError("truth CSV has no rows")
    return truth


def save_truth_csv(path: Path | str, truth: PlotSets) -> None:
    Path(path).write_text(truth_to_csv_text(truth), encoding="utf-8")


def load_truth_csv(path: Path | str) -> dict[str, frozenset[int]]:
    return truth_from_csv_text(Path(path).read_text(encoding="utf-8"))
