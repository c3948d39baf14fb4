"""Leave-one-out retrieval experiments, analytic chance baselines, and
vote-classification confusion matrices.

A retrieval is successful when at least one of the top-k results shares the
query's attribute (site or diagnosis). Outputs are CSV rows plus a JSON
summary; both are byte-stable for fixed seeds.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .index_store import ArchiveIndex
from .search import HORIZONTAL, ScanQuery, classify_by_vote, scan_knn
from .slide_io import normalize_label

__all__ = [
    "ExperimentSpec",
    "QueryRecord",
    "EvalReport",
    "ConfusionReport",
    "EvalSpecError",
    "loo_accuracy",
    "random_baseline",
    "simulate_random_baseline",
    "bernoulli_expectation",
    "correct_retrieval_counts",
    "confusion_matrix",
    "write_loo_csv",
    "write_confusion_csv",
    "write_summary_json",
]

SITE = "site"
DIAGNOSIS = "diagnosis"


class EvalSpecError(ValueError):
    """Experiment spec cannot be evaluated on the given index."""


@dataclass(frozen=True)
class ExperimentSpec:
    attribute: str  # "site" | "diagnosis"
    attribute_value: str
    top_k: int = 10
    mosaic_fractions: tuple[float, ...] = (0.10, 0.30, 0.70, 1.00)
    repeats: int = 50  # per fraction < 1; the full mosaic runs once

    def __post_init__(self):
        if self.attribute not in (SITE, DIAGNOSIS):
            raise EvalSpecError(f"unknown attribute {self.attribute!r}")
        if self.top_k < 1:
            raise EvalSpecError("top_k must be >= 1")
        if not self.mosaic_fractions or any(
            not 0 < f <= 1 for f in self.mosaic_fractions
        ):
            raise EvalSpecError("mosaic fractions must be in (0, 1]")
        if self.repeats < 1:
            raise EvalSpecError("repeats must be >= 1")

    def to_json(self) -> dict:
        return {
            "attribute": self.attribute,
            "attribute_value": self.attribute_value,
            "top_k": self.top_k,
            "mosaic_fractions": list(self.mosaic_fractions),
            "repeats": self.repeats,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentSpec":
        return cls(
            attribute=data["attribute"],
            attribute_value=data["attribute_value"],
            top_k=int(data.get("top_k", 10)),
            mosaic_fractions=tuple(float(f) for f in data.get("mosaic_fractions", (0.10, 0.30, 0.70, 1.00))),
            repeats=int(data.get("repeats", 50)),
        )


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    fraction: float
    seed: int
    success: bool
    correct_count: int


@dataclass
class EvalReport:
    spec: ExperimentSpec
    mode: str
    n_corpus: int
    n_class: int  # slides carrying the attribute value, query included
    records: list[QueryRecord]
    accuracy: float  # mean success at fraction 1.0
    fraction_stats: dict[float, tuple[float, float]]  # fraction -> (mean, std over seeds)
    correct_count_median: float  # at fraction 1.0
    baseline_accuracy: float
    bernoulli_expectation: float


def _attribute_of(index: ArchiveIndex, slide_id: str, attribute: str) -> str | None:
    labels = index.entries[slide_id].labels
    return labels.primary_site if attribute == SITE else labels.primary_diagnosis


def random_baseline(n_total: int, n_class: int, k: int) -> float:
    """Chance that a uniform k-subset of the other slides hits the class.

    With n_class slides sharing the attribute (query included) in a corpus of
    n_total, a random retrieval of k of the remaining n_total - 1 slides
    succeeds with probability 1 - C(n_total - n_class, k) / C(n_total - 1, k).
    """
    if not 2 <= n_class <= n_total:
        raise EvalSpecError("need 2 <= n_class <= n_total")
    if not 1 <= k <= n_total - 1:
        raise EvalSpecError("need 1 <= k <= n_total - 1")
    return 1.0 - math.comb(n_total - n_class, k) / math.comb(n_total - 1, k)


def simulate_random_baseline(
    n_total: int, n_class: int, k: int, draws: int = 100_000, seed: int = 0
) -> tuple[float, float]:
    """Monte Carlo estimate of random_baseline; returns (mean, standard error)."""
    rng = np.random.default_rng(seed)
    others = np.zeros(n_total - 1, dtype=bool)
    others[: n_class - 1] = True  # same-class slides among the others
    hits = 0
    for _ in range(draws):
        pick = rng.choice(n_total - 1, size=k, replace=False)
        hits += bool(others[pick].any())
    p = hits / draws
    se = math.sqrt(max(p * (1 - p), 1e-12) / draws)
    return p, se


def bernoulli_expectation(n_total: int, n_class: int, k: int) -> float:
    """Expected number of same-class slides in a random k-retrieval."""
    return k * (n_class - 1) / (n_total - 1)


def loo_accuracy(index: ArchiveIndex, spec: ExperimentSpec) -> EvalReport:
    """Leave-one-out retrieval over every slide carrying the attribute value.

    Horizontal search is used for both attributes. For each fraction < 1 the
    experiment repeats with seeds 0..repeats-1; the full mosaic runs once.
    """
    wanted = normalize_label(spec.attribute_value)
    queries = sorted(
        sid
        for sid in index.entries
        if _attribute_of(index, sid, spec.attribute) == wanted
    )
    if len(queries) < 2:
        raise EvalSpecError(
            f"attribute {spec.attribute}={spec.attribute_value!r} needs >= 2 slides, "
            f"found {len(queries)}"
        )

    n_total = len(index)
    records: list[QueryRecord] = []
    fraction_stats: dict[float, tuple[float, float]] = {}

    for fraction in spec.mosaic_fractions:
        seeds = range(spec.repeats) if fraction < 1.0 else range(1)
        per_seed_acc = []
        for seed in seeds:
            successes = 0
            for sid in queries:
                result = scan_knn(
                    ScanQuery(
                        query=index.entries[sid],
                        mode=HORIZONTAL,
                        k=spec.top_k,
                        mosaic_fraction=fraction,
                        seed=seed,
                    ),
                    index,
                )
                correct = sum(
                    _attribute_of(index, m.slide_id, spec.attribute) == wanted
                    for m in result.ranked
                )
                records.append(
                    QueryRecord(sid, fraction, seed, correct > 0, correct)
                )
                successes += correct > 0
            per_seed_acc.append(successes / len(queries))
        mean = statistics.fmean(per_seed_acc)
        std = statistics.pstdev(per_seed_acc) if len(per_seed_acc) > 1 else 0.0
        fraction_stats[fraction] = (mean, std)

    full = [r for r in records if r.fraction == 1.0]
    if full:
        accuracy = sum(r.success for r in full) / len(full)
        count_median = float(statistics.median(r.correct_count for r in full))
    else:
        accuracy = math.nan
        count_median = math.nan

    return EvalReport(
        spec=spec,
        mode=HORIZONTAL,
        n_corpus=n_total,
        n_class=len(queries),
        records=records,
        accuracy=accuracy,
        fraction_stats=fraction_stats,
        correct_count_median=count_median,
        baseline_accuracy=random_baseline(n_total, len(queries), spec.top_k),
        bernoulli_expectation=bernoulli_expectation(n_total, len(queries), spec.top_k),
    )


def correct_retrieval_counts(index: ArchiveIndex, spec: ExperimentSpec) -> EvalReport:
    """Correct-retrieval counts with the full mosaic (fraction fixed at 1.0)."""
    fixed = ExperimentSpec(
        attribute=spec.attribute,
        attribute_value=spec.attribute_value,
        top_k=spec.top_k,
        mosaic_fractions=(1.0,),
        repeats=1,
    )
    return loo_accuracy(index, fixed)


@dataclass
class ConfusionReport:
    site: str
    labels: list[str]  # row/column order
    matrix: np.ndarray  # rows = true, columns = predicted
    accuracy: float
    predictions: dict[str, str] = field(default_factory=dict)  # slide_id -> predicted


def confusion_matrix(index: ArchiveIndex, site: str, top_k: int = 5) -> ConfusionReport:
    """Vote-classify every slide of a site and tabulate true vs predicted."""
    wanted = normalize_label(site)
    slide_ids = sorted(
        sid
        for sid, slide in index.entries.items()
        if slide.labels.primary_site == wanted
    )
    by_label: dict[str, list[str]] = {}
    for sid in slide_ids:
        label = index.entries[sid].labels.primary_diagnosis or ""
        by_label.setdefault(label, []).append(sid)
    if len(by_label) < 2 or any(len(v) < 2 for v in by_label.values()):
        raise EvalSpecError(
            f"site {site!r} needs >= 2 diagnosis classes with >= 2 slides each"
        )

    labels = sorted(by_label)
    pos = {lab: i for i, lab in enumerate(labels)}
    matrix = np.zeros((len(labels), len(labels)), dtype=np.int64)
    predictions: dict[str, str] = {}
    for sid in slide_ids:
        true = index.entries[sid].labels.primary_diagnosis or ""
        predicted, _ = classify_by_vote(index.entries[sid], index, site, top_k=top_k)
        predictions[sid] = predicted
        col = pos.get(predicted)
        if col is None:  # predicted label from outside the site's classes
            labels.append(predicted)
            pos[predicted] = len(labels) - 1
            matrix = np.pad(matrix, ((0, 1), (0, 1)))
            col = pos[predicted]
        matrix[pos[true], col] += 1

    accuracy = float(np.trace(matrix)) / len(slide_ids)
    return ConfusionReport(
        site=wanted or site, labels=labels, matrix=matrix, accuracy=accuracy,
        predictions=predictions,
    )


def write_loo_csv(report: EvalReport, path: str | Path) -> None:
    """Rows (query_id, fraction, seed, success, correct_count), byte-stable."""
    rows = sorted(
        report.records, key=lambda r: (r.fraction, r.seed, r.query_id)
    )
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["query_id", "fraction", "seed", "success", "correct_count"])
        for r in rows:
            writer.writerow(
                [r.query_id, f"{r.fraction:g}", r.seed, int(r.success), r.correct_count]
            )


def write_confusion_csv(report: ConfusionReport, path: str | Path) -> None:
    """Rows (true, predicted, count) over the label grid, byte-stable."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["true", "predicted", "count"])
        for i, true in enumerate(report.labels):
            for j, predicted in enumerate(report.labels):
                writer.writerow([true, predicted, int(report.matrix[i, j])])


def write_summary_json(
    path: str | Path,
    reports: list[EvalReport],
    confusions: list[ConfusionReport] = (),
) -> None:
    payload = {
        "experiments": [
            {
                "spec": r.spec.to_json(),
                "mode": r.mode,
                "n_corpus": r.n_corpus,
                "n_class": r.n_class,
                "accuracy": r.accuracy,
                "baseline_accuracy": r.baseline_accuracy,
                "bernoulli_expectation": r.bernoulli_expectation,
                "correct_count_median": r.correct_count_median,
                "fraction_stats": {
                    f"{frac:g}": {"mean": mean, "std": std}
                    for frac, (mean, std) in sorted(r.fraction_stats.items())
                },
            }
            for r in reports
        ],
        "confusions": [
            {
                "site": c.site,
                "labels": c.labels,
                "matrix": c.matrix.tolist(),
                "accuracy": c.accuracy,
            }
            for c in confusions
        ],
    }
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
