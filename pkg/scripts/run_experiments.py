#!/usr/bin/env python3
"""End-to-end retrieval experiment grid on a synthetic corpus.

Generates (or reuses) a labeled corpus, indexes it, then runs leave-one-out
retrieval for every diagnosis class and vote-classification confusion
matrices for every site, writing CSVs and a JSON summary.

Usage:
    python scripts/run_experiments.py -o runs/exp1 [--classes 4]
        [--slides 10] [--seed 7] [--top-k 10] [--fractions 0.1 0.3 0.7 1.0]
"""

import argparse
import time
from pathlib import Path

from bobsearch.evaluation import (
    EvalSpecError,
    ExperimentSpec,
    confusion_matrix,
    loo_accuracy,
    write_confusion_csv,
    write_loo_csv,
    write_summary_json,
)
from bobsearch.index_store import build_archive_index, load_index, save_index
from bobsearch.mosaic import IndexingConfig
from bobsearch.synthetic import default_corpus_spec, generate_synthetic_corpus


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("-o", "--out", type=Path, required=True)
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--slides", type=int, default=10, help="slides per class")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--top-k", type=int, default=10)
    parser.add_argument(
        "--fractions", type=float, nargs="+", default=[0.1, 0.3, 0.7, 1.0]
    )
    parser.add_argument("--repeats", type=int, default=50)
    parser.add_argument("--level0-size", type=int, default=1536)
    parser.add_argument("--s-l", type=int, default=16)
    parser.add_argument("--s-h", type=int, default=64)
    return parser.parse_args()


def main():
    args = parse_args()
    out: Path = args.out
    corpus_dir = out / "corpus"
    index_path = out / "index.bob"
    out.mkdir(parents=True, exist_ok=True)

    spec = default_corpus_spec(
        n_classes=args.classes,
        slides_per_class=args.slides,
        level0_size=args.level0_size,
    )
    if not corpus_dir.exists():
        t0 = time.monotonic()
        generate_synthetic_corpus(spec, args.seed, corpus_dir)
        print(f"corpus: {time.monotonic() - t0:.0f}s -> {corpus_dir}")

    cfg = IndexingConfig(s_l=args.s_l, s_h=args.s_h)
    if index_path.exists():
        index = load_index(index_path)
    else:
        t0 = time.monotonic()
        index = build_archive_index(corpus_dir, cfg)
        save_index(index, index_path)
        print(f"index: {time.monotonic() - t0:.0f}s, {len(index)} slides -> {index_path}")

    reports = []
    for cls in spec.classes:
        experiment = ExperimentSpec(
            attribute="diagnosis",
            attribute_value=cls.name,
            top_k=args.top_k,
            mosaic_fractions=tuple(args.fractions),
            repeats=args.repeats,
        )
        t0 = time.monotonic()
        report = loo_accuracy(index, experiment)
        reports.append(report)
        write_loo_csv(report, out / f"loo_{cls.name}.csv")
        print(
            f"{cls.name:>16}: acc={report.accuracy:.3f} "
            f"baseline={report.baseline_accuracy:.3f} "
            f"median-correct={report.correct_count_median:.1f} "
            f"({time.monotonic() - t0:.0f}s)"
        )
        for fraction in sorted(report.fraction_stats):
            mean, std = report.fraction_stats[fraction]
            print(f"{'':>18}fraction {fraction:.2f}: {mean:.3f} +/- {std:.3f}")

    confusions = []
    for site in sorted({c.site for c in spec.classes}):
        try:
            cm = confusion_matrix(index, site)
        except EvalSpecError as exc:
            print(f"{site:>16}: skipped ({exc})")
            continue
        confusions.append(cm)
        write_confusion_csv(cm, out / f"confusion_{site.replace(' ', '_')}.csv")
        print(f"{site:>16}: vote accuracy={cm.accuracy:.3f} labels={cm.labels}")

    write_summary_json(out / "summary.json", reports, confusions)
    print(f"summary -> {out / 'summary.json'}")


if __name__ == "__main__":
    main()
