"""Command-line interface mirroring the HTTP service 1:1.

Subcommands: gen-corpus, index, search, eval, serve. Search output is the
same JSON payload the service returns for the equivalent request.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, evaluation
from .features import import_external_features, write_external_features
from .index_store import build_archive_index, load_index, save_index
from .mosaic import IndexingConfig
from .search import ScanQuery, scan_knn
from .service import create_app, scan_result_payload
from .synthetic import CorpusSpec, default_corpus_spec, generate_synthetic_corpus

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bob",
        description="Content-based slide search over bunches of binary barcodes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-corpus", help="generate a synthetic labeled corpus")
    p_gen.add_argument("spec", help="corpus spec JSON file, or 'default'")
    p_gen.add_argument("seed", type=int, help="corpus seed")
    p_gen.add_argument("-o", "--out", required=True, help="output corpus directory")

    p_index = sub.add_parser("index", help="index every slide in a corpus directory")
    p_index.add_argument("corpus_dir")
    p_index.add_argument("-o", "--out", required=True, help="output index file")
    p_index.add_argument("--config", help="indexing config JSON file")
    p_index.add_argument("--features", help="external feature table to use instead of pixels")
    p_index.add_argument(
        "--save-features", help="write extracted feature vectors to this sidecar file"
    )
    p_index.add_argument("--workers", type=int, default=1)
    p_index.add_argument("--strict", action="store_true", help="fail on unusable slides")

    p_search = sub.add_parser("search", help="scan-level search for a slide")
    p_search.add_argument("--index", required=True)
    p_search.add_argument("--slide", required=True, help="query slide id")
    p_search.add_argument("--mode", choices=["horizontal", "vertical"], default="horizontal")
    p_search.add_argument("--site")
    p_search.add_argument("-k", type=int, default=10)
    p_search.add_argument("--fraction", type=float, default=1.0)
    p_search.add_argument("--seed", type=int, default=0)

    p_eval = sub.add_parser("eval", help="run a retrieval experiment")
    p_eval.add_argument("--index", required=True)
    p_eval.add_argument("--spec", required=True, help="experiment spec JSON file")
    p_eval.add_argument("-o", "--out", required=True, help="output directory")

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--index", required=True)
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--corpus", help="corpus directory for thumbnails")
    p_serve.add_argument("--feedback-log", default="feedback.jsonl")
    p_serve.add_argument("--ui", help="directory with the built frontend, served at /ui")

    return parser


def _load_config(path: str | None) -> IndexingConfig:
    if path is None:
        return IndexingConfig()
    return IndexingConfig.from_json(json.loads(Path(path).read_text("utf-8")))


def _cmd_gen_corpus(args) -> int:
    if args.spec == "default":
        spec = default_corpus_spec()
    else:
        spec = CorpusSpec.from_json(json.loads(Path(args.spec).read_text("utf-8")))
    slides = generate_synthetic_corpus(spec, args.seed, args.out)
    print(f"wrote {len(slides)} slides to {args.out}")
    return 0


def _cmd_index(args) -> int:
    cfg = _load_config(args.config)
    external = None
    extractor_id = None
    if args.features:
        external, descriptor = import_external_features(args.features)
        extractor_id = descriptor.extractor_id
    sink: dict | None = {} if args.save_features else None
    index = build_archive_index(
        args.corpus_dir,
        cfg,
        external_features=external,
        extractor_id=extractor_id,
        workers=args.workers,
        strict=args.strict,
        feature_sink=sink,
    )
    save_index(index, args.out)
    if args.save_features and sink is not None:
        write_external_features(args.save_features, index.extractor_id, sink)
    print(f"indexed {len(index)} slides (L={index.barcode_length}) -> {args.out}")
    return 0


def _cmd_search(args) -> int:
    index = load_index(args.index)
    if args.slide not in index.entries:
        print(f"error: unknown slide {args.slide!r}", file=sys.stderr)
        return 2
    query = ScanQuery(
        query=index.entries[args.slide],
        mode=args.mode,
        site=args.site,
        k=args.k,
        mosaic_fraction=args.fraction,
        seed=args.seed,
    )
    result = scan_knn(query, index)
    print(json.dumps(scan_result_payload(result, index), indent=2, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    index = load_index(args.index)
    spec_data = json.loads(Path(args.spec).read_text("utf-8"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    experiment = evaluation.ExperimentSpec.from_json(spec_data["experiment"])
    report = evaluation.loo_accuracy(index, experiment)
    evaluation.write_loo_csv(report, out_dir / "loo.csv")

    confusions = []
    for site in spec_data.get("confusion_sites", []):
        cm = evaluation.confusion_matrix(index, site)
        confusions.append(cm)
        slug = (cm.site or site).replace(" ", "_")
        evaluation.write_confusion_csv(cm, out_dir / f"confusion_{slug}.csv")

    evaluation.write_summary_json(out_dir / "summary.json", [report], confusions)
    print(
        f"accuracy={report.accuracy:.4f} baseline={report.baseline_accuracy:.4f} "
        f"-> {out_dir}"
    )
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    index = load_index(args.index)
    app = create_app(
        index,
        corpus_dir=args.corpus,
        feedback_path=args.feedback_log,
        ui_dir=args.ui,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "index": _cmd_index,
    "search": _cmd_search,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
