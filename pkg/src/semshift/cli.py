"""Command-line interface wiring corpora, embeddings, scoring and baselines.

Exit codes: 0 success, 1 validation failure, 2 I/O or embedding-provider
failure, 64 usage error. All numeric output uses 4 decimals so diffs stay
stable, and runs are deterministic for identical inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import baseline_subtask2
from .baseline_subtask1 import APConfig, DEFAULT_THRESHOLD, fill_prediction, run_baseline
from .corpus import (
    CorpusError,
    build_inventories,
    compute_stats,
    parse_corpus,
    parse_subtask1_prediction,
    parse_subtask2_prediction,
    write_corpus,
)
from .embeddings import EMB_URL_ENV, EmbeddingError, ServiceProvider, load_store
from .metrics import MetricInputError
from .scoring import (
    ScoringError,
    combine_aggregates,
    parse_kv_text,
    score_subtask1,
    score_subtask2,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_USAGE = 64


class CLIUsageError(Exception):
    """Bad flag combination detected after argument parsing."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _preference(value: str) -> float | str:
    if value == "median":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"preference must be 'median' or a number, got {value!r}")


def _add_embedding_flags(sub: argparse.ArgumentParser) -> None:
    group = sub.add_mutually_exclusive_group()
    group.add_argument("--emb-file", help="embedding store (JSONL) path")
    group.add_argument(
        "--emb-url",
        help=f"embedding service base URL (flag wins over ${EMB_URL_ENV})",
    )
    sub.add_argument("--emb-cache", help="cache file for service lookups (JSONL)")
    sub.add_argument("--timeout", type=float, default=30.0, help="service timeout in seconds")
    sub.add_argument("--retries", type=int, default=3, help="service retry attempts")


def _provider(args: argparse.Namespace):
    url = args.emb_url or os.environ.get(EMB_URL_ENV)
    if args.emb_file and args.emb_url:
        raise CLIUsageError("give either --emb-file or --emb-url, not both")
    if args.emb_file:
        return load_store(args.emb_file)
    if url:
        return ServiceProvider(
            url, timeout=args.timeout, retries=args.retries, cache_path=args.emb_cache
        )
    raise CLIUsageError(f"an embedding source is required: --emb-file, --emb-url or ${EMB_URL_ENV}")


def _write_report(report, out_prefix: str | None) -> None:
    sys.stdout.write(report.to_table_text())
    sys.stdout.write("\n")
    sys.stdout.write(report.to_kv_text())
    if out_prefix:
        Path(out_prefix + ".tsv").write_text(report.to_kv_text(), encoding="utf-8")
        Path(out_prefix + ".words.tsv").write_text(report.to_detail_tsv(), encoding="utf-8")


def cmd_validate(args: argparse.Namespace) -> int:
    records = parse_corpus(args.input, mode=args.mode)
    stats = compute_stats(records)
    inventories = build_inventories(records)
    print(
        f"OK: {len(records)} records, {stats.target_words} target words, "
        f"{len(inventories)} words with old-period inventories"
    )
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    records = parse_corpus(args.input, mode=args.mode)
    stats = compute_stats(records)
    kv_text = "\n".join(stats.to_kv_lines()) + "\n"
    print(stats.to_table())
    print()
    sys.stdout.write(kv_text)
    if args.out:
        Path(args.out).write_text(kv_text, encoding="utf-8")
    if args.per_word:
        lines = ["word\tn_old\tn_new\tsenses_old\tsenses_new\tsenses_all"]
        for word, ws in sorted(stats.per_word.items()):
            lines.append(
                f"{word}\t{ws.n_old}\t{ws.n_new}\t{ws.senses_old}\t{ws.senses_new}\t{ws.senses_all}"
            )
        Path(args.per_word).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_score1(args: argparse.Namespace) -> int:
    gold = parse_corpus(args.gold, mode="gold")
    prediction = parse_subtask1_prediction(args.pred)
    report = score_subtask1(gold, prediction, jobs=args.jobs)
    report = report.with_metadata(
        {"gold_fingerprint": _fingerprint(args.gold), "pred_fingerprint": _fingerprint(args.pred)}
    )
    _write_report(report, args.out)
    return EXIT_OK


def cmd_score2(args: argparse.Namespace) -> int:
    gold = parse_corpus(args.gold, mode="gold")
    prediction = parse_subtask2_prediction(args.pred)
    provider = _provider(args)
    report = score_subtask2(gold, prediction, provider, penalized=args.penalty, jobs=args.jobs)
    report = report.with_metadata(
        {"gold_fingerprint": _fingerprint(args.gold), "pred_fingerprint": _fingerprint(args.pred)}
    )
    _write_report(report, args.out)
    return EXIT_OK


def cmd_baseline1(args: argparse.Namespace) -> int:
    records = parse_corpus(args.input, mode="test")
    provider = _provider(args)
    config = APConfig(
        damping=args.damping,
        max_iter=args.max_iter,
        convergence_window=args.conv_window,
        preference=args.preference,
    )
    run = run_baseline(
        records,
        provider,
        threshold=args.threshold,
        config=config,
        centroid_prototypes=args.centroid,
        jobs=args.jobs,
    )
    write_corpus(fill_prediction(records, run.prediction), args.out)
    sidecar = {
        **run.metadata,
        "input_fingerprint": _fingerprint(args.input),
        "skipped_words": list(run.skipped_words),
        "fallback_words": list(run.fallback_words),
    }
    meta_path = args.meta or args.out + ".meta.json"
    Path(meta_path).write_text(
        json.dumps(sidecar, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(
        f"wrote {args.out} ({run.metadata['n_words']} words, "
        f"{run.metadata['n_skipped_words']} skipped); metadata in {meta_path}"
    )
    return EXIT_OK


def cmd_baseline2(args: argparse.Namespace) -> int:
    records = parse_corpus(args.input, mode="test")
    subtask1_output = parse_subtask1_prediction(args.pred)
    provider = _provider(args)
    extra = baseline_subtask2.load_gloss_list(args.gloss_pool) if args.gloss_pool else None
    pool = baseline_subtask2.build_pool(build_inventories(records), extra)
    prediction, metadata = baseline_subtask2.retrieve_glosses(
        subtask1_output, records, provider, pool
    )
    filled = []
    for rec in fill_prediction(records, subtask1_output):
        if rec.is_new:
            gloss = prediction.glosses.get(rec.word, {}).get(rec.sense_id)
            if gloss is not None:
                rec = replace(rec, gloss=gloss)
        filled.append(rec)
    write_corpus(filled, args.out)
    meta_path = args.meta or args.out + ".meta.json"
    Path(meta_path).write_text(
        json.dumps(
            {**metadata, "input_fingerprint": _fingerprint(args.input)},
            ensure_ascii=False, indent=2, sort_keys=True,
        ) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {args.out} ({metadata['n_words']} words with retrieved glosses)")
    return EXIT_OK


def cmd_combine(args: argparse.Namespace) -> int:
    reports = [parse_kv_text(Path(p).read_text(encoding="utf-8")) for p in args.reports]
    combined = combine_aggregates(reports)
    lines = [f"{key}\t{value:.4f}" for key, value in combined.items()]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(
        prog="semshift",
        description=(
            "Scoring harness and baselines for diachronic sense-annotated corpora: "
            "validate data, compute stats, score novel-sense detection and "
            "gained-sense definitions, and run the clustering baseline."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a corpus file")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=("gold", "test", "permissive"), default="gold")
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("stats", help="per-period sample counts and per-word histograms")
    p.add_argument("--input", required=True)
    p.add_argument("--mode", choices=("gold", "test", "permissive"), default="permissive")
    p.add_argument("--out", help="write the key-value block to this file")
    p.add_argument("--per-word", help="write per-word counts to this TSV")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("score1", help="score a novel-sense detection submission")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", help="report file prefix (.tsv and .words.tsv)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_score1)

    p = sub.add_parser("score2", help="score a gained-sense definition submission")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--penalty", action="store_true", help="apply the IoU inventory-size penalty")
    p.add_argument("--out", help="report file prefix (.tsv and .words.tsv)")
    p.add_argument("--jobs", type=int, default=1)
    _add_embedding_flags(p)
    p.set_defaults(handler=cmd_score2)

    p = sub.add_parser("baseline1", help="cluster new usages and map them to old senses")
    p.add_argument("--input", required=True, help="test corpus TSV")
    p.add_argument("--out", required=True, help="prediction TSV to write")
    p.add_argument("--meta", help="metadata sidecar path (default: <out>.meta.json)")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--damping", type=float, default=0.9)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--conv-window", type=int, default=50)
    p.add_argument("--preference", type=_preference, default="median")
    p.add_argument("--centroid", action="store_true", help="use centroid prototypes")
    p.add_argument("--jobs", type=int, default=1)
    _add_embedding_flags(p)
    p.set_defaults(handler=cmd_baseline1)

    p = sub.add_parser("baseline2", help="retrieve glosses for novel sense clusters")
    p.add_argument("--input", required=True, help="test corpus TSV")
    p.add_argument("--pred", required=True, help="subtask 1 prediction TSV")
    p.add_argument("--out", required=True, help="prediction TSV to write")
    p.add_argument("--meta", help="metadata sidecar path (default: <out>.meta.json)")
    p.add_argument("--gloss-pool", help="external word<TAB>gloss candidate list")
    p.add_argument("--jobs", type=int, default=1)
    _add_embedding_flags(p)
    p.set_defaults(handler=cmd_baseline2)

    p = sub.add_parser("combine", help="average metric keys across report files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_combine)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except CLIUsageError as exc:
        print(f"semshift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmbeddingError as exc:
        print(f"semshift: embedding failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"semshift: i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CorpusError, ScoringError, MetricInputError, ValueError) as exc:
        print(f"semshift: validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
