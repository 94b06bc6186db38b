"""Collect corpus texts, encode them, and write the JSONL embedding store.

Scoring and baseline runs need three text families: merged sense texts
(old gloss joined with its example usages), new-period usage examples,
and glosses. Sense texts and examples are exported at sentence
granularity, glosses at both granularities. A closure check re-derives
the requirements from the inputs and verifies the written file before the
script exits.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .corpus_io import CorpusReadError, read_corpus
from .encoders import build_encoder

logger = logging.getLogger(__name__)

FORMAT_NAME = "semshift-emb"
FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_ENCODER = 2
EXIT_CLOSURE = 3


def merged_sense_texts(rows: list[dict[str, str]]) -> list[str]:
    """Old-period gloss+examples per (word, sense), first-seen order.

    The first gloss of a sense wins; examples follow in file order,
    single-space separated. Senses with neither gloss nor examples are
    dropped.
    """
    glosses: dict[tuple[str, str], str] = {}
    examples: dict[tuple[str, str], list[str]] = {}
    order: list[tuple[str, str]] = []
    for row in rows:
        if row["period"] != "old" or not row["sense_id"]:
            continue
        key = (row["word"], row["sense_id"])
        if key not in glosses:
            glosses[key] = row["gloss"]
            examples[key] = []
            order.append(key)
        if row["example"]:
            examples[key].append(row["example"])
    texts = []
    for key in order:
        parts = ([glosses[key]] if glosses[key] else []) + examples[key]
        if parts:
            texts.append(" ".join(parts))
    return texts


def required_texts(rows: list[dict[str, str]]) -> dict[str, list[str]]:
    """Deduplicated texts per granularity, deterministic order."""
    sentence: dict[str, None] = {}
    tokens: dict[str, None] = {}
    for text in merged_sense_texts(rows):
        sentence.setdefault(text)
    for row in rows:
        if row["period"] == "new" and row["example"]:
            sentence.setdefault(row["example"])
    for row in rows:
        if row["gloss"]:
            sentence.setdefault(row["gloss"])
            tokens.setdefault(row["gloss"])
    return {"sentence": list(sentence), "tokens": list(tokens)}


def _format_vector(vector: np.ndarray) -> list[float]:
    # 9 significant digits: reload drift below 1e-8 per component
    return [float(f"{x:.9g}") for x in vector]


def run_export(
    inputs: list[str],
    granularity: str,
    model: str,
    out: str,
    batch: int = 32,
    normalize: bool = False,
    sort_records: bool = False,
) -> int:
    if batch < 1:
        raise ValueError("batch size must be at least 1")
    wanted = {"sentence", "tokens"} if granularity == "both" else {granularity}

    sentence_texts: dict[str, None] = {}
    token_texts: dict[str, None] = {}
    for path in inputs:
        needed = required_texts(read_corpus(path))
        for text in needed["sentence"]:
            sentence_texts.setdefault(text)
        for text in needed["tokens"]:
            token_texts.setdefault(text)

    encoder = build_encoder(model, normalize=normalize)
    records: list[tuple[str, str, list[str] | None, list[list[float]]]] = []

    if "sentence" in wanted:
        texts = list(sentence_texts)
        for start in range(0, len(texts), batch):
            chunk = texts[start : start + batch]
            vectors = encoder.encode_sentences(chunk)
            for text, vector in zip(chunk, vectors):
                records.append((text, "sentence", None, [_format_vector(vector)]))
    if "tokens" in wanted:
        for text in token_texts:
            toks, vectors = encoder.encode_tokens(text)
            records.append((text, "tokens", list(toks), [_format_vector(v) for v in vectors]))

    if sort_records:
        records.sort(key=lambda r: (r[1], r[0]))

    out_path = Path(out)
    with out_path.open("w", encoding="utf-8") as handle:
        header = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "dim": encoder.dim,
            "provenance": encoder.provenance,
        }
        handle.write(json.dumps(header, ensure_ascii=False) + "\n")
        for text, gran, toks, vectors in records:
            record = {
                "text": text,
                "granularity": gran,
                "dim": encoder.dim,
                "tokens": toks,
                "vectors": vectors,
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    if encoder.truncated:
        logger.warning("%d texts exceeded the encoder length limit and were truncated",
                       encoder.truncated)

    missing = closure_check(inputs, wanted, out_path)
    if missing:
        for gran, text in missing[:10]:
            print(f"closure check failed: missing {gran} embedding for: {text[:80]!r}",
                  file=sys.stderr)
        return EXIT_CLOSURE
    print(f"wrote {out_path} ({len(records)} records, dim {encoder.dim}, "
          f"provenance {encoder.provenance})")
    return EXIT_OK


def closure_check(inputs, wanted, out_path: Path) -> list[tuple[str, str]]:
    """Re-derive required texts and verify the written file covers them."""
    written: set[tuple[str, str]] = set()
    with Path(out_path).open("r", encoding="utf-8") as handle:
        handle.readline()  # header
        for line in handle:
            if line.strip():
                rec = json.loads(line)
                written.add((rec["granularity"], rec["text"]))
    missing = []
    for path in inputs:
        needed = required_texts(read_corpus(path))
        for gran in wanted:
            for text in needed[gran]:
                if (gran, text) not in written:
                    missing.append((gran, text))
    return missing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semshift-export",
        description="Encode corpus texts and write a semshift-emb JSONL store.",
    )
    parser.add_argument("--input", action="append", required=True,
                        help="corpus/prediction TSV (repeatable)")
    parser.add_argument("--granularity", choices=("sentence", "tokens", "both"),
                        default="both")
    parser.add_argument("--model", default="setu4993/LEALLA-large",
                        help="Hugging Face model id, or hash:<dim> for the "
                             "deterministic test encoder")
    parser.add_argument("--out", required=True)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--normalize", action="store_true",
                        help="L2-normalize vectors before writing")
    parser.add_argument("--sorted", action="store_true", dest="sort_records",
                        help="sort records by (granularity, text) for "
                             "byte-identical re-exports")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run_export(
            inputs=args.input,
            granularity=args.granularity,
            model=args.model,
            out=args.out,
            batch=args.batch,
            normalize=args.normalize,
            sort_records=args.sort_records,
        )
    except (CorpusReadError, ValueError, OSError) as exc:
        print(f"semshift-export: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as exc:  # model loading / inference failures
        print(f"semshift-export: encoder failure: {exc}", file=sys.stderr)
        return EXIT_ENCODER


def entrypoint() -> None:
    sys.exit(main())
