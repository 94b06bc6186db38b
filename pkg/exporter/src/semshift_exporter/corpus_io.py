"""Minimal reader for the 9-column usage-corpus TSV format."""

from __future__ import annotations

from pathlib import Path

COLUMNS = (
    "usage_id",
    "word",
    "orth",
    "sense_id",
    "gloss",
    "example",
    "indices_target_token",
    "date",
    "period",
)


class CorpusReadError(Exception):
    pass


def read_corpus(path: str | Path) -> list[dict[str, str]]:
    """Rows as column-name dicts, file order preserved, any column order."""
    text = Path(path).read_text(encoding="utf-8-sig")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [line[:-1] if line.endswith("\r") else line for line in lines]
    if not lines:
        raise CorpusReadError(f"{path}: empty file, expected a header row")
    header = lines[0].split("\t")
    for column in COLUMNS:
        if column not in header:
            raise CorpusReadError(f"{path}: missing column {column!r}")
    positions = {name: header.index(name) for name in COLUMNS}
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        fields = line.split("\t")
        if len(fields) != len(header):
            raise CorpusReadError(
                f"{path}: line {lineno}: expected {len(header)} fields, found {len(fields)}"
            )
        rows.append({name: fields[positions[name]] for name in COLUMNS})
    return rows
