"""Shared fixtures: corpus builders and deterministic embedding providers."""

from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from semshift.corpus import COLUMNS, UsageRecord
from semshift.embeddings import EmbeddingProvider
from semshift.metrics import TokenEmbeddingSeq


def record(
    usage_id: str,
    word: str,
    period: str,
    sense_id: str = "",
    gloss: str = "",
    example: str = "",
    orth: str = "",
    indices: str = "",
    date: str = "",
) -> UsageRecord:
    return UsageRecord(
        usage_id=usage_id,
        word=word,
        orth=orth,
        sense_id=sense_id,
        gloss=gloss,
        example=example or f"usage text for {usage_id}",
        indices_target_token=indices,
        date=date,
        period=period,
    )


def write_tsv(path: Path, records, columns=COLUMNS) -> Path:
    lines = ["\t".join(columns)]
    for rec in records:
        by_name = dict(zip(COLUMNS, rec.as_row()))
        lines.append("\t".join(by_name[c] for c in columns))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class HashEmbeddingProvider(EmbeddingProvider):
    """Deterministic fake encoder: identical texts map to identical vectors."""

    def __init__(self, dim: int = 48):
        self.dim = dim
        self.provenance = f"test-hash:{dim}"

    def _vector(self, key: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")
        vec = np.random.default_rng(seed).standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def get_sentence(self, text: str) -> np.ndarray:
        return self._vector("sentence\x00" + text)

    def get_tokens(self, text: str) -> TokenEmbeddingSeq:
        tokens = text.split() or [text]
        vectors = np.stack([self._vector("token\x00" + tok) for tok in tokens])
        return TokenEmbeddingSeq(tokens=tuple(tokens), vectors=vectors)


@pytest.fixture
def hash_provider() -> HashEmbeddingProvider:
    return HashEmbeddingProvider()


def small_gold_records() -> list[UsageRecord]:
    """Three-word gold corpus: alpha and gamma gain senses, beta does not."""
    return [
        # alpha: two old senses, one gained sense in the new period
        record("a1", "alpha", "old", "alpha_s1", "first old meaning of alpha", "alpha used plainly"),
        record("a2", "alpha", "old", "alpha_s1", "first old meaning of alpha", "alpha used plainly again"),
        record("a3", "alpha", "old", "alpha_s2", "second old meaning of alpha", "alpha in another way"),
        record("a4", "alpha", "new", "alpha_s1", "first old meaning of alpha", "modern alpha plain"),
        record("a5", "alpha", "new", "alpha_s1", "first old meaning of alpha", "modern alpha plain again"),
        record("a6", "alpha", "new", "alpha_s2", "second old meaning of alpha", "modern alpha other"),
        record("a7", "alpha", "new", "alpha_g1", "a freshly gained alpha meaning", "novel alpha usage"),
        # beta: one old sense, nothing gained
        record("b1", "beta", "old", "beta_s1", "the beta meaning", "beta as before"),
        record("b2", "beta", "new", "beta_s1", "the beta meaning", "beta still the same"),
        record("b3", "beta", "new", "beta_s1", "the beta meaning", "beta once more"),
        # gamma: one old sense, two gained senses
        record("g1", "gamma", "old", "gamma_s1", "the old gamma meaning", "gamma of old"),
        record("g2", "gamma", "new", "gamma_s1", "the old gamma meaning", "gamma continuing"),
        record("g3", "gamma", "new", "gamma_g1", "first gained gamma meaning", "gamma anew"),
        record("g4", "gamma", "new", "gamma_g2", "second gained gamma meaning", "gamma yet newer"),
    ]


@pytest.fixture
def gold_records() -> list[UsageRecord]:
    return small_gold_records()


@pytest.fixture
def gold_tsv(tmp_path: Path, gold_records) -> Path:
    return write_tsv(tmp_path / "gold.tsv", gold_records)


def appendix_style_records() -> list[UsageRecord]:
    """One Russian word with one old sense and two senses gained in the new period."""
    old_gloss = "транспортное средство, идущее с повышенной скоростью"
    return [
        record("ru_0", "экспресс", "old", "ekspress_IMBVcXtuQEw", old_gloss, "поезд-экспресс, особенно скорый."),
        record("ru_1", "экспресс", "new", "ekspress_IMBVcXtuQEw", old_gloss, "ехал я в экспрессе, в спальном вагоне."),
        record("ru_2", "экспресс", "new", "ekspress_ao65pt5Rcys", "ставка на несколько независимых исходов", "он отдал 700 тыс. рублей на экспресс."),
        record("ru_3", "экспресс", "new", "ekspress_IMBVcXtuQEw", old_gloss, "в этом ночном экспрессе ездили дипломаты."),
        record("ru_4", "экспресс", "new", "ekspress_u4-6oODM_fk", "срочное почтовое отправление", "пошли мне экспрессом в Отрадное."),
    ]


@pytest.fixture
def appendix_records() -> list[UsageRecord]:
    return appendix_style_records()


def make_store_file(path: Path, provider, sentence_texts=(), token_texts=()) -> Path:
    """Dump provider vectors for the given texts into a store JSONL file."""
    from semshift.embeddings import StoreWriter

    with StoreWriter(path, dim=provider.dim, provenance=provider.provenance) as writer:
        for text in dict.fromkeys(sentence_texts):
            writer.add_sentence(text, provider.get_sentence(text))
        for text in dict.fromkeys(token_texts):
            seq = provider.get_tokens(text)
            writer.add_tokens(text, seq.tokens, seq.vectors)
    return path


def _stub_vector(text: str, dim: int) -> list[float]:
    rng = np.random.default_rng(abs(hash(text)) % (2**32))
    vec = rng.standard_normal(dim)
    return [float(x) for x in vec / np.linalg.norm(vec)]


class EmbedStubHandler(BaseHTTPRequestHandler):
    """Minimal /embed endpoint with deterministic vectors and fault injection."""

    def do_POST(self):  # noqa: N802  (http.server API)
        server = self.server
        server.request_count += 1
        if self.path != "/embed":
            self.send_error(404)
            return
        if server.fail_status is not None:
            self.send_error(server.fail_status)
            return
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        results = []
        for text in body["texts"]:
            if body["granularity"] == "sentence":
                results.append({"tokens": None, "vectors": [_stub_vector(text, server.dim)]})
            else:
                tokens = text.split() or [text]
                results.append(
                    {
                        "tokens": tokens,
                        "vectors": [_stub_vector("tok:" + t, server.dim) for t in tokens],
                    }
                )
        payload = json.dumps({"dim": server.dim, "results": results}).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def embed_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), EmbedStubHandler)
    server.dim = 16
    server.request_count = 0
    server.fail_status = None
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        thread.join()


def embed_server_url(server) -> str:
    return f"http://127.0.0.1:{server.server_address[1]}"
