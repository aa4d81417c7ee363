"""Node text encoders: TF-IDF, feature hashing, and remote embeddings.

All encoders return a :class:`FeatureMatrix` whose rows align with the node
order of the texts passed in. The remote client batches requests, keeps a
per-provider on-disk cache, and preserves input order regardless of the
order batches complete in.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import EmptyVocabularyError, ProtocolError, TransportError

__all__ = [
    "FeatureMatrix",
    "TfidfModel",
    "tokenize",
    "fit_tfidf",
    "encode_tfidf",
    "encode_hash",
    "encode_external",
    "concat_features",
    "HttpEmbeddingProvider",
]

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# retry schedule for remote embedding batches
MAX_ATTEMPTS = 5
BASE_DELAY = 1.0
BACKOFF_FACTOR = 2.0


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense node-by-dimension feature matrix with encoder provenance."""

    values: np.ndarray
    provenance: str

    def __post_init__(self):
        if not self.provenance:
            raise ValueError("provenance must be non-empty")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"feature matrix must be 2-d, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("feature matrix contains non-finite entries")
        object.__setattr__(self, "values", values)

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def concat_features(blocks: Sequence[FeatureMatrix]) -> FeatureMatrix:
    """Column-wise concatenation of row-aligned feature blocks."""
    if not blocks:
        raise ValueError("need at least one feature block")
    rows = {b.node_count for b in blocks}
    if len(rows) != 1:
        raise ValueError(f"feature blocks disagree on row count: {sorted(rows)}")
    values = np.hstack([b.values for b in blocks])
    provenance = "+".join(b.provenance for b in blocks)
    return FeatureMatrix(values=values, provenance=provenance)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop tokens shorter than 2."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]


# ---------------------------------------------------------------------------
# TF-IDF


@dataclass(frozen=True)
class TfidfModel:
    """Vocabulary and idf weights fitted on a corpus."""

    vocabulary: dict[str, int]
    idf: np.ndarray
    max_dim: int

    @property
    def dim(self) -> int:
        return len(self.vocabulary)


def fit_tfidf(texts: Sequence[str], max_dim: int = 1024) -> TfidfModel:
    """Fit a capped vocabulary by document frequency.

    Keeps the ``max_dim`` most document-frequent terms, breaking frequency
    ties lexicographically. idf(t) = ln((1 + N) / (1 + df(t))) + 1.
    """
    if not texts:
        raise ValueError("texts must be non-empty")
    if max_dim < 1:
        raise ValueError("max_dim must be >= 1")
    df: dict[str, int] = {}
    for text in texts:
        for term in set(tokenize(text)):
            df[term] = df.get(term, 0) + 1
    if not df:
        raise EmptyVocabularyError("corpus produced no tokens of length >= 2")
    ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[:max_dim]
    vocabulary = {term: col for col, (term, _) in enumerate(ranked)}
    n = len(texts)
    idf = np.array(
        [np.log((1.0 + n) / (1.0 + df[term])) + 1.0 for term, _ in ranked],
        dtype=np.float64,
    )
    return TfidfModel(vocabulary=vocabulary, idf=idf, max_dim=max_dim)


def encode_tfidf(model: TfidfModel, texts: Sequence[str]) -> FeatureMatrix:
    """Encode texts as L2-normalized tf·idf rows; unknown terms are ignored."""
    values = np.zeros((len(texts), model.dim), dtype=np.float64)
    vocab = model.vocabulary
    for row, text in enumerate(texts):
        for token in tokenize(text):
            col = vocab.get(token)
            if col is not None:
                values[row, col] += 1.0
    values *= model.idf
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    np.divide(values, norms, out=values, where=norms > 0)
    return FeatureMatrix(values=values, provenance=f"tfidf(max_dim={model.max_dim})")


# ---------------------------------------------------------------------------
# feature hashing


def _hash_token(seed: int, token: str) -> tuple[int, int]:
    digest = hashlib.sha256(f"{seed}\x1f{token}".encode("utf-8")).digest()
    bucket = int.from_bytes(digest[:8], "big")
    sign = 1 if digest[8] & 1 else -1
    return bucket, sign

def encode_hash(texts: Sequence[str], dim: int = 256, seed: int = 0) -> FeatureMatrix:
    """Sign-hashed bag of tokens, L2-normalized.

    Order-insensitive in the tokens and fully deterministic: the bucket and
    sign derive from a SHA-256 of (seed, token), not Python's builtin hash.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    values = np.zeros((len(texts), dim), dtype=np.float64)
    memo: dict[str, tuple[int, int]] = {}
    for row, text in enumerate(texts):
        for token in tokenize(text):
            hit = memo.get(token)
            if hit is None:
                hit = memo[token] = _hash_token(seed, token)
            bucket, sign = hit
            values[row, bucket % dim] += sign
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    np.divide(values, norms, out=values, where=norms > 0)
    return FeatureMatrix(values=values, provenance=f"hash(dim={dim},seed={seed})")


# ---------------------------------------------------------------------------
# remote embeddings


class EmbeddingProvider(Protocol):
    provider_id: str

    def embed(self, texts: list[str]) -> list[list[float]]: ...


class HttpEmbeddingProvider:
    """POSTs {"model", "input"} and reads vectors from response["data"]."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        credential_env: str | None = None,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.credential_env = credential_env
        self.timeout = timeout
        self.provider_id = f"{model}@{endpoint}"

    def embed(self, texts: list[str]) -> list[list[float]]:
        import os

        import requests

        headers = {"Content-Type": "application/json"}
        if self.credential_env:
            token = os.environ.get(self.credential_env)
            if not token:
                raise TransportError(f"credential env var {self.credential_env} is not set")
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = requests.post(
                self.endpoint,
                json={"model": self.model, "input": texts},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"embedding endpoint returned {resp.status_code}: {resp.text[:200]}")
        payload = resp.json()
        if "data" not in payload:
            raise ProtocolError("embedding response missing 'data'")
        return [rec["embedding"] for rec in payload["data"]]


def _text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _provider_dir(cache_dir: Path, provider_id: str) -> Path:
    safe = re.sub(r"[^A-Za-z0-9._-]+", "_", provider_id)
    return cache_dir / safe


class _EmbeddingCache:
    """Append-only JSON-lines journal of {text_sha256, dim, vector} records."""

    def __init__(self, cache_dir: Path, provider_id: str):
        self.dir = _provider_dir(cache_dir, provider_id)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.journal = self.dir / "journal.jsonl"
        self._lock = threading.Lock()
        self._entries: dict[str, list[float]] = {}
        for journal in sorted(self.dir.glob("journal*.jsonl")):
            with journal.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._entries[rec["text_sha256"]] = rec["vector"]

    def get(self, key: str) -> list[float] | None:
        return self._entries.get(key)

    def put_many(self, items: list[tuple[str, list[float]]]) -> None:
        with self._lock:
            with self.journal.open("a", encoding="utf-8") as fh:
                for key, vector in items:
                    if key in self._entries:
                        continue
                    self._entries[key] = vector
                    fh.write(
                        json.dumps(
                            {"text_sha256": key, "dim": len(vector), "vector": vector}
                        )
                        + "\n"
                    )


def encode_external(
    provider: EmbeddingProvider,
    texts: Sequence[str],
    batch_size: int = 1024,
    cache_dir: str | Path | None = None,
    max_in_flight: int = 4,
    sleep: Callable[[float], None] = time.sleep,
) -> FeatureMatrix:
    """Embed texts through a remote provider with batching and caching.

    Only cache misses are sent over the wire, in batches of ``batch_size``
    with at most ``max_in_flight`` concurrent requests. Output rows follow
    input order; identical texts always produce identical rows.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    texts = list(texts)
    cache = _EmbeddingCache(Path(cache_dir), provider.provider_id) if cache_dir else None
    keys = [_text_key(t) for t in texts]

    resolved: dict[str, list[float]] = {}
    if cache is not None:
        for key in keys:
            vec = cache.get(key)
            if vec is not None:
                resolved[key] = vec
    missing_keys = [k for k in dict.fromkeys(keys) if k not in resolved]
    key_to_text = {k: t for k, t in zip(keys, texts)}
    batches = [missing_keys[i : i + batch_size] for i in range(0, len(missing_keys), batch_size)]

    def fetch(batch_index: int, batch_keys: list[str]) -> list[list[float]]:
        payload = [key_to_text[k] for k in batch_keys]
        delay = BASE_DELAY
        for attempt in range(1, MAX_ATTEMPTS + 1):
            try:
                vectors = provider.embed(payload)
                break
            except TransportError:
                if attempt == MAX_ATTEMPTS:
                    raise TransportError(
                        f"embedding batch {batch_index} ({len(payload)} texts) failed "
                        f"after {MAX_ATTEMPTS} attempts"
                    )
                log.warning("embedding batch %d attempt %d failed; retrying", batch_index, attempt)
                sleep(delay)
                delay *= BACKOFF_FACTOR
        if len(vectors) != len(payload):
            raise ProtocolError(
                f"batch {batch_index}: sent {len(payload)} texts, got {len(vectors)} vectors"
            )
        return vectors

    if batches:
        with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
            results = list(pool.map(lambda ib: fetch(*ib), enumerate(batches)))
        for batch_keys, vectors in zip(batches, results):
            for key, vec in zip(batch_keys, vectors):
                resolved[key] = [float(x) for x in vec]
        if cache is not None:
            fresh = [(k, resolved[k]) for batch_keys in batches for k in batch_keys]
            cache.put_many(fresh)

    dims = {len(resolved[k]) for k in keys}
    if len(dims) > 1:
        raise ProtocolError(f"provider returned mixed vector dimensions: {sorted(dims)}")
    values = np.array([resolved[k] for k in keys], dtype=np.float64)
    if values.size == 0:
        values = values.reshape(len(texts), 0)
    return FeatureMatrix(values=values, provenance=f"external({provider.provider_id})")
