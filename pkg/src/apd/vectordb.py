"""Embedded vector index: deterministic embeddings, exact top-k cosine
retrieval, and bit-exact file persistence."""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from .errors import BadRequest, DimensionError, EmbedError, EmptyIndex, LoadError, VersionError
from .ingest import id_sort_key

FORMAT_VERSION = "1"
DEFAULT_K = 3
HASH_DIM = 64


@dataclass(frozen=True)
class EmbeddedChunk:
    id: str
    text: str
    url: str
    vector: tuple[float, ...]


@dataclass(frozen=True)
class RetrievalHit:
    chunk: EmbeddedChunk
    similarity: float


class EmbeddingBackend(Protocol):
    name: str

    def embed(self, text: str) -> list[float]: ...


class HashEmbedder:
    """Deterministic test embedder: whitespace tokens hashed into a fixed
    number of signed buckets, L2-normalized.

    Tokens are lowercased, so the embedding is a bag of case-folded
    tokens; "a b" and "b a" embed identically.
    """

    def __init__(self, dim: int = HASH_DIM):
        self.dim = dim
        self.name = f"hash{dim}"

    def embed(self, text: str) -> list[float]:
        if not text.strip():
            raise EmbedError("cannot embed empty text")
        vec = [0.0] * self.dim
        for token in text.lower().split():
            digest = hashlib.md5(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] & 1 == 0 else -1.0
            vec[bucket] += sign
        norm = math.sqrt(sum(x * x for x in vec))
        if norm == 0.0:
            raise EmbedError("token contributions cancelled to a zero vector")
        return [x / norm for x in vec]


class HttpEmbedder:
    """Embedding backend over an embeddings HTTP endpoint; the index
    dimension is taken from its first response and then enforced."""

    def __init__(self, base_url: str, model: str, api_key: str = "", timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.name = f"http:{model}"

    def embed(self, text: str) -> list[float]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = httpx.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": [text]},
                headers=headers,
                timeout=self.timeout,
            )
        except httpx.HTTPError as exc:
            raise EmbedError(f"embedding backend unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise EmbedError(f"embedding backend HTTP {resp.status_code}")
        try:
            return [float(x) for x in resp.json()["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EmbedError(f"malformed embedding response: {exc}") from exc


def cosine(u, v) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


class VectorIndex:
    """Brute-force exact cosine index over embedded chunks.

    Many concurrent readers or one writer; the first upsert fixes the
    dimension unless one was configured up front.
    """

    def __init__(self, dimension: int | None = None, embedder_name: str = ""):
        self.dimension = dimension
        self.embedder_name = embedder_name
        self._chunks: dict[str, EmbeddedChunk] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._chunks)

    def chunks(self) -> list[EmbeddedChunk]:
        return list(self._chunks.values())

    def get(self, chunk_id: str) -> EmbeddedChunk | None:
        return self._chunks.get(chunk_id)

    def upsert(self, chunk: EmbeddedChunk) -> None:
        """Insert or replace by id; rejects dimension mismatches and zero
        vectors (cosine is undefined for them)."""
        vector = tuple(float(x) for x in chunk.vector)
        with self._lock:
            if self.dimension is None:
                self.dimension = len(vector)
            if len(vector) != self.dimension:
                raise DimensionError(f"expected dimension {self.dimension}, got {len(vector)}")
            if not any(vector):
                raise EmbedError(f"zero vector rejected for chunk {chunk.id!r}")
            self._chunks[chunk.id] = EmbeddedChunk(id=chunk.id, text=chunk.text, url=chunk.url, vector=vector)

    def query(self, query_vector, k: int = DEFAULT_K) -> list[RetrievalHit]:
        """Exact top-k by cosine similarity, ties broken by id ascending."""
        if k <= 0:
            raise BadRequest("k must be positive")
        if not self._chunks:
            raise EmptyIndex("index holds no chunks")
        qv = tuple(float(x) for x in query_vector)
        if len(qv) != self.dimension:
            raise DimensionError(f"query dimension {len(qv)} != index dimension {self.dimension}")
        scored = [RetrievalHit(chunk=c, similarity=cosine(qv, c.vector)) for c in self._chunks.values()]
        scored.sort(key=lambda h: (-h.similarity, id_sort_key(h.chunk.id)))
        return scored[:k]

    def save(self, path: str | Path) -> None:
        """Write the index as line-delimited records; vectors are encoded
        as hexadecimal floats so the round trip is bit-exact."""
        path = Path(path)
        with self._lock:
            lines = [
                json.dumps(
                    {
                        "format_version": FORMAT_VERSION,
                        "dimension": self.dimension,
                        "embedder_name": self.embedder_name,
                    },
                    sort_keys=True,
                )
            ]
            for chunk in self._chunks.values():
                lines.append(
                    json.dumps(
                        {
                            "id": chunk.id,
                            "url": chunk.url,
                            "text": chunk.text,
                            "vector": [x.hex() for x in chunk.vector],
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                )
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise LoadError(f"cannot read index file: {exc}") from exc
        if not lines:
            raise LoadError("line 1: missing header record")
        try:
            header = json.loads(lines[0])
            version = header["format_version"]
            dimension = header["dimension"]
            embedder_name = header.get("embedder_name", "")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise LoadError(f"line 1: bad header record: {exc}") from exc
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported index format version {version!r}")
        index = cls(dimension=dimension, embedder_name=embedder_name)
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                raise LoadError(f"line {lineno}: blank record")
            try:
                obj = json.loads(line)
                vector = tuple(float.fromhex(x) for x in obj["vector"])
                chunk = EmbeddedChunk(id=obj["id"], text=obj["text"], url=obj["url"], vector=vector)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise LoadError(f"line {lineno}: corrupt chunk record: {exc}") from exc
            if len(vector) != dimension:
                raise LoadError(f"line {lineno}: vector dimension {len(vector)} != header dimension {dimension}")
            index._chunks[chunk.id] = chunk
        return index


def embed(text: str, embedder: EmbeddingBackend) -> list[float]:
    """Embed one text through the configured backend."""
    if not text.strip():
        raise ValueError("text must be non-empty")
    return embedder.embed(text)
