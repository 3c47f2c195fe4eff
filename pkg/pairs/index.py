"""Corpus ingestion and the flat inner-product index the retriever searches."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tqdm import tqdm

from .exceptions import DatasetFormatError, IndexFormatError, IngestionError, InvalidInputError
from .geometry import UNIT_NORM_TOL, normalize_rows

if TYPE_CHECKING:
    from .providers import Embedder

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
METRIC = "inner_product"
MANIFEST_FILE = "manifest.json"
EMBEDDINGS_FILE = "embeddings.bin"
CHUNKS_FILE = "chunks.jsonl"
# Persisted row-major, little-endian float32.
STORAGE_DTYPE = np.dtype("<f4")


class Chunk(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    text: str = Field(min_length=1)
    title: str | None = None


@dataclass(frozen=True)
class ScoredHit:
    chunk_id: str
    similarity: float


@dataclass(frozen=True)
class ChunkingPolicy:
    """``passthrough`` keeps records whole; ``window`` splits them into word windows."""

    kind: str = "passthrough"
    window: int = 100
    overlap: int = 0

    def __post_init__(self):
        if self.kind not in ("passthrough", "window"):
            raise InvalidInputError(f"unknown chunking policy {self.kind!r}")
        if self.kind == "window" and not 0 <= self.overlap < self.window:
            raise InvalidInputError("window chunking needs 0 <= overlap < window")

    @classmethod
    def parse(cls, value: str) -> "ChunkingPolicy":
        """Parse ``passthrough`` or ``window[:WORDS[:OVERLAP]]``."""
        kind, *numbers = value.split(":")
        try:
            sizes = [int(number) for number in numbers]
        except ValueError as exc:
            raise InvalidInputError(f"bad chunking policy {value!r}") from exc
        if kind == "passthrough" and not sizes:
            return cls()
        if kind == "window" and len(sizes) <= 2:
            return cls("window", *sizes)
        raise InvalidInputError(f"bad chunking policy {value!r}")

    def split(self, record: Chunk) -> list[Chunk]:
        if self.kind == "passthrough":
            return [record]
        words = record.text.split()
        if not words:
            logger.warning("Record %r has no words; skipping it", record.id)
            return []
        step = self.window - self.overlap
        starts = range(0, max(len(words) - self.overlap, 1), step)
        return [
            Chunk(id=f"{record.id}-{number}", text=" ".join(words[start:start + self.window]), title=record.title)
            for number, start in enumerate(starts)
        ]


class VectorIndex:
    """Immutable flat index: chunks in insertion order with one unit embedding each."""

    metric = METRIC

    def __init__(self, chunks: Sequence[Chunk], embeddings: np.ndarray, embedder_id: str):
        matrix = np.array(embeddings, dtype=STORAGE_DTYPE, order="C")
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise InvalidInputError(f"embeddings must be a (count, dimension) array, got {matrix.shape}")
        if matrix.shape[0] != len(chunks):
            raise InvalidInputError(f"{len(chunks)} chunks but {matrix.shape[0]} embeddings")
        norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise InvalidInputError("stored embeddings must have unit norm")

        self._chunks = list(chunks)
        self._positions: dict[str, int] = {}
        for position, chunk in enumerate(self._chunks):
            if chunk.id in self._positions:
                raise IngestionError(f"duplicate chunk id {chunk.id!r}")
            self._positions[chunk.id] = position

        matrix.setflags(write=False)
        self._embeddings = matrix
        self._search_matrix = matrix.astype(np.float64)
        # Rank of each entry's id in ascending id order, used as the tie-breaker.
        order = sorted(range(len(self._chunks)), key=lambda position: self._chunks[position].id)
        self._id_rank = np.empty(len(self._chunks), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self._chunks))
        self.embedder_id = embedder_id

    @classmethod
    def from_vectors(cls, chunks: Sequence[Chunk], vectors: Sequence[Sequence[float]], embedder_id: str = "inline"):
        """Build an index from raw vectors, normalizing them first."""
        return cls(chunks, normalize_rows(np.asarray(vectors, dtype=np.float64)), embedder_id)

    @property
    def dimension(self) -> int:
        return int(self._embeddings.shape[1])

    @property
    def chunks(self) -> list[Chunk]:
        return list(self._chunks)

    @property
    def embeddings(self) -> np.ndarray:
        return self._embeddings

    def __len__(self) -> int:
        return len(self._chunks)

    def __contains__(self, chunk_id: object) -> bool:
        return chunk_id in self._positions

    def get(self, chunk_id: str) -> Chunk:
        try:
            return self._chunks[self._positions[chunk_id]]
        except KeyError:
            raise InvalidInputError(f"unknown chunk id {chunk_id!r}") from None

    def embedding(self, chunk_id: str) -> np.ndarray:
        """Stored embedding of a chunk, widened to float64."""
        try:
            return self._search_matrix[self._positions[chunk_id]]
        except KeyError:
            raise InvalidInputError(f"unknown chunk id {chunk_id!r}") from None

    def top_n(self, query: np.ndarray, n: int) -> list[ScoredHit]:
        """Exact top-n by inner product, descending, ties by ascending chunk id."""
        vector = np.asarray(query, dtype=np.float64)
        if vector.shape != (self.dimension,):
            raise InvalidInputError(f"query dimension {vector.shape[-1]} does not match index dimension {self.dimension}")
        if n < 1:
            raise InvalidInputError(f"n must be positive, got {n}")
        if not self._chunks:
            return []

        similarities = np.clip(self._search_matrix @ vector, -1.0, 1.0)
        order = np.lexsort((self._id_rank, -similarities))[:n]
        return [ScoredHit(self._chunks[position].id, float(similarities[position])) for position in order]

    def save(self, path: str | Path) -> None:
        directory = Path(path)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "dimension": self.dimension,
            "metric": self.metric,
            "embedder_id": self.embedder_id,
            "count": len(self),
            "format_version": FORMAT_VERSION,
        }
        (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        (directory / EMBEDDINGS_FILE).write_bytes(self._embeddings.tobytes(order="C"))
        with (directory / CHUNKS_FILE).open("w", encoding="utf-8") as handle:
            for chunk in self._chunks:
                handle.write(chunk.model_dump_json(exclude_none=True) + "\n")
        logger.info("Saved index with %d entries to %s", len(self), directory)

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        directory = Path(path)
        manifest_path = directory / MANIFEST_FILE
        if not manifest_path.is_file():
            raise IndexFormatError(f"{directory} has no {MANIFEST_FILE}")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            dimension = int(manifest["dimension"])
            count = int(manifest["count"])
            embedder_id = str(manifest["embedder_id"])
            metric = manifest["metric"]
            version = int(manifest["format_version"])
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IndexFormatError(f"corrupt manifest in {directory}: {exc}") from exc
        if metric != METRIC or version != FORMAT_VERSION or dimension < 1 or count < 0:
            raise IndexFormatError(f"unsupported manifest in {directory}: {manifest}")

        try:
            payload = (directory / EMBEDDINGS_FILE).read_bytes()
            lines = (directory / CHUNKS_FILE).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IndexFormatError(f"incomplete index directory {directory}: {exc}") from exc
        except UnicodeDecodeError as exc:
            raise IndexFormatError(f"corrupt {CHUNKS_FILE}: {exc}") from exc
        if len(payload) != count * dimension * STORAGE_DTYPE.itemsize:
            raise IndexFormatError(
                f"{EMBEDDINGS_FILE} holds {len(payload)} bytes, manifest declares {count}x{dimension} float32"
            )
        if len(lines) != count:
            raise IndexFormatError(f"{CHUNKS_FILE} holds {len(lines)} records, manifest declares {count}")

        try:
            chunks = [Chunk.model_validate_json(line) for line in lines]
        except ValidationError as exc:
            raise IndexFormatError(f"corrupt {CHUNKS_FILE}: {exc}") from exc
        embeddings = np.frombuffer(payload, dtype=STORAGE_DTYPE).reshape(count, dimension)
        try:
            return cls(chunks, embeddings, embedder_id)
        except (InvalidInputError, IngestionError) as exc:
            raise IndexFormatError(f"inconsistent index in {directory}: {exc}") from exc


def read_jsonl_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    """Yield ``(line number, text)`` pairs; bytes that are not UTF-8 fail on their own line."""
    with Path(path).open("rb") as handle:
        for number, raw in enumerate(handle, start=1):
            try:
                yield number, raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise DatasetFormatError(f"not valid UTF-8 ({exc.reason})", line=number) from exc


def read_corpus(path: str | Path) -> Iterator[Chunk]:
    """Yield corpus records from a JSON-lines file, skipping blank lines."""
    for number, line in read_jsonl_lines(path):
        if not line.strip():
            continue
        try:
            yield Chunk.model_validate_json(line)
        except ValidationError as exc:
            raise DatasetFormatError(f"invalid corpus record: {exc.errors()[0]['msg']}", line=number) from exc


def ingest(
    corpus: Iterable[Chunk],
    embedder: "Embedder",
    chunking: ChunkingPolicy | None = None,
    batch_size: int = 32,
) -> VectorIndex:
    chunking = chunking or ChunkingPolicy()
    chunks: list[Chunk] = []
    seen: set[str] = set()
    for record in corpus:
        for chunk in chunking.split(record):
            if chunk.id in seen:
                raise IngestionError(f"duplicate chunk id {chunk.id!r}")
            seen.add(chunk.id)
            chunks.append(chunk)
    if not chunks:
        raise IngestionError("corpus is empty")

    batches = math.ceil(len(chunks) / batch_size)
    vectors = []
    for start in tqdm(range(0, len(chunks), batch_size), total=batches, desc="embedding", disable=None):
        batch = [chunk.text for chunk in chunks[start:start + batch_size]]
        vectors.append(embedder.embed(batch))
    embeddings = np.vstack(vectors)
    logger.info("Ingested %d chunks with %s (dimension %d)", len(chunks), embedder.id, embeddings.shape[1])
    return VectorIndex(chunks, embeddings, embedder.id)


def load_index(path: str | Path) -> VectorIndex:
    return VectorIndex.load(path)
