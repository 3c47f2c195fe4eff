"""Embedding, generation and rerank backends.

Three families live here: deterministic mocks for tests and offline runs, an HTTP
client speaking the common embeddings / chat-completions / rerank JSON shapes, and a
Gemini backend on ``google-generativeai``.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import google.generativeai as genai
import numpy as np
import requests
from google.api_core import exceptions as google_exceptions
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from .exceptions import ConfigurationError, InvalidInputError, ProtocolError, ProviderError
from .geometry import normalize_rows
from .metrics import token_f1

logger = logging.getLogger(__name__)

EMBEDDINGS_PATH = "/v1/embeddings"
CHAT_COMPLETIONS_PATH = "/v1/chat/completions"
RERANK_PATH = "/rerank"
TRANSIENT_STATUSES = (408, 429, 500, 502, 503, 504)


class Embedder(ABC):
    id: str
    dimension: int

    @abstractmethod
    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return one unit-norm row per input text, shape (len(texts), dimension)."""


class Generator(ABC):
    id: str

    @abstractmethod
    def complete(self, prompt: str) -> str:
        """Return the completion for a single prompt."""


class Reranker(ABC):
    id: str

    @abstractmethod
    def score(self, query: str, document: str) -> float:
        """Relevance of ``document`` to ``query``; higher is more relevant."""

    def score_many(self, query: str, documents: Sequence[str]) -> list[float]:
        return [self.score(query, document) for document in documents]


@dataclass(frozen=True)
class Providers:
    embedder: Embedder
    generator: Generator
    reranker: Reranker | None = None


# Mocks


class HashEmbedder(Embedder):
    """Maps each text to a pseudo-random unit vector seeded by a SHA-256 of (seed, text)."""

    def __init__(self, dimension: int, seed: int = 0):
        if dimension < 2:
            raise InvalidInputError(f"mock embedder dimension must be at least 2, got {dimension}")
        self.dimension = dimension
        self.seed = seed
        self.id = f"mock-{dimension}-{seed}"

    def _vector(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
        return rng.standard_normal(self.dimension)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.empty((0, self.dimension))
        return normalize_rows(np.vstack([self._vector(text) for text in texts]))


def mock_embedder(dimension: int, seed: int = 0) -> HashEmbedder:
    return HashEmbedder(dimension, seed)


class TableGenerator(Generator):
    """Answers with the completion of the first rule whose key occurs in the prompt."""

    def __init__(self, rules: Iterable[tuple[str, str]], default: str = "", id: str = "table"):
        self.rules = [(str(key), str(completion)) for key, completion in rules]
        self.default = default
        self.id = id

    def complete(self, prompt: str) -> str:
        for key, completion in self.rules:
            if key in prompt:
                return completion
        return self.default


def table_generator(mapping: dict[str, str] | Iterable[tuple[str, str]], default: str = "") -> TableGenerator:
    rules = mapping.items() if isinstance(mapping, dict) else mapping
    return TableGenerator(rules, default)


class LexicalReranker(Reranker):
    """Token-F1 overlap between the two texts."""

    id = "mock-lexical"

    def score(self, query: str, document: str) -> float:
        return token_f1(query, document)


# HTTP


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "PAIRS_API_KEY"
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 8


class HttpClient:
    """JSON POST client with transport retries and a cap on concurrent requests."""

    def __init__(self, config: EndpointConfig):
        if not config.base_url:
            raise ConfigurationError("provider base URL is not configured")
        api_key = os.getenv(config.api_key_env, "")
        if not api_key:
            raise ConfigurationError(f"provider credential is missing. Set {config.api_key_env} in your environment.")

        self.config = config
        self.session = requests.Session()
        self.session.headers.update({"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"})
        retry = Retry(
            total=config.retries,
            backoff_factor=config.backoff,
            status_forcelist=TRANSIENT_STATUSES,
            allowed_methods=frozenset({"POST"}),
            raise_on_status=False,
        )
        adapter = HTTPAdapter(max_retries=retry, pool_maxsize=max(config.max_in_flight, 1))
        self.session.mount("http://", adapter)
        self.session.mount("https://", adapter)
        self._slots = threading.BoundedSemaphore(max(config.max_in_flight, 1))

    def post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        endpoint = self.config.base_url.rstrip("/") + path
        try:
            with self._slots:
                response = self.session.post(endpoint, json=payload, timeout=self.config.timeout)
        except requests.RequestException as exc:
            logger.exception("Request to %s failed", endpoint)
            raise ProviderError(f"request to {endpoint} failed: {exc}", endpoint=endpoint) from exc

        if not response.ok:
            logger.error("Provider at %s answered %s", endpoint, response.status_code)
            raise ProviderError(
                f"provider at {endpoint} answered {response.status_code}",
                status=response.status_code,
                endpoint=endpoint,
            )
        try:
            body = response.json()
        except ValueError as exc:
            raise ProtocolError(f"provider at {endpoint} returned malformed JSON", endpoint=endpoint) from exc
        if not isinstance(body, dict):
            raise ProtocolError(f"provider at {endpoint} returned a non-object body", endpoint=endpoint)
        return body


class HttpEmbedder(Embedder):
    def __init__(self, client: HttpClient, dimension: int, batch_size: int = 32):
        self.client = client
        self.dimension = dimension
        self.batch_size = batch_size
        self.id = client.config.model

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start:start + self.batch_size])
            body = self.client.post(EMBEDDINGS_PATH, {"model": self.client.config.model, "input": batch})
            rows.extend(self._parse(body, len(batch)))
        if not rows:
            return np.empty((0, self.dimension))
        return normalize_rows(np.asarray(rows, dtype=np.float64))

    def _parse(self, body: dict[str, Any], expected: int) -> list[list[float]]:
        try:
            data = sorted(body["data"], key=lambda item: item.get("index", 0))
            vectors = [[float(value) for value in item["embedding"]] for item in data]
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ProtocolError(f"embeddings response is missing vectors: {exc!r}", endpoint=EMBEDDINGS_PATH) from exc
        if len(vectors) != expected:
            raise ProtocolError(f"asked for {expected} embeddings, received {len(vectors)}", endpoint=EMBEDDINGS_PATH)
        if any(len(vector) != self.dimension for vector in vectors):
            raise ProtocolError(f"embeddings do not have the declared dimension {self.dimension}", endpoint=EMBEDDINGS_PATH)
        return vectors


class HttpGenerator(Generator):
    def __init__(self, client: HttpClient):
        self.client = client
        self.id = client.config.model

    def complete(self, prompt: str) -> str:
        body = self.client.post(
            CHAT_COMPLETIONS_PATH,
            {
                "model": self.client.config.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0.0,
            },
        )
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"chat completion has no message content: {exc!r}", endpoint=CHAT_COMPLETIONS_PATH) from exc
        if not isinstance(text, str) or not text.strip():
            raise ProtocolError("chat completion returned an empty message", endpoint=CHAT_COMPLETIONS_PATH)
        return text.strip()


class HttpReranker(Reranker):
    def __init__(self, client: HttpClient):
        self.client = client
        self.id = client.config.model

    def score(self, query: str, document: str) -> float:
        return self.score_many(query, [document])[0]

    def score_many(self, query: str, documents: Sequence[str]) -> list[float]:
        if not documents:
            return []
        body = self.client.post(
            RERANK_PATH, {"model": self.client.config.model, "query": query, "documents": list(documents)}
        )
        try:
            scores = [float(value) for value in body["scores"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"rerank response has no scores: {exc!r}", endpoint=RERANK_PATH) from exc
        if len(scores) != len(documents):
            raise ProtocolError(f"sent {len(documents)} documents, received {len(scores)} scores", endpoint=RERANK_PATH)
        return scores


def http_provider(role: str, config: EndpointConfig, dimension: int | None = None, batch_size: int = 32):
    """Build the HTTP-backed embedder, generator or reranker for ``role``."""
    client = HttpClient(config)
    if role == "embedder":
        if not dimension:
            raise ConfigurationError("an HTTP embedder needs a declared dimension")
        return HttpEmbedder(client, dimension, batch_size)
    if role == "generator":
        return HttpGenerator(client)
    if role == "reranker":
        return HttpReranker(client)
    raise ConfigurationError(f"unknown provider role {role!r}")


# Gemini


def _configure_gemini(api_key: str) -> None:
    if not api_key:
        raise ConfigurationError("Gemini API key is missing. Set GEMINI_API_KEY in your environment.")
    genai.configure(api_key=api_key)


class GeminiGenerator(Generator):
    def __init__(self, model: str, api_key: str):
        _configure_gemini(api_key)
        self.id = model
        self.model = genai.GenerativeModel(model)

    def complete(self, prompt: str) -> str:
        try:
            response = self.model.generate_content(prompt, generation_config={"temperature": 0.0})
        except google_exceptions.GoogleAPIError as exc:  # pragma: no cover - network layer
            logger.exception("Gemini API responded with error")
            detail = getattr(exc, "message", str(exc)) or exc.__class__.__name__
            raise ProviderError(f"Gemini API request failed: {detail}", endpoint=self.id) from exc
        except Exception as exc:  # pragma: no cover - network layer
            logger.exception("Gemini API client raised unexpected error")
            raise ProviderError(f"Gemini API request failed: {exc}", endpoint=self.id) from exc

        text = (response.text or "").strip()
        if not text:
            raise ProtocolError("Gemini API returned an empty response.", endpoint=self.id)
        return text


class GeminiEmbedder(Embedder):
    def __init__(self, model: str, api_key: str, dimension: int):
        _configure_gemini(api_key)
        self.id = model
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.empty((0, self.dimension))
        try:
            result = genai.embed_content(model=self.id, content=list(texts))
        except google_exceptions.GoogleAPIError as exc:  # pragma: no cover - network layer
            logger.exception("Gemini embedding request failed")
            raise ProviderError(f"Gemini embedding request failed: {exc}", endpoint=self.id) from exc

        try:
            vectors = np.asarray(result["embedding"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"Gemini embedding response has no vectors: {exc!r}", endpoint=self.id) from exc
        if vectors.shape != (len(texts), self.dimension):
            raise ProtocolError(
                f"Gemini returned embeddings of shape {vectors.shape}, expected {(len(texts), self.dimension)}",
                endpoint=self.id,
            )
        return normalize_rows(vectors)
