"""Dual-path retrieval and the candidate selection strategies."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import ConfigurationError
from .geometry import (
    AlphaModel,
    additive_score,
    ais_score,
    angle,
    dynamic_angle,
    inner_product,
    predict_alpha,
)

if TYPE_CHECKING:
    from .index import VectorIndex
    from .providers import Reranker

logger = logging.getLogger(__name__)

QUERY_PATH = "query"
PSEUDO_PATH = "pseudo"


class Scorer(str, Enum):
    AIS = "ais"
    ADDITIVE = "additive"
    DYNAMIC = "dynamic"
    RERANK = "rerank"
    FIXED = "fixed"


class RetrievalPaths(str, Enum):
    DUAL = "dual"
    QUERY = "query"
    PSEUDO = "pseudo"


class SelectionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(default=5, ge=1)
    k: int = Field(default=3, ge=1)
    scorer: Scorer = Scorer.AIS
    alpha_model: AlphaModel | None = None
    paths: RetrievalPaths = RetrievalPaths.DUAL
    query_quota: int = Field(default=2, ge=0)

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.k > 2 * self.n:
            raise ValueError(f"k={self.k} exceeds the candidate pool 2n={2 * self.n}")
        if self.scorer is Scorer.DYNAMIC and self.alpha_model is None:
            raise ValueError("the dynamic scorer needs an alpha model")
        return self


@dataclass
class Candidate:
    chunk_id: str
    text: str
    s1: float | None
    s2: float | None
    score: float = 0.0
    sources: frozenset[str] = field(default_factory=frozenset)


def _candidate(index: "VectorIndex", chunk_id: str, q_emb: np.ndarray, p_emb: np.ndarray, sources: set[str]) -> Candidate:
    stored = index.embedding(chunk_id)
    return Candidate(
        chunk_id=chunk_id,
        text=index.get(chunk_id).text,
        s1=inner_product(q_emb, stored),
        s2=inner_product(p_emb, stored),
        sources=frozenset(sources),
    )


def retrieve_candidates(
    index: "VectorIndex",
    q_emb: np.ndarray,
    p_emb: np.ndarray,
    n: int,
    paths: RetrievalPaths = RetrievalPaths.DUAL,
) -> list[Candidate]:
    """Merge the per-path top-n lists, scoring every candidate against both embeddings.

    Single-path variants retrieve the top 2n through one path only.
    """
    searches = {
        RetrievalPaths.DUAL: [(QUERY_PATH, q_emb, n), (PSEUDO_PATH, p_emb, n)],
        RetrievalPaths.QUERY: [(QUERY_PATH, q_emb, 2 * n)],
        RetrievalPaths.PSEUDO: [(PSEUDO_PATH, p_emb, 2 * n)],
    }[RetrievalPaths(paths)]

    found: dict[str, set[str]] = {}
    for source, vector, size in searches:
        for hit in index.top_n(vector, size):
            found.setdefault(hit.chunk_id, set()).add(source)
    logger.info("Retrieved %d distinct candidates over %d path(s)", len(found), len(searches))
    return [_candidate(index, chunk_id, q_emb, p_emb, sources) for chunk_id, sources in sorted(found.items())]


def dual_path_retrieve(index: "VectorIndex", q_emb: np.ndarray, p_emb: np.ndarray, n: int) -> list[Candidate]:
    return retrieve_candidates(index, q_emb, p_emb, n, RetrievalPaths.DUAL)


def _top_k(candidates: Iterable[Candidate], k: int) -> list[Candidate]:
    return sorted(candidates, key=lambda candidate: (-candidate.score, candidate.chunk_id))[:k]


def _fixed_split(candidates: Sequence[Candidate], config: SelectionConfig) -> list[Candidate]:
    by_query = sorted(
        (c for c in candidates if QUERY_PATH in c.sources), key=lambda c: (-c.s1, c.chunk_id)
    )
    by_pseudo = sorted(
        (c for c in candidates if PSEUDO_PATH in c.sources), key=lambda c: (-c.s2, c.chunk_id)
    )
    chosen = by_query[: min(config.query_quota, config.k)]
    taken = {candidate.chunk_id for candidate in chosen}
    # Pseudo-context hits fill the rest; query hits cover a short pseudo path.
    for candidate in [*by_pseudo, *by_query]:
        if len(chosen) >= config.k:
            break
        if candidate.chunk_id not in taken:
            chosen.append(candidate)
            taken.add(candidate.chunk_id)
    for rank, candidate in enumerate(chosen):
        candidate.score = float(len(chosen) - rank)
    return chosen


def select(
    candidates: Iterable[Candidate],
    config: SelectionConfig,
    q_emb: np.ndarray | None = None,
    p_emb: np.ndarray | None = None,
) -> list[Candidate]:
    """Score candidates with the configured scorer and keep the best ``config.k``."""
    pool = list(candidates)
    if not pool:
        return []
    scorer = Scorer(config.scorer)

    if scorer is Scorer.AIS:
        for candidate in pool:
            candidate.score = ais_score(candidate.s1, candidate.s2)
        return _top_k(pool, config.k)

    if scorer is Scorer.ADDITIVE:
        for candidate in pool:
            candidate.score = additive_score(candidate.s1, candidate.s2)
        return _top_k(pool, config.k)

    if scorer is Scorer.DYNAMIC:
        if config.alpha_model is None:
            raise ConfigurationError("the dynamic scorer needs an alpha model")
        if q_emb is None or p_emb is None:
            raise ConfigurationError("the dynamic scorer needs both query and pseudo-context embeddings")
        # One alpha per query, from the query/pseudo-context angle.
        alpha = predict_alpha(angle(q_emb, p_emb), config.alpha_model)
        angles = {}
        for candidate in pool:
            theta = dynamic_angle(math.acos(candidate.s1), math.acos(candidate.s2), alpha)
            angles[candidate.chunk_id] = theta
            candidate.score = math.cos(theta)
        ranked = sorted(pool, key=lambda candidate: (angles[candidate.chunk_id], candidate.chunk_id))
        return ranked[: config.k]

    if scorer is Scorer.FIXED:
        return _fixed_split(pool, config)

    raise ConfigurationError("the rerank scorer runs through rerank_select")


def rerank_select(
    q_text: str,
    p_text: str | None,
    candidates: Iterable[Candidate],
    reranker: "Reranker",
    k: int,
) -> list[Candidate]:
    """Score each candidate by K(d, q) + K(d, p); K(d, q) alone when ``p_text`` is None."""
    pool = list(candidates)
    if not pool:
        return []
    documents = [candidate.text for candidate in pool]
    totals = reranker.score_many(q_text, documents)
    if p_text is not None:
        totals = [left + right for left, right in zip(totals, reranker.score_many(p_text, documents))]
    for candidate, total in zip(pool, totals):
        candidate.score = float(total)
    return _top_k(pool, k)
