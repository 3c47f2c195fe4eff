"""Parametric verification gate and the query pipeline around it.

The gate asks the generator twice: once from parametric knowledge alone and once
from a self-generated pseudo-context. Agreement means the retriever is never
touched; disagreement sends the query through dual-path retrieval and selection.
"""

from __future__ import annotations

import logging
import re
from contextlib import contextmanager
from enum import Enum
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .exceptions import ConfigurationError, InvalidInputError, PipelineStageError, ProviderError
from .metrics import normalize_answer, token_f1
from .prompts import PromptTemplates, default_templates, render
from .selection import Candidate, Scorer, SelectionConfig, rerank_select, retrieve_candidates, select

if TYPE_CHECKING:
    from .index import VectorIndex
    from .providers import Generator, Providers

logger = logging.getLogger(__name__)

_DIGIT = re.compile(r"[0-9]")
# Copies of the question ahead of the expansion in q2d and cot search text.
QUERY_REPEATS = 5


class Mode(str, Enum):
    NO_RETRIEVAL = "no_retrieval"
    STANDARD = "standard"
    PAIRS = "pairs"
    DPR_AIS = "dpr_ais"
    DPR_AIS_DYNAMIC = "dpr_ais_dynamic"
    DPR_AIS_RERANK = "dpr_ais_rerank"
    HYDE = "hyde"
    Q2D = "q2d"
    COT = "cot"
    RERANK = "rerank"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        """Accept both ``dpr-ais`` (command line) and ``dpr_ais`` spellings."""
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "_"))
        except ValueError:
            raise ConfigurationError(f"unknown pipeline mode {value!r}") from None


class AgreementMode(str, Enum):
    NORMALIZED_EXACT = "normalized_exact"
    TOKEN_F1_THRESHOLD = "token_f1_threshold"


class AgreementPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: AgreementMode = AgreementMode.NORMALIZED_EXACT
    threshold: float = Field(default=1.0, gt=0.0, le=1.0)


class GateOutcome(BaseModel):
    direct_answer: str
    pseudo_context: str
    context_answer: str
    agreed: bool
    numeric_guard_tripped: bool = False


class CandidateScore(BaseModel):
    chunk_id: str
    s1: float | None = None
    s2: float | None = None
    score: float | None = None


class QueryResult(BaseModel):
    query_id: str | None = None
    question: str
    answer: str
    retrieval_activated: bool
    selected_chunk_ids: list[str] = Field(default_factory=list)
    gate: GateOutcome | None = None
    mode: Mode
    candidates: list[CandidateScore] = Field(default_factory=list)


class QueryConfig(BaseModel):
    """The per-query knobs of the pipeline."""

    model_config = ConfigDict(frozen=True)

    mode: Mode = Mode.PAIRS
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    agreement: AgreementPolicy = Field(default_factory=AgreementPolicy)
    exclude_num: bool = False

    @field_validator("mode", mode="before")
    @classmethod
    def _accept_dashes(cls, value):
        return value.replace("-", "_") if isinstance(value, str) else value

    @model_validator(mode="after")
    def _dynamic_needs_alpha(self):
        if self.mode is Mode.DPR_AIS_DYNAMIC and self.selection.alpha_model is None:
            raise ValueError("mode dpr_ais_dynamic needs an alpha model")
        return self


def _require_text(value: str, what: str) -> None:
    if not value or not value.strip():
        raise InvalidInputError(f"{what} must not be empty")


def generate_pseudo_context(question: str, generator: "Generator", templates: PromptTemplates | None = None) -> str:
    _require_text(question, "question")
    templates = templates or default_templates()
    return generator.complete(render(templates.pseudo_context, q=question))


def answer_direct(question: str, generator: "Generator", templates: PromptTemplates | None = None) -> str:
    _require_text(question, "question")
    templates = templates or default_templates()
    return generator.complete(render(templates.answer_direct, q=question))


def answer_with_context(
    question: str, context: str, generator: "Generator", templates: PromptTemplates | None = None
) -> str:
    _require_text(question, "question")
    _require_text(context, "context")
    templates = templates or default_templates()
    return generator.complete(render(templates.answer_with_context, q=question, context=context))


def generate_rationale(question: str, generator: "Generator", templates: PromptTemplates | None = None) -> str:
    """Answer plus step-by-step rationale, used as expansion text by the cot mode."""
    _require_text(question, "question")
    template = (templates and templates.rationale) or default_templates().rationale
    if template is None:
        raise ConfigurationError("no rationale prompt template is available")
    return generator.complete(render(template, q=question))


def expanded_query(question: str, expansion: str, repeats: int = QUERY_REPEATS) -> str:
    """The question repeated ``repeats`` times, followed by the generated expansion."""
    if repeats < 1:
        raise InvalidInputError(f"repeats must be positive, got {repeats}")
    return " ".join([question] * repeats + [expansion])


def assemble_context(texts: Sequence[str]) -> str:
    """Join documents best-first, separated by blank lines."""
    return "\n\n".join(texts)


def answers_agree(a1: str, a2: str, policy: AgreementPolicy | None = None) -> bool:
    policy = policy or AgreementPolicy()
    if policy.mode is AgreementMode.TOKEN_F1_THRESHOLD:
        return token_f1(a1, a2) >= policy.threshold
    return normalize_answer(a1) == normalize_answer(a2)


def numeric_guard(answer: str) -> bool:
    """True if the answer holds an ASCII digit; number words and Roman numerals pass."""
    return bool(_DIGIT.search(answer))


@contextmanager
def _stage(name: str) -> Iterator[None]:
    try:
        yield
    except PipelineStageError:
        raise
    except ProviderError as exc:
        logger.error("Pipeline stage %r failed: %s", name, exc)
        raise PipelineStageError(name, exc) from exc


def _embed(providers: "Providers", texts: list[str]) -> np.ndarray:
    with _stage("embedding"):
        return providers.embedder.embed(texts)


def _check_providers(mode: Mode, index: "VectorIndex", providers: "Providers", selection: SelectionConfig) -> None:
    if mode is Mode.NO_RETRIEVAL:
        return
    embedder = providers.embedder
    if embedder.dimension != index.dimension:
        raise ConfigurationError(
            f"embedder {embedder.id} has dimension {embedder.dimension}, index has {index.dimension}"
        )
    if embedder.id != index.embedder_id:
        logger.warning("Index was built with %s but is queried with %s", index.embedder_id, embedder.id)
    needs_reranker = mode in (Mode.DPR_AIS_RERANK, Mode.RERANK) or (
        mode in (Mode.DPR_AIS, Mode.PAIRS) and selection.scorer is Scorer.RERANK
    )
    if needs_reranker and providers.reranker is None:
        raise ConfigurationError(f"mode {mode.value} needs a reranker")
    dynamic = mode is Mode.DPR_AIS_DYNAMIC or (
        mode in (Mode.DPR_AIS, Mode.PAIRS) and selection.scorer is Scorer.DYNAMIC
    )
    if dynamic and selection.alpha_model is None:
        raise ConfigurationError(f"mode {mode.value} with the dynamic scorer needs an alpha model")


def _scores(candidates: Sequence[Candidate]) -> list[CandidateScore]:
    return [
        CandidateScore(chunk_id=candidate.chunk_id, s1=candidate.s1, s2=candidate.s2, score=candidate.score)
        for candidate in sorted(candidates, key=lambda candidate: candidate.chunk_id)
    ]


def _answer_from(
    question: str,
    selected: Sequence[Candidate],
    providers: "Providers",
    templates: PromptTemplates,
) -> str:
    context = assemble_context([candidate.text for candidate in selected])
    with _stage("context answer"):
        return answer_with_context(question, context, providers.generator, templates)


def _dual_path_branch(
    question: str,
    pseudo_context: str,
    index: "VectorIndex",
    providers: "Providers",
    config: QueryConfig,
    mode: Mode,
    templates: PromptTemplates,
) -> tuple[list[Candidate], list[Candidate], str]:
    selection = config.selection
    q_emb, p_emb = _embed(providers, [question, pseudo_context])
    candidates = retrieve_candidates(index, q_emb, p_emb, selection.n, selection.paths)

    if mode is Mode.DPR_AIS_RERANK or selection.scorer is Scorer.RERANK:
        with _stage("rerank"):
            selected = rerank_select(question, pseudo_context, candidates, providers.reranker, selection.k)
    else:
        if mode is Mode.DPR_AIS_DYNAMIC:
            selection = selection.model_copy(update={"scorer": Scorer.DYNAMIC})
        selected = select(candidates, selection, q_emb, p_emb)

    return candidates, selected, _answer_from(question, selected, providers, templates)


def run_gate(
    question: str,
    generator: "Generator",
    policy: AgreementPolicy | None = None,
    exclude_num: bool = False,
    templates: PromptTemplates | None = None,
) -> GateOutcome:
    templates = templates or default_templates()
    with _stage("pseudo-context generation"):
        pseudo_context = generate_pseudo_context(question, generator, templates)
    with _stage("direct answer"):
        direct_answer = answer_direct(question, generator, templates)
    with _stage("pseudo-context answer"):
        context_answer = answer_with_context(question, pseudo_context, generator, templates)

    return GateOutcome(
        direct_answer=direct_answer,
        pseudo_context=pseudo_context,
        context_answer=context_answer,
        agreed=answers_agree(direct_answer, context_answer, policy),
        numeric_guard_tripped=exclude_num and numeric_guard(direct_answer),
    )


def run_query(
    question: str,
    index: "VectorIndex",
    providers: "Providers",
    config: QueryConfig | None = None,
    templates: PromptTemplates | None = None,
    query_id: str | None = None,
) -> QueryResult:
    """Answer one question in the configured pipeline mode."""
    config = config or QueryConfig()
    templates = templates or default_templates()
    mode = Mode.parse(config.mode)
    _require_text(question, "question")
    _check_providers(mode, index, providers, config.selection)
    selection = config.selection

    def result(answer: str, activated: bool, selected=(), candidates=(), gate=None) -> QueryResult:
        return QueryResult(
            query_id=query_id,
            question=question,
            answer=answer,
            retrieval_activated=activated,
            selected_chunk_ids=[candidate.chunk_id for candidate in selected],
            gate=gate,
            mode=mode,
            candidates=_scores(candidates),
        )

    if mode is Mode.NO_RETRIEVAL:
        with _stage("direct answer"):
            return result(answer_direct(question, providers.generator, templates), activated=False)

    if mode in (Mode.STANDARD, Mode.RERANK):
        (q_emb,) = _embed(providers, [question])
        size = selection.k if mode is Mode.STANDARD else 2 * selection.n
        pool = [
            Candidate(chunk_id=hit.chunk_id, text=index.get(hit.chunk_id).text, s1=hit.similarity, s2=None, score=hit.similarity)
            for hit in index.top_n(q_emb, size)
        ]
        if mode is Mode.RERANK:
            with _stage("rerank"):
                selected = rerank_select(question, None, pool, providers.reranker, selection.k)
        else:
            selected = pool
        return result(_answer_from(question, selected, providers, templates), True, selected, pool)

    if mode is Mode.HYDE:
        with _stage("pseudo-context generation"):
            pseudo_context = generate_pseudo_context(question, providers.generator, templates)
        (p_emb,) = _embed(providers, [pseudo_context])
        selected = [
            Candidate(chunk_id=hit.chunk_id, text=index.get(hit.chunk_id).text, s1=None, s2=hit.similarity, score=hit.similarity)
            for hit in index.top_n(p_emb, selection.k)
        ]
        return result(_answer_from(question, selected, providers, templates), True, selected, selected)

    if mode in (Mode.Q2D, Mode.COT):
        if mode is Mode.Q2D:
            with _stage("pseudo-context generation"):
                expansion = generate_pseudo_context(question, providers.generator, templates)
        else:
            with _stage("rationale generation"):
                expansion = generate_rationale(question, providers.generator, templates)
        (e_emb,) = _embed(providers, [expanded_query(question, expansion)])
        selected = [
            Candidate(chunk_id=hit.chunk_id, text=index.get(hit.chunk_id).text, s1=None, s2=None, score=hit.similarity)
            for hit in index.top_n(e_emb, selection.k)
        ]
        return result(_answer_from(question, selected, providers, templates), True, selected, selected)

    gate = None
    if mode is Mode.PAIRS:
        gate = run_gate(question, providers.generator, config.agreement, config.exclude_num, templates)
        pseudo_context = gate.pseudo_context
        if gate.agreed and not gate.numeric_guard_tripped:
            logger.info("Gate agreed on %r; skipping retrieval", question)
            return result(gate.direct_answer, activated=False, gate=gate)
        logger.info("Gate diverged on %r (guard tripped: %s); retrieving", question, gate.numeric_guard_tripped)
    else:
        with _stage("pseudo-context generation"):
            pseudo_context = generate_pseudo_context(question, providers.generator, templates)

    candidates, selected, answer = _dual_path_branch(
        question, pseudo_context, index, providers, config, mode, templates
    )
    return result(answer, True, selected, candidates, gate)

