"""Pipeline configuration: Django settings, overridden by a JSON file, overridden by flags."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Literal

from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .exceptions import ConfigurationError
from .gate import AgreementPolicy, QueryConfig
from .geometry import AlphaModel
from .prompts import PromptTemplates
from .providers import (
    EndpointConfig,
    Embedder,
    GeminiEmbedder,
    GeminiGenerator,
    Generator,
    LexicalReranker,
    Providers,
    Reranker,
    TableGenerator,
    http_provider,
    mock_embedder,
)
from .selection import SelectionConfig

logger = logging.getLogger(__name__)


class ProviderSpec(BaseModel):
    """One backend. ``kind`` picks the implementation; the other fields configure it."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["mock", "table", "http", "gemini"]
    model: str = ""
    base_url: str | None = None
    api_key_env: str | None = None
    dimension: int | None = Field(default=None, ge=2)
    seed: int = 0
    rules: list[tuple[str, str]] = Field(default_factory=list)
    default: str = ""


class PipelineConfig(QueryConfig):
    embedder: ProviderSpec | None = None
    generator: ProviderSpec | None = None
    reranker: ProviderSpec | None = None
    templates: Path | None = None
    parallelism: int = Field(default=8, ge=1)


def _settings_defaults() -> dict[str, Any]:
    return {
        "mode": settings.PAIRS_MODE,
        "selection": {
            "n": settings.PAIRS_N,
            "k": settings.PAIRS_K,
            "scorer": settings.PAIRS_SCORER,
            "alpha_model": {"slope": settings.PAIRS_ALPHA_SLOPE, "intercept": settings.PAIRS_ALPHA_INTERCEPT},
        },
        "agreement": {"mode": settings.PAIRS_AGREEMENT, "threshold": settings.PAIRS_AGREEMENT_THRESHOLD},
        "exclude_num": settings.PAIRS_EXCLUDE_NUM,
        "parallelism": settings.PAIRS_PARALLELISM,
        "templates": str(settings.PAIRS_TEMPLATE_DIR),
    }


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Build the effective config; ``None`` values in ``overrides`` leave lower layers alone."""
    layers = _settings_defaults()
    if path is not None:
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        layers = _merge(layers, document)
    layers = _merge(layers, overrides or {})

    try:
        return PipelineConfig.model_validate(layers)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid pipeline config: {exc}") from exc


def load_alpha_model(path: str | Path) -> AlphaModel:
    """Read the JSON written by the fit_alpha command."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
        return AlphaModel(
            slope=float(document["slope"]),
            intercept=float(document["intercept"]),
            r2=document.get("r2"),
            n=int(document.get("n", 0)),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"cannot read alpha model from {path}: {exc}") from exc


def settings_alpha_model() -> AlphaModel:
    return AlphaModel(slope=settings.PAIRS_ALPHA_SLOPE, intercept=settings.PAIRS_ALPHA_INTERCEPT)


def with_alpha_model(config: PipelineConfig, model: AlphaModel | None) -> PipelineConfig:
    """Attach ``model`` (or the configured default) when the selection has none."""
    if config.selection.alpha_model is not None and model is None:
        return config
    selection = config.selection.model_copy(update={"alpha_model": model or settings_alpha_model()})
    return config.model_copy(update={"selection": selection})


def load_templates(config: PipelineConfig) -> PromptTemplates:
    return PromptTemplates.from_directory(config.templates or settings.PAIRS_TEMPLATE_DIR)


def _endpoint(spec: ProviderSpec, default_model: str) -> EndpointConfig:
    return EndpointConfig(
        base_url=spec.base_url or settings.PAIRS_PROVIDER_BASE_URL,
        model=spec.model or default_model,
        api_key_env=spec.api_key_env or settings.PAIRS_API_KEY_ENV,
        timeout=settings.PAIRS_HTTP_TIMEOUT,
        retries=settings.PAIRS_HTTP_RETRIES,
        backoff=settings.PAIRS_HTTP_BACKOFF,
        max_in_flight=settings.PAIRS_HTTP_MAX_IN_FLIGHT,
    )


def build_embedder(spec: ProviderSpec | None) -> Embedder:
    if spec is None:
        raise ConfigurationError("no embedder configured")
    if spec.kind == "mock":
        return mock_embedder(spec.dimension or 64, spec.seed)
    dimension = spec.dimension or settings.PAIRS_EMBEDDING_DIMENSION
    if spec.kind == "http":
        return http_provider(
            "embedder",
            _endpoint(spec, settings.PAIRS_EMBEDDING_MODEL),
            dimension=dimension,
            batch_size=settings.PAIRS_EMBED_BATCH_SIZE,
        )
    if spec.kind == "gemini":
        return GeminiEmbedder(spec.model or settings.PAIRS_EMBEDDING_MODEL, settings.GEMINI_API_KEY, dimension)
    raise ConfigurationError(f"an embedder cannot be of kind {spec.kind!r}")


def build_generator(spec: ProviderSpec | None) -> Generator:
    if spec is None:
        raise ConfigurationError("no generator configured")
    if spec.kind == "table":
        return TableGenerator(spec.rules, spec.default)
    if spec.kind == "http":
        return http_provider("generator", _endpoint(spec, settings.PAIRS_GENERATION_MODEL))
    if spec.kind == "gemini":
        return GeminiGenerator(spec.model or settings.PAIRS_GENERATION_MODEL, settings.GEMINI_API_KEY)
    raise ConfigurationError(f"a generator cannot be of kind {spec.kind!r}")


def build_reranker(spec: ProviderSpec | None) -> Reranker | None:
    if spec is None:
        return None
    if spec.kind == "mock":
        return LexicalReranker()
    if spec.kind == "http":
        return http_provider("reranker", _endpoint(spec, settings.PAIRS_RERANK_MODEL))
    raise ConfigurationError(f"a reranker cannot be of kind {spec.kind!r}")


def build_providers(config: PipelineConfig) -> Providers:
    return Providers(
        embedder=build_embedder(config.embedder),
        generator=build_generator(config.generator),
        reranker=build_reranker(config.reranker),
    )
