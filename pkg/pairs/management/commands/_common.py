"""Flags, config resolution and error mapping shared by the pairs management commands."""

from __future__ import annotations

import argparse
import re
from contextlib import contextmanager
from typing import Any, Iterator

from django.core.management.base import CommandError

from pairs.config import (
    PipelineConfig,
    ProviderSpec,
    build_providers,
    load_alpha_model,
    load_config,
    with_alpha_model,
)
from pairs.exceptions import (
    ConfigurationError,
    IndexFormatError,
    IngestionError,
    InvalidInputError,
    ProviderError,
)
from pairs.gate import AgreementMode, Mode
from pairs.index import VectorIndex
from pairs.providers import Providers
from pairs.selection import RetrievalPaths, Scorer

MODE_CHOICES = [mode.value.replace("_", "-") for mode in Mode]
USAGE_ERROR = 2
DATA_ERROR = 1

_MOCK_EMBEDDER_ID = re.compile(r"^mock-(\d+)-(\d+)$")


def add_pipeline_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON pipeline config; flags given here override it.")
    parser.add_argument("--mode", choices=MODE_CHOICES)
    parser.add_argument("--n", type=int, help="Per-path retrieval depth.")
    parser.add_argument("--k", type=int, help="Number of documents handed to the generator.")
    parser.add_argument("--scorer", choices=[scorer.value for scorer in Scorer])
    parser.add_argument("--paths", choices=[paths.value for paths in RetrievalPaths])
    parser.add_argument("--agreement", choices=[mode.value for mode in AgreementMode])
    parser.add_argument("--agreement-threshold", type=float)
    parser.add_argument(
        "--exclude-num",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Force retrieval when the gate-approved answer contains a digit.",
    )
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--templates", help="Directory holding the prompt templates.")
    parser.add_argument("--alpha-model", help="JSON written by fit_alpha, used by the dynamic scorer.")
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="Leave timestamps out of every output.",
    )


def _overrides(options: dict[str, Any]) -> dict[str, Any]:
    return {
        "mode": options.get("mode"),
        "selection": {
            "n": options.get("n"),
            "k": options.get("k"),
            "scorer": options.get("scorer"),
            "paths": options.get("paths"),
        },
        "agreement": {
            "mode": options.get("agreement"),
            "threshold": options.get("agreement_threshold"),
        },
        "exclude_num": options.get("exclude_num"),
        "parallelism": options.get("parallelism"),
        "templates": options.get("templates"),
    }


def pipeline_config(options: dict[str, Any]) -> PipelineConfig:
    config = load_config(options.get("config"), _overrides(options))
    alpha_path = options.get("alpha_model")
    return with_alpha_model(config, load_alpha_model(alpha_path) if alpha_path else None)


def embedder_spec(value: str) -> ProviderSpec:
    """Parse ``mock:DIM[:SEED]``, ``gemini:MODEL``, ``http:MODEL`` or a bare HTTP model name."""
    kind, _, rest = value.partition(":")
    if kind == "mock":
        parts = rest.split(":") if rest else []
        try:
            dimension = int(parts[0]) if parts else 64
            seed = int(parts[1]) if len(parts) > 1 else 0
        except ValueError:
            raise ConfigurationError(f"malformed mock embedder {value!r}; expected mock:DIM[:SEED]") from None
        return ProviderSpec(kind="mock", dimension=dimension, seed=seed)
    if kind in ("gemini", "http") and rest:
        return ProviderSpec(kind=kind, model=rest)
    return ProviderSpec(kind="http", model=value)


def embedder_spec_for_index(index: VectorIndex) -> ProviderSpec:
    """Rebuild the embedder an index was ingested with from its recorded id."""
    match = _MOCK_EMBEDDER_ID.match(index.embedder_id)
    if match:
        return ProviderSpec(kind="mock", dimension=int(match.group(1)), seed=int(match.group(2)))
    return ProviderSpec(kind="http", model=index.embedder_id, dimension=index.dimension)


def resolve_providers(config: PipelineConfig, index: VectorIndex) -> Providers:
    if config.embedder is None:
        config = config.model_copy(update={"embedder": embedder_spec_for_index(index)})
    return build_providers(config)


@contextmanager
def command_errors() -> Iterator[None]:
    """Turn pipeline failures into CommandError: 2 for config/usage, 1 for data/processing."""
    try:
        yield
    except (ConfigurationError, IndexFormatError) as exc:
        raise CommandError(str(exc), returncode=USAGE_ERROR) from exc
    except OSError as exc:
        raise CommandError(f"cannot read {exc.filename or 'input'}: {exc.strerror or exc}", returncode=USAGE_ERROR) from exc
    except (InvalidInputError, IngestionError, ProviderError) as exc:
        raise CommandError(str(exc), returncode=DATA_ERROR) from exc
    except UnicodeDecodeError as exc:
        raise CommandError(f"input is not valid UTF-8: {exc}", returncode=DATA_ERROR) from exc
