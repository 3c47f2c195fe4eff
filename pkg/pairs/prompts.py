"""Prompt templates for pseudo-context generation and answering.

Templates are plain UTF-8 files using ``{q}`` for the question and ``{context}`` for
generated or retrieved context.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ConfigurationError

PSEUDO_CONTEXT_FILE = "pseudo_context.txt"
ANSWER_DIRECT_FILE = "answer_direct.txt"
ANSWER_WITH_CONTEXT_FILE = "answer_with_context.txt"
ANSWER_RATIONALE_FILE = "answer_rationale.txt"

_PLACEHOLDER = re.compile(r"\{(q|context)\}")


@dataclass(frozen=True)
class PromptTemplates:
    pseudo_context: str
    answer_direct: str
    answer_with_context: str
    # Only the cot mode uses it; directories without the file fall back to the packaged one.
    rationale: str | None = None

    @classmethod
    def from_directory(cls, directory: str | Path) -> "PromptTemplates":
        root = Path(directory)
        try:
            return cls(
                pseudo_context=(root / PSEUDO_CONTEXT_FILE).read_text(encoding="utf-8"),
                answer_direct=(root / ANSWER_DIRECT_FILE).read_text(encoding="utf-8"),
                answer_with_context=(root / ANSWER_WITH_CONTEXT_FILE).read_text(encoding="utf-8"),
                rationale=_read_optional(root / ANSWER_RATIONALE_FILE),
            )
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigurationError(f"cannot read prompt templates from {root}: {exc}") from exc


def _read_optional(path: Path) -> str | None:
    return path.read_text(encoding="utf-8") if path.is_file() else None


def render(template: str, **values: str) -> str:
    """Fill ``{q}`` / ``{context}`` in one pass; every given value must have a placeholder."""
    for name in values:
        if "{" + name + "}" not in template:
            raise ConfigurationError(f"prompt template has no {{{name}}} placeholder")
    return _PLACEHOLDER.sub(lambda match: values.get(match.group(1), match.group(0)), template)


def default_templates() -> PromptTemplates:
    return PromptTemplates.from_directory(Path(__file__).resolve().parent / "templates" / "pairs")
