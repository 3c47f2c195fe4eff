"""Answer normalization and the EM / token-F1 metrics used for scoring and agreement."""

from __future__ import annotations

import re
import string
from collections import Counter
from typing import Sequence

from .exceptions import InvalidInputError

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCTUATION = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and the articles a/an/the, collapse whitespace."""
    text = s.lower().translate(_PUNCTUATION)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def token_f1(prediction: str, reference: str) -> float:
    prediction_tokens = normalize_answer(prediction).split()
    reference_tokens = normalize_answer(reference).split()
    if not prediction_tokens or not reference_tokens:
        return float(prediction_tokens == reference_tokens)

    common = Counter(prediction_tokens) & Counter(reference_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(prediction_tokens)
    recall = overlap / len(reference_tokens)
    return 2 * precision * recall / (precision + recall)


def _require_golds(golds: Sequence[str]) -> None:
    if not golds:
        raise InvalidInputError("at least one gold answer is required")


def exact_match(pred: str, golds: Sequence[str]) -> int:
    _require_golds(golds)
    normalized = normalize_answer(pred)
    return int(any(normalized == normalize_answer(gold) for gold in golds))


def f1_score(pred: str, golds: Sequence[str]) -> float:
    """Best token-F1 of ``pred`` against any gold answer."""
    _require_golds(golds)
    return max(token_f1(pred, gold) for gold in golds)
