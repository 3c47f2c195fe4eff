"""Similarity, angle and weighting math shared by retrieval, selection and analysis.

Every vector handled here is expected to be unit-norm; ``normalize`` is the only
entry point that accepts raw vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DegenerateInputError, InvalidInputError

UNIT_NORM_TOL = 1e-6
SIMILARITY_TOL = 1e-9
# Angles below this are float32 storage noise, not a direction.
DEGENERATE_ANGLE_TOL = 1e-6


@dataclass(frozen=True)
class AlphaModel:
    """Linear map from the query/pseudo-context angle to the query weight."""

    slope: float
    intercept: float
    r2: float | None = None
    n: int = 0


@dataclass(frozen=True)
class AngleSample:
    theta0: float
    theta1: float
    theta2: float
    alpha: float


DEFAULT_ALPHA_MODEL = AlphaModel(slope=0.058, intercept=0.455)


def normalize(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Return ``values`` scaled to unit Euclidean norm as a float64 vector."""
    vector = np.asarray(values, dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        raise InvalidInputError(f"expected a non-empty 1-D vector, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise InvalidInputError("vector contains non-finite values")
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise InvalidInputError("cannot normalize the zero vector")
    return vector / norm


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-wise ``normalize`` for a 2-D batch."""
    rows = np.asarray(matrix, dtype=np.float64)
    if rows.ndim != 2:
        raise InvalidInputError(f"expected a 2-D batch, got shape {rows.shape}")
    if not np.all(np.isfinite(rows)):
        raise InvalidInputError("batch contains non-finite values")
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise InvalidInputError("cannot normalize a zero vector in batch")
    return rows / norms[:, None]


def _check_dimensions(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def inner_product(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    left = np.asarray(a, dtype=np.float64)
    right = np.asarray(b, dtype=np.float64)
    _check_dimensions(left, right)
    return float(np.clip(np.dot(left, right), -1.0, 1.0))


def angle(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Angle in radians between two unit vectors, in [0, pi]."""
    return math.acos(inner_product(a, b))


def _clamp_similarity(value: float) -> float:
    if not math.isfinite(value) or value < -1.0 - SIMILARITY_TOL or value > 1.0 + SIMILARITY_TOL:
        raise InvalidInputError(f"similarity {value!r} outside [-1, 1]")
    return min(1.0, max(-1.0, value))


def ais_score(s1: float, s2: float) -> float:
    """Joint relevance cos(theta1 + theta2) expanded in terms of the two similarities.

    The expansion is not monotone once theta1 + theta2 passes pi; callers rank by the
    raw value regardless.
    """
    s1 = _clamp_similarity(s1)
    s2 = _clamp_similarity(s2)
    score = s1 * s2 - math.sqrt((1.0 - s1) * (1.0 + s1)) * math.sqrt((1.0 - s2) * (1.0 + s2))
    return min(1.0, max(-1.0, score))


def ais_scores(s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Vectorised ``ais_score`` over matching arrays."""
    left = np.asarray(s1, dtype=np.float64)
    right = np.asarray(s2, dtype=np.float64)
    _check_dimensions(left, right)
    for values in (left, right):
        if not np.all(np.isfinite(values)) or np.any(np.abs(values) > 1.0 + SIMILARITY_TOL):
            raise InvalidInputError("similarities outside [-1, 1]")
    left = np.clip(left, -1.0, 1.0)
    right = np.clip(right, -1.0, 1.0)
    scores = left * right - np.sqrt((1.0 - left) * (1.0 + left)) * np.sqrt((1.0 - right) * (1.0 + right))
    return np.clip(scores, -1.0, 1.0)


def additive_score(s1: float, s2: float) -> float:
    return _clamp_similarity(s1) + _clamp_similarity(s2)


def alpha_from_angles(theta1: float, theta2: float) -> float:
    """Query weight theta2 / (theta1 + theta2) that makes a document equally close to the query and the pseudo-context."""
    if theta1 < 0.0 or theta2 < 0.0:
        raise InvalidInputError(f"angles must be non-negative, got {theta1!r}, {theta2!r}")
    total = theta1 + theta2
    if total < DEGENERATE_ANGLE_TOL:
        raise DegenerateInputError("alpha is undefined when both angles are zero")
    return theta2 / total


def dynamic_angle(theta1: float, theta2: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha!r}")
    return alpha * theta1 + (1.0 - alpha) * theta2


def predict_alpha(theta0: float, model: AlphaModel = DEFAULT_ALPHA_MODEL) -> float:
    if not math.isfinite(theta0):
        raise InvalidInputError(f"theta0 must be finite, got {theta0!r}")
    return min(1.0, max(0.0, model.slope * theta0 + model.intercept))


def fit_alpha_model(samples: Iterable[AngleSample]) -> AlphaModel:
    """Ordinary least-squares fit of alpha on theta0."""
    rows = list(samples)
    theta0 = np.array([sample.theta0 for sample in rows], dtype=np.float64)
    alpha = np.array([sample.alpha for sample in rows], dtype=np.float64)
    if np.unique(theta0).size < 2:
        raise DegenerateInputError("fitting alpha needs at least two distinct theta0 values")

    design = np.column_stack([theta0, np.ones_like(theta0)])
    (slope, intercept), *_ = np.linalg.lstsq(design, alpha, rcond=None)

    residual = alpha - (slope * theta0 + intercept)
    ss_res = float(residual @ residual)
    centered = alpha - alpha.mean()
    ss_tot = float(centered @ centered)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return AlphaModel(slope=float(slope), intercept=float(intercept), r2=r2, n=len(rows))
