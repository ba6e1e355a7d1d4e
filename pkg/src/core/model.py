"""
Shared domain types and vector math.

Vectors are numpy float32 arrays. Similarities are dot products of unit
vectors and are accumulated in float64.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatchError, EmptyQueryError, UnnormalizedQueryError, ZeroVectorError

logger = logging.getLogger(__name__)

Vector = np.ndarray

NORM_TOLERANCE = 1e-5


class Modality(str, Enum):
    """Embedding source of a child vector."""

    TEXT = "text"
    IMAGE = "image"
    VIDEO_FRAME = "video_frame"

    @classmethod
    def parse(cls, value: str) -> "Modality":
        try:
            return cls(value.strip().lower())
        except ValueError:
            allowed = ", ".join(m.value for m in cls)
            raise ValueError(f"Unknown modality '{value}' (expected one of: {allowed})")


class ParentKind(str, Enum):
    PAGE = "page"
    IMAGE = "image"
    VIDEO_SEGMENT = "video_segment"


class Stage(str, Enum):
    STAGE1 = "stage1"
    STAGE2 = "stage2"
    ORACLE = "oracle"
    POOLED = "pooled"


class PrecisionMode(str, Enum):
    FULL32 = "full32"
    MIXED16 = "mixed16"


class AnnMode(str, Enum):
    EXACT_FLAT = "exact_flat"
    APPROXIMATE_GRAPH = "approximate_graph"


def as_vector(values: Iterable[float]) -> Vector:
    """Convert any sequence of numbers to a 1-D float32 vector."""
    vec = np.asarray(values, dtype=np.float32)
    if vec.ndim != 1:
        raise DimensionMismatchError(f"Expected a 1-D vector, got shape {vec.shape}")
    return vec


def l2_normalize(v: Iterable[float]) -> Vector:
    """
    Scale a vector to unit Euclidean norm.

    Args:
        v: Vector of any length >= 1

    Returns:
        float32 vector with the same direction and norm 1

    Raises:
        ZeroVectorError: If every component is zero
    """
    vec = as_vector(v)
    norm = float(np.linalg.norm(vec.astype(np.float64)))
    if norm == 0.0 or not np.isfinite(norm):
        raise ZeroVectorError(f"ZeroVector: cannot normalize vector of norm {norm}")
    return (vec.astype(np.float64) / norm).astype(np.float32)


def vector_norm(v: Vector) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64)))


def dot(a: Iterable[float], b: Iterable[float]) -> float:
    """Dot product of two equal-length vectors."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionMismatchError(
            f"Cannot take dot product of dimensions {va.shape} and {vb.shape}"
        )
    return float(np.dot(va, vb))


@dataclass(frozen=True)
class ChildEmbedding:
    """One dense vector (text token, image patch or video frame region)."""

    child_id: str
    parent_id: str
    modality: Modality
    vector: Vector = field(repr=False, compare=False)
    metadata: Mapping[str, str] = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return int(self.vector.shape[0])


@dataclass(frozen=True)
class ParentDoc:
    """Atomic retrievable unit (page, image or video segment)."""

    parent_id: str
    kind: ParentKind = ParentKind.PAGE
    metadata: Mapping[str, str] = field(default_factory=dict)
    child_count_by_modality: Mapping[Modality, int] = field(default_factory=dict)

    @property
    def child_count(self) -> int:
        return sum(self.child_count_by_modality.values())


@dataclass(frozen=True)
class QueryEmbedding:
    """Ordered query token vectors, each of unit norm."""

    query_id: str
    tokens: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] == 0:
            raise EmptyQueryError(f"EmptyQuery: query '{self.query_id}' has no tokens")
        norms = np.linalg.norm(self.tokens.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
            raise UnnormalizedQueryError(f"UnnormalizedQuery: query '{self.query_id}' has tokens that are not unit norm")

    @classmethod
    def from_vectors(cls, query_id: str, vectors: Sequence[Iterable[float]]) -> "QueryEmbedding":
        """Build a query by normalizing each token vector."""
        if len(vectors) == 0:
            raise EmptyQueryError(f"EmptyQuery: query '{query_id}' has no tokens")
        rows = [l2_normalize(v) for v in vectors]
        return cls(query_id=query_id, tokens=np.vstack(rows))

    @property
    def num_tokens(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.tokens.shape[1])


@dataclass(frozen=True)
class ScoredParent:
    parent_id: str
    score: float
    stage: Stage

    def sort_key(self):
        return (-self.score, self.parent_id)


def rank_scores(scores: Mapping[str, float], stage: Stage) -> List[ScoredParent]:
    """Order parent scores by (score descending, parent_id ascending)."""
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return [ScoredParent(parent_id=pid, score=float(s), stage=stage) for pid, s in ranked]


def merge_metadata(parent: Mapping[str, str], child: Mapping[str, str]) -> Dict[str, str]:
    """Child metadata as seen by filters: parent keys, overridden by child keys."""
    merged = dict(parent)
    merged.update(child)
    return merged
