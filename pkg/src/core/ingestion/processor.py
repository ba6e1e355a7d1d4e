"""
Record Processing Engine.

Converts scanned manifest records into ParentDoc / ChildEmbedding /
QueryEmbedding objects, resolving inline or blob-backed vectors and
re-normalizing every vector to unit length.
"""

import logging
from typing import Dict, Iterable, List, Optional

import numpy as np

from ..errors import (
    DimensionMismatchError,
    EmptyQueryError,
    RecordFormatError,
    ZeroVectorError,
)
from ..model import (
    ChildEmbedding,
    Modality,
    ParentDoc,
    ParentKind,
    QueryEmbedding,
    l2_normalize,
    vector_norm,
)
from .corpus import Corpus
from .scanner import BlobReader, Record

logger = logging.getLogger(__name__)

# Input norms further than this from 1 are reported when re-normalized
NORM_WARNING_TOLERANCE = 1e-3


def _as_int(value, name: str, locator: str) -> int:
    # bool is an int subclass but never a valid count
    if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
        raise RecordFormatError(f"{name} must be an integer (got {value!r})", locator)
    try:
        return int(value)
    except (TypeError, ValueError):
        raise RecordFormatError(f"{name} must be an integer (got {value!r})", locator)


class VectorResolver:
    """Turns inline arrays or blob references into unit float32 vectors."""

    def __init__(self, blobs: BlobReader):
        self.blobs = blobs
        self.renormalized = 0
        self.first_renormalized: Optional[str] = None

    def resolve(self, spec, locator: str, dimension: Optional[int] = None) -> np.ndarray:
        if isinstance(spec, dict):
            try:
                blob_file = str(spec["blob_file"])
                offset = _as_int(spec["offset"], "offset", locator)
                count = _as_int(spec["count"], "count", locator)
            except KeyError as e:
                raise RecordFormatError(f"Blob reference missing field {e}", locator)
            raw = self.blobs.read(blob_file, offset, count, locator)
        elif isinstance(spec, list):
            try:
                raw = np.asarray(spec, dtype=np.float32)
            except (TypeError, ValueError, OverflowError):
                raise RecordFormatError("Vector must be an array of numbers", locator)
            if raw.ndim != 1:
                raise RecordFormatError("Vector must be a flat array of numbers", locator)
        else:
            raise RecordFormatError("Expected a vector array or a blob reference", locator)

        if dimension is not None and raw.shape[0] != dimension:
            raise DimensionMismatchError(
                f"DimensionMismatch: vector has length {raw.shape[0]}, expected {dimension}", locator
            )
        if not np.all(np.isfinite(raw)):
            raise RecordFormatError("Vector contains non-finite values", locator)

        norm = vector_norm(raw)
        if norm == 0.0:
            raise ZeroVectorError("ZeroVector: degenerate embedding", locator)
        if abs(norm - 1.0) > NORM_WARNING_TOLERANCE:
            self.renormalized += 1
            if self.first_renormalized is None:
                self.first_renormalized = locator
            logger.debug(f"Re-normalizing vector with norm {norm:.6f} at {locator}")
        return l2_normalize(raw)

    def report(self, what: str) -> None:
        if self.renormalized:
            logger.warning(
                f"Re-normalized {self.renormalized} {what} vectors whose norm deviated from 1 "
                f"by more than {NORM_WARNING_TOLERANCE} (first at {self.first_renormalized})"
            )


def _metadata(record: Record) -> Dict[str, str]:
    raw = record.data.get("metadata") or {}
    if not isinstance(raw, dict):
        raise RecordFormatError("metadata must be an object", record.locator)
    return {str(k): str(v) for k, v in raw.items()}


class CorpusProcessor:
    """Converts manifest records into a validated Corpus."""

    def __init__(self, blobs: BlobReader):
        self.resolver = VectorResolver(blobs)

    def process_records(self, records: Iterable[Record]) -> Corpus:
        """
        Build a corpus from parent, child and optional header records.

        Args:
            records: Scanned manifest records

        Returns:
            Validated Corpus with unit-norm vectors
        """
        dimension: Optional[int] = None
        parents: List[ParentDoc] = []
        children: List[ChildEmbedding] = []
        locators: Dict[str, str] = {}
        parent_locators: Dict[str, str] = {}

        for record in records:
            kind = record.data.get("type")
            if kind == "header":
                dimension = _as_int(record.require("dimension"), "dimension", record.locator)
                if dimension < 1:
                    raise RecordFormatError(f"dimension must be >= 1 (got {dimension})", record.locator)
            elif kind == "parent":
                parent = self._record_to_parent(record)
                # Last occurrence wins so duplicate errors point at the repeat
                parent_locators[parent.parent_id] = record.locator
                parents.append(parent)
            elif kind == "child":
                child = self._record_to_child(record, dimension)
                if dimension is None:
                    dimension = child.dimension
                locators[child.child_id] = record.locator
                children.append(child)
            else:
                raise RecordFormatError(f"Unknown record type {kind!r}", record.locator)

        self.resolver.report("corpus")
        corpus = Corpus.build(
            parents, children, dimension=dimension, locators=locators, parent_locators=parent_locators
        )
        logger.info(f"Processed {len(parents)} parent and {len(children)} child records")
        return corpus

    def _record_to_parent(self, record: Record) -> ParentDoc:
        kind = record.data.get("kind", ParentKind.PAGE.value)
        try:
            parent_kind = ParentKind(kind)
        except ValueError:
            raise RecordFormatError(f"Unknown parent kind '{kind}'", record.locator)
        return ParentDoc(
            parent_id=str(record.require("parent_id")),
            kind=parent_kind,
            metadata=_metadata(record),
        )

    def _record_to_child(self, record: Record, dimension: Optional[int]) -> ChildEmbedding:
        try:
            modality = Modality.parse(str(record.require("modality")))
        except ValueError as e:
            raise RecordFormatError(str(e), record.locator)

        if "vector" in record.data:
            spec = record.data["vector"]
        elif "blob_file" in record.data:
            spec = record.data
        else:
            raise RecordFormatError("Child needs 'vector' or 'blob_file'/'offset'/'count'", record.locator)

        return ChildEmbedding(
            child_id=str(record.require("child_id")),
            parent_id=str(record.require("parent_id")),
            modality=modality,
            vector=self.resolver.resolve(spec, record.locator, dimension),
            metadata=_metadata(record),
        )


class QueryProcessor:
    """Converts query records into QueryEmbedding objects."""

    def __init__(self, blobs: BlobReader):
        self.resolver = VectorResolver(blobs)

    def process_records(self, records: Iterable[Record], dimension: int) -> List[QueryEmbedding]:
        queries = []
        for record in records:
            query_id = str(record.require("query_id"))
            tokens = record.require("tokens")
            if not isinstance(tokens, list):
                raise RecordFormatError("tokens must be an array", record.locator)
            if not tokens:
                raise EmptyQueryError(f"EmptyQuery: query '{query_id}' has no tokens", record.locator)
            rows = [self.resolver.resolve(t, record.locator, dimension) for t in tokens]
            queries.append(QueryEmbedding(query_id=query_id, tokens=np.vstack(rows)))
        self.resolver.report("query token")
        logger.info(f"Processed {len(queries)} queries")
        return queries
