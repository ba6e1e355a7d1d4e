"""
Load and persist corpora, query sets and relevance judgments.

Corpus and query files are line-delimited JSON records; vectors are inline
arrays or references into a sidecar blob of little-endian float32 values.
Qrels are whitespace-separated `query_id parent_id grade` lines.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from ..errors import NegativeGradeError, RecordFormatError
from .corpus import Corpus, Qrels
from .processor import CorpusProcessor, QueryProcessor
from .scanner import FLOAT32_LE, BlobReader, RecordScanner
from ..model import QueryEmbedding
from ..parsing import parse_qrels_line

logger = logging.getLogger(__name__)


def load_corpus(manifest_path: str) -> Corpus:
    """
    Load and validate a parent/child corpus manifest.

    Args:
        manifest_path: Line-delimited manifest of header/parent/child records

    Returns:
        Corpus with every vector L2-normalized
    """
    path = Path(manifest_path)
    logger.info(f"Loading corpus manifest {path}")
    records = RecordScanner().scan(str(path))
    corpus = CorpusProcessor(BlobReader(str(path.parent))).process_records(records)
    logger.info(
        f"Loaded corpus: {corpus.num_parents} parents, {corpus.num_children} children, "
        f"dim={corpus.dimension}, modalities={sorted(m.value for m in corpus.modality_set)}"
    )
    return corpus


def load_queries(path: str, dimension: int) -> List[QueryEmbedding]:
    """
    Load query token embeddings in file order.

    Raises:
        EmptyQueryError: If a query lists no tokens
        DimensionMismatchError: If a token length differs from `dimension`
    """
    query_path = Path(path)
    records = RecordScanner().scan(str(query_path))
    queries = QueryProcessor(BlobReader(str(query_path.parent))).process_records(records, dimension)
    logger.info(f"Loaded {len(queries)} queries from {query_path}")
    return queries


def load_qrels(path: str) -> Qrels:
    """
    Load trec-style relevance judgments (no iteration column).

    Duplicate (query, parent) lines keep the last grade and log a warning.
    """
    qrels_path = Path(path)
    if not qrels_path.exists():
        raise FileNotFoundError(f"Qrels file not found: {qrels_path}")

    qrels = Qrels()
    duplicates = 0
    with open(qrels_path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            locator = f"{qrels_path}:{line_no}"
            try:
                query_id, parent_id, grade = parse_qrels_line(stripped)
            except ValueError as e:
                raise RecordFormatError(f"Malformed qrels line ({e})", locator)
            if grade < 0:
                raise NegativeGradeError(f"NegativeGrade: {grade} for ({query_id}, {parent_id})", locator)
            key = (query_id, parent_id)
            if key in qrels.entries:
                duplicates += 1
                logger.warning(f"Duplicate judgment for {key} at {locator}; last grade {grade} wins")
            qrels.entries[key] = grade

    logger.info(
        f"Loaded {len(qrels)} judgments for {len(qrels.query_ids)} queries ({duplicates} duplicates)"
    )
    return qrels


class _BlobWriter:
    def __init__(self, path: Path):
        self.path = path
        self.offset = 0
        self._f = open(path, "wb")

    def append(self, vector: np.ndarray) -> dict:
        data = np.asarray(vector, dtype=FLOAT32_LE).tobytes()
        ref = {"blob_file": self.path.name, "offset": self.offset, "count": int(vector.shape[0])}
        self._f.write(data)
        self.offset += len(data)
        return ref

    def close(self) -> None:
        self._f.close()


def _vector_fields(vector: np.ndarray, blob: Optional[_BlobWriter]) -> dict:
    if blob is not None:
        return blob.append(vector)
    return {"vector": [float(x) for x in np.asarray(vector, dtype=np.float32)]}


def write_corpus(corpus: Corpus, manifest_path: str, blob_file: Optional[str] = None) -> Path:
    """
    Write a corpus manifest, optionally with vectors in a sidecar blob.

    Args:
        corpus: Corpus to persist
        manifest_path: Output manifest path
        blob_file: Sidecar file name (placed next to the manifest); inline vectors if None
    """
    path = Path(manifest_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = _BlobWriter(path.parent / blob_file) if blob_file else None
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"type": "header", "dimension": corpus.dimension}) + "\n")
            for parent in corpus.parents.values():
                record = {
                    "type": "parent",
                    "parent_id": parent.parent_id,
                    "kind": parent.kind.value,
                    "metadata": dict(parent.metadata),
                }
                f.write(json.dumps(record, sort_keys=True) + "\n")
            for child in corpus.iter_children():
                record = {
                    "type": "child",
                    "child_id": child.child_id,
                    "parent_id": child.parent_id,
                    "modality": child.modality.value,
                    "metadata": dict(child.metadata),
                }
                record.update(_vector_fields(child.vector, blob))
                f.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if blob is not None:
            blob.close()

    logger.info(f"Wrote corpus manifest {path} ({corpus.num_children} children)")
    return path


def write_queries(queries: Iterable[QueryEmbedding], path: str, blob_file: Optional[str] = None) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    blob = _BlobWriter(out.parent / blob_file) if blob_file else None
    try:
        with open(out, "w", encoding="utf-8") as f:
            for query in queries:
                tokens = []
                for row in query.tokens:
                    fields = _vector_fields(row, blob)
                    tokens.append(fields if blob is not None else fields["vector"])
                f.write(json.dumps({"query_id": query.query_id, "tokens": tokens}) + "\n")
    finally:
        if blob is not None:
            blob.close()
    return out


def write_qrels(qrels: Qrels, path: str) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        for (query_id, parent_id), grade in sorted(qrels.entries.items()):
            f.write(f"{query_id} {parent_id} {grade}\n")
    return out
