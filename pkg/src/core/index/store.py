"""
Child vector index.

A ChildIndex holds every child vector of a corpus as one float32 matrix whose
rows are in ascending child_id order, a packed per-modality copy for exact
scans, and (in approximate_graph mode) one faiss HNSW graph over all children.
Filters are applied while searching. The index is immutable after build and
safe for concurrent readers.
"""

import json
import logging
import struct
import threading
import time
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Tuple

import numpy as np

from config import RetrievalConfig
from ..errors import (
    ConfigError,
    DimensionMismatchError,
    IndexFormatError,
    InvalidKError,
    UnknownParentError,
    UnnormalizedQueryError,
)
from ..ingestion.corpus import Corpus
from ..model import AnnMode, ChildEmbedding, Modality, ParentDoc, ParentKind, merge_metadata
from .filters import ChildHit, FilterSpec
from .flat import FlatIndex
from .hnsw import HnswGraph

logger = logging.getLogger(__name__)

# Query vectors further than this from unit norm are rejected
QUERY_NORM_TOLERANCE = 1e-3

INDEX_MAGIC = b"MVSINDEX"
INDEX_FORMAT_VERSION = 2
# magic, version, dimension, parents, children, ann mode, catalog bytes
_HEADER = struct.Struct("<8sHIIIBQ")
_ANN_CODES = {AnnMode.EXACT_FLAT: 0, AnnMode.APPROXIMATE_GRAPH: 1}
# Distinct filters whose row masks stay cached
MASK_CACHE_SIZE = 64


class ChildIndex:
    """
    Searchable structure over the children of a corpus.

    Use ChildIndex.build() or ChildIndex.load(); the constructor expects an
    already-built graph (or None).
    """

    def __init__(self, corpus: Corpus, ann_mode: AnnMode, graph_params: Dict[str, Any],
                 graph: Optional[HnswGraph] = None):
        self.corpus = corpus
        self.ann_mode = ann_mode
        self.graph_params = dict(graph_params)

        children = sorted(corpus.iter_children(), key=lambda c: c.child_id)
        self.child_ids: List[str] = [c.child_id for c in children]
        self.parent_of_row: List[str] = [c.parent_id for c in children]
        self.modality_of_row: List[Modality] = [c.modality for c in children]
        self.metadata_of_row: List[Dict[str, str]] = [
            merge_metadata(corpus.parents[c.parent_id].metadata, c.metadata) for c in children
        ]

        dim = corpus.dimension
        if children:
            self.matrix = np.vstack([c.vector for c in children]).astype(np.float32)
        else:
            self.matrix = np.zeros((0, dim), dtype=np.float32)
        # Similarities accumulate in float64 from the stored float32 values
        self._matrix64 = self.matrix.astype(np.float64)

        codes = np.array([m.value for m in self.modality_of_row], dtype=object)
        self.flat = FlatIndex(self._matrix64, codes)

        rows_by_parent: Dict[str, List[int]] = {}
        for row, parent_id in enumerate(self.parent_of_row):
            rows_by_parent.setdefault(parent_id, []).append(row)
        self._rows_by_parent = {pid: np.asarray(rows, dtype=np.int64) for pid, rows in rows_by_parent.items()}

        self.graph = graph
        self._mask_cache: "OrderedDict[FilterSpec, np.ndarray]" = OrderedDict()
        self._mask_lock = threading.Lock()

    @classmethod
    def build(cls, corpus: Corpus, config: RetrievalConfig) -> "ChildIndex":
        """
        Build an index over a validated corpus.

        Args:
            corpus: Validated corpus
            config: Supplies ann_mode, hnsw_m, ef_construction and seed

        Returns:
            ChildIndex ready for concurrent searches
        """
        start = time.time()
        params = {"m": config.hnsw_m, "ef_construction": config.ef_construction, "seed": config.seed}
        index = cls(corpus, config.ann_mode, params)
        if config.ann_mode == AnnMode.APPROXIMATE_GRAPH:
            index.graph = HnswGraph(
                index._matrix64, m=config.hnsw_m, ef_construction=config.ef_construction, seed=config.seed
            ).build()
        logger.info(
            f"Built {config.ann_mode.value} index: {index.num_children} children over "
            f"{corpus.num_parents} parents in {time.time() - start:.2f}s"
        )
        return index

    # --- Properties ---

    @property
    def dimension(self) -> int:
        return self.corpus.dimension

    @property
    def num_children(self) -> int:
        return len(self.child_ids)

    @property
    def modalities(self) -> List[Modality]:
        """Modalities present in the index, in a stable order."""
        return sorted(self.flat.rows_by_modality, key=lambda m: m.value)

    # --- Search ---

    def _check_query(self, query_vec: np.ndarray, k: int) -> np.ndarray:
        if k < 1:
            raise InvalidKError(f"k must be a positive integer (got {k})")
        q = np.asarray(query_vec, dtype=np.float32).astype(np.float64)
        if q.ndim != 1 or q.shape[0] != self.dimension:
            raise DimensionMismatchError(
                f"DimensionMismatch: query has shape {q.shape}, index dimension is {self.dimension}"
            )
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > QUERY_NORM_TOLERANCE:
            raise UnnormalizedQueryError(f"UnnormalizedQuery: query norm is {norm:.6f}")
        return q

    def filter_mask(self, spec: FilterSpec) -> Optional[np.ndarray]:
        """Boolean mask of rows admitted by spec; None when unrestricted."""
        if spec.is_unrestricted:
            return None
        with self._mask_lock:
            cached = self._mask_cache.get(spec)
            if cached is not None:
                self._mask_cache.move_to_end(spec)
                return cached

        mask = np.fromiter(
            (spec.matches(m, md) for m, md in zip(self.modality_of_row, self.metadata_of_row)),
            dtype=bool,
            count=self.num_children,
        )
        with self._mask_lock:
            self._mask_cache[spec] = mask
            while len(self._mask_cache) > MASK_CACHE_SIZE:
                self._mask_cache.popitem(last=False)
        logger.debug(f"Filter {spec.describe()} admits {int(mask.sum())}/{self.num_children} children")
        return mask

    def _hits(self, rows, sims) -> List[ChildHit]:
        return [
            ChildHit(
                child_id=self.child_ids[row],
                parent_id=self.parent_of_row[row],
                modality=self.modality_of_row[row],
                similarity=float(sim),
            )
            for row, sim in zip(rows, sims)
        ]

    def _exact(self, q: np.ndarray, k: int, spec: FilterSpec) -> List[ChildHit]:
        # A pure modality filter scans that modality's packed matrix
        if spec.modality is not None and not spec.metadata_equals:
            rows, sims = self.flat.search(q, k, modality=spec.modality)
        else:
            rows, sims = self.flat.search(q, k, mask=self.filter_mask(spec))
        return self._hits(rows, sims)

    def knn(
        self,
        query_vec: np.ndarray,
        k: int,
        spec: Optional[FilterSpec] = None,
        num_candidates: Optional[int] = None,
        mode: Optional[AnnMode] = None,
    ) -> List[ChildHit]:
        """
        Top-k children matching a filter.

        Args:
            query_vec: Unit query vector
            k: Maximum number of hits (>= 1)
            spec: Filter; unrestricted if None
            num_candidates: Size of the filtered candidate beam (>= k); defaults to k
            mode: Search mode; defaults to the mode the index was built with

        Returns:
            Hits sorted by (similarity desc, child_id asc)

        Raises:
            InvalidKError: If k < 1 or k > num_candidates
            UnnormalizedQueryError: If |query| deviates from 1 by more than 1e-3
            ConfigError: If mode is approximate_graph and the index has no graph
        """
        mode = self.check_mode(mode or self.ann_mode)
        q = self._check_query(query_vec, k)
        spec = spec or FilterSpec()
        beam = k if num_candidates is None else num_candidates
        if k > beam:
            raise InvalidKError(f"k ({k}) must not exceed num_candidates ({beam})")

        if mode == AnnMode.EXACT_FLAT:
            return self._exact(q, k, spec)

        mask = self.filter_mask(spec)
        if mask is not None:
            admitted = int(mask.sum())
            if admitted == 0:
                return []
            if admitted <= beam:
                rows, sims = self.flat.search_rows(q, k, np.flatnonzero(mask))
                return self._hits(rows, sims)

        found = self.graph.search(q, k, ef=beam, accept=mask)
        return self._hits([node for _, node in found], [sim for sim, _ in found])

    def exact_knn(self, query_vec: np.ndarray, k: int, spec: Optional[FilterSpec] = None) -> List[ChildHit]:
        """Exhaustive top-k regardless of ann_mode."""
        q = self._check_query(query_vec, k)
        return self._exact(q, k, spec or FilterSpec())

    def check_mode(self, mode: AnnMode) -> AnnMode:
        """
        Confirm the index can serve searches in mode.

        Raises:
            ConfigError: If mode is approximate_graph and the index holds no graph
        """
        if mode == AnnMode.APPROXIMATE_GRAPH and self.graph is None:
            raise ConfigError(
                f"Index was built in {self.ann_mode.value} mode and holds no graph; "
                f"rebuild with --ann-mode approximate_graph or search with --ann-mode exact_flat"
            )
        return mode

    def admitted_parents(self, spec: Optional[FilterSpec] = None) -> Set[str]:
        """Parents owning at least one child admitted by spec."""
        mask = self.filter_mask(spec or FilterSpec())
        if mask is None:
            return set(self.corpus.parents)
        return {self.parent_of_row[row] for row in np.flatnonzero(mask)}

    def children_of(self, parent_id: str, modality: Optional[Modality] = None) -> Tuple[np.ndarray, List[str]]:
        """
        All children of a parent as a float32 matrix plus their ids.

        Rows are in ascending child_id order.

        Raises:
            UnknownParentError: If parent_id is not indexed
        """
        rows = self._rows_by_parent.get(parent_id)
        if rows is None:
            raise UnknownParentError(parent_id)
        if modality is not None:
            rows = rows[[self.modality_of_row[r] == modality for r in rows]]
        return self.matrix[rows], [self.child_ids[r] for r in rows]

    def stats(self) -> Dict[str, Any]:
        """Counts per modality plus graph shape."""
        parents_by_modality: Dict[str, int] = {}
        for parent in self.corpus.parents.values():
            for modality in parent.child_count_by_modality:
                parents_by_modality[modality.value] = parents_by_modality.get(modality.value, 0) + 1
        stats: Dict[str, Any] = {
            "ann_mode": self.ann_mode.value,
            "dimension": self.dimension,
            "num_parents": self.corpus.num_parents,
            "num_children": self.num_children,
            "children_by_modality": {
                m.value: int(rows.size) for m, rows in sorted(self.flat.rows_by_modality.items(), key=lambda kv: kv[0].value)
            },
            "parents_by_modality": dict(sorted(parents_by_modality.items())),
        }
        if self.graph is not None:
            stats["graph"] = self.graph.stats()
        return stats

    # --- Persistence ---

    def save(self, path: str) -> Path:
        """
        Write the index to a single binary file.

        Layout: fixed header, JSON catalog (ids, metadata, graph parameters),
        the little-endian float32 matrix, then the serialized faiss graph
        (graph_bytes long, absent in exact_flat mode).
        """
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        catalog = {
            "parents": [
                {"parent_id": p.parent_id, "kind": p.kind.value, "metadata": dict(p.metadata)}
                for p in self.corpus.parents.values()
            ],
            "children": [
                {
                    "child_id": self.child_ids[row],
                    "parent_id": self.parent_of_row[row],
                    "modality": self.modality_of_row[row].value,
                    "metadata": dict(child.metadata),
                }
                for row, child in enumerate(self._children_in_row_order())
            ],
            "graph_params": self.graph_params,
        }
        graph = self.graph.to_bytes() if self.graph is not None else b""
        catalog["graph_bytes"] = len(graph)
        payload = json.dumps(catalog, sort_keys=True).encode("utf-8")
        header = _HEADER.pack(
            INDEX_MAGIC,
            INDEX_FORMAT_VERSION,
            self.dimension,
            self.corpus.num_parents,
            self.num_children,
            _ANN_CODES[self.ann_mode],
            len(payload),
        )
        with open(out, "wb") as f:
            f.write(header)
            f.write(payload)
            f.write(self.matrix.astype("<f4").tobytes())
            f.write(graph)
        logger.info(f"Saved index to {out} ({out.stat().st_size} bytes)")
        return out

    def _children_in_row_order(self) -> List[ChildEmbedding]:
        by_id = {c.child_id: c for c in self.corpus.iter_children()}
        return [by_id[cid] for cid in self.child_ids]

    @classmethod
    def load(cls, path: str) -> "ChildIndex":
        """
        Read an index written by save().

        Raises:
            IndexFormatError: On wrong magic, unsupported version or truncation
        """
        source = Path(path)
        if not source.exists():
            raise FileNotFoundError(f"Index file not found: {source}")
        data = source.read_bytes()
        if len(data) < _HEADER.size:
            raise IndexFormatError(f"Index file {source} is truncated")

        magic, version, dim, n_parents, n_children, ann_code, catalog_len = _HEADER.unpack_from(data)
        if magic != INDEX_MAGIC:
            raise IndexFormatError(f"{source} is not an index file (bad magic)")
        if version != INDEX_FORMAT_VERSION:
            raise IndexFormatError(
                f"Unsupported index format version {version} (expected {INDEX_FORMAT_VERSION})"
            )
        modes = {code: mode for mode, code in _ANN_CODES.items()}
        if ann_code not in modes:
            raise IndexFormatError(f"Unknown ann mode code {ann_code}")

        offset = _HEADER.size
        matrix_bytes = n_children * dim * 4
        if len(data) < offset + catalog_len + matrix_bytes:
            raise IndexFormatError(f"Index file {source} is truncated")
        try:
            catalog = json.loads(data[offset:offset + catalog_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise IndexFormatError(f"Corrupt index catalog in {source}: {e}")
        graph_start = offset + catalog_len + matrix_bytes
        if len(data) != graph_start + int(catalog.get("graph_bytes", 0)):
            raise IndexFormatError(f"Index file {source} has an unexpected size")
        matrix = np.frombuffer(data, dtype="<f4", count=n_children * dim, offset=offset + catalog_len)
        matrix = matrix.reshape(n_children, dim).astype(np.float32)

        parents = [
            ParentDoc(parent_id=p["parent_id"], kind=ParentKind(p["kind"]), metadata=p["metadata"])
            for p in catalog["parents"]
        ]
        children = [
            ChildEmbedding(
                child_id=c["child_id"],
                parent_id=c["parent_id"],
                modality=Modality(c["modality"]),
                vector=matrix[row],
                metadata=c["metadata"],
            )
            for row, c in enumerate(catalog["children"])
        ]
        if len(parents) != n_parents or len(children) != n_children:
            raise IndexFormatError(f"Index header counts disagree with the catalog in {source}")

        corpus = Corpus.build(parents, children, dimension=dim)
        index = cls(corpus, modes[ann_code], catalog.get("graph_params", {}))
        if catalog.get("graph_bytes"):
            params = index.graph_params
            try:
                index.graph = HnswGraph.from_bytes(
                    data[graph_start:], index._matrix64,
                    m=int(params["m"]), ef_construction=int(params["ef_construction"]), seed=int(params["seed"]),
                )
            except (KeyError, ValueError, RuntimeError) as e:
                raise IndexFormatError(f"Corrupt graph in {source}: {e}")
        elif index.ann_mode == AnnMode.APPROXIMATE_GRAPH:
            raise IndexFormatError(f"Index file {source} declares approximate_graph but holds no graph")
        logger.info(f"Loaded {index.ann_mode.value} index from {source}: {n_children} children")
        return index


def build_index(corpus: Corpus, config: RetrievalConfig) -> ChildIndex:
    return ChildIndex.build(corpus, config)


def knn(index: ChildIndex, query_vec: np.ndarray, k: int, spec: Optional[FilterSpec] = None,
        num_candidates: Optional[int] = None, mode: Optional[AnnMode] = None) -> List[ChildHit]:
    return index.knn(query_vec, k, spec, num_candidates, mode)


def exact_knn(index: ChildIndex, query_vec: np.ndarray, k: int, spec: Optional[FilterSpec] = None) -> List[ChildHit]:
    return index.exact_knn(query_vec, k, spec)


def children_of(index: ChildIndex, parent_id: str, modality: Optional[Modality] = None) -> Tuple[np.ndarray, List[str]]:
    return index.children_of(parent_id, modality)
