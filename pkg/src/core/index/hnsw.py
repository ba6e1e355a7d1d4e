"""
Hierarchical navigable small-world graph over child vectors, backed by faiss.

Nodes are row numbers of the index matrix (rows are in ascending child_id
order). Similarity is the inner product of unit vectors; larger is closer.
Rows are inserted in a seeded permutation, so faiss id i stands for row
order[i]. Insertion runs on a single thread, which makes two builds with the
same seed produce the same graph; the permutation is recomputed from the
seed when a graph is loaded.

Search accepts an optional boolean mask. Nodes failing the mask are never
returned but are still expanded during traversal.
"""

import logging
from typing import Any, Dict, List, Optional, Tuple

import faiss
import numpy as np

from .flat import top_k_rows

logger = logging.getLogger(__name__)

Scored = Tuple[float, int]


class HnswGraph:
    """
    HNSW graph index.

    Parameters:
        vectors: (n, d) float64 matrix of unit vectors, row = node id
        m: Links per node on upper layers (layer 0 allows 2*m)
        ef_construction: Beam width while inserting
        seed: Seed for the insertion order
    """

    def __init__(self, vectors: np.ndarray, m: int = 16, ef_construction: int = 200, seed: int = 0):
        self.vectors = vectors
        self.m = m
        self.ef_construction = ef_construction
        self.seed = seed
        self.order = np.random.default_rng(seed).permutation(vectors.shape[0])
        self.index: Optional[faiss.IndexHNSWFlat] = None

    def __len__(self) -> int:
        return 0 if self.index is None else int(self.index.ntotal)

    def build(self) -> "HnswGraph":
        index = faiss.IndexHNSWFlat(self.vectors.shape[1], self.m, faiss.METRIC_INNER_PRODUCT)
        index.hnsw.efConstruction = self.ef_construction
        if self.vectors.shape[0]:
            inserted = np.ascontiguousarray(self.vectors[self.order], dtype=np.float32)
            threads = faiss.omp_get_max_threads()
            faiss.omp_set_num_threads(1)
            try:
                index.add(inserted)
            finally:
                faiss.omp_set_num_threads(threads)
        self.index = index
        logger.debug(f"HNSW graph built: {len(self)} nodes, m={self.m}, ef_construction={self.ef_construction}")
        return self

    def search(
        self, query: np.ndarray, k: int, ef: int, accept: Optional[np.ndarray] = None
    ) -> List[Scored]:
        """
        Approximate top-k search.

        Args:
            query: Unit query vector (float64)
            k: Number of results
            ef: Beam width (num_candidates); raised to k if smaller
            accept: Optional boolean mask over nodes

        Returns:
            Up to k (similarity, node) pairs sorted by similarity desc, node asc
        """
        if not len(self):
            return []
        params = faiss.SearchParametersHNSW()
        params.efSearch = max(ef, k)
        if accept is not None:
            # faiss reads the bitmap in its own id order; both arrays must outlive the call
            bits = np.packbits(accept[self.order].astype(np.uint8), bitorder="little")
            selector = faiss.IDSelectorBitmap(len(self.order), faiss.swig_ptr(bits))
            params.sel = selector
        _, labels = self.index.search(query[None, :].astype(np.float32), k, params=params)
        ids = labels[0]
        rows = self.order[ids[ids >= 0]]
        # float64 similarities keep ties and ordering identical to the exact scan
        rows, sims = top_k_rows(rows, self.vectors[rows] @ query, k)
        return list(zip(sims.tolist(), rows.tolist()))

    # --- Introspection & persistence ---

    def stats(self) -> Dict[str, Any]:
        if not len(self):
            return {"nodes": 0, "max_level": -1, "mean_degree_layer0": 0.0}
        hnsw = self.index.hnsw
        # faiss stores level + 1 per node
        levels = faiss.vector_to_array(hnsw.levels).astype(np.int64)
        neighbors = faiss.vector_to_array(hnsw.neighbors)
        offsets = faiss.vector_to_array(hnsw.offsets).astype(np.int64)
        slots = offsets[:-1, None] + np.arange(hnsw.nb_neighbors(0))
        degrees = (neighbors[slots] >= 0).sum(axis=1)
        return {
            "nodes": len(self),
            "max_level": int(levels.max()) - 1,
            "entry_point": int(self.order[hnsw.entry_point]),
            "nodes_per_level": {layer: int((levels > layer).sum()) for layer in range(int(levels.max()))},
            "mean_degree_layer0": float(degrees.mean()),
        }

    def to_bytes(self) -> bytes:
        return faiss.serialize_index(self.index).tobytes()

    @classmethod
    def from_bytes(
        cls, data: bytes, vectors: np.ndarray, m: int, ef_construction: int, seed: int
    ) -> "HnswGraph":
        graph = cls(vectors, m=m, ef_construction=ef_construction, seed=seed)
        graph.index = faiss.deserialize_index(np.frombuffer(data, dtype=np.uint8).copy())
        if graph.index.ntotal != vectors.shape[0]:
            raise ValueError(f"Graph has {graph.index.ntotal} nodes but the matrix has {vectors.shape[0]} rows")
        return graph
