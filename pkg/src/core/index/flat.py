"""
Exact flat scan over packed per-modality matrices.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np

from ..model import Modality

logger = logging.getLogger(__name__)


def top_k_rows(rows: np.ndarray, sims: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact top-k by (similarity desc, row asc).

    Ties at the k-th similarity are resolved by row order, never by the
    partition algorithm.
    """
    if rows.size == 0 or k <= 0:
        return rows[:0], sims[:0]
    if rows.size > k:
        kth = np.partition(sims, rows.size - k)[rows.size - k]
        keep = sims >= kth
        rows, sims = rows[keep], sims[keep]
    order = np.lexsort((rows, -sims))[:k]
    return rows[order], sims[order]


class FlatIndex:
    """
    Brute-force search structure.

    Rows of `matrix` are ordered by ascending child_id; every modality keeps
    a packed copy of its rows for single-modality scans.
    """

    def __init__(self, matrix: np.ndarray, modality_of_row: np.ndarray):
        self.matrix = matrix
        self.rows_by_modality: Dict[Modality, np.ndarray] = {}
        self.packed: Dict[Modality, np.ndarray] = {}
        for modality in Modality:
            rows = np.flatnonzero(modality_of_row == modality.value)
            if rows.size:
                self.rows_by_modality[modality] = rows
                self.packed[modality] = np.ascontiguousarray(matrix[rows])
        logger.debug(
            f"Flat index packed: { {m.value: int(r.size) for m, r in self.rows_by_modality.items()} }"
        )

    def search(
        self,
        query: np.ndarray,
        k: int,
        modality: Optional[Modality] = None,
        mask: Optional[np.ndarray] = None,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """
        Exact top-k rows and similarities.

        Args:
            query: float64 unit vector
            k: Number of results
            modality: Restrict the scan to one packed matrix
            mask: Optional boolean mask over all rows
        """
        if modality is not None:
            rows = self.rows_by_modality.get(modality)
            if rows is None:
                return np.zeros(0, dtype=np.int64), np.zeros(0)
            sims = self.packed[modality] @ query
        else:
            rows = np.arange(self.matrix.shape[0])
            sims = self.matrix @ query

        if mask is not None:
            keep = mask[rows]
            rows, sims = rows[keep], sims[keep]
        return top_k_rows(rows, sims, k)

    def search_rows(self, query: np.ndarray, k: int, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Exact top-k among an explicit ascending row subset."""
        sims = self.matrix[rows] @ query
        return top_k_rows(rows, sims, k)
