"""
Brute-force references: exact MaxSim over the whole corpus and a dense
single-vector baseline.
"""

import logging
import time
from typing import Collection, Dict, List, Optional

import numpy as np

from ..errors import OracleTooLargeError
from ..ingestion.corpus import Corpus
from ..model import PrecisionMode, QueryEmbedding, ScoredParent, Stage, rank_scores
from ..rerank import score_parents

logger = logging.getLogger(__name__)


def check_oracle_budget(corpus: Corpus, ceiling: int) -> None:
    """Refuse oracle runs over corpora larger than ceiling parents."""
    if corpus.num_parents > ceiling:
        raise OracleTooLargeError(
            f"Oracle refused: corpus has {corpus.num_parents} parents, above the oracle ceiling of {ceiling} "
            f"(raise oracle_ceiling to force it)"
        )


def oracle_rank(
    corpus: Corpus,
    query: QueryEmbedding,
    max_workers: int = 1,
    parent_ids: Optional[Collection[str]] = None,
) -> List[ScoredParent]:
    """
    Exact MaxSim for every parent, fully ranked.

    Uses the same scoring path as Stage-2 so oracle and rerank scores agree.
    When parent_ids is given only those parents are ranked.
    """
    start = time.time()
    pids = [pid for pid in corpus.parents if parent_ids is None or pid in parent_ids]
    items = [(pid, corpus.child_matrix(pid)[0]) for pid in pids]
    scores, _, count = score_parents(query, items, PrecisionMode.FULL32, max_workers)
    logger.debug(
        f"Oracle query={query.query_id}: {len(items)} parents, {count} similarities in {time.time() - start:.3f}s"
    )
    return rank_scores(scores, Stage.ORACLE)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    # Pooled vectors that cancel out score 0 against everything
    norms[norms == 0.0] = 1.0
    return matrix / norms


def pooled_parent_matrix(corpus: Corpus) -> Dict[str, np.ndarray]:
    """Unit mean child vector of every parent (float64)."""
    pooled = np.vstack(
        [corpus.child_matrix(pid)[0].astype(np.float64).mean(axis=0) for pid in corpus.parents]
    ) if corpus.num_parents else np.zeros((0, corpus.dimension))
    unit = _unit_rows(pooled)
    return {pid: unit[i] for i, pid in enumerate(corpus.parents)}


def pooled_rank(
    corpus: Corpus,
    query: QueryEmbedding,
    pooled: Optional[Dict[str, np.ndarray]] = None,
) -> List[ScoredParent]:
    """
    Single-vector baseline: unit mean query token against unit mean child
    vector per parent.
    """
    pooled = pooled if pooled is not None else pooled_parent_matrix(corpus)
    q = _unit_rows(query.tokens.astype(np.float64).mean(axis=0)[None, :])[0]
    scores = {pid: float(vec @ q) for pid, vec in pooled.items()}
    return rank_scores(scores, Stage.POOLED)
