"""
Stage-2 exact MaxSim re-ranking.

MaxSim(Q, d) = sum over query tokens of the best dot product against every
child of d, all modalities included. Parents with similar child counts are
scored together as one padded 3-D product; lone parents take the per-parent
path. Both paths agree within 1e-6.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import RetrievalConfig
from .errors import DimensionMismatchError, EmptyChildrenError
from .index import ChildIndex
from .model import PrecisionMode, QueryEmbedding, ScoredParent, Stage, rank_scores

logger = logging.getLogger(__name__)

# Parents whose child counts are within this ratio share a padded batch
BATCH_ROW_RATIO = 1.5
MAX_BATCH_PARENTS = 64

QueryLike = Union[QueryEmbedding, np.ndarray]


@dataclass
class RerankResult:
    ranking: List[ScoredParent]
    per_parent_token_maxima: Optional[Dict[str, np.ndarray]] = None
    similarity_count: int = 0
    elapsed: float = 0.0


@dataclass
class _Batch:
    parent_ids: List[str] = field(default_factory=list)
    matrices: List[np.ndarray] = field(default_factory=list)


def _tokens(query: QueryLike) -> np.ndarray:
    tokens = query.tokens if isinstance(query, QueryEmbedding) else np.asarray(query)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    return tokens


def _check(tokens: np.ndarray, children: np.ndarray) -> np.ndarray:
    children = np.asarray(children)
    if children.ndim != 2 or children.shape[0] == 0:
        raise EmptyChildrenError("EmptyChildren: MaxSim needs at least one child vector")
    if children.shape[1] != tokens.shape[1]:
        raise DimensionMismatchError(
            f"DimensionMismatch: query dimension {tokens.shape[1]}, child dimension {children.shape[1]}"
        )
    return children


def token_maxima(query: QueryLike, children: np.ndarray, precision: PrecisionMode = PrecisionMode.FULL32) -> np.ndarray:
    """Per-token best similarity against one parent's children."""
    tokens = _tokens(query)
    children = _check(tokens, children)
    if precision == PrecisionMode.MIXED16:
        q = tokens.astype(np.float16).astype(np.float32)
        d = children.astype(np.float16).astype(np.float32)
        return (q @ d.T).max(axis=1)
    sims = tokens.astype(np.float64) @ children.astype(np.float64).T
    return sims.max(axis=1)


def exact_maxsim(query: QueryLike, children: np.ndarray) -> float:
    """
    Exact MaxSim over all children and all query tokens.

    Raises:
        EmptyChildrenError: If children has no rows
    """
    return float(token_maxima(query, children).sum())


def exact_maxsim_reduced(query: QueryLike, children: np.ndarray) -> float:
    """MaxSim with 16-bit inputs and 32-bit accumulation."""
    maxima = token_maxima(query, children, PrecisionMode.MIXED16)
    return float(maxima.sum(dtype=np.float32))


def _plan_batches(items: Sequence[Tuple[str, np.ndarray]]) -> List[_Batch]:
    """Group parents with similar child counts, in (rows, parent_id) order."""
    ordered = sorted(items, key=lambda item: (item[1].shape[0], item[0]))
    batches: List[_Batch] = []
    current = _Batch()
    smallest = 0
    for parent_id, matrix in ordered:
        rows = matrix.shape[0]
        if current.parent_ids and (rows > smallest * BATCH_ROW_RATIO or len(current.parent_ids) >= MAX_BATCH_PARENTS):
            batches.append(current)
            current = _Batch()
        if not current.parent_ids:
            smallest = rows
        current.parent_ids.append(parent_id)
        current.matrices.append(matrix)
    if current.parent_ids:
        batches.append(current)
    return batches


def _score_batch(tokens: np.ndarray, batch: _Batch, precision: PrecisionMode) -> Dict[str, np.ndarray]:
    if len(batch.parent_ids) == 1:
        return {batch.parent_ids[0]: token_maxima(tokens, batch.matrices[0], precision)}

    dtype = np.float32 if precision == PrecisionMode.MIXED16 else np.float64
    width = max(m.shape[0] for m in batch.matrices)
    padded = np.zeros((len(batch.matrices), width, tokens.shape[1]), dtype=dtype)
    valid = np.zeros((len(batch.matrices), width), dtype=bool)
    for b, matrix in enumerate(batch.matrices):
        rows = _check(tokens, matrix)
        if precision == PrecisionMode.MIXED16:
            rows = rows.astype(np.float16)
        padded[b, : rows.shape[0]] = rows
        valid[b, : rows.shape[0]] = True

    q = tokens.astype(np.float16).astype(np.float32) if precision == PrecisionMode.MIXED16 else tokens.astype(np.float64)
    # (B, width, m) @ (m, |Q|) -> (B, width, |Q|)
    sims = padded @ q.T
    sims[~valid] = -np.inf
    maxima = sims.max(axis=1)
    return {pid: maxima[b] for b, pid in enumerate(batch.parent_ids)}


def score_parents(
    query: QueryLike,
    items: Sequence[Tuple[str, np.ndarray]],
    precision: PrecisionMode = PrecisionMode.FULL32,
    max_workers: int = 1,
) -> Tuple[Dict[str, float], Dict[str, np.ndarray], int]:
    """
    MaxSim for many parents at once.

    Args:
        query: Query tokens
        items: (parent_id, child matrix) pairs
        precision: full32 or mixed16
        max_workers: Size of the batch worker pool

    Returns:
        (scores, per-parent token maxima, similarity count)
    """
    tokens = _tokens(query)
    batches = _plan_batches(items)
    maxima: Dict[str, np.ndarray] = {}
    if max_workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for result in pool.map(lambda b: _score_batch(tokens, b, precision), batches):
                maxima.update(result)
    else:
        for batch in batches:
            maxima.update(_score_batch(tokens, batch, precision))

    accumulate = np.float32 if precision == PrecisionMode.MIXED16 else np.float64
    scores = {pid: float(m.sum(dtype=accumulate)) for pid, m in maxima.items()}
    count = sum(tokens.shape[0] * matrix.shape[0] for _, matrix in items)
    logger.debug(f"Scored {len(items)} parents in {len(batches)} batches ({count} similarities)")
    return scores, maxima, count


def rerank(
    index: ChildIndex,
    query: QueryEmbedding,
    shortlist: Sequence[ScoredParent],
    config: RetrievalConfig,
    keep_token_maxima: bool = False,
    stage: Stage = Stage.STAGE2,
) -> RerankResult:
    """
    Re-rank a shortlist with exact MaxSim over each parent's full child set.

    Raises:
        UnknownParentError: If a shortlisted parent is not indexed
    """
    start = time.time()
    if not shortlist:
        return RerankResult(ranking=[], per_parent_token_maxima={} if keep_token_maxima else None)

    items = [(p.parent_id, index.children_of(p.parent_id)[0]) for p in shortlist]
    scores, maxima, count = score_parents(query, items, config.precision_mode, config.fanout_concurrency)
    elapsed = time.time() - start
    logger.info(
        f"Stage-2 query={query.query_id}: reranked {len(items)} parents "
        f"({count} similarities, {config.precision_mode.value}) in {elapsed:.3f}s"
    )
    return RerankResult(
        ranking=rank_scores(scores, stage),
        per_parent_token_maxima=maxima if keep_token_maxima else None,
        similarity_count=count,
        elapsed=elapsed,
    )
