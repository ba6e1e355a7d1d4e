"""
Ranking-quality metrics.

nDCG uses exponential gain (2^grade - 1) with a log2(rank + 1) discount,
the trec-style variant. Linear-gain nDCG gives different numbers.
"""

import logging
import math
from typing import List, Optional, Sequence, Set, Union

from ..errors import InvalidKError
from ..ingestion.corpus import Qrels
from ..model import ScoredParent

logger = logging.getLogger(__name__)

Ranked = Sequence[Union[ScoredParent, str]]


def _ids(ranking: Ranked) -> List[str]:
    return [r.parent_id if isinstance(r, ScoredParent) else str(r) for r in ranking]


def dcg(grades: Sequence[int], k: int) -> float:
    """
    Discounted cumulative gain of the first k grades.

    Example:
        dcg([2, 3, 0], 3) = 3/1 + 7/log2(3) = 7.4165
    """
    return sum((2 ** g - 1) / math.log2(rank + 1) for rank, g in enumerate(grades[:k], start=1))


def ndcg_at_k(
    ranking: Ranked,
    qrels: Qrels,
    query_id: str,
    k: int,
    no_relevant: Optional[Set[str]] = None,
) -> float:
    """
    nDCG@k of a ranking against graded judgments.

    Args:
        ranking: Parents in ranked order
        qrels: Judgments; unjudged parents have grade 0
        query_id: Query to evaluate
        k: Cutoff (>= 1)
        no_relevant: If given, receives query_id when the query has no
            relevant documents (unknown queries included)

    Returns:
        Value in [0, 1]; 0 when the query has no relevant documents
    """
    if k < 1:
        raise InvalidKError(f"nDCG cutoff must be >= 1 (got {k})")

    judged = qrels.for_query(query_id)
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)
    if not ideal:
        if no_relevant is not None:
            no_relevant.add(query_id)
        return 0.0

    grades = [judged.get(pid, 0) for pid in _ids(ranking)[:k]]
    return dcg(grades, k) / dcg(ideal, k)


def recall_at_n(candidates: Ranked, oracle_top: Ranked, n: int, r: int) -> float:
    """
    Fraction of the oracle's top-r parents found among the first n candidates.

    Raises:
        InvalidKError: If r < 1
    """
    if r < 1:
        raise InvalidKError(f"recall depth r must be >= 1 (got {r})")
    if r > n:
        logger.debug(f"recall depth r={r} exceeds candidate count n={n}")
    target = _ids(oracle_top)[:r]
    if not target:
        return 0.0
    found = set(_ids(candidates)[:n])
    return sum(1 for pid in target if pid in found) / r
