import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from config import RetrievalConfig
from .index import ChildIndex, FilterSpec
from .model import QueryEmbedding, ScoredParent
from .rerank import RerankResult, rerank
from .stage1 import Stage1Result, run_stage1

logger = logging.getLogger(__name__)


@dataclass
class RetrievalResult:
    """Both stages of one query."""

    query_id: str
    stage1: Stage1Result
    stage2: Optional[RerankResult] = None
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def final(self) -> List[ScoredParent]:
        """Stage-2 ranking when reranked, else the Stage-1 shortlist."""
        return self.stage2.ranking if self.stage2 is not None else self.stage1.ranking


# --- Result Packaging Functions ---


def package_records(query_id: str, ranking: Sequence[ScoredParent]) -> List[Dict[str, Any]]:
    """
    Formats a ranking as output records (query_id, rank, parent_id, score, stage).
    Ranks start at 1.
    """
    return [
        {
            "query_id": query_id,
            "rank": rank,
            "parent_id": scored.parent_id,
            "score": scored.score,
            "stage": scored.stage.value,
        }
        for rank, scored in enumerate(ranking, start=1)
    ]


def package_result(result: RetrievalResult) -> List[Dict[str, Any]]:
    """Stage-1 records followed by Stage-2 records."""
    records = package_records(result.query_id, result.stage1.ranking)
    if result.stage2 is not None:
        records.extend(package_records(result.query_id, result.stage2.ranking))
    logger.debug(f"Packaged {len(records)} records for query {result.query_id}")
    return records


# --- Main Orchestrator ---


def retrieve(
    index: ChildIndex,
    query: QueryEmbedding,
    config: RetrievalConfig,
    base_filter: Optional[FilterSpec] = None,
    stage1_only: bool = False,
    keep_token_maxima: bool = False,
) -> RetrievalResult:
    """
    Run Stage-1 candidate generation and, unless stage1_only, exact Stage-2
    re-ranking of the shortlist.
    """
    start_time = time.time()
    base_filter = base_filter or FilterSpec()
    logger.info(
        f"Retrieving query {query.query_id}: {query.num_tokens} tokens, filter {base_filter.describe()}"
    )

    stage1 = run_stage1(index, query, config, base_filter)
    result = RetrievalResult(query_id=query.query_id, stage1=stage1)
    result.timing["stage1"] = stage1.elapsed

    if not stage1_only:
        result.stage2 = rerank(index, query, stage1.ranking, config, keep_token_maxima=keep_token_maxima)
        result.timing["stage2"] = result.stage2.elapsed

    result.timing["total"] = time.time() - start_time
    logger.info(
        f"Query {query.query_id}: {len(stage1.ranking)} candidates, "
        f"{len(result.final)} final results (total time: {result.timing['total']:.3f}s)"
    )
    if not stage1.ranking:
        logger.warning(f"Zero candidates for query {query.query_id}")
        logger.warning(f"Filter used: {base_filter.describe()}")
    return result
