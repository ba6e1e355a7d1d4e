"""
Run evaluation: rank every query with the two-stage pipeline (plus optional
oracle and pooled baseline), score the rankings against qrels, and report
per-query and mean metrics.
"""

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import IO, Any, Dict, List, Optional, Sequence, Set, Tuple

import psutil

from config import RetrievalConfig
from ..errors import ConfigError, EngineError
from ..index import ChildIndex, FilterSpec
from ..ingestion.corpus import Corpus, Qrels
from ..model import QueryEmbedding, ScoredParent, Stage
from ..parsing import SWEEP_FIELDS
from ..retriever import retrieve
from .metrics import ndcg_at_k, recall_at_n
from .oracle import check_oracle_budget, oracle_rank, pooled_parent_matrix, pooled_rank

logger = logging.getLogger(__name__)

NDCG_CUTOFFS = (1, 3, 5, 10)
MEAN_QUERY_ID = "all"
BASELINES = ("pooled",)


@dataclass(frozen=True)
class MetricRecord:
    """One metric value; query_id 'all' holds the mean across queries."""

    query_id: str
    metric: str
    k: int
    value: float
    block: str = "default"

    def to_dict(self) -> Dict[str, Any]:
        return {"block": self.block, "query_id": self.query_id, "metric": self.metric, "k": self.k, "value": self.value}


@dataclass
class RunResult:
    """Rankings of every evaluated query plus the run's config and timing."""

    rankings: Dict[Stage, Dict[str, List[ScoredParent]]] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    timing: Dict[str, float] = field(default_factory=dict)
    metrics: List[MetricRecord] = field(default_factory=list)
    skipped: Dict[str, str] = field(default_factory=dict)
    no_relevant: Set[str] = field(default_factory=set)
    label: str = "default"

    def ranking(self, stage: Stage, query_id: str) -> List[ScoredParent]:
        return self.rankings.get(stage, {}).get(query_id, [])

    def mean(self, metric: str, k: int) -> Optional[float]:
        for record in self.metrics:
            if record.query_id == MEAN_QUERY_ID and record.metric == metric and record.k == k:
                return record.value
        return None


class _Timer:
    """Accumulates per-stage wall time and samples peak resident memory."""

    def __init__(self):
        self.process = psutil.Process()
        self.totals: Dict[str, float] = {}
        self.peak_rss = self.process.memory_info().rss

    def add(self, stage: str, seconds: float) -> None:
        self.totals[stage] = self.totals.get(stage, 0.0) + seconds
        self.peak_rss = max(self.peak_rss, self.process.memory_info().rss)

    def summary(self, wall: float, queries: int) -> Dict[str, float]:
        summary = {f"{stage}_seconds": round(value, 6) for stage, value in sorted(self.totals.items())}
        summary["wall_seconds"] = round(wall, 6)
        summary["queries"] = queries
        summary["peak_rss_mb"] = round(self.peak_rss / (1024 * 1024), 2)
        return summary


def evaluate_run(
    index: ChildIndex,
    corpus: Corpus,
    queries: Sequence[QueryEmbedding],
    qrels: Qrels,
    config: RetrievalConfig,
    with_oracle: bool = False,
    baseline: Optional[str] = None,
    base_filter: Optional[FilterSpec] = None,
    stage1_only: bool = False,
    label: str = "default",
) -> RunResult:
    """
    Evaluate the pipeline on a query set.

    Per query: Stage-1 and Stage-2 rankings, nDCG@{1,3,5,10} per stage, and
    with the oracle, oracle nDCG plus Stage-1 recall@shortlist_n of the
    oracle's top recall_depth. Under a restricting base_filter the oracle and
    the pooled baseline rank only the parents the filter admits. Queries
    whose retrieval fails are skipped and reported. Means are folded in
    query-id order.

    Raises:
        OracleTooLargeError: If with_oracle and the corpus exceeds oracle_ceiling
        ConfigError: If config.ann_mode needs a graph the index does not hold
    """
    index.check_mode(config.ann_mode)
    if with_oracle:
        check_oracle_budget(corpus, config.oracle_ceiling)
    if baseline is not None and baseline not in BASELINES:
        raise ConfigError(f"Unknown baseline '{baseline}' (available: {', '.join(BASELINES)})")

    result = RunResult(config=config.snapshot(), label=label)
    if not queries:
        logger.warning("Empty query set: nothing to evaluate")
        return result

    timer = _Timer()
    wall_start = time.time()
    stages = [Stage.STAGE1] + ([] if stage1_only else [Stage.STAGE2])
    if with_oracle:
        stages.append(Stage.ORACLE)
    if baseline == "pooled":
        stages.append(Stage.POOLED)
    for stage in stages:
        result.rankings[stage] = {}
    admitted = None if base_filter is None or base_filter.is_unrestricted else index.admitted_parents(base_filter)
    pooled = pooled_parent_matrix(corpus) if baseline == "pooled" else None
    if pooled is not None and admitted is not None:
        pooled = {pid: vec for pid, vec in pooled.items() if pid in admitted}

    per_query: Dict[str, List[MetricRecord]] = {}
    for query in queries:
        try:
            retrieved = retrieve(index, query, config, base_filter, stage1_only=stage1_only)
        except EngineError as e:
            logger.error(f"Skipping query {query.query_id}: {e}")
            result.skipped[query.query_id] = str(e)
            continue

        timer.add("stage1", retrieved.timing["stage1"])
        result.rankings[Stage.STAGE1][query.query_id] = retrieved.stage1.ranking
        if retrieved.stage2 is not None:
            timer.add("stage2", retrieved.timing["stage2"])
            result.rankings[Stage.STAGE2][query.query_id] = retrieved.stage2.ranking
        if with_oracle:
            start = time.time()
            result.rankings[Stage.ORACLE][query.query_id] = oracle_rank(
                corpus, query, config.fanout_concurrency, parent_ids=admitted
            )
            timer.add("oracle", time.time() - start)
        if pooled is not None:
            start = time.time()
            result.rankings[Stage.POOLED][query.query_id] = pooled_rank(corpus, query, pooled)
            timer.add("pooled", time.time() - start)

        per_query[query.query_id] = _query_metrics(result, query.query_id, qrels, config, stages, label)

    for query_id in sorted(per_query):
        result.metrics.extend(per_query[query_id])
    result.metrics.extend(_mean_metrics(per_query, result.no_relevant, config.exclude_unjudged, label))
    result.timing = timer.summary(time.time() - wall_start, len(per_query))

    if result.no_relevant:
        logger.warning(
            f"{len(result.no_relevant)} queries have no relevant documents and score 0: "
            f"{sorted(result.no_relevant)[:10]}"
        )
    if result.skipped:
        logger.warning(f"Skipped {len(result.skipped)} queries: {sorted(result.skipped)}")
    logger.info(f"Evaluated {len(per_query)} queries [{label}]: {result.timing}")
    return result


def _query_metrics(
    result: RunResult,
    query_id: str,
    qrels: Qrels,
    config: RetrievalConfig,
    stages: Sequence[Stage],
    label: str,
) -> List[MetricRecord]:
    records = []
    for stage in stages:
        ranking = result.ranking(stage, query_id)
        for k in NDCG_CUTOFFS:
            value = ndcg_at_k(ranking, qrels, query_id, k, result.no_relevant)
            records.append(MetricRecord(query_id, f"ndcg_{stage.value}", k, value, label))
    if Stage.ORACLE in stages:
        recall = recall_at_n(
            result.ranking(Stage.STAGE1, query_id),
            result.ranking(Stage.ORACLE, query_id),
            config.shortlist_n,
            config.recall_depth,
        )
        records.append(MetricRecord(query_id, "recall_stage1", config.shortlist_n, recall, label))
    return records


def _mean_metrics(
    per_query: Dict[str, List[MetricRecord]],
    no_relevant: Set[str],
    exclude_unjudged: bool,
    label: str,
) -> List[MetricRecord]:
    sums: Dict[Tuple[str, int], List[float]] = {}
    for query_id in sorted(per_query):
        for record in per_query[query_id]:
            if exclude_unjudged and query_id in no_relevant and record.metric.startswith("ndcg_"):
                continue
            sums.setdefault((record.metric, record.k), []).append(record.value)
    return [
        MetricRecord(MEAN_QUERY_ID, metric, k, sum(values) / len(values), label)
        for (metric, k), values in sums.items()
        if values
    ]


def sweep(
    index: ChildIndex,
    corpus: Corpus,
    queries: Sequence[QueryEmbedding],
    qrels: Qrels,
    config: RetrievalConfig,
    name: str,
    values: Sequence[int],
    **kwargs: Any,
) -> List[RunResult]:
    """
    Evaluate once per value of one query-time hyperparameter.

    Raises:
        ConfigError: If name is not sweepable or a value breaks a config invariant
    """
    if name not in SWEEP_FIELDS:
        raise ConfigError(f"Cannot sweep '{name}' (sweepable: {', '.join(SWEEP_FIELDS)})")
    results = []
    for value in values:
        swept = replace(config, **{name: value}).check()
        results.append(evaluate_run(index, corpus, queries, qrels, swept, label=f"{name}={value}", **kwargs))
    return results


# --- Output ---


def format_table(results: Sequence[RunResult]) -> str:
    """Human-readable table of mean metrics, one block per run."""
    lines = []
    for result in results:
        means = [r for r in result.metrics if r.query_id == MEAN_QUERY_ID]
        lines.append(f"== {result.label} ({result.timing.get('queries', 0)} queries) ==")
        if not means:
            lines.append("  (no metrics)")
            continue
        metrics = sorted({r.metric for r in means})
        for metric in metrics:
            cells = [f"@{r.k}={r.value:.4f}" for r in sorted(means, key=lambda r: r.k) if r.metric == metric]
            lines.append(f"  {metric:<14} " + "  ".join(cells))
    return "\n".join(lines)


def write_metric_records(results: Sequence[RunResult], stream: IO[str]) -> int:
    """Write every metric as one JSON line; returns the number of lines."""
    count = 0
    for result in results:
        for record in result.metrics:
            stream.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            count += 1
    return count
