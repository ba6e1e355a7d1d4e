"""
Oracle ranking, ranking-quality metrics and run evaluation.
"""

from .metrics import dcg, ndcg_at_k, recall_at_n
from .oracle import check_oracle_budget, oracle_rank, pooled_parent_matrix, pooled_rank
from .runner import (
    NDCG_CUTOFFS,
    MetricRecord,
    RunResult,
    evaluate_run,
    format_table,
    sweep,
    write_metric_records,
)

__all__ = [
    'dcg',
    'ndcg_at_k',
    'recall_at_n',
    'check_oracle_budget',
    'oracle_rank',
    'pooled_parent_matrix',
    'pooled_rank',
    'NDCG_CUTOFFS',
    'MetricRecord',
    'RunResult',
    'evaluate_run',
    'format_table',
    'sweep',
    'write_metric_records',
]
