"""
Stage-1 candidate generation.

Every query token is searched against the child index once per active
modality. Hits fold into a running-max table keyed by (parent, token,
modality); each parent's per-modality score is the sum of its top_m token
maxima. Multi-modality searches normalize those scores per modality with
median/MAD z-scores and fuse them with fixed weights; single-modality
searches rank by the raw score.
"""

import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import RetrievalConfig
from .errors import EmptyScoresError, InvalidKError, MissingWeightError
from .index import ChildHit, ChildIndex, FilterSpec
from .model import Modality, QueryEmbedding, ScoredParent, Stage

logger = logging.getLogger(__name__)

# MAD values below this are treated as zero spread
MAD_EPSILON = 1e-9

TableKey = Tuple[str, int, Modality]


@dataclass
class Stage1Table:
    """Sparse running-max similarities s_i(d) per (parent, token, modality)."""

    entries: Dict[TableKey, float] = field(default_factory=dict)
    knn_calls: int = 0
    hits_folded: int = 0

    def fold(self, token_index: int, modality: Modality, hits: Sequence[ChildHit]) -> None:
        for hit in hits:
            key = (hit.parent_id, token_index, modality)
            current = self.entries.get(key)
            if current is None or hit.similarity > current:
                self.entries[key] = hit.similarity
        self.hits_folded += len(hits)

    def merge(self, other: "Stage1Table") -> "Stage1Table":
        """Max-merge another table into this one."""
        for key, value in other.entries.items():
            current = self.entries.get(key)
            if current is None or value > current:
                self.entries[key] = value
        self.knn_calls += other.knn_calls
        self.hits_folded += other.hits_folded
        return self

    def get(self, parent_id: str, token_index: int, modality: Modality) -> Optional[float]:
        return self.entries.get((parent_id, token_index, modality))

    def token_maxima(self) -> Dict[Tuple[str, Modality], List[float]]:
        """Present token maxima S(d) grouped by (parent, modality)."""
        grouped: Dict[Tuple[str, Modality], List[float]] = {}
        for (parent_id, _, modality), value in sorted(self.entries.items(), key=lambda kv: (kv[0][0], kv[0][2].value, kv[0][1])):
            grouped.setdefault((parent_id, modality), []).append(value)
        return grouped

    @property
    def parent_ids(self) -> List[str]:
        return sorted({key[0] for key in self.entries})

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ModalityScore:
    parent_id: str
    modality: Modality
    approx_score: float
    contributing_token_count: int


@dataclass(frozen=True)
class FusedScore:
    """
    Fused Stage-1 score of one parent.

    z_by_modality holds the observed z-scores only; a modality the parent was
    not retrieved in contributes 0 to `fused`.
    """

    parent_id: str
    z_by_modality: Mapping[Modality, float]
    fused: float


@dataclass
class Stage1Result:
    """Stage-1 intermediates kept for diagnostics and evaluation."""

    table: Stage1Table
    modality_scores: List[ModalityScore]
    fused: List[FusedScore]
    ranking: List[ScoredParent]
    active_modalities: List[Modality]
    elapsed: float = 0.0


def active_modalities(index: ChildIndex, base_filter: Optional[FilterSpec] = None) -> List[Modality]:
    """Corpus modalities, narrowed to the filter's modality when it sets one."""
    present = index.modalities
    if base_filter is not None and base_filter.modality is not None:
        return [m for m in present if m == base_filter.modality]
    return present


async def fanout_search_async(
    index: ChildIndex,
    query: QueryEmbedding,
    config: RetrievalConfig,
    base_filter: Optional[FilterSpec] = None,
) -> Stage1Table:
    """
    Issue one knn call per (token, active modality), at most
    config.fanout_concurrency at a time, and fold the hits by max.

    Every call searches in config.ann_mode: exact_flat scans even a graph
    index, and approximate_graph on an index without a graph raises
    ConfigError before any call.
    """
    base_filter = base_filter or FilterSpec()
    index.check_mode(config.ann_mode)
    modalities = active_modalities(index, base_filter)
    table = Stage1Table()
    if not modalities:
        logger.debug(f"Query {query.query_id}: no active modalities, empty Stage-1 table")
        return table

    semaphore = asyncio.Semaphore(config.fanout_concurrency)

    async def search(token_index: int, modality: Modality) -> Tuple[int, Modality, List[ChildHit]]:
        spec = base_filter.with_modality(modality)
        async with semaphore:
            hits = await asyncio.to_thread(
                index.knn,
                query.tokens[token_index],
                config.k_per_token,
                spec,
                config.num_candidates,
                config.ann_mode,
            )
        logger.debug(
            f"knn query={query.query_id} token={token_index} modality={modality.value}: {len(hits)} hits"
        )
        return token_index, modality, hits

    requests = [search(i, m) for i in range(query.num_tokens) for m in modalities]
    for token_index, modality, hits in await asyncio.gather(*requests):
        table.fold(token_index, modality, hits)
    table.knn_calls = len(requests)
    return table


def fanout_search(
    index: ChildIndex,
    query: QueryEmbedding,
    config: RetrievalConfig,
    base_filter: Optional[FilterSpec] = None,
) -> Stage1Table:
    """
    Build the Stage-1 table for one query.

    Runs fanout_search_async on a private event loop; call the async variant
    from code that already runs one.

    Returns:
        Stage1Table with knn_calls == |Q| x |active modalities|
    """
    return asyncio.run(fanout_search_async(index, query, config, base_filter))


def topm_aggregate(table: Stage1Table, top_m: int) -> List[ModalityScore]:
    """
    Sum the top_m largest token maxima per (parent, modality).

    Parents with no entry in a modality get no ModalityScore for it. Output is
    ordered by (modality, parent_id).
    """
    if top_m < 1:
        raise InvalidKError(f"top_m must be >= 1 (got {top_m})")
    scores = []
    for (parent_id, modality), maxima in table.token_maxima().items():
        best = sorted(maxima, reverse=True)[:top_m]
        scores.append(
            ModalityScore(
                parent_id=parent_id,
                modality=modality,
                approx_score=float(sum(best)),
                contributing_token_count=len(best),
            )
        )
    scores.sort(key=lambda s: (s.modality.value, s.parent_id))
    return scores


def mad_normalize(scores: Sequence[ModalityScore]) -> Dict[str, float]:
    """
    Robust z-scores for one modality: (A - median) / MAD.

    MAD is the unscaled median absolute deviation. When more than half the
    scores tie at the median the MAD is 0, and the mean absolute deviation
    from the median takes its place so z stays scale invariant. Only when
    every score is equal does the denominator fall back to 1, sending every
    z to 0.

    Raises:
        EmptyScoresError: If scores is empty
    """
    if not scores:
        raise EmptyScoresError("EmptyScores: cannot normalize an empty score set")
    values = np.array([s.approx_score for s in scores], dtype=np.float64)
    median = float(np.median(values))
    deviations = np.abs(values - median)
    denominator = float(np.median(deviations))
    if denominator < MAD_EPSILON:
        denominator = float(np.mean(deviations))
    if denominator < MAD_EPSILON:
        denominator = 1.0
    z = (values - median) / denominator
    return {s.parent_id: float(v) for s, v in zip(scores, z)}


def fuse(
    z_by_modality: Mapping[Modality, Mapping[str, float]],
    weights: Mapping[Modality, float],
) -> List[FusedScore]:
    """
    Weighted sum of per-modality z-scores for every parent seen in any modality.

    Raises:
        MissingWeightError: If a modality in z_by_modality has no weight
    """
    modalities = sorted(z_by_modality, key=lambda m: m.value)
    for modality in modalities:
        if modality not in weights:
            raise MissingWeightError(f"No fusion weight for active modality '{modality.value}'")

    parent_ids = sorted({pid for z in z_by_modality.values() for pid in z})
    fused = []
    for pid in parent_ids:
        observed = {m: z_by_modality[m][pid] for m in modalities if pid in z_by_modality[m]}
        total = sum(weights[m] * observed.get(m, 0.0) for m in modalities)
        fused.append(FusedScore(parent_id=pid, z_by_modality=observed, fused=float(total)))
    return fused


def fuse_modality_scores(
    scores: Sequence[ModalityScore],
    modalities: Sequence[Modality],
    weights: Mapping[Modality, float],
) -> List[FusedScore]:
    """
    Normalize and fuse, or bypass both when a single modality is active.
    """
    if len(modalities) <= 1:
        return [
            FusedScore(parent_id=s.parent_id, z_by_modality={}, fused=s.approx_score)
            for s in sorted(scores, key=lambda s: s.parent_id)
        ]

    by_modality: Dict[Modality, List[ModalityScore]] = {}
    for score in scores:
        by_modality.setdefault(score.modality, []).append(score)
    z_by_modality = {m: mad_normalize(group) for m, group in by_modality.items()}
    return fuse(z_by_modality, {m: weights[m] for m in modalities if m in weights})


def select_candidates(fused: Sequence[FusedScore], shortlist_n: int) -> List[ScoredParent]:
    """Top min(shortlist_n, available) parents by (fused desc, parent_id asc)."""
    if shortlist_n < 1:
        raise InvalidKError(f"shortlist_n must be >= 1 (got {shortlist_n})")
    ordered = sorted(fused, key=lambda f: (-f.fused, f.parent_id))[:shortlist_n]
    return [ScoredParent(parent_id=f.parent_id, score=f.fused, stage=Stage.STAGE1) for f in ordered]


def run_stage1(
    index: ChildIndex,
    query: QueryEmbedding,
    config: RetrievalConfig,
    base_filter: Optional[FilterSpec] = None,
) -> Stage1Result:
    """Full Stage-1 pipeline keeping every intermediate."""
    start = time.time()
    modalities = active_modalities(index, base_filter)
    # Missing weights fail before any knn call
    weights = config.weights_for(modalities) if len(modalities) > 1 else {}

    table = fanout_search(index, query, config, base_filter)
    scores = topm_aggregate(table, config.top_m)
    fused = fuse_modality_scores(scores, modalities, weights)
    ranking = select_candidates(fused, config.shortlist_n)
    elapsed = time.time() - start

    logger.info(
        f"Stage-1 query={query.query_id}: {table.knn_calls} knn calls, {table.hits_folded} hits folded, "
        f"{len(table.parent_ids)} parents seen, {len(ranking)} candidates in {elapsed:.3f}s"
    )
    return Stage1Result(
        table=table,
        modality_scores=scores,
        fused=fused,
        ranking=ranking,
        active_modalities=modalities,
        elapsed=elapsed,
    )


def stage1_run(
    index: ChildIndex,
    query: QueryEmbedding,
    config: RetrievalConfig,
    base_filter: Optional[FilterSpec] = None,
) -> List[ScoredParent]:
    """
    Stage-1 shortlist for one query.

    fanout_search -> topm_aggregate -> (mad_normalize + fuse | single-modality
    bypass) -> select_candidates.
    """
    return run_stage1(index, query, config, base_filter).ranking
