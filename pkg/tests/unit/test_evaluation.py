"""
Tests for the oracle, the pooled baseline, ranking metrics and run evaluation.
"""

import io
import json
import logging
import random
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config import RetrievalConfig
from src.core.errors import ConfigError, InvalidKError, OracleTooLargeError
from src.core.evaluation import (
    check_oracle_budget,
    dcg,
    evaluate_run,
    format_table,
    ndcg_at_k,
    oracle_rank,
    pooled_rank,
    recall_at_n,
    RunResult,
    sweep,
    write_metric_records,
)
from src.core.index import ChildIndex, FilterSpec
from src.core.ingestion import Corpus, Qrels
from src.core.model import AnnMode, ParentDoc, QueryEmbedding, ScoredParent, Stage
from src.core.rerank import rerank
from src.utils.synthetic import synthetic_qrels
from tests.unit.conftest import make_child


def qrels_of(*entries):
    return Qrels(entries={(q, p): g for q, p, g in entries})


def exact_config(corpus, **overrides):
    """Exact-flat config whose Stage-1 reaches every parent."""
    return RetrievalConfig(
        ann_mode=AnnMode.EXACT_FLAT,
        k_per_token=corpus.num_children,
        num_candidates=corpus.num_children,
        shortlist_n=corpus.num_parents,
        fanout_concurrency=2,
        **overrides,
    )


class TestNdcg:
    QRELS = qrels_of(("q1", "pa", 3), ("q1", "pb", 2), ("q2", "pa", 0))

    def test_dcg_hand_value(self):
        assert dcg([2, 3, 0], 3) == pytest.approx(7.4165, abs=1e-4)

    def test_swapped_top_two(self):
        assert ndcg_at_k(["pb", "pa", "pc"], self.QRELS, "q1", 3) == pytest.approx(0.8340, abs=1e-4)

    def test_perfect_ranking(self):
        assert ndcg_at_k(["pa", "pb", "pc"], self.QRELS, "q1", 3) == 1.0

    def test_accepts_scored_parents(self):
        ranking = [ScoredParent("pb", 2.0, Stage.STAGE2), ScoredParent("pa", 1.0, Stage.STAGE2)]
        assert ndcg_at_k(ranking, self.QRELS, "q1", 10) == pytest.approx(0.8340, abs=1e-4)

    def test_all_zero_grades_flagged(self):
        flagged = set()
        assert ndcg_at_k(["pa"], self.QRELS, "q2", 5, flagged) == 0.0
        assert flagged == {"q2"}

    def test_unknown_query_flagged(self):
        flagged = set()
        assert ndcg_at_k(["pa"], self.QRELS, "q9", 5, flagged) == 0.0
        assert flagged == {"q9"}

    def test_invalid_cutoff(self):
        with pytest.raises(InvalidKError):
            ndcg_at_k(["pa"], self.QRELS, "q1", 0)

    @settings(max_examples=60)
    @given(
        st.lists(st.integers(0, 3), min_size=1, max_size=12),
        st.integers(1, 12),
        st.randoms(use_true_random=False),
    )
    def test_bounds_and_zero_grade_permutations(self, grades, k, rnd):
        ids = [f"d{i}" for i in range(len(grades))]
        qrels = Qrels(entries={("q", pid): g for pid, g in zip(ids, grades)})
        value = ndcg_at_k(ids, qrels, "q", k)
        assert 0.0 <= value <= 1.0 + 1e-12

        zero_slots = [i for i, g in enumerate(grades) if g == 0]
        shuffled = [ids[i] for i in zero_slots]
        rnd.shuffle(shuffled)
        permuted = list(ids)
        for slot, pid in zip(zero_slots, shuffled):
            permuted[slot] = pid
        assert ndcg_at_k(permuted, qrels, "q", k) == value

        if any(grades):
            ideal = sorted(ids, key=lambda pid: -qrels.grade("q", pid))
            assert ndcg_at_k(ideal, qrels, "q", k) == pytest.approx(1.0)


class TestRecall:
    ORACLE = [f"p{i}" for i in range(10)]

    def test_seven_of_ten(self):
        candidates = self.ORACLE[:7] + ["x1", "x2", "x3"]
        assert recall_at_n(candidates, self.ORACLE, 80, 10) == pytest.approx(0.7)

    def test_superset(self):
        assert recall_at_n(["y"] + self.ORACLE, self.ORACLE, 80, 10) == 1.0

    def test_disjoint(self):
        assert recall_at_n(["x", "y"], self.ORACLE, 80, 10) == 0.0

    def test_only_first_n_candidates_count(self):
        assert recall_at_n(self.ORACLE, self.ORACLE, 5, 10) == 0.5

    def test_zero_depth(self):
        with pytest.raises(InvalidKError):
            recall_at_n(self.ORACLE, self.ORACLE, 80, 0)


class TestOracle:
    def test_two_parents(self, tiny_corpus):
        query = QueryEmbedding.from_vectors("q", [[1, 0], [0, 1]])
        ranking = oracle_rank(tiny_corpus, query)
        assert [(r.parent_id, r.stage) for r in ranking] == [("p1", Stage.ORACLE), ("p2", Stage.ORACLE)]
        assert [r.score for r in ranking] == pytest.approx([1.8, 1.0])

    def test_identical_parents_ordered_by_id(self):
        parents = [ParentDoc(pid) for pid in ("pc", "pa", "pb")]
        children = [make_child(f"{pid}-0", pid, [0.6, 0.8]) for pid in ("pc", "pa", "pb")]
        ranking = oracle_rank(Corpus.build(parents, children), QueryEmbedding.from_vectors("q", [[1, 0]]))
        assert [r.parent_id for r in ranking] == ["pa", "pb", "pc"]
        assert len({r.score for r in ranking}) == 1

    def test_single_parent(self):
        corpus = Corpus.build([ParentDoc("p")], [make_child("c", "p", [1, 0])])
        assert [r.parent_id for r in oracle_rank(corpus, QueryEmbedding.from_vectors("q", [[1, 0]]))] == ["p"]

    def test_budget_guard(self, tiny_corpus):
        check_oracle_budget(tiny_corpus, 2)
        with pytest.raises(OracleTooLargeError, match="oracle ceiling of 1"):
            check_oracle_budget(tiny_corpus, 1)

    def test_subset_agrees_with_rerank(self, synthetic_dataset):
        corpus, queries, _ = synthetic_dataset
        config = exact_config(corpus)
        index = ChildIndex.build(corpus, config)
        subset = set(corpus.parent_ids[::4])
        shortlist = [ScoredParent(pid, 0.0, Stage.STAGE1) for pid in sorted(subset)]
        for query in queries[:4]:
            oracle = {r.parent_id: r.score for r in oracle_rank(corpus, query) if r.parent_id in subset}
            reranked = {r.parent_id: r.score for r in rerank(index, query, shortlist, config).ranking}
            assert set(reranked) == set(oracle)
            for pid, score in oracle.items():
                assert reranked[pid] == pytest.approx(score, abs=1e-6)


class TestPooledBaseline:
    def test_ranking(self, tiny_corpus):
        ranking = pooled_rank(tiny_corpus, QueryEmbedding.from_vectors("q", [[1, 0]]))
        assert [r.parent_id for r in ranking] == ["p1", "p2"]
        assert ranking[0].stage == Stage.POOLED
        assert ranking[0].score == pytest.approx(0.8 / np.hypot(0.8, 0.4), abs=1e-6)
        assert ranking[1].score == pytest.approx(0.0, abs=1e-7)


class TestEvaluateRun:
    @pytest.fixture
    def bundle(self, synthetic_dataset):
        corpus, queries, targets = synthetic_dataset
        config = exact_config(corpus)
        return corpus, queries, synthetic_qrels(corpus, targets), ChildIndex.build(corpus, config), config

    def test_full_shortlist_matches_oracle(self, bundle):
        corpus, queries, qrels, index, config = bundle
        result = evaluate_run(index, corpus, queries, qrels, config, with_oracle=True)
        for k in (1, 3, 5, 10):
            assert result.mean("ndcg_stage2", k) == result.mean("ndcg_oracle", k)
        assert result.mean("recall_stage1", corpus.num_parents) == 1.0
        assert result.timing["queries"] == len(queries)
        assert result.timing["peak_rss_mb"] > 0

    def test_stage2_is_oracle_restricted_to_shortlist(self, bundle):
        corpus, queries, qrels, index, config = bundle
        narrow = replace(config, k_per_token=5, num_candidates=5, shortlist_n=8, top_m=3)
        result = evaluate_run(index, corpus, queries, qrels, narrow, with_oracle=True)
        for query in queries:
            stage2 = [r.parent_id for r in result.ranking(Stage.STAGE2, query.query_id)]
            shortlist = {r.parent_id for r in result.ranking(Stage.STAGE1, query.query_id)}
            oracle = [r.parent_id for r in result.ranking(Stage.ORACLE, query.query_id)]
            assert stage2 == [pid for pid in oracle if pid in shortlist]
            assert len(stage2) <= 8

    def test_metric_records(self, bundle):
        corpus, queries, qrels, index, config = bundle
        result = evaluate_run(index, corpus, queries[:3], qrels, config)
        per_query = [r for r in result.metrics if r.query_id != "all"]
        assert {r.metric for r in per_query} == {"ndcg_stage1", "ndcg_stage2"}
        assert {r.k for r in per_query} == {1, 3, 5, 10}
        assert len(per_query) == 3 * 2 * 4
        assert [r.query_id for r in per_query] == sorted(r.query_id for r in per_query)

    def test_stage1_only(self, bundle):
        corpus, queries, qrels, index, config = bundle
        result = evaluate_run(index, corpus, queries[:2], qrels, config, stage1_only=True)
        assert Stage.STAGE2 not in result.rankings
        assert result.mean("ndcg_stage2", 10) is None

    def test_pooled_baseline(self, bundle):
        corpus, queries, qrels, index, config = bundle
        result = evaluate_run(index, corpus, queries[:2], qrels, config, baseline="pooled")
        assert result.mean("ndcg_pooled", 10) is not None
        with pytest.raises(ConfigError):
            evaluate_run(index, corpus, queries, qrels, config, baseline="bm25")

    def test_empty_query_set(self, bundle, caplog):
        corpus, _, qrels, index, config = bundle
        with caplog.at_level(logging.WARNING):
            result = evaluate_run(index, corpus, [], qrels, config)
        assert result.metrics == []
        assert "Empty query set" in caplog.text

    def test_oracle_guard(self, bundle):
        corpus, queries, qrels, index, config = bundle
        with pytest.raises(OracleTooLargeError):
            evaluate_run(index, corpus, queries, qrels, replace(config, oracle_ceiling=10), with_oracle=True)

    def test_failed_query_is_skipped(self, tiny_index, tiny_corpus, flat_config):
        queries = [
            QueryEmbedding.from_vectors("bad", [[1, 0, 0]]),
            QueryEmbedding.from_vectors("good", [[1, 0]]),
        ]
        result = evaluate_run(tiny_index, tiny_corpus, queries, qrels_of(("good", "p1", 1)), flat_config)
        assert set(result.skipped) == {"bad"}
        assert "DimensionMismatch" in result.skipped["bad"]
        assert result.mean("ndcg_stage2", 1) == 1.0

    def test_filter_restricts_oracle_and_baseline(self, tiny_index, tiny_corpus, flat_config):
        query = QueryEmbedding.from_vectors("q1", [[1, 0], [0, 1]])
        result = evaluate_run(
            tiny_index, tiny_corpus, [query], qrels_of(("q1", "p2", 1)), replace(flat_config, recall_depth=1),
            with_oracle=True, baseline="pooled", base_filter=FilterSpec.of(lang="de"),
        )
        assert [r.parent_id for r in result.ranking(Stage.ORACLE, "q1")] == ["p2"]
        assert [r.parent_id for r in result.ranking(Stage.POOLED, "q1")] == ["p2"]
        assert result.mean("recall_stage1", flat_config.shortlist_n) == 1.0

    def test_unfiltered_oracle_ranks_every_parent(self, tiny_index, tiny_corpus, flat_config):
        query = QueryEmbedding.from_vectors("q1", [[1, 0]])
        result = evaluate_run(tiny_index, tiny_corpus, [query], Qrels(), flat_config, with_oracle=True)
        assert {r.parent_id for r in result.ranking(Stage.ORACLE, "q1")} == {"p1", "p2"}

    def test_graph_mode_on_flat_index_fails_the_run(self, tiny_index, tiny_corpus, graph_config):
        with pytest.raises(ConfigError, match="holds no graph"):
            evaluate_run(tiny_index, tiny_corpus, [QueryEmbedding.from_vectors("q1", [[1, 0]])], Qrels(), graph_config)

    def test_exclude_unjudged(self, tiny_index, tiny_corpus, flat_config):
        queries = [QueryEmbedding.from_vectors(qid, [[1, 0]]) for qid in ("judged", "unjudged")]
        qrels = qrels_of(("judged", "p1", 1))
        counted = evaluate_run(tiny_index, tiny_corpus, queries, qrels, flat_config)
        excluded = evaluate_run(
            tiny_index, tiny_corpus, queries, qrels, replace(flat_config, exclude_unjudged=True)
        )
        assert counted.no_relevant == {"unjudged"}
        assert counted.mean("ndcg_stage2", 1) == 0.5
        assert excluded.mean("ndcg_stage2", 1) == 1.0


class TestSweepAndOutput:
    def test_one_block_per_value(self, tiny_index, tiny_corpus, flat_config):
        queries = [QueryEmbedding.from_vectors("q1", [[1, 0], [0, 1]])]
        results = sweep(tiny_index, tiny_corpus, queries, qrels_of(("q1", "p1", 2)), flat_config, "top_m", [1, 4, 12])
        assert [r.label for r in results] == ["top_m=1", "top_m=4", "top_m=12"]
        assert [r.config["top_m"] for r in results] == [1, 4, 12]

        table = format_table(results)
        assert "== top_m=4 (1 queries) ==" in table
        assert "ndcg_stage2" in table

        stream = io.StringIO()
        count = write_metric_records(results, stream)
        lines = stream.getvalue().splitlines()
        assert count == len(lines)
        first = json.loads(lines[0])
        assert set(first) == {"block", "query_id", "metric", "k", "value"}
        assert first["block"] == "top_m=1"

    def test_unknown_field(self, tiny_index, tiny_corpus, flat_config):
        with pytest.raises(ConfigError):
            sweep(tiny_index, tiny_corpus, [], Qrels(), flat_config, "seed", [1])

    def test_invalid_value(self, tiny_index, tiny_corpus, flat_config):
        with pytest.raises(ConfigError):
            sweep(tiny_index, tiny_corpus, [], Qrels(), flat_config, "top_m", [0])

    def test_empty_results_table(self):
        assert "(no metrics)" in format_table([RunResult(label="empty")])


def test_rankings_are_reproducible(synthetic_dataset):
    corpus, queries, targets = synthetic_dataset
    config = RetrievalConfig(hnsw_m=8, ef_construction=64, num_candidates=40, fanout_concurrency=4)
    qrels = synthetic_qrels(corpus, targets)
    runs = []
    for _ in range(2):
        index = ChildIndex.build(corpus, config)
        result = evaluate_run(index, corpus, random.Random(0).sample(queries, len(queries)), qrels, config)
        runs.append([(r.query_id, r.metric, r.k, r.value) for r in result.metrics])
    assert runs[0] == runs[1]
