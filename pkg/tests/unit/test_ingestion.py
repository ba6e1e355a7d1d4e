"""
Tests for manifest scanning, corpus/query/qrels loading, validation and
persistence.
"""

import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from src.core.errors import (
    EngineError,
    DanglingParentError,
    DimensionMismatchError,
    DuplicateChildError,
    DuplicateParentError,
    EmptyParentError,
    EmptyQueryError,
    NegativeGradeError,
    RecordFormatError,
    ZeroVectorError,
)
from src.core.ingestion import (
    BlobReader,
    Corpus,
    CorpusProcessor,
    RecordScanner,
    load_corpus,
    load_qrels,
    load_queries,
    validate_corpus,
    write_corpus,
    write_queries,
)
from src.core.ingestion.scanner import Record
from src.core.model import ChildEmbedding, Modality, ParentDoc, ParentKind

HEADER = {"type": "header", "dimension": 2}


def parent(pid, **extra):
    return {"type": "parent", "parent_id": pid, **extra}


def child(cid, pid, vector, modality="text", **extra):
    return {"type": "child", "child_id": cid, "parent_id": pid, "modality": modality, "vector": vector, **extra}


class TestRecordScanner:
    def test_skips_comments_and_blanks(self, write_manifest):
        path = write_manifest(["# comment", "", '{"type": "header", "dimension": 2}'])
        records = RecordScanner().scan_records(str(path))
        assert len(records) == 1
        assert records[0].locator.endswith(":3")

    def test_invalid_json_carries_locator(self, write_manifest):
        path = write_manifest([HEADER, "{not json"])
        with pytest.raises(RecordFormatError, match=r":2"):
            RecordScanner().scan_records(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            RecordScanner().scan_records(str(tmp_path / "absent.jsonl"))


class TestLoadCorpus:
    def test_counts(self, write_manifest):
        path = write_manifest(
            [
                HEADER,
                parent("p1", kind="page", metadata={"lang": "en"}),
                parent("p2", kind="image"),
                child("c1", "p1", [1, 0]),
                child("c2", "p1", [0.6, 0.8], "image"),
                child("c3", "p2", [0, 1]),
            ]
        )
        corpus = load_corpus(str(path))
        assert corpus.num_parents == 2
        assert corpus.num_children == 3
        assert corpus.dimension == 2
        assert corpus.parents["p2"].kind == ParentKind.IMAGE
        assert corpus.parents["p1"].child_count_by_modality == {Modality.IMAGE: 1, Modality.TEXT: 1}
        assert corpus.modality_set == frozenset({Modality.TEXT, Modality.IMAGE})

    def test_children_sorted_by_id(self, write_manifest):
        path = write_manifest([parent("p1"), child("c9", "p1", [1, 0]), child("c1", "p1", [0, 1])])
        corpus = load_corpus(str(path))
        assert [c.child_id for c in corpus.children["p1"]] == ["c1", "c9"]

    def test_dangling_parent(self, write_manifest):
        path = write_manifest([HEADER, parent("p1"), child("c1", "p1", [1, 0]), child("c2", "p9", [0, 1])])
        with pytest.raises(DanglingParentError) as exc:
            load_corpus(str(path))
        assert "DanglingParent('p9')" in str(exc.value)
        assert exc.value.locator.endswith(":4")

    def test_dimension_mismatch(self, write_manifest):
        path = write_manifest([HEADER, parent("p1"), child("c1", "p1", [1, 0, 0])])
        with pytest.raises(DimensionMismatchError):
            load_corpus(str(path))

    def test_duplicate_child(self, write_manifest):
        path = write_manifest([parent("p1"), child("c1", "p1", [1, 0]), child("c1", "p1", [0, 1])])
        with pytest.raises(DuplicateChildError):
            load_corpus(str(path))

    def test_duplicate_parent(self, write_manifest):
        path = write_manifest([parent("p1"), parent("p1"), child("c1", "p1", [1, 0])])
        with pytest.raises(DuplicateParentError) as exc:
            load_corpus(str(path))
        assert exc.value.locator.endswith(":2")

    def test_parent_without_children(self, write_manifest):
        path = write_manifest([parent("p1"), parent("p2"), child("c1", "p1", [1, 0])])
        with pytest.raises(EmptyParentError):
            load_corpus(str(path))

    def test_zero_vector(self, write_manifest):
        path = write_manifest([parent("p1"), child("c1", "p1", [0, 0])])
        with pytest.raises(ZeroVectorError):
            load_corpus(str(path))

    def test_unknown_modality(self, write_manifest):
        path = write_manifest([parent("p1"), child("c1", "p1", [1, 0], "audio")])
        with pytest.raises(RecordFormatError, match="Unknown modality"):
            load_corpus(str(path))

    def test_renormalizes_with_warning(self, write_manifest, caplog):
        path = write_manifest([parent("p1"), child("c1", "p1", [3, 4])])
        with caplog.at_level(logging.WARNING):
            corpus = load_corpus(str(path))
        np.testing.assert_allclose(corpus.children["p1"][0].vector, [0.6, 0.8], atol=1e-7)
        assert "Re-normalized 1 corpus vectors" in caplog.text

    def test_blob_vectors(self, tmp_path, write_manifest):
        np.array([1, 0, 0, 1], dtype="<f4").tofile(tmp_path / "vectors.bin")
        path = write_manifest(
            [
                parent("p1"),
                {"type": "child", "child_id": "c1", "parent_id": "p1", "modality": "text",
                 "blob_file": "vectors.bin", "offset": 0, "count": 2},
                {"type": "child", "child_id": "c2", "parent_id": "p1", "modality": "text",
                 "blob_file": "vectors.bin", "offset": 8, "count": 2},
            ]
        )
        corpus = load_corpus(str(path))
        matrix, ids = corpus.child_matrix("p1")
        assert ids == ["c1", "c2"]
        np.testing.assert_array_equal(matrix, [[1, 0], [0, 1]])

    def test_toy_corpus(self, toy_dir):
        corpus = load_corpus(str(toy_dir / "corpus.jsonl"))
        assert corpus.num_parents == 5
        assert corpus.num_children == 13
        assert corpus.dimension == 4


class TestBlobReader:
    def test_misaligned_offset(self, tmp_path):
        np.zeros(4, dtype="<f4").tofile(tmp_path / "b.bin")
        with pytest.raises(RecordFormatError, match="multiple of 4"):
            BlobReader(str(tmp_path)).read("b.bin", 2, 1)

    def test_out_of_bounds(self, tmp_path):
        np.zeros(4, dtype="<f4").tofile(tmp_path / "b.bin")
        with pytest.raises(RecordFormatError, match="exceeds"):
            BlobReader(str(tmp_path)).read("b.bin", 8, 4)



JSON_SCALARS = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(-(10**20), 10**20),
    st.floats(allow_nan=True, allow_infinity=True),
    st.text(max_size=5),
)
JSON_VALUES = st.one_of(JSON_SCALARS, st.lists(JSON_SCALARS, max_size=4))


class TestMalformedRecords:
    def test_non_integer_header_dimension(self):
        records = [Record("m.jsonl:1", {"type": "header", "dimension": "four"})]
        with pytest.raises(RecordFormatError) as excinfo:
            CorpusProcessor(BlobReader()).process_records(records)
        assert excinfo.value.locator == "m.jsonl:1"

    @pytest.mark.parametrize("field", ["offset", "count"])
    def test_non_integer_blob_range(self, tmp_path, field):
        np.zeros(4, dtype="<f4").tofile(tmp_path / "b.bin")
        blob = {"blob_file": "b.bin", "offset": 0, "count": 2, field: "x"}
        records = [
            Record("m.jsonl:1", parent("p1")),
            Record("m.jsonl:2", {"type": "child", "child_id": "c1", "parent_id": "p1", "modality": "text", **blob}),
        ]
        with pytest.raises(RecordFormatError, match=field) as excinfo:
            CorpusProcessor(BlobReader(str(tmp_path))).process_records(records)
        assert excinfo.value.locator == "m.jsonl:2"

    @settings(max_examples=150, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(
        dimension=st.one_of(st.just(None), JSON_VALUES),
        vector=JSON_VALUES,
        offset=JSON_VALUES,
        count=JSON_VALUES,
        use_blob=st.booleans(),
    )
    def test_every_rejection_carries_a_locator(self, tmp_path, dimension, vector, offset, count, use_blob):
        np.array([1, 0, 0, 1], dtype="<f4").tofile(tmp_path / "b.bin")
        records = []
        if dimension is not None:
            records.append(Record("m.jsonl:1", {"type": "header", "dimension": dimension}))
        records.append(Record("m.jsonl:2", parent("p1")))
        body = {"blob_file": "b.bin", "offset": offset, "count": count} if use_blob else {"vector": vector}
        records.append(
            Record("m.jsonl:3", {"type": "child", "child_id": "c1", "parent_id": "p1", "modality": "text", **body})
        )
        try:
            CorpusProcessor(BlobReader(str(tmp_path))).process_records(records)
        except EngineError as e:
            assert e.locator is not None


class TestLoadQueries:
    def test_file_order(self, write_manifest):
        path = write_manifest(
            [{"query_id": "qb", "tokens": [[1, 0]]}, {"query_id": "qa", "tokens": [[0, 2], [1, 1]]}],
            "queries.jsonl",
        )
        queries = load_queries(str(path), 2)
        assert [q.query_id for q in queries] == ["qb", "qa"]
        assert queries[1].num_tokens == 2
        np.testing.assert_allclose(queries[1].tokens[0], [0, 1])

    def test_empty_query(self, write_manifest):
        path = write_manifest([{"query_id": "q1", "tokens": []}], "queries.jsonl")
        with pytest.raises(EmptyQueryError):
            load_queries(str(path), 2)

    def test_token_dimension_checked(self, write_manifest):
        path = write_manifest([{"query_id": "q1", "tokens": [[1, 0, 0]]}], "queries.jsonl")
        with pytest.raises(DimensionMismatchError):
            load_queries(str(path), 2)


class TestLoadQrels:
    def test_last_duplicate_wins(self, tmp_path, caplog):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 p1 1\nq1 p2 2\nq1 p1 3\n")
        with caplog.at_level(logging.WARNING):
            qrels = load_qrels(str(path))
        assert qrels.grade("q1", "p1") == 3
        assert qrels.grade("q1", "p9") == 0
        assert len(qrels) == 2
        assert "Duplicate judgment" in caplog.text

    def test_negative_grade(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 p1 -1\n")
        with pytest.raises(NegativeGradeError):
            load_qrels(str(path))

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 p1\n")
        with pytest.raises(RecordFormatError, match=r"qrels.txt:1"):
            load_qrels(str(path))

    def test_relevance_helpers(self, toy_dir):
        qrels = load_qrels(str(toy_dir / "qrels.txt"))
        assert qrels.query_ids == ["q1", "q2", "q3"]
        assert qrels.for_query("q1") == {"page-001": 3, "page-002": 1}
        assert qrels.for_query("q9") == {}


class TestValidateCorpus:
    def test_report(self, make_corpus):
        corpus = make_corpus(4, 8, children_range=(2, 3), seed=1)
        report = validate_corpus(corpus)
        assert report.ok
        assert report.num_parents == 4
        assert sum(report.child_count_histogram.values()) == 4
        assert report.mean_children_per_parent == corpus.num_children / 4

    def test_mean_children(self):
        parents = [ParentDoc("a"), ParentDoc("b")]
        children = [
            ChildEmbedding(f"a{i}", "a", Modality.TEXT, np.array([1, 0], dtype=np.float32)) for i in range(3)
        ]
        children += [
            ChildEmbedding(f"b{i}", "b", Modality.TEXT, np.array([0, 1], dtype=np.float32)) for i in range(2)
        ]
        report = validate_corpus(Corpus.build(parents, children))
        assert report.mean_children_per_parent == 2.5
        assert report.child_count_histogram == {2: 1, 3: 1}

    def test_empty_corpus_is_fatal(self):
        report = validate_corpus(Corpus.build([], []))
        assert not report.ok
        assert "no parents" in report.fatal

    def test_missing_modality_warning(self, tiny_corpus):
        report = validate_corpus(tiny_corpus)
        assert report.ok
        assert report.warnings == ["1 parents lack at least one corpus modality"]


class TestPersistence:
    @pytest.mark.parametrize("blob_file", [None, "vectors.bin"])
    def test_corpus_round_trip(self, tiny_corpus, tmp_path, blob_file):
        path = write_corpus(tiny_corpus, str(tmp_path / "out" / "corpus.jsonl"), blob_file=blob_file)
        loaded = load_corpus(str(path))
        assert loaded.parent_ids == tiny_corpus.parent_ids
        assert loaded.parents["p1"].metadata == {"lang": "en"}
        for original, restored in zip(tiny_corpus.iter_children(), loaded.iter_children()):
            assert original.child_id == restored.child_id
            assert original.modality == restored.modality
            assert original.metadata == restored.metadata
            np.testing.assert_allclose(original.vector, restored.vector, atol=1e-6)

    def test_queries_round_trip_with_blob(self, tiny_query, tmp_path):
        path = write_queries([tiny_query], str(tmp_path / "queries.jsonl"), blob_file="queries.bin")
        loaded = load_queries(str(path), 2)
        assert loaded[0].query_id == "q1"
        np.testing.assert_allclose(loaded[0].tokens, tiny_query.tokens, atol=1e-6)
