"""
Shared fixtures: a hand-built tiny corpus, a synthetic corpus factory, a
manifest writer on tmp_path and prebuilt indexes.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from config import RetrievalConfig
from src.core.index import ChildIndex
from src.core.ingestion import Corpus
from src.core.model import AnnMode, ChildEmbedding, Modality, ParentDoc, ParentKind, QueryEmbedding
from src.utils.synthetic import synthetic_corpus, synthetic_queries

TOY_DIR = Path(__file__).resolve().parents[2] / "data" / "toy"


def make_child(child_id, parent_id, vector, modality=Modality.TEXT, **metadata):
    return ChildEmbedding(
        child_id=child_id,
        parent_id=parent_id,
        modality=modality,
        vector=np.asarray(vector, dtype=np.float32),
        metadata=metadata,
    )


@pytest.fixture
def flat_config():
    """Exact-scan configuration with two fan-out workers."""
    return RetrievalConfig(ann_mode=AnnMode.EXACT_FLAT, fanout_concurrency=2)


@pytest.fixture
def graph_config():
    return RetrievalConfig(ann_mode=AnnMode.APPROXIMATE_GRAPH, hnsw_m=8, ef_construction=64, fanout_concurrency=2)


@pytest.fixture
def tiny_corpus():
    """
    Two parents in 2-D:
      p1: c1=[1,0] (text), c2=[0.6,0.8] (image)
      p2: c3=[0,1] (text)
    """
    parents = [
        ParentDoc(parent_id="p1", kind=ParentKind.PAGE, metadata={"lang": "en"}),
        ParentDoc(parent_id="p2", kind=ParentKind.IMAGE, metadata={"lang": "de"}),
    ]
    children = [
        make_child("c1", "p1", [1.0, 0.0]),
        make_child("c2", "p1", [0.6, 0.8], Modality.IMAGE),
        make_child("c3", "p2", [0.0, 1.0], section="intro"),
    ]
    return Corpus.build(parents, children)


@pytest.fixture
def tiny_query():
    return QueryEmbedding.from_vectors("q1", [[1.0, 0.0], [0.0, 1.0]])


@pytest.fixture
def tiny_index(tiny_corpus, flat_config):
    return ChildIndex.build(tiny_corpus, flat_config)


@pytest.fixture
def make_corpus():
    """Factory for seeded synthetic corpora."""

    def factory(num_parents=30, dimension=16, **kwargs):
        return synthetic_corpus(num_parents, dimension, **kwargs)

    return factory


@pytest.fixture
def synthetic_dataset():
    """Clustered 60-parent corpus with 12 queries (exact-flat index)."""
    corpus = synthetic_corpus(60, 16, children_range=(2, 12), clustered=True, seed=7)
    queries, targets = synthetic_queries(corpus, 12, seed=7)
    return corpus, queries, targets


@pytest.fixture
def write_manifest(tmp_path):
    """Write a list of record dicts (or raw strings) as a JSON-lines file."""

    def writer(records, name="corpus.jsonl"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write((record if isinstance(record, str) else json.dumps(record)) + "\n")
        return path

    return writer


@pytest.fixture
def toy_dir():
    return TOY_DIR
