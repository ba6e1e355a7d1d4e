"""
Seeded synthetic corpora, queries and relevance judgments.

Uniform corpora draw every child independently on the unit sphere.
Clustered corpora give each parent a topic center; its children are noisy
copies of that center, and each query is built from noisy copies of one
target parent's children, so the target is relevant (grade 2) and its
topic neighbors are partially relevant (grade 1).

Usage:
    python -m src.utils.synthetic OUT_DIR [--parents N] [--dim D] [--queries Q] [--seed S]
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.ingestion import Corpus, Qrels, write_corpus, write_qrels, write_queries
from src.core.model import ChildEmbedding, Modality, ParentDoc, ParentKind, QueryEmbedding

logger = logging.getLogger(__name__)

LANGUAGES = ("en", "de", "fr")


def _unit(rows: np.ndarray) -> np.ndarray:
    return (rows / np.linalg.norm(rows, axis=-1, keepdims=True)).astype(np.float32)


def random_unit_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return _unit(rng.standard_normal((n, dim)))


def synthetic_corpus(
    num_parents: int,
    dimension: int,
    children_range: Tuple[int, int] = (2, 40),
    modalities: Sequence[Modality] = (Modality.TEXT,),
    clustered: bool = False,
    num_clusters: int = 8,
    noise: float = 0.35,
    seed: int = 0,
) -> Corpus:
    """
    Generate a validated corpus.

    Args:
        num_parents: Number of parents ("p0000", "p0001", ...)
        dimension: Vector dimension
        children_range: Inclusive (min, max) children per parent
        modalities: Modalities children are drawn from, uniformly
        clustered: Topic-clustered vectors instead of uniform ones
        num_clusters: Number of topics when clustered
        noise: Std-dev of the per-child perturbation when clustered
        seed: Generator seed
    """
    rng = np.random.default_rng(seed)
    centers = random_unit_vectors(rng, num_clusters, dimension) if clustered else None
    low, high = children_range
    width = max(4, len(str(num_parents - 1)))

    parents: List[ParentDoc] = []
    children: List[ChildEmbedding] = []
    for p in range(num_parents):
        parent_id = f"p{p:0{width}d}"
        topic = int(rng.integers(num_clusters)) if clustered else -1
        metadata = {"lang": LANGUAGES[int(rng.integers(len(LANGUAGES)))]}
        if clustered:
            metadata["topic"] = str(topic)
        parents.append(ParentDoc(parent_id=parent_id, kind=ParentKind.PAGE, metadata=metadata))

        count = int(rng.integers(low, high + 1))
        if clustered:
            vectors = _unit(centers[topic] + noise * rng.standard_normal((count, dimension)))
        else:
            vectors = random_unit_vectors(rng, count, dimension)
        picks = rng.integers(len(modalities), size=count)
        for c in range(count):
            children.append(
                ChildEmbedding(
                    child_id=f"{parent_id}-c{c:03d}",
                    parent_id=parent_id,
                    modality=modalities[int(picks[c])],
                    vector=vectors[c],
                )
            )

    corpus = Corpus.build(parents, children, dimension=dimension)
    logger.info(
        f"Generated {'clustered' if clustered else 'uniform'} corpus: {corpus.num_parents} parents, "
        f"{corpus.num_children} children, dim={dimension}, seed={seed}"
    )
    return corpus


def synthetic_queries(
    corpus: Corpus,
    num_queries: int,
    tokens_range: Tuple[int, int] = (2, 8),
    noise: float = 0.25,
    seed: int = 0,
) -> Tuple[List[QueryEmbedding], Dict[str, str]]:
    """
    Queries built around random target parents.

    Returns:
        (queries, query_id -> target parent_id)
    """
    rng = np.random.default_rng(seed + 1)
    parent_ids = corpus.parent_ids
    queries = []
    targets: Dict[str, str] = {}
    for q in range(num_queries):
        query_id = f"q{q:04d}"
        target = parent_ids[int(rng.integers(len(parent_ids)))]
        matrix, _ = corpus.child_matrix(target)
        count = int(rng.integers(tokens_range[0], tokens_range[1] + 1))
        rows = matrix[rng.integers(matrix.shape[0], size=count)].astype(np.float64)
        tokens = _unit(rows + noise * rng.standard_normal(rows.shape))
        queries.append(QueryEmbedding(query_id=query_id, tokens=tokens))
        targets[query_id] = target
    return queries, targets


def synthetic_qrels(corpus: Corpus, targets: Dict[str, str], neighbors: int = 3) -> Qrels:
    """Grade 2 for each query's target, grade 1 for up to `neighbors` same-topic parents."""
    qrels = Qrels()
    for query_id, target in sorted(targets.items()):
        qrels.entries[(query_id, target)] = 2
        topic = corpus.parents[target].metadata.get("topic")
        if topic is None:
            continue
        same = [pid for pid, p in corpus.parents.items() if pid != target and p.metadata.get("topic") == topic]
        for pid in same[:neighbors]:
            qrels.entries[(query_id, pid)] = 1
    return qrels


def write_dataset(
    out_dir: str,
    corpus: Corpus,
    queries: Sequence[QueryEmbedding],
    qrels: Qrels,
    blob: bool = False,
) -> Dict[str, Path]:
    """Write corpus.jsonl, queries.jsonl and qrels.txt into out_dir."""
    root = Path(out_dir)
    return {
        "corpus": write_corpus(corpus, str(root / "corpus.jsonl"), "corpus.f32" if blob else None),
        "queries": write_queries(queries, str(root / "queries.jsonl"), "queries.f32" if blob else None),
        "qrels": write_qrels(qrels, str(root / "qrels.txt")),
    }


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Generate a seeded synthetic retrieval dataset")
    parser.add_argument("out_dir", help="Output directory")
    parser.add_argument("--parents", type=int, default=200)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--queries", type=int, default=20)
    parser.add_argument("--min-children", type=int, default=2)
    parser.add_argument("--max-children", type=int, default=40)
    parser.add_argument("--modalities", default="text", help="Comma-separated, e.g. text,image")
    parser.add_argument("--uniform", action="store_true", help="Uniform instead of clustered vectors")
    parser.add_argument("--blob", action="store_true", help="Store vectors in sidecar float32 blobs")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        modalities = [Modality.parse(m) for m in args.modalities.split(",") if m.strip()]
    except ValueError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2

    corpus = synthetic_corpus(
        args.parents,
        args.dim,
        children_range=(args.min_children, args.max_children),
        modalities=modalities,
        clustered=not args.uniform,
        seed=args.seed,
    )
    queries, targets = synthetic_queries(corpus, args.queries, seed=args.seed)
    paths = write_dataset(args.out_dir, corpus, queries, synthetic_qrels(corpus, targets), blob=args.blob)
    for name, path in paths.items():
        print(f"✅ {name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
