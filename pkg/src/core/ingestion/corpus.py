"""
Parent/child corpus container, relevance judgments and corpus validation.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import (
    DanglingParentError,
    DimensionMismatchError,
    DuplicateChildError,
    DuplicateParentError,
    EmptyParentError,
    UnknownParentError,
)
from ..model import ChildEmbedding, Modality, ParentDoc

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Corpus:
    """
    Validated parent/child corpus.

    Parents are keyed by parent_id; each parent's children are kept in
    ascending child_id order. Instances are immutable once built.
    """

    dimension: int
    parents: Mapping[str, ParentDoc]
    children: Mapping[str, Tuple[ChildEmbedding, ...]]

    @classmethod
    def build(
        cls,
        parents: Iterable[ParentDoc],
        children: Iterable[ChildEmbedding],
        dimension: Optional[int] = None,
        locators: Optional[Mapping[str, str]] = None,
        parent_locators: Optional[Mapping[str, str]] = None,
    ) -> "Corpus":
        """
        Validate and assemble a corpus.

        Args:
            parents: Declared parent documents
            children: Child embeddings, any order
            dimension: Corpus dimension; inferred from the first child if None
            locators: Optional child_id -> "path:line" for diagnostics
            parent_locators: Optional parent_id -> "path:line"

        Raises:
            DuplicateParentError, DuplicateChildError, DanglingParentError,
            DimensionMismatchError, EmptyParentError
        """
        locators = locators or {}
        parent_locators = parent_locators or {}
        parent_map: Dict[str, ParentDoc] = {}
        for parent in parents:
            if parent.parent_id in parent_map:
                raise DuplicateParentError(
                    f"Duplicate parent_id '{parent.parent_id}'", parent_locators.get(parent.parent_id)
                )
            parent_map[parent.parent_id] = parent

        grouped: Dict[str, List[ChildEmbedding]] = {pid: [] for pid in parent_map}
        seen = set()
        for child in children:
            where = locators.get(child.child_id)
            if child.child_id in seen:
                raise DuplicateChildError(f"Duplicate child_id '{child.child_id}'", where)
            seen.add(child.child_id)
            if dimension is None:
                dimension = child.dimension
            if child.dimension != dimension:
                raise DimensionMismatchError(
                    f"DimensionMismatch: child '{child.child_id}' has length {child.dimension}, corpus dimension is {dimension}",
                    where,
                )
            if child.parent_id not in parent_map:
                raise DanglingParentError(child.parent_id, where)
            grouped[child.parent_id].append(child)

        ordered_parents: Dict[str, ParentDoc] = {}
        ordered_children: Dict[str, Tuple[ChildEmbedding, ...]] = {}
        for pid in sorted(parent_map):
            kids = sorted(grouped[pid], key=lambda c: c.child_id)
            if not kids:
                raise EmptyParentError(f"Parent '{pid}' has no children", parent_locators.get(pid))
            counts = Counter(c.modality for c in kids)
            ordered_parents[pid] = replace(
                parent_map[pid],
                child_count_by_modality={m: counts[m] for m in sorted(counts, key=lambda m: m.value)},
            )
            ordered_children[pid] = tuple(kids)

        corpus = cls(dimension=dimension or 0, parents=ordered_parents, children=ordered_children)
        logger.debug(
            f"Built corpus: {corpus.num_parents} parents, {corpus.num_children} children, dim={corpus.dimension}"
        )
        return corpus

    @property
    def num_parents(self) -> int:
        return len(self.parents)

    @property
    def num_children(self) -> int:
        return sum(len(kids) for kids in self.children.values())

    @property
    def parent_ids(self) -> List[str]:
        return list(self.parents)

    @property
    def modality_set(self) -> frozenset:
        return frozenset(c.modality for kids in self.children.values() for c in kids)

    def iter_children(self) -> Iterable[ChildEmbedding]:
        for kids in self.children.values():
            yield from kids

    def child_matrix(
        self, parent_id: str, modality: Optional[Modality] = None
    ) -> Tuple[np.ndarray, List[str]]:
        """Children of a parent as a (n, m) float32 matrix plus their ids."""
        if parent_id not in self.children:
            raise UnknownParentError(parent_id)
        kids = [c for c in self.children[parent_id] if modality is None or c.modality == modality]
        if not kids:
            return np.zeros((0, self.dimension), dtype=np.float32), []
        return np.vstack([c.vector for c in kids]), [c.child_id for c in kids]


@dataclass
class Qrels:
    """Graded relevance judgments; absent pairs mean grade 0."""

    entries: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def grade(self, query_id: str, parent_id: str) -> int:
        return self.entries.get((query_id, parent_id), 0)

    def for_query(self, query_id: str) -> Dict[str, int]:
        return {pid: g for (qid, pid), g in self.entries.items() if qid == query_id}

    @property
    def query_ids(self) -> List[str]:
        return sorted({qid for qid, _ in self.entries})

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class ValidationReport:
    """Report-only summary of a corpus."""

    dimension: int
    num_parents: int
    num_children: int
    modality_set: List[str]
    modality_counts: Dict[str, int]
    child_count_histogram: Dict[int, int]
    mean_children_per_parent: float
    fatal: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.fatal

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "num_parents": self.num_parents,
            "num_children": self.num_children,
            "modality_set": self.modality_set,
            "modality_counts": self.modality_counts,
            "child_count_histogram": {str(k): v for k, v in self.child_count_histogram.items()},
            "mean_children_per_parent": self.mean_children_per_parent,
            "fatal": self.fatal,
            "warnings": self.warnings,
        }

    def format(self) -> str:
        lines = [
            f"Parents: {self.num_parents}  Children: {self.num_children}  Dimension: {self.dimension}",
            f"Modalities: {', '.join(self.modality_set) or '-'}",
        ]
        for modality, count in self.modality_counts.items():
            lines.append(f"  {modality}: {count} children")
        lines.append(f"Mean children per parent: {self.mean_children_per_parent:.3f}")
        lines.append("Children-per-parent histogram:")
        for size, n in self.child_count_histogram.items():
            lines.append(f"  {size}: {n} parents")
        for message in self.fatal:
            lines.append(f"FATAL: {message}")
        for message in self.warnings:
            lines.append(f"WARNING: {message}")
        return "\n".join(lines)


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Summarize a corpus; never raises."""
    modality_counts: Counter = Counter()
    histogram: Counter = Counter()
    for kids in corpus.children.values():
        histogram[len(kids)] += 1
        for child in kids:
            modality_counts[child.modality.value] += 1

    mean = corpus.num_children / corpus.num_parents if corpus.num_parents else 0.0
    report = ValidationReport(
        dimension=corpus.dimension,
        num_parents=corpus.num_parents,
        num_children=corpus.num_children,
        modality_set=sorted(modality_counts),
        modality_counts=dict(sorted(modality_counts.items())),
        child_count_histogram=dict(sorted(histogram.items())),
        mean_children_per_parent=mean,
    )

    if corpus.num_parents == 0:
        report.fatal.append("no parents")
    if corpus.num_parents and corpus.dimension == 0:
        report.fatal.append("corpus dimension is 0")
    if len(modality_counts) > 1:
        per_parent_missing = sum(
            1 for p in corpus.parents.values() if len(p.child_count_by_modality) < len(modality_counts)
        )
        if per_parent_missing:
            report.warnings.append(
                f"{per_parent_missing} parents lack at least one corpus modality"
            )

    logger.info(
        f"Validated corpus: {report.num_parents} parents, {report.num_children} children, "
        f"mean {report.mean_children_per_parent:.2f} children/parent, fatal={report.fatal}"
    )
    return report
