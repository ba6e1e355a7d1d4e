"""
Child-level vector index: exact flat scans, an HNSW graph, filters and
persistence.
"""

from .filters import ChildHit, FilterSpec, build_filter
from .store import (
    INDEX_FORMAT_VERSION,
    ChildIndex,
    build_index,
    children_of,
    exact_knn,
    knn,
)

__all__ = [
    'ChildHit',
    'FilterSpec',
    'build_filter',
    'INDEX_FORMAT_VERSION',
    'ChildIndex',
    'build_index',
    'children_of',
    'exact_knn',
    'knn',
]
