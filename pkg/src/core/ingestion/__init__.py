"""
Corpus ingestion pipeline for the retrieval engine.

This package loads parent/child corpora, query sets and relevance judgments
from line-delimited manifests: scanning, record processing, validation and
persistence.
"""

from .scanner import RecordScanner, ScanOptions, BlobReader
from .processor import CorpusProcessor, QueryProcessor
from .corpus import Corpus, Qrels, ValidationReport, validate_corpus
from .loader import (
    load_corpus,
    load_queries,
    load_qrels,
    write_corpus,
    write_queries,
    write_qrels,
)

__all__ = [
    'RecordScanner',
    'ScanOptions',
    'BlobReader',
    'CorpusProcessor',
    'QueryProcessor',
    'Corpus',
    'Qrels',
    'ValidationReport',
    'validate_corpus',
    'load_corpus',
    'load_queries',
    'load_qrels',
    'write_corpus',
    'write_queries',
    'write_qrels',
]
