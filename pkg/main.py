#!/usr/bin/env python3
"""
Multi-vector retrieval CLI

Build a child-vector index from a corpus manifest, run two-stage
late-interaction search, and evaluate rankings against qrels.

Exit codes: 0 success, 1 runtime or input failure, 2 usage or guard refusal.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO

from config import CliConfig, validate_config
from src.core.errors import ConfigError, EngineError, OracleTooLargeError
from src.core.evaluation import (
    check_oracle_budget,
    evaluate_run,
    format_table,
    oracle_rank,
    sweep,
    write_metric_records,
)
from src.core.index import ChildIndex
from src.core.ingestion import load_corpus, load_qrels, load_queries, validate_corpus
from src.core.model import AnnMode, Stage
from src.core.parsing import parse_filter_args, parse_sweep
from src.core.retriever import package_records, package_result, retrieve
from src.utils.export_trec_run import write_trec_run

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

# CLI flag -> config field
FLAG_FIELDS = {
    "k": "k_per_token",
    "top_m": "top_m",
    "shortlist_n": "shortlist_n",
    "num_candidates": "num_candidates",
    "weights": "modality_weights",
    "ann_mode": "ann_mode",
    "precision": "precision_mode",
    "concurrency": "fanout_concurrency",
    "seed": "seed",
    "hnsw_m": "hnsw_m",
    "ef_construction": "ef_construction",
    "oracle_ceiling": "oracle_ceiling",
    "recall_depth": "recall_depth",
    "corpus": "corpus",
    "queries": "queries",
    "qrels": "qrels",
    "index": "index",
    "output_dir": "output_dir",
    "filter": "filters",
    "stage1_only": "stage1_only",
    "oracle": "oracle",
    "force": "force",
    "sweep": "sweep",
    "baseline": "baseline",
    "trec": "trec",
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="TOML config file (keys are config field names)")
    shared.add_argument("--index", help="Index file path")
    shared.add_argument("--corpus", help="Corpus manifest (JSON lines)")
    shared.add_argument("--queries", help="Query file (JSON lines)")
    shared.add_argument("--qrels", help="Qrels file (query_id parent_id grade)")
    shared.add_argument("--output-dir", help="Directory for output files (default: stdout)")
    shared.add_argument("--k", type=int, help="Hits per query token and modality (k_per_token)")
    shared.add_argument("--top-m", type=int, help="Token maxima summed per parent in Stage-1")
    shared.add_argument("--shortlist-n", type=int, help="Parents passed to Stage-2")
    shared.add_argument("--num-candidates", type=int, help="ANN search beam per knn call")
    shared.add_argument("--weights", help="Fusion weights, e.g. text=0.5,image=0.5")
    shared.add_argument("--ann-mode", choices=["exact_flat", "approximate_graph"])
    shared.add_argument("--precision", choices=["full32", "mixed16"])
    shared.add_argument("--concurrency", type=int, help="Bound on concurrent knn calls / rerank workers")
    shared.add_argument("--seed", type=int, help="Graph construction seed")
    shared.add_argument("--hnsw-m", type=int, help="Graph links per node")
    shared.add_argument("--ef-construction", type=int, help="Graph construction beam")
    shared.add_argument("--oracle-ceiling", type=int, help="Largest corpus (parents) the oracle accepts")
    shared.add_argument("--recall-depth", type=int, help="Oracle top-r used for Stage-1 recall")
    shared.add_argument("--filter", action="append", help="Metadata filter key=value (repeatable)")
    shared.add_argument("--stage1-only", action="store_true", help="Skip Stage-2 re-ranking")
    shared.add_argument("--oracle", action="store_true", help="Add oracle rankings and Stage-1 recall")
    shared.add_argument("--force", action="store_true", help="Overwrite an existing index")
    shared.add_argument("--sweep", help="Sweep one parameter, e.g. top_m=1,4,12")
    shared.add_argument("--baseline", choices=["pooled"], help="Add a dense pooled baseline")
    shared.add_argument("--trec", help="Also write a trec run file")
    shared.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")

    parser = argparse.ArgumentParser(
        description="Multi-vector retrieval - build, search and evaluate late-interaction indexes"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("build", parents=[shared], help="Validate a corpus and write an index")
    commands.add_parser("search", parents=[shared], help="Two-stage search for every query")
    commands.add_parser("eval", parents=[shared], help="nDCG / recall evaluation against qrels")
    commands.add_parser("oracle", parents=[shared], help="Brute-force exact MaxSim rankings")
    return parser


def setup_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def resolve_config(args: argparse.Namespace) -> CliConfig:
    """Defaults < config file < MVS_* environment < flags."""
    flags: Dict[str, Any] = {}
    for flag, name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is None or value is False:
            continue
        flags[name] = value
    config = CliConfig.from_sources(args.config, flags)
    config.verbosity = args.verbose
    return config


def report(message: str) -> None:
    print(message, file=sys.stderr)


def _open_output(config: CliConfig, name: str) -> TextIO:
    if config.output_dir:
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        return open(out_dir / name, "w", encoding="utf-8")
    return sys.stdout


def _write_records(stream: TextIO, records: Sequence[Dict[str, Any]]) -> None:
    for record in records:
        stream.write(json.dumps(record, sort_keys=True) + "\n")


def _require(config: CliConfig, *names: str) -> None:
    missing = [name for name in names if not getattr(config, name)]
    if missing:
        raise ConfigError(f"Missing required path(s): {', '.join('--' + n.replace('_', '-') for n in missing)}")


def _load_index(config: CliConfig) -> ChildIndex:
    if not Path(config.index).exists():
        raise FileNotFoundError(f"Index not found at {config.index}. Run build first.")
    return ChildIndex.load(config.index)


def _report_config(config: CliConfig) -> None:
    report(f"Effective configuration: {json.dumps(config.snapshot(), sort_keys=True)}")


def _load_search_index(config: CliConfig) -> ChildIndex:
    """
    Load the index and settle the ann_mode every search will use.

    exact_flat is honored on any index. A flat index cannot serve
    approximate_graph: an explicit request is refused (exit 2), the default
    falls back to exact_flat.
    """
    index = _load_index(config)
    if config.retrieval.ann_mode == AnnMode.APPROXIMATE_GRAPH and index.graph is None:
        if "ann_mode" in config.explicit:
            index.check_mode(AnnMode.APPROXIMATE_GRAPH)
        config.retrieval = replace(config.retrieval, ann_mode=AnnMode.EXACT_FLAT)
        report(f"Index {config.index} holds no graph: searching with ann_mode exact_flat")
    _report_config(config)
    return index


# --- Commands ---


def cmd_build(config: CliConfig) -> int:
    """Validate a corpus manifest, index it and persist the index."""
    _require(config, "corpus", "index")
    _report_config(config)
    index_path = Path(config.index)
    if index_path.exists() and not config.force:
        report(f"❌ Index already exists at {index_path} (use --force to rebuild)")
        return 2

    report(f"Building index from {config.corpus}...")
    corpus = load_corpus(config.corpus)
    validation = validate_corpus(corpus)
    report(validation.format())
    if not validation.ok:
        report(f"❌ Corpus failed validation: {'; '.join(validation.fatal)}")
        return 1

    index = ChildIndex.build(corpus, config.retrieval)
    index.save(str(index_path))
    report(json.dumps(index.stats(), sort_keys=True))
    report(f"✅ Complete - Indexed {index.num_children} children of {corpus.num_parents} parents into {index_path}")
    return 0


def cmd_search(config: CliConfig) -> int:
    """Write Stage-1 and Stage-2 records for every query."""
    _require(config, "index", "queries")
    index = _load_search_index(config)
    queries = load_queries(config.queries, index.dimension)
    base_filter = parse_filter_args(config.filters)
    if not queries:
        logger.warning("Empty query set: no records written")

    all_records: List[Dict[str, Any]] = []
    stream = _open_output(config, "search.jsonl")
    try:
        for query in queries:
            result = retrieve(index, query, config.retrieval, base_filter, stage1_only=config.stage1_only)
            records = package_result(result)
            _write_records(stream, records)
            all_records.extend(records)
    finally:
        if stream is not sys.stdout:
            stream.close()

    if config.trec:
        stage = Stage.STAGE1 if config.stage1_only else Stage.STAGE2
        lines = write_trec_run(all_records, config.trec, stage=stage.value)
        report(f"✅ Wrote {lines} trec run lines to {config.trec}")
    report(f"✅ Searched {len(queries)} queries ({len(all_records)} records)")
    return 0


def cmd_eval(config: CliConfig) -> int:
    """Evaluate rankings with nDCG@{1,3,5,10} and optional oracle recall."""
    _require(config, "index", "queries", "qrels")
    index = _load_search_index(config)
    queries = load_queries(config.queries, index.dimension)
    qrels = load_qrels(config.qrels)
    base_filter = parse_filter_args(config.filters)
    options = dict(
        with_oracle=config.oracle,
        baseline=config.baseline,
        base_filter=base_filter,
        stage1_only=config.stage1_only,
    )

    if config.sweep:
        name, values = parse_sweep(config.sweep)
        results = sweep(index, index.corpus, queries, qrels, config.retrieval, name, values, **options)
    else:
        results = [evaluate_run(index, index.corpus, queries, qrels, config.retrieval, **options)]

    print(format_table(results))
    if config.output_dir:
        with _open_output(config, "metrics.jsonl") as stream:
            count = write_metric_records(results, stream)
        summary = {
            "config": config.snapshot(),
            "runs": [{"label": r.label, "timing": r.timing, "skipped": r.skipped} for r in results],
        }
        with _open_output(config, "summary.json") as stream:
            stream.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        report(f"✅ Wrote {count} metric records to {config.output_dir}")
    if not queries:
        report("⚠️  Empty query set - nothing evaluated")
    return 0


def cmd_oracle(config: CliConfig) -> int:
    """Write the exact full-corpus MaxSim ranking of every query."""
    _require(config, "queries")
    _report_config(config)
    if config.index:
        index = _load_index(config)
        corpus = index.corpus
    else:
        _require(config, "corpus")
        corpus = load_corpus(config.corpus)
        index = None
    check_oracle_budget(corpus, config.retrieval.oracle_ceiling)
    queries = load_queries(config.queries, corpus.dimension)
    base_filter = parse_filter_args(config.filters)
    admitted = None
    if not base_filter.is_unrestricted:
        if index is None:
            index = ChildIndex(corpus, AnnMode.EXACT_FLAT, {})
        admitted = index.admitted_parents(base_filter)
        report(f"Filter {base_filter.describe()} admits {len(admitted)} of {corpus.num_parents} parents")

    stream = _open_output(config, "oracle.jsonl")
    try:
        for query in queries:
            ranking = oracle_rank(corpus, query, config.retrieval.fanout_concurrency, parent_ids=admitted)
            _write_records(stream, package_records(query.query_id, ranking))
    finally:
        if stream is not sys.stdout:
            stream.close()
    report(f"✅ Ranked {corpus.num_parents} parents for {len(queries)} queries")
    return 0


COMMANDS = {"build": cmd_build, "search": cmd_search, "eval": cmd_eval, "oracle": cmd_oracle}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        config = resolve_config(args)
        validation = validate_config(config.retrieval)
        for warning in validation["warnings"]:
            logger.warning(warning)
        config.retrieval.check()
    except (ConfigError, ValueError) as e:
        report(f"❌ Invalid configuration: {e}")
        return 2

    try:
        return COMMANDS[args.command](config)
    except OracleTooLargeError as e:
        report(f"❌ {e}")
        return 2
    except ConfigError as e:
        report(f"❌ {e}")
        return 2
    except (EngineError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        report(f"❌ Error running {args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
