import json
import os
import sys
from typing import Dict, Iterable, List, TextIO


def read_records(stream: TextIO) -> List[dict]:
    """Reads line-delimited search records, skipping blank lines."""
    return [json.loads(line) for line in stream if line.strip()]


def select_stage(records: Iterable[dict], stage: str) -> Dict[str, List[dict]]:
    """
    Groups the records of one stage by query, keeping rank order.
    """
    by_query: Dict[str, List[dict]] = {}
    for record in records:
        if record.get("stage") == stage:
            by_query.setdefault(record["query_id"], []).append(record)
    for rows in by_query.values():
        rows.sort(key=lambda r: r["rank"])
    return by_query


def to_trec_lines(records: Iterable[dict], stage: str = "stage2", tag: str = "multivec") -> List[str]:
    """
    Formats records as trec run lines: query_id Q0 parent_id rank score tag.
    """
    lines = []
    for query_id, rows in sorted(select_stage(records, stage).items()):
        for row in rows:
            lines.append(f"{query_id} Q0 {row['parent_id']} {row['rank']} {row['score']:.6f} {tag}")
    return lines


def write_trec_run(records: Iterable[dict], path: str, stage: str = "stage2", tag: str = "multivec") -> int:
    lines = to_trec_lines(records, stage, tag)
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
    return len(lines)


if __name__ == "__main__":
    if len(sys.argv) not in (2, 3):
        print(f"Usage: python {os.path.basename(__file__)} <records.jsonl> [stage]")
        sys.exit(1)
    records_path = sys.argv[1]
    if not os.path.isfile(records_path):
        print(f"Error: File not found at '{records_path}'")
        sys.exit(1)

    with open(records_path, "r", encoding="utf-8") as f:
        records = read_records(f)

    stage = sys.argv[2] if len(sys.argv) == 3 else "stage2"
    # Print the run to stdout for redirection
    for line in to_trec_lines(records, stage):
        print(line)
