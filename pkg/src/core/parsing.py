import re
import logging
from typing import TYPE_CHECKING, Dict, List, Tuple

from .errors import ConfigError
from .model import Modality

if TYPE_CHECKING:
    from .index.filters import FilterSpec

# --- Patterns ---
KEY_VALUE_PATTERN = re.compile(r"^\s*([A-Za-z0-9_.\-]+)\s*=\s*(.*?)\s*$")
SWEEP_FIELDS = ("top_m", "shortlist_n", "k_per_token", "num_candidates")

logger = logging.getLogger(__name__)


def parse_key_value(text: str) -> Tuple[str, str]:
    """
    Splits a 'key=value' token. Whitespace around both sides is ignored.
    """
    match = KEY_VALUE_PATTERN.match(text)
    if not match or not match.group(2):
        raise ConfigError(f"Expected key=value, got '{text}'")
    return match.group(1), match.group(2)


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"Expected a boolean, got '{text}'")


def parse_weights(text: str) -> Dict[Modality, float]:
    """
    Parses 'text=0.5,image=0.5' into a modality weight map.
    """
    weights = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, value = parse_key_value(part)
        try:
            modality = Modality.parse(key)
            weights[modality] = float(value)
        except ValueError as e:
            raise ConfigError(f"Invalid weight '{part}': {e}")
    if not weights:
        raise ConfigError(f"No weights found in '{text}'")
    logger.debug(f"Parsed weights: {[(m.value, w) for m, w in weights.items()]}")
    return weights


def parse_filter_args(values: List[str]) -> "FilterSpec":
    """
    Converts repeated --filter key=value arguments into a FilterSpec.
    The key 'modality' restricts the embedding source.
    """
    # Imported here: the index package loads the ingestion loader, which imports this module
    from .index.filters import build_filter

    conditions = []
    for raw in values or []:
        key, value = parse_key_value(raw)
        conditions.append({"field": key, "operator": "eq", "value": value})
    return build_filter(conditions)


def parse_sweep(text: str) -> Tuple[str, List[int]]:
    """
    Parses 'top_m=1,4,12' into ('top_m', [1, 4, 12]).
    """
    name, raw_values = parse_key_value(text)
    if name not in SWEEP_FIELDS:
        raise ConfigError(f"Cannot sweep '{name}' (sweepable: {', '.join(SWEEP_FIELDS)})")
    try:
        values = [int(v) for v in raw_values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Sweep values must be integers: '{raw_values}'")
    if not values:
        raise ConfigError(f"Sweep '{text}' lists no values")
    return name, values


def parse_qrels_line(line: str) -> Tuple[str, str, int]:
    """
    Parses a trec-style 'query_id parent_id grade' line.
    """
    parts = line.split()
    if len(parts) != 3:
        raise ValueError(f"expected 'query_id parent_id grade', got {len(parts)} fields")
    query_id, parent_id, grade = parts
    return query_id, parent_id, int(grade)
