"""
Child-level search filters and hit records.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

from ..errors import ConfigError
from ..model import Modality

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterSpec:
    """
    Conjunction of an optional modality and exact-match metadata pairs.

    A child matches iff its modality equals `modality` (when set) and every
    key=value pair is present in its metadata.
    """

    modality: Optional[Modality] = None
    metadata_equals: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        # Canonical order keeps equal filters hash-equal
        object.__setattr__(self, "metadata_equals", tuple(sorted(self.metadata_equals)))

    @classmethod
    def of(cls, modality: Optional[Modality] = None, **metadata: str) -> "FilterSpec":
        return cls(modality=modality, metadata_equals=tuple(metadata.items()))

    def with_modality(self, modality: Modality) -> "FilterSpec":
        return replace(self, modality=modality)

    def matches(self, modality: Modality, metadata: Mapping[str, str]) -> bool:
        if self.modality is not None and modality != self.modality:
            return False
        return all(metadata.get(key) == value for key, value in self.metadata_equals)

    @property
    def is_unrestricted(self) -> bool:
        return self.modality is None and not self.metadata_equals

    def describe(self) -> str:
        parts = []
        if self.modality is not None:
            parts.append(f"modality={self.modality.value}")
        parts.extend(f"{k}={v}" for k, v in self.metadata_equals)
        return " AND ".join(parts) if parts else "<none>"


@dataclass(frozen=True)
class ChildHit:
    child_id: str
    parent_id: str
    modality: Modality
    similarity: float


def build_filter(conditions: List[Dict[str, Any]]) -> FilterSpec:
    """
    Builds a FilterSpec from a list of filter conditions.

    Each condition is {"field", "operator", "value"}; only exact matches
    ("eq") are supported. The field "modality" selects the embedding source.
    """
    if not conditions:
        logger.debug("No filters provided, returning empty filter")
        return FilterSpec()

    logger.debug(f"Building filter from {len(conditions)} conditions: {conditions}")

    modality = None
    pairs = []
    for condition in conditions:
        name = condition["field"]
        operator = condition.get("operator", "eq")
        value = condition["value"]

        if operator != "eq":
            raise ConfigError(f"Unsupported filter operator '{operator}' on field '{name}'")

        if name == "modality":
            parsed = Modality.parse(str(value))
            if modality is not None and parsed != modality:
                raise ConfigError(f"Conflicting modality filters: {modality.value} and {parsed.value}")
            modality = parsed
        else:
            pairs.append((str(name), str(value)))

    result = FilterSpec(modality=modality, metadata_equals=tuple(pairs))
    logger.debug(f"Filter result: {result.describe()}")
    return result
