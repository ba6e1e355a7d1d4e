"""
Configuration management for the multi-vector retrieval engine.

Handles hyperparameter defaults, TOML config files, environment variable
overrides (prefix MVS_) and validation.
"""

import os
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, asdict, replace
from pathlib import Path
from typing import Optional, Dict, Any, List, Set

import psutil

from src.core.errors import ConfigError
from src.core.model import AnnMode, Modality, PrecisionMode

logger = logging.getLogger(__name__)

ENV_PREFIX = "MVS_"

WEIGHT_TOLERANCE = 1e-9


def _default_concurrency() -> int:
    return psutil.cpu_count(logical=True) or 1


@dataclass
class RetrievalConfig:
    """Every retrieval hyperparameter, defaulting to the reference setup."""

    # Stage 1
    k_per_token: int = 10
    num_candidates: int = 250
    top_m: int = 12
    shortlist_n: int = 80
    # None means uniform over the modalities active in a search
    modality_weights: Optional[Dict[Modality, float]] = None
    fanout_concurrency: int = field(default_factory=_default_concurrency)

    # Stage 2
    precision_mode: PrecisionMode = PrecisionMode.FULL32

    # Index
    ann_mode: AnnMode = AnnMode.APPROXIMATE_GRAPH
    hnsw_m: int = 16
    ef_construction: int = 200
    seed: int = 0

    # Evaluation
    oracle_ceiling: int = 5000
    recall_depth: int = 10
    exclude_unjudged: bool = False

    @classmethod
    def from_env(cls, base: Optional["RetrievalConfig"] = None) -> "RetrievalConfig":
        """Apply MVS_* environment variables on top of base (or the defaults)."""
        config = replace(base) if base is not None else cls()
        overrides = {}
        for f in fields(cls):
            raw = os.getenv(f"{ENV_PREFIX}{f.name.upper()}")
            if raw is not None:
                overrides[f.name] = raw
        if overrides:
            logger.info(f"Environment overrides: {sorted(overrides)}")
        return config.with_overrides(overrides)

    @classmethod
    def from_file(cls, path: str) -> "RetrievalConfig":
        """Load a TOML file whose keys are RetrievalConfig field names."""
        data = load_config_file(path)
        known = {f.name for f in fields(cls)}
        values = {k: v for k, v in data.items() if k in known}
        return cls().with_overrides(values)

    def with_overrides(self, values: Dict[str, Any]) -> "RetrievalConfig":
        """Return a copy with the given fields coerced and replaced."""
        coerced = {}
        for name, value in values.items():
            if value is None:
                continue
            coerced[name] = _coerce_field(name, value)
        return replace(self, **coerced)

    def weights_for(self, modalities: List[Modality]) -> Dict[Modality, float]:
        """
        Resolve fusion weights for the modalities active in a search.

        Raises:
            MissingWeightError: If explicit weights omit an active modality
            ConfigError: If the active weights do not sum to 1
        """
        from src.core.errors import MissingWeightError

        if not modalities:
            return {}
        if self.modality_weights is None:
            return {m: 1.0 / len(modalities) for m in modalities}
        weights = {}
        for m in modalities:
            if m not in self.modality_weights:
                raise MissingWeightError(f"No fusion weight for active modality '{m.value}'")
            weights[m] = float(self.modality_weights[m])
        total = sum(weights.values())
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise ConfigError(
                f"Weights for active modalities {[m.value for m in modalities]} sum to {total}, expected 1"
            )
        return weights

    def check(self) -> "RetrievalConfig":
        """Raise ConfigError on the first invariant violation."""
        report = validate_config(self)
        if report["issues"]:
            raise ConfigError(report["issues"][0])
        return self

    def snapshot(self) -> Dict[str, Any]:
        """JSON-ready view of the effective configuration."""
        data = asdict(self)
        for key, value in list(data.items()):
            if isinstance(value, (PrecisionMode, AnnMode)):
                data[key] = value.value
        if self.modality_weights is not None:
            data["modality_weights"] = {
                m.value: w for m, w in sorted(self.modality_weights.items(), key=lambda kv: kv[0].value)
            }
        return data


@dataclass
class CliConfig:
    """RetrievalConfig plus the paths and switches of the command line."""

    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    corpus: Optional[str] = None
    queries: Optional[str] = None
    qrels: Optional[str] = None
    index: Optional[str] = None
    output_dir: Optional[str] = None
    verbosity: int = 0
    filters: List[str] = field(default_factory=list)
    stage1_only: bool = False
    oracle: bool = False
    force: bool = False
    sweep: Optional[str] = None
    baseline: Optional[str] = None
    trec: Optional[str] = None
    # Retrieval fields set by the config file, the environment or a flag
    explicit: Set[str] = field(default_factory=set)

    PATH_FIELDS = ("corpus", "queries", "qrels", "index", "output_dir")

    @classmethod
    def from_sources(
        cls, config_path: Optional[str] = None, flags: Optional[Dict[str, Any]] = None
    ) -> "CliConfig":
        """
        Build the effective CLI configuration.

        Precedence: defaults < config file < MVS_* environment < flags.
        """
        config = cls()
        retrieval = RetrievalConfig()
        retrieval_names = {f.name for f in fields(RetrievalConfig)}

        if config_path:
            data = load_config_file(config_path)
            retrieval = RetrievalConfig.from_file(config_path)
            config.explicit.update(k for k in data if k in retrieval_names)
            for name in cls.PATH_FIELDS:
                if name in data:
                    setattr(config, name, str(data[name]))

        retrieval = RetrievalConfig.from_env(retrieval)
        config.explicit.update(n for n in retrieval_names if os.getenv(f"{ENV_PREFIX}{n.upper()}") is not None)
        for name in cls.PATH_FIELDS:
            env_value = os.getenv(f"{ENV_PREFIX}{name.upper()}")
            if env_value:
                setattr(config, name, env_value)

        flags = flags or {}
        retrieval_flags = {k: v for k, v in flags.items() if k in retrieval_names and v is not None}
        retrieval = retrieval.with_overrides(retrieval_flags)
        config.explicit.update(retrieval_flags)
        for name, value in flags.items():
            if name in retrieval_names or value is None:
                continue
            if hasattr(config, name):
                setattr(config, name, value)

        config.retrieval = retrieval
        return config

    def snapshot(self) -> Dict[str, Any]:
        data = {name: getattr(self, name) for name in self.PATH_FIELDS}
        data.update(
            {
                "filters": list(self.filters),
                "stage1_only": self.stage1_only,
                "oracle": self.oracle,
                "sweep": self.sweep,
                "baseline": self.baseline,
            }
        )
        data["retrieval"] = self.retrieval.snapshot()
        return data


def load_config_file(path: str) -> Dict[str, Any]:
    """Read a TOML key-value config file."""
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"Config file not found: {config_path}")
    try:
        with open(config_path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid config file {config_path}: {e}")


def _coerce_field(name: str, value: Any) -> Any:
    # Values from env and flags arrive as strings
    from src.core.parsing import parse_bool, parse_weights

    try:
        if name == "modality_weights":
            if isinstance(value, str):
                return parse_weights(value)
            return {Modality.parse(str(k)): float(v) for k, v in dict(value).items()}
        if name == "precision_mode":
            return PrecisionMode(value) if not isinstance(value, PrecisionMode) else value
        if name == "ann_mode":
            return AnnMode(value) if not isinstance(value, AnnMode) else value
        if name == "exclude_unjudged":
            return parse_bool(value) if isinstance(value, str) else bool(value)
        return int(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid value for {name}: {value!r} ({e})")


def validate_config(config: RetrievalConfig) -> Dict[str, Any]:
    """Validate configuration and return status report."""

    issues = []
    warnings = []

    if config.k_per_token < 1:
        issues.append(f"k_per_token must be >= 1 (got {config.k_per_token})")
    if config.top_m < 1:
        issues.append(f"top_m must be >= 1 (got {config.top_m})")
    if config.shortlist_n < 1:
        issues.append(f"shortlist_n must be >= 1 (got {config.shortlist_n})")
    if config.num_candidates < config.k_per_token:
        issues.append(
            f"num_candidates ({config.num_candidates}) must be >= k_per_token ({config.k_per_token})"
        )
    if config.fanout_concurrency < 1:
        issues.append(f"fanout_concurrency must be >= 1 (got {config.fanout_concurrency})")
    if config.hnsw_m < 2:
        issues.append(f"hnsw_m must be >= 2 (got {config.hnsw_m})")
    if config.ef_construction < 1:
        issues.append(f"ef_construction must be >= 1 (got {config.ef_construction})")
    if config.recall_depth < 1:
        issues.append(f"recall_depth must be >= 1 (got {config.recall_depth})")

    if config.modality_weights is not None:
        for modality, weight in config.modality_weights.items():
            if not 0.0 <= weight <= 1.0:
                issues.append(f"Weight for {modality.value} must lie in [0, 1] (got {weight})")
        total = sum(config.modality_weights.values())
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            issues.append(f"Modality weights must sum to 1 (got {total})")

    if config.ef_construction < config.hnsw_m:
        warnings.append("ef_construction below hnsw_m produces a poorly connected graph")

    return {"issues": issues, "warnings": warnings, "can_proceed": len(issues) == 0}
