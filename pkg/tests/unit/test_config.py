"""
Tests for configuration defaults, sources, precedence and validation.
"""

import pytest

from config import CliConfig, RetrievalConfig, validate_config
from src.core.errors import ConfigError, MissingWeightError
from src.core.model import AnnMode, Modality, PrecisionMode


class TestDefaults:
    def test_reference_defaults(self):
        config = RetrievalConfig()
        assert config.k_per_token == 10
        assert config.num_candidates == 250
        assert config.top_m == 12
        assert config.shortlist_n == 80
        assert config.modality_weights is None
        assert config.precision_mode == PrecisionMode.FULL32
        assert config.ann_mode == AnnMode.APPROXIMATE_GRAPH
        assert (config.hnsw_m, config.ef_construction) == (16, 200)
        assert config.oracle_ceiling == 5000
        assert config.fanout_concurrency >= 1

    def test_defaults_validate(self):
        report = validate_config(RetrievalConfig())
        assert report["can_proceed"]
        assert report["issues"] == []


class TestWeights:
    def test_uniform_when_unset(self):
        weights = RetrievalConfig().weights_for([Modality.TEXT, Modality.IMAGE])
        assert weights == {Modality.TEXT: 0.5, Modality.IMAGE: 0.5}

    def test_missing_active_modality(self):
        config = RetrievalConfig(modality_weights={Modality.TEXT: 1.0})
        with pytest.raises(MissingWeightError):
            config.weights_for([Modality.TEXT, Modality.IMAGE])

    def test_active_weights_must_sum_to_one(self):
        config = RetrievalConfig(
            modality_weights={Modality.TEXT: 0.5, Modality.IMAGE: 0.3, Modality.VIDEO_FRAME: 0.2}
        )
        with pytest.raises(ConfigError):
            config.weights_for([Modality.TEXT, Modality.IMAGE])


class TestValidation:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"top_m": 0},
            {"shortlist_n": 0},
            {"k_per_token": 0},
            {"num_candidates": 5, "k_per_token": 10},
            {"fanout_concurrency": 0},
        ],
    )
    def test_invariant_violations(self, overrides):
        config = RetrievalConfig(**overrides)
        assert not validate_config(config)["can_proceed"]
        with pytest.raises(ConfigError):
            config.check()

    def test_weights_out_of_range(self):
        config = RetrievalConfig(modality_weights={Modality.TEXT: 1.5, Modality.IMAGE: -0.5})
        issues = validate_config(config)["issues"]
        assert any("[0, 1]" in issue for issue in issues)


class TestSources:
    def test_file_values(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text(
            'top_m = 4\nann_mode = "exact_flat"\ncorpus = "c.jsonl"\n'
            "[modality_weights]\ntext = 0.7\nimage = 0.3\n"
        )
        config = CliConfig.from_sources(str(path))
        assert config.retrieval.top_m == 4
        assert config.retrieval.ann_mode == AnnMode.EXACT_FLAT
        assert config.retrieval.modality_weights == {Modality.TEXT: 0.7, Modality.IMAGE: 0.3}
        assert config.corpus == "c.jsonl"

    def test_precedence(self, tmp_path, monkeypatch):
        path = tmp_path / "run.toml"
        path.write_text("top_m = 4\nshortlist_n = 40\nk_per_token = 7\n")
        monkeypatch.setenv("MVS_SHORTLIST_N", "20")
        monkeypatch.setenv("MVS_K_PER_TOKEN", "6")
        config = CliConfig.from_sources(str(path), {"k_per_token": 5})
        assert config.retrieval.top_m == 4
        assert config.retrieval.shortlist_n == 20
        assert config.retrieval.k_per_token == 5

    def test_env_weights(self, monkeypatch):
        monkeypatch.setenv("MVS_MODALITY_WEIGHTS", "text=0.5,image=0.5")
        config = RetrievalConfig.from_env()
        assert config.modality_weights == {Modality.TEXT: 0.5, Modality.IMAGE: 0.5}

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv("MVS_TOP_M", "many")
        with pytest.raises(ConfigError):
            RetrievalConfig.from_env()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            CliConfig.from_sources(str(tmp_path / "absent.toml"))

    def test_snapshot_is_json_ready(self):
        snapshot = RetrievalConfig(modality_weights={Modality.IMAGE: 0.5, Modality.TEXT: 0.5}).snapshot()
        assert snapshot["ann_mode"] == "approximate_graph"
        assert snapshot["modality_weights"] == {"image": 0.5, "text": 0.5}
