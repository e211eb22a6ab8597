"""
Tests for anchorsum configuration loading

Covers the shipped defaults, layering of user files, backend profiles,
environment variables and CLI overrides, and validation.
"""

import pytest
import yaml

from anchorsum.config import PipelineConfig, from_dict, load_config
from anchorsum.errors import ConfigError


class TestDefaults:
    """Test the shipped default configuration"""

    def test_defaults_match_stable_configuration(self):
        """Test default thresholds, batch size and budgets"""
        config = load_config(environ={})
        assert config.ingest.fps == 1.0
        assert config.sampler.diff_threshold == 30.0
        assert config.sampler.batch_size == 10
        assert config.sampler.delta == pytest.approx(0.30)
        assert config.semantics.tau == pytest.approx(0.9)
        assert config.summarizer.context_tokens == 8000
        assert config.retry.attempts == 3
        assert config.logging_level == "WARNING"

    def test_default_backends_are_mock(self):
        """Test that the default backends run offline"""
        config = load_config(environ={})
        assert config.backends.frame_embed.kind == "mock"
        assert config.backends.joint_embed.kind == "mock"
        assert config.backends.chat.kind == "mock"
        assert config.backends.chat.fixtures == "builtin"

    def test_digest_is_stable(self):
        """Test that identical configurations hash identically"""
        assert load_config(environ={}).digest() == load_config(environ={}).digest()


class TestLayering:
    """Test config file, profile, environment and CLI precedence"""

    def test_yaml_user_config(self, tmp_path):
        """Test that a YAML user file overrides defaults"""
        user = tmp_path / "user.yaml"
        user.write_text("sampler:\n  batch_size: 15\n")
        config = load_config(str(user), environ={})
        assert config.sampler.batch_size == 15
        assert config.sampler.diff_threshold == 30.0

    def test_toml_user_config(self, tmp_path):
        """Test that a TOML user file is accepted"""
        user = tmp_path / "user.toml"
        user.write_text("[semantics]\ntau = 0.7\ndataset_description = \"surgery\"\n")
        config = load_config(str(user), environ={})
        assert config.semantics.tau == pytest.approx(0.7)
        assert config.semantics.dataset_description == "surgery"

    def test_backend_profile(self):
        """Test that a shipped profile switches the chat backend"""
        config = load_config(backend_profile="openai", environ={})
        assert config.backends.chat.kind == "http-chat"
        assert config.backends.chat.endpoint

    def test_environment_override(self):
        """Test ANCHORSUM_<SECTION>_<KEY> variables parsed as YAML scalars"""
        config = load_config(environ={"ANCHORSUM_SAMPLER_DIFF_THRESHOLD": "10"})
        assert config.sampler.diff_threshold == 10.0

    def test_nested_environment_override(self):
        """Test environment override of a backend key"""
        config = load_config(environ={"ANCHORSUM_BACKENDS_CHAT_MODEL_ID": "other-model"})
        assert config.backends.chat.model_id == "other-model"

    def test_prism_environment_override(self):
        """Test that PRISM_<SECTION>_<KEY> variables are honoured"""
        config = load_config(environ={"PRISM_SAMPLER_DIFF_THRESHOLD": "10"})
        assert config.sampler.diff_threshold == 10.0

    def test_anchorsum_prefix_wins_over_prism(self):
        """Test that ANCHORSUM_ beats PRISM_ for the same key"""
        config = load_config(environ={
            "PRISM_SAMPLER_DIFF_THRESHOLD": "10",
            "ANCHORSUM_SAMPLER_DIFF_THRESHOLD": "50",
        })
        assert config.sampler.diff_threshold == 50.0

    def test_cli_overrides_environment(self):
        """Test that explicit overrides win over the environment"""
        config = load_config(
            overrides={"sampler.diff_threshold": 50},
            environ={"ANCHORSUM_SAMPLER_DIFF_THRESHOLD": "10"},
        )
        assert config.sampler.diff_threshold == 50.0

    def test_with_overrides_returns_copy(self):
        """Test that with_overrides leaves the original untouched"""
        config = load_config(environ={})
        changed = config.with_overrides({"semantics.tau": 0.5})
        assert changed.semantics.tau == pytest.approx(0.5)
        assert config.semantics.tau == pytest.approx(0.9)
        assert changed.digest() != config.digest()

    def test_missing_profile(self):
        """Test that an unknown profile is reported"""
        with pytest.raises(FileNotFoundError, match="Available"):
            load_config(backend_profile="nonexistent", environ={})


class TestValidation:
    """Test configuration invariants"""

    def test_unknown_key_rejected(self, tmp_path):
        """Test that unknown keys raise ConfigError"""
        user = tmp_path / "user.yaml"
        user.write_text("sampler:\n  batch_sise: 15\n")
        with pytest.raises(ConfigError, match="batch_sise"):
            load_config(str(user), environ={})

    @pytest.mark.parametrize("key,value", [
        ("ingest.fps", 0),
        ("sampler.batch_size", 1),
        ("sampler.delta", 0),
        ("sampler.diff_threshold", 101),
        ("backends.chat.temperature", -0.1),
        ("changepoint.penalty", -1.0),
    ])
    def test_invalid_values(self, key, value):
        """Test that invariant violations raise ConfigError"""
        with pytest.raises(ConfigError):
            load_config(overrides={key: value}, environ={})

    def test_http_backend_needs_endpoint(self):
        """Test that an http embedding backend without endpoint is rejected"""
        with pytest.raises(ConfigError, match="endpoint"):
            load_config(overrides={"backends.frame_embed.kind": "http-service"}, environ={})

    def test_mock_embedding_needs_seed(self):
        """Test that a mock embedding backend without a seed is rejected"""
        with pytest.raises(ConfigError, match="seed"):
            load_config(overrides={"backends.joint_embed.seed": None}, environ={})

    def test_snapshot_round_trips_through_yaml(self):
        """Test that the snapshot rebuilds the same configuration"""
        config = load_config(environ={})
        rebuilt = from_dict(yaml.safe_load(config.snapshot_yaml()))
        assert isinstance(rebuilt, PipelineConfig)
        assert rebuilt.digest() == config.digest()
