"""
Pipeline configuration for anchorsum

Configuration is layered: the shipped default, an optional user file
(YAML or TOML), an optional backend profile, ``ANCHORSUM_<SECTION>_<KEY>``
environment variables and finally explicit CLI overrides.
"""

import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from anchorsum.errors import ConfigError
from anchorsum.file_manager import FileManager
from anchorsum.utils import canonical_json, sha256_text

logger = logging.getLogger(__name__)

ENV_PREFIX = "ANCHORSUM_"
# Also accepted; ANCHORSUM_ wins when both name the same key.
LEGACY_ENV_PREFIX = "PRISM_"

EMBED_KINDS = ("http-service", "local-model", "mock")
CHAT_KINDS = ("http-chat", "mock")
BUILTIN_FIXTURES = "builtin"


@dataclass
class IngestConfig:
    fps: float = 1.0
    resize: Optional[List[int]] = None
    jpeg_quality: int = 90
    decoder: str = "ffmpeg"
    probe: str = "ffprobe"


@dataclass
class ChangepointConfig:
    penalty: Optional[float] = None


@dataclass
class SamplerConfig:
    """Stage-1 reduction parameters."""

    diff_threshold: float = 30.0
    batch_size: int = 10
    delta: float = 0.30


@dataclass
class EmbeddingConfig:
    max_inflight: int = 8


@dataclass
class SemanticsConfig:
    tau: float = 0.9
    dataset_description: str = ""
    max_label_chars: int = 120
    merge_near_duplicates: bool = False
    near_duplicate_threshold: float = 0.95


@dataclass
class SummarizerConfig:
    context_tokens: int = 8000
    tile_size: int = 512


@dataclass
class PipelineModes:
    """Ablation switches."""

    skip_stage1: bool = False
    skip_stage2: bool = False
    video_only: bool = False
    no_processing: bool = False


@dataclass
class RetryConfig:
    attempts: int = 3
    backoff_s: float = 1.0


@dataclass
class CacheConfig:
    dir: Optional[str] = None


@dataclass
class EvalConfig:
    annotations: Optional[str] = None
    references: List[str] = field(default_factory=list)
    bleu_max_n: int = 4
    bleu_smoothing: bool = True
    judge: bool = False


@dataclass
class EmbeddingBackendConfig:
    """One embedding backend (frame-feature or joint space)."""

    kind: str = "mock"
    endpoint: Optional[str] = None
    model_id: str = "mock"
    dim: int = 512
    seed: Optional[int] = None
    fixtures: Optional[str] = None
    model_path: Optional[str] = None
    api_key_env: Optional[str] = None
    timeout_s: float = 60.0

    @property
    def backend_id(self) -> str:
        slug = "".join(c if c.isalnum() or c in "-._" else "_" for c in self.model_id)
        if self.kind == "mock":
            suffix = f"-f{sha256_text(self.fixtures)[:8]}" if self.fixtures else ""
            return f"mock-{slug}-d{self.dim}-s{self.seed}{suffix}"
        return f"{self.kind}-{slug}-d{self.dim}"


@dataclass
class ChatBackendConfig:
    """The vision-language / text chat backend."""

    kind: str = "mock"
    endpoint: Optional[str] = None
    model_id: str = "mock-chat"
    temperature: float = 0.0
    max_inflight: int = 8
    fixtures: Optional[str] = BUILTIN_FIXTURES
    api_key_env: Optional[str] = None
    timeout_s: float = 120.0

    @property
    def backend_id(self) -> str:
        slug = "".join(c if c.isalnum() or c in "-._" else "_" for c in self.model_id)
        if self.kind == "mock" and self.fixtures and self.fixtures != BUILTIN_FIXTURES:
            return f"mock-{slug}-f{sha256_text(self.fixtures)[:8]}"
        return f"{self.kind}-{slug}"


@dataclass
class BackendsConfig:
    frame_embed: EmbeddingBackendConfig = field(
        default_factory=lambda: EmbeddingBackendConfig(model_id="mock-frame", seed=0)
    )
    joint_embed: EmbeddingBackendConfig = field(
        default_factory=lambda: EmbeddingBackendConfig(model_id="mock-joint", seed=1)
    )
    chat: ChatBackendConfig = field(default_factory=ChatBackendConfig)


@dataclass
class PipelineConfig:
    """The complete, validated configuration of one run."""

    description: str = ""
    logging_level: str = "WARNING"
    prompts_dir: Optional[str] = None
    ingest: IngestConfig = field(default_factory=IngestConfig)
    changepoint: ChangepointConfig = field(default_factory=ChangepointConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    semantics: SemanticsConfig = field(default_factory=SemanticsConfig)
    summarizer: SummarizerConfig = field(default_factory=SummarizerConfig)
    pipeline: PipelineModes = field(default_factory=PipelineModes)
    retry: RetryConfig = field(default_factory=RetryConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    backends: BackendsConfig = field(default_factory=BackendsConfig)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Stable hash of the effective configuration."""
        return sha256_text(canonical_json(self.to_dict()))

    def snapshot_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "PipelineConfig":
        """Return a validated copy with dotted-key overrides applied."""
        data = self.to_dict()
        for dotted, value in overrides.items():
            _set_dotted(data, dotted.split("."), value)
        config = from_dict(data)
        validate_config(config)
        return config


def load_config(
    config_path: Optional[str] = None,
    backend_profile: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """
    Build the effective configuration.

    Args:
        config_path: Optional user config file (.yaml, .yml or .toml)
        backend_profile: Optional profile name (mock, openai, ollama) or YAML path
        overrides: Dotted-key values from explicit CLI flags
        environ: Environment mapping (defaults to os.environ)

    Returns:
        PipelineConfig: Validated configuration

    Raises:
        ConfigError: Unknown keys, malformed files or violated invariants
        FileNotFoundError: A named config file or profile does not exist
    """
    file_manager = FileManager()
    data = _read_mapping(file_manager.get_default_config_path())

    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")
        _deep_merge(data, _read_mapping(path))

    if backend_profile:
        profile_path = file_manager.get_profile_path(backend_profile)
        if not profile_path.exists():
            available = ", ".join(file_manager.list_profiles())
            raise FileNotFoundError(f"Backend profile '{backend_profile}' not found. Available: {available}")
        profile = _read_mapping(profile_path)
        profile.pop("description", None)
        _deep_merge(data, profile)

    _apply_env_overrides(data, os.environ if environ is None else environ)

    for dotted, value in (overrides or {}).items():
        _set_dotted(data, dotted.split("."), value)

    config = from_dict(data)
    validate_config(config)
    return config


def from_dict(data: Mapping[str, Any]) -> PipelineConfig:
    """Build a PipelineConfig from nested mappings, rejecting unknown keys."""
    return _build(PipelineConfig, data, "")


def validate_config(config: PipelineConfig) -> None:
    """Raise ConfigError for any violated configuration invariant."""
    if config.ingest.fps <= 0:
        raise ConfigError(f"ingest.fps must be > 0, got {config.ingest.fps}")
    if config.ingest.resize is not None and (
        len(config.ingest.resize) != 2 or any(int(v) <= 0 for v in config.ingest.resize)
    ):
        raise ConfigError(f"ingest.resize must be [width, height], got {config.ingest.resize}")
    if not 1 <= config.ingest.jpeg_quality <= 100:
        raise ConfigError("ingest.jpeg_quality must be in [1, 100]")

    if config.changepoint.penalty is not None and config.changepoint.penalty <= 0:
        raise ConfigError(f"changepoint.penalty must be > 0, got {config.changepoint.penalty}")

    sampler = config.sampler
    if not 0 <= sampler.diff_threshold <= 100:
        raise ConfigError(f"sampler.diff_threshold must be in [0, 100], got {sampler.diff_threshold}")
    if sampler.batch_size < 2:
        raise ConfigError(f"sampler.batch_size must be >= 2, got {sampler.batch_size}")
    if sampler.delta <= 0:
        raise ConfigError(f"sampler.delta must be > 0, got {sampler.delta}")

    semantics = config.semantics
    if not -1.0 <= semantics.tau <= 1.0:
        raise ConfigError(f"semantics.tau must be in [-1, 1], got {semantics.tau}")
    if "\n" in semantics.dataset_description.strip():
        raise ConfigError("semantics.dataset_description must be a single line")
    if semantics.max_label_chars < 1:
        raise ConfigError("semantics.max_label_chars must be >= 1")

    if config.summarizer.context_tokens < 1:
        raise ConfigError("summarizer.context_tokens must be >= 1")
    if config.summarizer.tile_size < 1:
        raise ConfigError("summarizer.tile_size must be >= 1")

    if config.embedding.max_inflight < 1:
        raise ConfigError("embedding.max_inflight must be >= 1")

    if config.retry.attempts < 1 or config.retry.backoff_s < 0:
        raise ConfigError("retry.attempts must be >= 1 and retry.backoff_s >= 0")
    if config.eval.bleu_max_n < 1:
        raise ConfigError("eval.bleu_max_n must be >= 1")
    if config.logging_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ConfigError(f"Unknown logging_level '{config.logging_level}'")

    for slot in ("frame_embed", "joint_embed"):
        _validate_embedding_backend(slot, getattr(config.backends, slot))
    _validate_chat_backend(config.backends.chat)


def logging_level_of(config: Optional[PipelineConfig]) -> int:
    """Map the configured level name to a logging constant."""
    if config is None:
        return logging.WARNING
    return getattr(logging, config.logging_level.upper(), logging.WARNING)


def _validate_embedding_backend(slot: str, backend: EmbeddingBackendConfig) -> None:
    if backend.kind not in EMBED_KINDS:
        raise ConfigError(f"backends.{slot}.kind must be one of {', '.join(EMBED_KINDS)}, got '{backend.kind}'")
    if backend.dim < 1:
        raise ConfigError(f"backends.{slot}.dim must be a positive integer")
    if backend.kind == "http-service" and not backend.endpoint:
        raise ConfigError(f"backends.{slot}: http-service requires an endpoint")
    if backend.kind == "mock" and backend.seed is None:
        raise ConfigError(f"backends.{slot}: mock requires a seed")
    if backend.kind == "local-model" and not backend.model_path:
        raise ConfigError(f"backends.{slot}: local-model requires model_path")


def _validate_chat_backend(backend: ChatBackendConfig) -> None:
    if backend.kind not in CHAT_KINDS:
        raise ConfigError(f"backends.chat.kind must be one of {', '.join(CHAT_KINDS)}, got '{backend.kind}'")
    if backend.temperature < 0:
        raise ConfigError(f"backends.chat.temperature must be >= 0, got {backend.temperature}")
    if backend.max_inflight < 1:
        raise ConfigError("backends.chat.max_inflight must be >= 1")
    if backend.kind == "http-chat" and not backend.endpoint:
        raise ConfigError("backends.chat: http-chat requires an endpoint")
    if backend.kind == "mock" and not backend.fixtures:
        raise ConfigError("backends.chat: mock requires a fixture path")


def _read_mapping(path: Path) -> Dict[str, Any]:
    """Read a YAML or TOML mapping from disk."""
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        else:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
    except (yaml.YAMLError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"Invalid configuration file {path}: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Configuration file {path} must contain a mapping")
    return data


def _deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value
    return base


def _set_dotted(data: Dict[str, Any], keys: List[str], value: Any) -> None:
    node = data
    for key in keys[:-1]:
        child = node.get(key)
        if not isinstance(child, dict):
            child = {}
            node[key] = child
        node = child
    node[keys[-1]] = value


def _apply_env_overrides(data: Dict[str, Any], environ: Mapping[str, str]) -> None:
    """Apply PRISM_ then ANCHORSUM_ <SECTION>_<KEY> variables, matched against known keys."""
    known = _dotted_keys(dataclasses.asdict(PipelineConfig()))
    for prefix in (LEGACY_ENV_PREFIX, ENV_PREFIX):
        _apply_prefixed(data, environ, prefix, {prefix + "_".join(k).upper(): k for k in known})


def _apply_prefixed(data: Dict[str, Any], environ: Mapping[str, str], prefix: str, by_env: Dict[str, tuple]) -> None:
    for name, raw in sorted(environ.items()):
        if not name.startswith(prefix):
            continue
        keys = by_env.get(name)
        if keys is None:
            logger.warning(f"Ignoring unknown configuration variable {name}")
            continue
        try:
            value = yaml.safe_load(raw) if raw != "" else None
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse {name}={raw!r}: {e}")
        logger.debug(f"Config override from environment: {'.'.join(keys)}")
        _set_dotted(data, list(keys), value)


def _dotted_keys(data: Mapping[str, Any], prefix: tuple = ()) -> List[tuple]:
    keys = []
    for key, value in data.items():
        if isinstance(value, Mapping):
            keys.extend(_dotted_keys(value, prefix + (key,)))
        else:
            keys.append(prefix + (key,))
    return keys


def _build(cls, data: Mapping[str, Any], path: str):
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"Configuration section '{path or 'root'}' must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        where = path or "root"
        raise ConfigError(f"Unknown configuration key(s) in '{where}': {', '.join(unknown)}")

    kwargs = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else None
        key_path = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, key_path)
        else:
            kwargs[name] = _coerce(name, value, fields[name].default, key_path)
    return cls(**kwargs)


def _coerce(name: str, value: Any, default: Any, key_path: str) -> Any:
    """Coerce scalars to the type of the field default where unambiguous."""
    if value is None or default is dataclasses.MISSING or default is None:
        return value
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Invalid value for {key_path}: {value!r}")
    return value
