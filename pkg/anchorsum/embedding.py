"""
Embedding backends for anchorsum

Two spaces are served: the frame-feature space used by Stage 1 and the joint
image/text space used for label anchoring. Each space has its own backend and
vectors from different spaces are never compared.
"""

import base64
import io
import logging
import struct
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml
from PIL import Image

from anchorsum.config import EmbeddingBackendConfig, RetryConfig
from anchorsum.errors import BackendError, ConfigError, DegenerateVector, InvalidInput
from anchorsum.file_manager import atomic_write_bytes
from anchorsum.manifest import CallLog
from anchorsum.openai_compat import make_client, translate_error
from anchorsum.utils import call_with_retry, sha256_bytes, sha256_text

logger = logging.getLogger(__name__)

SPACE_FRAME = "frame"
SPACE_JOINT = "joint"


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """A float32-precision vector with its cached L2 norm."""

    values: np.ndarray
    norm: float
    space: str = SPACE_FRAME

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def from_values(cls, values: Sequence[float], space: str = SPACE_FRAME) -> "EmbeddingVector":
        # Rounded through float32 so cached and freshly computed vectors agree bit for bit.
        arr = np.asarray(values, dtype=np.float32).astype(np.float64)
        if arr.ndim != 1 or arr.shape[0] == 0:
            raise InvalidInput(f"Embedding must be a non-empty 1-d vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInput("Embedding contains non-finite values")
        arr.setflags(write=False)
        return cls(arr, float(np.linalg.norm(arr)), space)

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.dim) + self.values.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, space: str = SPACE_FRAME) -> "EmbeddingVector":
        (dim,) = struct.unpack_from("<I", data, 0)
        values = np.frombuffer(data, dtype="<f4", count=dim, offset=4)
        return cls.from_values(values, space)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """
    Cosine similarity clipped to [-1, 1].

    Raises:
        ConfigError: When the vectors come from different spaces
        InvalidInput: When dimensions differ
        DegenerateVector: When either vector has zero norm
    """
    if a.space != b.space:
        raise ConfigError(f"Cannot compare a {a.space}-space vector with a {b.space}-space vector")
    if a.dim != b.dim:
        raise InvalidInput(f"Dimension mismatch: {a.dim} vs {b.dim}")
    if a.norm == 0.0 or b.norm == 0.0:
        raise DegenerateVector("Cosine similarity of a zero-norm vector is undefined")
    # Elementwise products commute, so np.dot is order-symmetric.
    value = float(np.dot(a.values, b.values)) / (a.norm * b.norm)
    return min(1.0, max(-1.0, value))


class EmbeddingBackend(ABC):
    """A model that maps images or texts to raw vectors."""

    def __init__(self, config: EmbeddingBackendConfig):
        self.config = config

    @property
    def backend_id(self) -> str:
        return self.config.backend_id

    @abstractmethod
    def embed_image(self, data: bytes) -> List[float]:
        ...

    @abstractmethod
    def embed_text(self, text: str) -> List[float]:
        ...


class MockEmbeddingBackend(EmbeddingBackend):
    """
    Seeded hashing backend: the vector is a pure function of (seed, input bytes).

    A fixtures file may map image SHA-256 digests to texts under ``aliases``;
    such an image embeds exactly as its alias text.
    """

    def __init__(self, config: EmbeddingBackendConfig):
        super().__init__(config)
        self.aliases: Dict[str, str] = {}
        if config.fixtures:
            path = Path(config.fixtures)
            if not path.exists():
                raise ConfigError(f"Embedding fixtures not found: {config.fixtures}")
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
            self.aliases = {str(k): str(v) for k, v in (data.get("aliases") or {}).items()}

    def _vector(self, tag: bytes, payload: bytes) -> List[float]:
        digest = sha256_bytes(str(self.config.seed).encode() + b"\x00" + tag + b"\x00" + payload)
        rng = np.random.Generator(np.random.PCG64(int(digest[:32], 16)))
        v = rng.standard_normal(self.config.dim)
        return (v / np.linalg.norm(v)).tolist()

    def embed_image(self, data: bytes) -> List[float]:
        alias = self.aliases.get(sha256_bytes(data))
        if alias is not None:
            return self.embed_text(alias)
        return self._vector(b"image", data)

    def embed_text(self, text: str) -> List[float]:
        return self._vector(b"text", text.encode("utf-8"))


class HttpEmbeddingBackend(EmbeddingBackend):
    """OpenAI-compatible ``/embeddings`` endpoint with a ``modality`` extension field."""

    def __init__(self, config: EmbeddingBackendConfig):
        super().__init__(config)
        self.client = make_client(config.endpoint, config.api_key_env, config.timeout_s)

    def _post(self, item: str, modality: str) -> List[float]:
        try:
            response = self.client.embeddings.create(
                model=self.config.model_id,
                input=[item],
                encoding_format="float",
                extra_body={"modality": modality},
            )
        except Exception as e:
            raise translate_error(e, f"embedding request to {self.config.endpoint}")
        if not response.data:
            raise BackendError("embedding response carried no data", retryable=False)
        return list(response.data[0].embedding)

    def embed_image(self, data: bytes) -> List[float]:
        return self._post(base64.b64encode(data).decode("ascii"), "image")

    def embed_text(self, text: str) -> List[float]:
        return self._post(text, "text")


class LocalModelBackend(EmbeddingBackend):
    """In-process TorchScript image encoder (ResNet-style feature extractor)."""

    def __init__(self, config: EmbeddingBackendConfig):
        super().__init__(config)
        try:
            import torch
            from torchvision import transforms
        except ImportError:
            raise ConfigError("local-model backends need the 'local' extra (torch, torchvision)")
        self._torch = torch
        self.model = torch.jit.load(config.model_path, map_location="cpu").eval()
        self.preprocess = transforms.Compose([
            transforms.Resize(256),
            transforms.CenterCrop(224),
            transforms.ToTensor(),
            transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
        ])

    def embed_image(self, data: bytes) -> List[float]:
        with Image.open(io.BytesIO(data)) as img:
            batch = self.preprocess(img.convert("RGB")).unsqueeze(0)
        with self._torch.inference_mode():
            features = self.model(batch)
        return features.reshape(-1).tolist()

    def embed_text(self, text: str) -> List[float]:
        raise ConfigError("local-model backends serve image embeddings only; use http-service for the joint space")


def create_embedding_backend(config: EmbeddingBackendConfig) -> EmbeddingBackend:
    if config.kind == "mock":
        return MockEmbeddingBackend(config)
    if config.kind == "http-service":
        return HttpEmbeddingBackend(config)
    if config.kind == "local-model":
        return LocalModelBackend(config)
    raise ConfigError(f"Unknown embedding backend kind '{config.kind}'")


class EmbeddingService:
    """
    Caching, retrying front end for one backend bound to one space.

    The frame space serves ``embed_frame``; the joint space serves
    ``embed_text`` and ``embed_image_joint``.
    """

    def __init__(
        self,
        backend: EmbeddingBackend,
        space: str,
        base_dir: Path,
        cache_dir: Optional[Path] = None,
        retry: Optional[RetryConfig] = None,
        max_inflight: int = 8,
        call_log: Optional[CallLog] = None,
    ):
        self.backend = backend
        self.space = space
        self.base_dir = Path(base_dir)
        self.cache_dir = Path(cache_dir) / "emb" / backend.backend_id if cache_dir else None
        self.retry = retry or RetryConfig()
        self.max_inflight = max_inflight
        self.call_log = call_log

    @property
    def dim(self) -> int:
        return self.backend.config.dim

    def embed_frame(self, frame) -> EmbeddingVector:
        self._require(SPACE_FRAME, "embed_frame")
        return self._embed_image(self._read(frame))

    def embed_image_joint(self, frame) -> EmbeddingVector:
        self._require(SPACE_JOINT, "embed_image_joint")
        return self._embed_image(self._read(frame))

    def embed_text(self, text: str) -> EmbeddingVector:
        self._require(SPACE_JOINT, "embed_text")
        if not text or not text.strip():
            raise InvalidInput("Cannot embed empty text")
        key = sha256_text("text:" + text)
        return self._cached(key, "embed-text", lambda: self.backend.embed_text(text))

    def embed_frames(self, frames: Sequence) -> List[EmbeddingVector]:
        """Embed many frames concurrently; results keep input order."""
        fn = self.embed_frame if self.space == SPACE_FRAME else self.embed_image_joint
        with ThreadPoolExecutor(max_workers=self.max_inflight) as executor:
            return list(executor.map(fn, frames))

    def embed_texts(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        with ThreadPoolExecutor(max_workers=self.max_inflight) as executor:
            return list(executor.map(self.embed_text, texts))

    def _require(self, space: str, operation: str) -> None:
        if self.space != space:
            raise ConfigError(f"{operation} needs a {space}-space backend, this one serves the {self.space} space")

    def _read(self, frame) -> bytes:
        path = Path(frame.image_ref)
        if not path.is_absolute():
            path = self.base_dir / path
        with open(path, "rb") as f:
            return f.read()

    def _embed_image(self, data: bytes) -> EmbeddingVector:
        key = sha256_text("image:" + sha256_bytes(data))
        return self._cached(key, "embed-image", lambda: self.backend.embed_image(data))

    def _cached(self, key: str, operation: str, compute) -> EmbeddingVector:
        path = self.cache_dir / f"{key}.vec" if self.cache_dir else None
        if path is not None and path.exists():
            vector = EmbeddingVector.from_bytes(path.read_bytes(), self.space)
            cached = True
        else:
            raw = call_with_retry(compute, self.retry.attempts, self.retry.backoff_s, f"{self.backend.backend_id} {operation}")
            vector = EmbeddingVector.from_values(raw, self.space)
            cached = False
        if vector.dim != self.dim:
            raise ConfigError(f"{self.backend.backend_id} returned dim {vector.dim}, configured dim is {self.dim}")
        if path is not None and not cached:
            atomic_write_bytes(path, vector.to_bytes())
        if self.call_log is not None:
            self.call_log.record(
                self.backend.backend_id,
                operation,
                {"model": self.backend.config.model_id, "key": key},
                sha256_bytes(vector.to_bytes()),
                cached,
            )
        return vector
