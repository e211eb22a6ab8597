"""Chat backends (vision-language and text) with caching, retries and call logging."""

import base64
import json
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, TypeVar

import yaml

from anchorsum.config import BUILTIN_FIXTURES, ChatBackendConfig, RetryConfig
from anchorsum.errors import BackendError, ConfigError
from anchorsum.file_manager import FileManager, atomic_write_bytes
from anchorsum.manifest import CallLog
from anchorsum.openai_compat import make_client, translate_error
from anchorsum.template_parser import RenderedPrompt
from anchorsum.utils import call_with_retry, canonical_json, sha256_bytes, sha256_text

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Slot whose value keys mock fixtures for each template.
PRIMARY_SLOTS = {
    "frame-describe": None,
    "label-generate": "VLM_OUTPUT",
    "label-validate": "LABEL",
    "window-describe": "MAJORITY_LABEL",
    "recursive-merge": "CHUNK",
    "final-integrate": "FINAL_SUMMARY_TEXT",
    "judge-rubric": "CANDIDATE",
}

_SYNTHETIC = {
    "frame-describe": "A person carries out a step of the activity (scene {h}).",
    "label-generate": "Activity step {h}",
    "label-validate": "1",
    "window-describe": "Four consecutive steps of the activity are shown (window {h}).",
    "recursive-merge": "Merged summary of the activity so far ({h}).",
    "final-integrate": "Final summary of the activity ({h}).",
}


@dataclass(frozen=True)
class ChatRequest:
    prompt: RenderedPrompt
    images: Sequence[bytes] = ()
    key: Optional[str] = None

    @property
    def image_hashes(self) -> List[str]:
        return [sha256_bytes(img) for img in self.images]


class ChatBackend(ABC):
    def __init__(self, config: ChatBackendConfig):
        self.config = config

    @property
    def backend_id(self) -> str:
        return self.config.backend_id

    @abstractmethod
    def complete(self, request: ChatRequest) -> str:
        ...


class MockChatBackend(ChatBackend):
    """
    Fixture-driven replies.

    Lookup order: ``responses[template][image sha256]``, then the primary slot
    value, then the prompt hash, then ``defaults[template]``, then a
    deterministic synthesized reply.
    """

    def __init__(self, config: ChatBackendConfig):
        super().__init__(config)
        if config.fixtures == BUILTIN_FIXTURES:
            path = FileManager.get_core_path() / "configs" / "fixtures_mock.yaml"
        else:
            path = Path(config.fixtures)
        if not path.exists():
            raise ConfigError(f"Chat fixtures not found: {config.fixtures}")
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        self.responses: Dict[str, Dict[str, str]] = {
            str(t): {str(k): str(v) for k, v in (entries or {}).items()}
            for t, entries in (data.get("responses") or {}).items()
        }
        self.defaults: Dict[str, str] = {str(k): str(v) for k, v in (data.get("defaults") or {}).items()}

    def complete(self, request: ChatRequest) -> str:
        template_id = request.prompt.template_id
        entries = self.responses.get(template_id, {})
        keys = request.image_hashes + ([request.key] if request.key is not None else []) + [request.prompt.prompt_hash]
        for key in keys:
            if key in entries:
                return entries[key]
        if template_id in self.defaults:
            return self.defaults[template_id]
        pattern = _SYNTHETIC.get(template_id, "Reply {h}.")
        return pattern.format(h=sha256_text(canonical_json(keys))[:10])


class HttpChatBackend(ChatBackend):
    """OpenAI-compatible chat completions; images are sent as JPEG data URLs."""

    def __init__(self, config: ChatBackendConfig):
        super().__init__(config)
        self.client = make_client(config.endpoint, config.api_key_env, config.timeout_s)

    def complete(self, request: ChatRequest) -> str:
        content: List[Dict[str, Any]] = [{"type": "text", "text": request.prompt.text}]
        for img in request.images:
            url = "data:image/jpeg;base64," + base64.b64encode(img).decode("ascii")
            content.append({"type": "image_url", "image_url": {"url": url}})
        try:
            response = self.client.chat.completions.create(
                model=self.config.model_id,
                temperature=self.config.temperature,
                messages=[{"role": "user", "content": content}],
            )
        except Exception as e:
            raise translate_error(e, f"chat request to {self.config.endpoint}")
        if not response.choices or response.choices[0].message.content is None:
            raise BackendError("chat response carried no content", retryable=True)
        return response.choices[0].message.content


def create_chat_backend(config: ChatBackendConfig) -> ChatBackend:
    if config.kind == "mock":
        return MockChatBackend(config)
    if config.kind == "http-chat":
        return HttpChatBackend(config)
    raise ConfigError(f"Unknown chat backend kind '{config.kind}'")


class ChatClient:
    """Caches replies by (prompt hash, image hashes, model id) and retries transient failures."""

    def __init__(
        self,
        backend: ChatBackend,
        cache_dir: Optional[Path] = None,
        retry: Optional[RetryConfig] = None,
        call_log: Optional[CallLog] = None,
    ):
        self.backend = backend
        self.cache_dir = Path(cache_dir) / "chat" / backend.backend_id if cache_dir else None
        self.retry = retry or RetryConfig()
        self.call_log = call_log

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    @property
    def max_inflight(self) -> int:
        return self.backend.config.max_inflight

    def complete(self, prompt: RenderedPrompt, images: Sequence[bytes] = (), key: Optional[str] = None) -> str:
        """
        Return the backend reply for a rendered prompt.

        Raises:
            BackendError: When the backend still fails after all retries
        """
        request = ChatRequest(prompt, tuple(images), key)
        digest = {
            "prompt_hash": prompt.prompt_hash,
            "images": request.image_hashes,
            "model": self.backend.config.model_id,
        }
        cache_key = sha256_text(canonical_json(digest))
        path = self.cache_dir / f"{cache_key}.json" if self.cache_dir else None

        if path is not None and path.exists():
            with open(path, "r", encoding="utf-8") as f:
                text = json.load(f)["text"]
            cached = True
        else:
            text = call_with_retry(
                lambda: self.backend.complete(request),
                self.retry.attempts,
                self.retry.backoff_s,
                f"{self.backend_id} {prompt.template_id}",
            )
            cached = False
            if path is not None:
                payload = json.dumps({"template_id": prompt.template_id, "text": text}, ensure_ascii=False)
                atomic_write_bytes(path, payload.encode("utf-8"))

        if self.call_log is not None:
            self.call_log.record(self.backend_id, prompt.template_id, digest, text, cached)
        return text

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """Apply ``fn`` concurrently up to max_inflight; results keep input order."""
        with ThreadPoolExecutor(max_workers=self.max_inflight) as executor:
            return list(executor.map(fn, items))
