"""Tests for chat backends and the caching chat client."""

from types import SimpleNamespace
from unittest.mock import MagicMock, patch

import openai
import pytest
import yaml

from anchorsum.chat import ChatClient, HttpChatBackend, MockChatBackend, create_chat_backend
from anchorsum.config import ChatBackendConfig, RetryConfig
from anchorsum.errors import BackendError, ConfigError
from anchorsum.manifest import CallLog
from anchorsum.template_parser import load_prompt
from anchorsum.utils import sha256_bytes


def fixtures_file(tmp_path, data):
    path = tmp_path / "fixtures.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


def http_config():
    return ChatBackendConfig(kind="http-chat", endpoint="http://localhost:8000/v1", model_id="vlm")


class TestMockChatBackend:
    """Test fixture lookup order"""

    def test_image_hash_before_slot_value(self, tmp_path):
        """Test that an image-keyed reply wins over a slot-keyed one"""
        prompt = load_prompt("window-describe").render(DATASET_DESCRIPTION="cooking", MAJORITY_LABEL="fry")
        fixtures = fixtures_file(tmp_path, {"responses": {"window-describe": {
            sha256_bytes(b"grid"): "by image",
            "fry": "by label",
        }}})
        client = ChatClient(MockChatBackend(ChatBackendConfig(fixtures=fixtures)))

        assert client.complete(prompt, [b"grid"], key="fry") == "by image"
        assert client.complete(prompt, [b"other"], key="fry") == "by label"

    def test_defaults_then_synthesized(self, tmp_path):
        """Test template defaults and deterministic synthesized replies"""
        fixtures = fixtures_file(tmp_path, {"defaults": {"label-validate": "0"}})
        client = ChatClient(MockChatBackend(ChatBackendConfig(fixtures=fixtures)))

        assert client.complete(load_prompt("label-validate").render(LABEL="x"), key="x") == "0"
        prompt = load_prompt("label-generate").render(VLM_OUTPUT="caption")
        first = client.complete(prompt, key="caption")
        assert first.startswith("Activity step")
        assert client.complete(prompt, key="caption") == first

    def test_builtin_fixtures(self):
        """Test that the builtin fixtures validate every label"""
        client = ChatClient(MockChatBackend(ChatBackendConfig()))
        assert client.complete(load_prompt("label-validate").render(LABEL="x"), key="x") == "1"

    def test_missing_fixtures(self, tmp_path):
        """Test that a missing fixtures file is a configuration error"""
        with pytest.raises(ConfigError):
            MockChatBackend(ChatBackendConfig(fixtures=str(tmp_path / "none.yaml")))

    def test_unknown_kind(self):
        """Test that unknown backend kinds are rejected"""
        with pytest.raises(ConfigError):
            create_chat_backend(ChatBackendConfig(kind="carrier-pigeon"))


class TestChatClient:
    """Test reply caching and call logging"""

    def test_cache_and_call_log(self, tmp_path):
        """Test that a repeated request is served from the cache"""
        log = CallLog()
        prompt = load_prompt("label-generate").render(VLM_OUTPUT="caption")
        first = ChatClient(MockChatBackend(ChatBackendConfig()), cache_dir=tmp_path, call_log=log)
        second = ChatClient(MockChatBackend(ChatBackendConfig()), cache_dir=tmp_path, call_log=log)

        assert first.complete(prompt, key="caption") == second.complete(prompt, key="caption")
        assert [e["cached"] for e in log.entries()] == [False, True]
        assert log.count("label-generate", include_cached=False) == 1

    def test_map_keeps_order(self):
        """Test that concurrent map preserves input order"""
        client = ChatClient(MockChatBackend(ChatBackendConfig(max_inflight=4)))
        assert client.map(lambda x: x * 2, range(20)) == [x * 2 for x in range(20)]


class TestHttpChatBackend:
    """Test the OpenAI-compatible chat client"""

    def test_request_shape(self):
        """Test that images are sent as data URLs after the text part"""
        sdk = MagicMock()
        sdk.chat.completions.create.return_value = SimpleNamespace(
            choices=[SimpleNamespace(message=SimpleNamespace(content="A pan on a stove."))]
        )
        prompt = load_prompt("frame-describe").render(DATASET_DESCRIPTION="cooking")
        with patch("anchorsum.chat.make_client", return_value=sdk):
            client = ChatClient(HttpChatBackend(http_config()), retry=RetryConfig(attempts=1, backoff_s=0.0))
            assert client.complete(prompt, [b"jpeg"]) == "A pan on a stove."

        kwargs = sdk.chat.completions.create.call_args.kwargs
        content = kwargs["messages"][0]["content"]
        assert kwargs["model"] == "vlm"
        assert kwargs["temperature"] == 0.0
        assert content[0] == {"type": "text", "text": prompt.text}
        assert content[1]["type"] == "image_url"
        assert content[1]["image_url"]["url"].startswith("data:image/jpeg;base64,")

    def test_transient_errors_retried(self):
        """Test that connection errors are retried and then surface"""
        sdk = MagicMock()
        sdk.chat.completions.create.side_effect = openai.APIConnectionError(request=MagicMock())
        prompt = load_prompt("label-generate").render(VLM_OUTPUT="caption")
        with patch("anchorsum.chat.make_client", return_value=sdk):
            client = ChatClient(HttpChatBackend(http_config()), retry=RetryConfig(attempts=3, backoff_s=0.0))
            with pytest.raises(BackendError) as exc_info:
                client.complete(prompt)

        assert exc_info.value.retryable
        assert sdk.chat.completions.create.call_count == 3
