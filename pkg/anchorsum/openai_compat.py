"""Shared client construction and error mapping for OpenAI-compatible endpoints."""

import os
from typing import Optional

import openai

from anchorsum.errors import BackendError

_RETRYABLE = (
    openai.APIConnectionError,
    openai.APITimeoutError,
    openai.RateLimitError,
    openai.InternalServerError,
)


def make_client(endpoint: str, api_key_env: Optional[str], timeout_s: float) -> openai.OpenAI:
    """Client with SDK retries disabled; callers apply their own retry policy."""
    api_key = os.getenv(api_key_env, "") if api_key_env else ""
    return openai.OpenAI(
        api_key=api_key or "unused",
        base_url=endpoint,
        timeout=timeout_s,
        max_retries=0,
    )


def translate_error(exc: Exception, what: str) -> BackendError:
    """Map SDK exceptions to BackendError, marking transient failures retryable."""
    if isinstance(exc, _RETRYABLE):
        return BackendError(f"{what}: {exc}", retryable=True)
    return BackendError(f"{what}: {exc}", retryable=False)
