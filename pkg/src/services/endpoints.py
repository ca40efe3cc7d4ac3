"""
OpenAI-compatible chat and embedding endpoints.

Retries are handled here through `retry`, not by the openai client (max_retries=0), so
the backoff schedule is the one configured in config.py.
"""
import logging
import sys
import os
from typing import Any, Dict, List, Optional, Protocol

import httpx
from openai import APIConnectionError, APIStatusError, OpenAI
from retry.api import retry_call

from ..errors import EndpointUnavailable, RefusedDescription, TransientEndpointError

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))
import config

logger = logging.getLogger(__name__)

_TRANSIENT_STATUS = {408, 409, 425, 429}


class ModelEndpoint(Protocol):
    model_id: str

    def complete(self, messages: List[Dict[str, Any]], max_tokens: int) -> str: ...


class EmbedEndpoint(Protocol):
    model_id: str

    def embed(self, texts: List[str]) -> List[List[float]]: ...


def call_with_retry(fn, *args, attempts: Optional[int] = None, delay: Optional[float] = None,
                    jitter: Optional[float] = None, **kwargs):
    """Call fn, retrying TransientEndpointError with exponential backoff."""
    attempts = config.RETRY_ATTEMPTS if attempts is None else attempts
    delay = config.RETRY_BASE_DELAY_S if delay is None else delay
    jitter = config.RETRY_JITTER_S if jitter is None else jitter
    try:
        return retry_call(
            fn,
            fargs=args,
            fkwargs=kwargs,
            exceptions=TransientEndpointError,
            tries=attempts,
            delay=delay,
            max_delay=config.RETRY_MAX_DELAY_S,
            backoff=2,
            jitter=(0, jitter) if jitter and delay else 0,
            logger=logger,
        )
    except TransientEndpointError as e:
        raise EndpointUnavailable(f"endpoint failed after {attempts} attempts: {e}") from e


def _translate(e: Exception) -> Exception:
    if isinstance(e, APIConnectionError):
        return TransientEndpointError(str(e))
    if isinstance(e, APIStatusError):
        if e.status_code >= 500 or e.status_code in _TRANSIENT_STATUS:
            return TransientEndpointError(f"HTTP {e.status_code}: {e.message}")
        return EndpointUnavailable(f"HTTP {e.status_code}: {e.message}")
    return e


class OpenAIChatEndpoint:
    """Chat-completions endpoint; temperature 0 for greedy decoding."""

    def __init__(self, model_id: str, base_url: Optional[str] = None, api_key: Optional[str] = None,
                 http_client: Optional[httpx.Client] = None):
        self.model_id = model_id
        self.client = OpenAI(
            base_url=base_url or config.MAXSIM_API_BASE,
            api_key=api_key or config.MAXSIM_API_KEY,
            timeout=config.REQUEST_TIMEOUT_S,
            max_retries=0,
            http_client=http_client,
        )

    def complete(self, messages: List[Dict[str, Any]], max_tokens: int) -> str:
        try:
            resp = self.client.chat.completions.create(
                model=self.model_id,
                messages=messages,
                temperature=0,
                max_tokens=max_tokens,
                stream=False,
            )
        except (APIConnectionError, APIStatusError) as e:
            raise _translate(e) from e
        if not resp.choices:
            raise TransientEndpointError("response carried no choices")
        choice = resp.choices[0]
        refusal = getattr(choice.message, "refusal", None)
        if choice.finish_reason == "content_filter" or refusal:
            raise RefusedDescription(refusal or "content_filter")
        return choice.message.content or ""


class OpenAIEmbedEndpoint:
    """Embeddings endpoint; vectors come back in input order."""

    def __init__(self, model_id: str, base_url: Optional[str] = None, api_key: Optional[str] = None,
                 http_client: Optional[httpx.Client] = None):
        self.model_id = model_id
        self.client = OpenAI(
            base_url=base_url or config.MAXSIM_EMBED_BASE,
            api_key=api_key or config.MAXSIM_EMBED_KEY,
            timeout=config.REQUEST_TIMEOUT_S,
            max_retries=0,
            http_client=http_client,
        )

    def embed(self, texts: List[str]) -> List[List[float]]:
        try:
            resp = self.client.embeddings.create(model=self.model_id, input=texts, encoding_format="float")
        except (APIConnectionError, APIStatusError) as e:
            raise _translate(e) from e
        data = sorted(resp.data, key=lambda d: d.index)
        if len(data) != len(texts):
            raise TransientEndpointError(f"asked for {len(texts)} vectors, got {len(data)}")
        return [list(d.embedding) for d in data]
