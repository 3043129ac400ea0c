"""Completion and embedding backends plus transcript recording/replay.

The mock backend is a pure function of (prompt, seed) so whole runs are
reproducible offline; the HTTP backend speaks a chat-completion wire format
with capped exponential backoff; the replay backend re-serves a recorded
transcript, response for response.
"""

import hashlib
import json
import logging
import os
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import requests

from .core import EmbeddingSpaceConfig, LlmSettings

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "ACES_LLM_ENDPOINT"
ENV_KEY = "ACES_LLM_KEY"


class BackendError(Exception):
    pass


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.8
    max_tokens: int = 2048

    def to_dict(self) -> dict:
        return {"temperature": self.temperature, "max_tokens": self.max_tokens}


class CompletionBackend(Protocol):
    def complete(self, prompt: str, params: CompletionParams) -> str: ...


# ---------------------------------------------------------------------------
# deterministic mock

_LABEL_PROMPT_PREFIX = "I will give you a Python programming puzzle f"
_GEN_PROMPT_PREFIX = "I will give you 3 (Puzzle 0 to Puzzle 2)"

INVALID_MARKER = "STUB_FAIL"


class MockCompletionBackend:
    """Offline generator/labeler: output depends only on (prompt, seed).

    Generation replies carry three fenced puzzles derived from a digest of
    the prompt; a fixed fraction are genuinely invalid (g returns the wrong
    constant) and additionally marked so protocol stubs can mirror the real
    verdict without executing anything.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, prompt: str, params: CompletionParams) -> str:
        if prompt.startswith(_LABEL_PROMPT_PREFIX):
            return self._label_response(prompt)
        return self._generation_response(prompt)

    def _digest(self, text: str) -> bytes:
        return hashlib.sha256(f"{self.seed}:{text}".encode("utf-8")).digest()

    def _label_response(self, prompt: str) -> str:
        start = prompt.find("The puzzle is:")
        end = prompt.rfind("After completing your reasoning")
        program = prompt[start:end] if 0 <= start < end else prompt
        d = self._digest("label:" + program)
        n_skills = 1 + d[0] % 3
        indices = sorted({d[1 + i] % 10 for i in range(n_skills)})
        return (
            "The problem checks a simple arithmetic condition and the solution "
            "returns the satisfying value.\n"
            f"Therefore, the list of indices for the problem is: {indices}"
        )

    def _generation_response(self, prompt: str) -> str:
        d = self._digest("gen:" + prompt)
        parts = ["Here are three new puzzles.\n"]
        for j in range(3):
            k = int.from_bytes(d[4 * j : 4 * j + 4], "big") % 900000 + 101
            invalid = d[12 + j] % 8 == 0
            note = f" ({INVALID_MARKER})" if invalid else ""
            ret = k + 1 if invalid else k
            parts.append(
                f"Puzzle {3 + j}:\n"
                "```python\n"
                f"def f(x: int, k={k}) -> bool:\n"
                f'    """Check that x equals the hidden constant {k}.{note}"""\n'
                "    return x == k\n"
                f"def g(k={k}):\n"
                f"    return {ret}\n"
                "```\n"
            )
        if d[15] % 7 == 0:
            # a fragment without f, which the parser must drop
            parts.append("```python\ndef g():\n    return 0\n```\n")
        return "\n".join(parts)


# ---------------------------------------------------------------------------
# live HTTP chat-completion backend

class HttpCompletionBackend:
    """POSTs a chat-completion request; endpoint/key fall back to env vars."""

    def __init__(self, settings: LlmSettings):
        self.endpoint = settings.endpoint or os.environ.get(ENV_ENDPOINT, "")
        self.api_key = os.environ.get(ENV_KEY, "")
        self.model = settings.model
        self.max_retries = settings.max_retries
        if not self.endpoint:
            raise BackendError(f"no endpoint configured and {ENV_ENDPOINT} unset")

    def complete(self, prompt: str, params: CompletionParams) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        delay = 0.5
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=120)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                logger.warning("completion attempt %d failed: %s", attempt + 1, exc)
                time.sleep(delay)
                delay = min(delay * 2, 8.0)
        raise BackendError(f"completion failed after {self.max_retries} attempts: {last_error}")


# ---------------------------------------------------------------------------
# transcripts

class TranscriptRecorder:
    """Appends (prompt, response, params, timestamp) JSONL entries."""

    def __init__(self, path):
        self.path = path
        self._lock = threading.Lock()

    def record(self, prompt: str, response: str, params: CompletionParams) -> None:
        entry = {
            "prompt": prompt,
            "response": response,
            "params": params.to_dict(),
            "timestamp": time.time(),
        }
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")


class ReplayBackend:
    """Serves recorded responses back, matching on the exact prompt text.

    Repeated prompts are replayed in recording order.
    """

    def __init__(self, transcript_path):
        self._queues: dict[str, deque[str]] = {}
        self._lock = threading.Lock()
        with open(transcript_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                self._queues.setdefault(entry["prompt"], deque()).append(entry["response"])

    def complete(self, prompt: str, params: CompletionParams) -> str:
        with self._lock:
            queue = self._queues.get(prompt)
            if not queue:
                raise BackendError("transcript has no (more) responses for this prompt")
            return queue.popleft()


def complete_many(
    backend: CompletionBackend,
    prompts: list[str],
    params: CompletionParams,
    max_in_flight: int = 10,
    recorder: TranscriptRecorder | None = None,
) -> list[str]:
    """Fan prompts out concurrently; results and transcript keep prompt order."""
    if not prompts:
        return []
    workers = max(1, min(max_in_flight, len(prompts)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        responses = list(pool.map(lambda p: backend.complete(p, params), prompts))
    if recorder is not None:
        for prompt, response in zip(prompts, responses):
            recorder.record(prompt, response, params)
    return responses


# ---------------------------------------------------------------------------
# embeddings

class EmbeddingBackend(Protocol):
    name: str
    dim: int

    def embed(self, texts: list[str]) -> np.ndarray: ...


@dataclass
class MockEmbeddingBackend:
    """Deterministic per-text pseudo-embeddings for offline runs."""

    name: str = "mock"
    dim: int = 16

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim))
        for i, text in enumerate(texts):
            digest = hashlib.sha256(f"{self.name}:{text}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            out[i] = rng.standard_normal(self.dim)
        return out


@dataclass
class HttpEmbeddingBackend:
    """Embedding endpoint returning one fixed-dimension vector per text."""

    name: str
    endpoint: str
    model: str
    dim: int
    max_retries: int = 3
    api_key: str = field(default_factory=lambda: os.environ.get(ENV_KEY, ""))

    def embed(self, texts: list[str]) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        delay = 0.5
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(
                    self.endpoint,
                    json={"model": self.model, "input": texts},
                    headers=headers,
                    timeout=120,
                )
                resp.raise_for_status()
                vectors = [item["embedding"] for item in resp.json()["data"]]
                arr = np.asarray(vectors, dtype=np.float64)
                if arr.shape != (len(texts), self.dim):
                    raise BackendError(f"embedding space {self.name}: got shape {arr.shape}")
                return arr
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                logger.warning("embedding attempt %d failed: %s", attempt + 1, exc)
                time.sleep(delay)
                delay = min(delay * 2, 8.0)
        raise BackendError(f"embedding failed after {self.max_retries} attempts: {last_error}")


# ---------------------------------------------------------------------------
# factories

def make_completion_backend(settings: LlmSettings, rng_seed: int = 0) -> CompletionBackend:
    if settings.backend == "mock":
        return MockCompletionBackend(seed=rng_seed)
    if settings.backend == "http":
        return HttpCompletionBackend(settings)
    if settings.backend == "replay":
        if not settings.replay_path:
            raise BackendError("replay backend needs llm.replay_path")
        return ReplayBackend(settings.replay_path)
    raise BackendError(f"unknown completion backend {settings.backend!r}")


def make_embedding_backend(space: EmbeddingSpaceConfig) -> EmbeddingBackend:
    if space.backend == "mock":
        return MockEmbeddingBackend(name=space.name, dim=space.dim)
    if space.backend == "http":
        return HttpEmbeddingBackend(
            name=space.name, endpoint=space.endpoint, model=space.model, dim=space.dim
        )
    raise BackendError(f"unknown embedding backend {space.backend!r}")
