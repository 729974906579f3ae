"""Single choke point for every model call the engine makes.

All chat, code, vision, judge, and embedding traffic goes through a
``Gateway`` bound to one backend:

* ``HttpBackend`` talks to OpenAI-compatible endpoints with bounded
  transport retries.
* ``ScriptedBackend`` replays canned responses for tests and offline runs.
  Replay is exhaustive-or-error: a call no rule matches raises instead of
  improvising, which keeps fixtures honest.

Every call is appended to the run trajectory verbatim.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import RoleEndpoint
from .errors import GatewayError, ReplayError
from .trajectory import RunTrace


class ModelRole(str, Enum):
    planner_chat = "planner_chat"
    writer_chat = "writer_chat"
    coder = "coder"
    vision = "vision"
    judge_text = "judge_text"
    judge_vision = "judge_vision"
    embedder = "embedder"


VISION_ROLES = (ModelRole.vision, ModelRole.judge_vision)

DEFAULT_TEMPERATURES = {
    ModelRole.planner_chat: 0.3,
    ModelRole.writer_chat: 0.3,
    ModelRole.coder: 0.0,
    ModelRole.vision: 0.0,
    ModelRole.judge_text: 0.0,
    ModelRole.judge_vision: 0.0,
    ModelRole.embedder: 0.0,
}


@dataclass
class CompletionResult:
    text: str
    attempts: int = 1
    latency_s: float = 0.0
    prompt_tokens: int = 0
    completion_tokens: int = 0


def _flatten(messages: list[dict]) -> str:
    return "\n".join(str(m.get("content", "")) for m in messages)


def prompt_digest(role: str, messages: list[dict]) -> str:
    payload = f"{role}\n{_flatten(messages)}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class Backend(ABC):
    @abstractmethod
    def complete(self, role: ModelRole, messages: list[dict],
                 images: list[str] | None = None) -> CompletionResult:
        ...

    @abstractmethod
    def embed(self, texts: list[str]) -> list[np.ndarray]:
        ...


@dataclass
class ScriptRule:
    """First-match replay rule: fires when role matches and the prompt
    contains ``contains`` (empty string matches anything)."""

    role: str
    contains: str
    response: str
    max_uses: int = 0  # 0 = unlimited
    uses: int = field(default=0, compare=False)


class ScriptedBackend(Backend):
    """Deterministic replay backend driven by ordered (role, substring) rules.

    Embeddings default to a stable hash-derived unit vector per text so
    pipelines can run fully offline; specific texts can be pinned via the
    ``embeddings`` map.
    """

    def __init__(self, rules: list[ScriptRule] | None = None,
                 embeddings: dict[str, list[float]] | None = None,
                 embedding_dim: int = 16):
        self.rules = list(rules or [])
        self.embeddings = dict(embeddings or {})
        self.embedding_dim = embedding_dim
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        rules = [
            ScriptRule(
                role=r["role"],
                contains=r.get("contains", ""),
                response=r["response"],
                max_uses=int(r.get("max_uses", 0)),
            )
            for r in data.get("rules", [])
        ]
        return cls(
            rules=rules,
            embeddings=data.get("embeddings", {}),
            embedding_dim=int(data.get("embedding_dim", 16)),
        )

    def add_rule(self, role: str, contains: str, response: str, max_uses: int = 0) -> None:
        self.rules.append(ScriptRule(role, contains, response, max_uses=max_uses))

    def complete(self, role: ModelRole, messages: list[dict],
                 images: list[str] | None = None) -> CompletionResult:
        flat = _flatten(messages)
        with self._lock:
            for rule in self.rules:
                if rule.role != role.value:
                    continue
                if rule.contains and rule.contains not in flat:
                    continue
                if rule.max_uses and rule.uses >= rule.max_uses:
                    continue
                rule.uses += 1
                return CompletionResult(text=rule.response)
        digest = prompt_digest(role.value, messages)
        raise ReplayError(
            f"no scripted response for role={role.value} prompt_digest={digest}",
            prompt_digest=digest,
        )

    def _hash_vector(self, text: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.embedding_dim)
        return vec / np.linalg.norm(vec)

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            if text in self.embeddings:
                vec = np.asarray(self.embeddings[text], dtype=np.float64)
                norm = np.linalg.norm(vec)
                if norm == 0:
                    raise GatewayError("scripted embedding is the zero vector")
                out.append(vec / norm)
            else:
                out.append(self._hash_vector(text))
        return out


class HttpBackend(Backend):
    """OpenAI-compatible chat/embeddings transport with bounded retries.

    Transient transport errors and 5xx responses are retried with
    exponential backoff; 4xx responses fail immediately.
    """

    def __init__(self, roles: dict[str, RoleEndpoint], *, max_retries: int = 3,
                 backoff_s: float = 0.5, session=None):
        import requests

        self.roles = roles
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.session = session or requests.Session()

    def _endpoint(self, role: ModelRole) -> RoleEndpoint:
        try:
            return self.roles[role.value]
        except KeyError:
            raise GatewayError(f"role {role.value} has no configured endpoint") from None

    def _headers(self, ep: RoleEndpoint) -> dict:
        import os

        headers = {"Content-Type": "application/json"}
        if ep.api_key_env:
            key = os.environ.get(ep.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_with_retry(self, url: str, payload: dict, headers: dict) -> tuple[dict, int]:
        import requests

        attempt = 0
        last_error = ""
        while attempt <= self.max_retries:
            attempt += 1
            try:
                resp = self.session.post(url, json=payload, headers=headers, timeout=120)
            except requests.RequestException as exc:
                last_error = str(exc)
            else:
                if resp.status_code < 400:
                    return resp.json(), attempt
                if resp.status_code < 500:
                    raise GatewayError(
                        f"model endpoint rejected request ({resp.status_code}): {resp.text[:200]}",
                        attempts=attempt,
                    )
                last_error = f"HTTP {resp.status_code}"
            if attempt <= self.max_retries:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
        raise GatewayError(f"transport failed after {attempt} attempts: {last_error}",
                           attempts=attempt)

    def complete(self, role: ModelRole, messages: list[dict],
                 images: list[str] | None = None) -> CompletionResult:
        ep = self._endpoint(role)
        outgoing: list[dict] = [dict(m) for m in messages]
        if images:
            parts: list[dict] = [{"type": "text", "text": outgoing[-1].get("content", "")}]
            for path in images:
                with open(path, "rb") as fh:
                    encoded = base64.b64encode(fh.read()).decode("ascii")
                parts.append({"type": "image_url",
                              "image_url": {"url": f"data:image/png;base64,{encoded}"}})
            outgoing[-1] = {"role": outgoing[-1].get("role", "user"), "content": parts}
        temperature = ep.temperature
        if temperature is None:
            temperature = DEFAULT_TEMPERATURES[role]
        payload = {
            "model": ep.model,
            "messages": outgoing,
            "max_tokens": ep.max_tokens,
            "temperature": temperature,
        }
        started = time.monotonic()
        data, attempts = self._post_with_retry(
            ep.endpoint.rstrip("/") + "/chat/completions", payload, self._headers(ep))
        latency = time.monotonic() - started
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc
        usage = data.get("usage", {}) or {}
        return CompletionResult(
            text=text,
            attempts=attempts,
            latency_s=latency,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        ep = self._endpoint(ModelRole.embedder)
        payload = {"model": ep.model, "input": texts}
        data, _ = self._post_with_retry(
            ep.endpoint.rstrip("/") + "/embeddings", payload, self._headers(ep))
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            vectors = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError) as exc:
            raise GatewayError(f"malformed embeddings response: {exc}") from exc
        return [v / np.linalg.norm(v) for v in vectors]


class Gateway:
    """Role-routed model access with trajectory logging and per-role locking."""

    def __init__(self, backend: Backend, trace: RunTrace, *,
                 embed_char_limit: int = 8000):
        self.backend = backend
        self.trace = trace
        self.embed_char_limit = embed_char_limit
        self._role_locks = {role: threading.Lock() for role in ModelRole}

    def chat(self, role: ModelRole, messages: list[dict]) -> str:
        if not messages:
            raise GatewayError("chat called with no messages")
        with self._role_locks[role]:
            result = self.backend.complete(role, messages)
        self.trace.record_exchange(
            role.value, messages, result.text,
            attempt=result.attempts, latency_s=result.latency_s,
            prompt_tokens=result.prompt_tokens,
            completion_tokens=result.completion_tokens,
        )
        return result.text

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise GatewayError("embed called with no texts")
        for i, text in enumerate(texts):
            if len(text) > self.embed_char_limit:
                raise GatewayError(
                    f"text {i} exceeds the embedder limit "
                    f"({len(text)} > {self.embed_char_limit} chars)"
                )
        with self._role_locks[ModelRole.embedder]:
            vectors = self.backend.embed(texts)
        if len(vectors) != len(texts):
            raise GatewayError("embedding backend returned wrong arity")
        self.trace.record_exchange(
            ModelRole.embedder.value,
            [{"role": "user", "content": text} for text in texts],
            f"<{len(vectors)} vectors dim {vectors[0].shape[0]}>",
        )
        return vectors

    def analyze_image(self, role: ModelRole, images: list[str], instruction: str) -> str:
        if role not in VISION_ROLES:
            raise GatewayError(f"role {role.value} cannot analyze images")
        digests = []
        for path in images:
            digests.append(self._check_image(path))
        messages = [{"role": "user", "content": instruction}]
        with self._role_locks[role]:
            result = self.backend.complete(role, messages, images=images)
        self.trace.record_exchange(
            role.value, messages, result.text,
            attempt=result.attempts, latency_s=result.latency_s,
            prompt_tokens=result.prompt_tokens,
            completion_tokens=result.completion_tokens,
            image_digests=digests,
        )
        return result.text

    @staticmethod
    def _check_image(path: str) -> str:
        """Validate the image locally before any network traffic; returns digest."""
        from PIL import Image, UnidentifiedImageError

        try:
            with open(path, "rb") as fh:
                raw = fh.read()
            with Image.open(path) as im:
                im.verify()
        except (OSError, UnidentifiedImageError) as exc:
            raise GatewayError(f"unreadable image {path}: {exc}") from exc
        return hashlib.sha256(raw).hexdigest()[:16]
