"""Disk cache for judge verdicts, keyed by (prompt digest, role, model).

Re-running an evaluation over a warm cache makes no model calls and
reproduces byte-identical outputs, which also makes judge-consistency
studies cheap.
"""

from __future__ import annotations

import hashlib
import json
import os

from ..errors import EvalError


class JudgeCache:
    def __init__(self, cache_dir: str):
        self.cache_dir = cache_dir
        os.makedirs(cache_dir, exist_ok=True)

    @staticmethod
    def key(role: str, model: str, prompt: str, image_digests: list[str] | None = None) -> str:
        payload = "\n".join([role, model, prompt, *(image_digests or [])])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> str:
        return os.path.join(self.cache_dir, f"{key}.json")

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not os.path.exists(path):
            return None
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)["response"]
        except (json.JSONDecodeError, KeyError, OSError) as exc:
            raise EvalError(f"judge cache corrupted at {path}: {exc}") from exc

    def put(self, key: str, response: str) -> None:
        tmp = self._path(key) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"response": response}, fh)
        os.replace(tmp, self._path(key))
