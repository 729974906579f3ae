"""Chunked web-page storage for the report writer.

Summaries are all the planner ever sees; the full markdown of each fetched
page is chunked here, keyed by subtask, so the writer can quote sources.
Storing the same (url, subtask) twice replaces the previous chunks instead
of duplicating them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass


@dataclass(frozen=True)
class WebChunk:
    chunk_id: str
    source_url: str
    subtask_id: str
    text: str
    position: int


class ChunkStore:
    def __init__(self, chunk_size: int = 2000, overlap: int = 200):
        if chunk_size <= 0:
            raise ValueError("chunk_size must be positive")
        if not 0 <= overlap < chunk_size:
            raise ValueError("overlap must satisfy 0 <= overlap < chunk_size")
        self.chunk_size = chunk_size
        self.overlap = overlap
        # (subtask_id, url) -> chunks; dict preserves first-store order.
        self._by_key: dict[tuple[str, str], list[WebChunk]] = {}

    @staticmethod
    def _url_digest(url: str) -> str:
        return hashlib.sha256(url.encode("utf-8")).hexdigest()[:12]

    def split(self, text: str) -> list[str]:
        """Split text into windows of ``chunk_size`` chars with ``overlap``."""
        if not text:
            return []
        stride = self.chunk_size - self.overlap
        pieces = []
        start = 0
        while True:
            pieces.append(text[start : start + self.chunk_size])
            if start + self.chunk_size >= len(text):
                break
            start += stride
        return pieces

    def store_text(self, url: str, subtask_id: str, text: str) -> list[WebChunk]:
        digest = self._url_digest(url)
        chunks = [
            WebChunk(
                chunk_id=f"{subtask_id}:{digest}:{pos}",
                source_url=url,
                subtask_id=subtask_id,
                text=piece,
                position=pos,
            )
            for pos, piece in enumerate(self.split(text))
        ]
        self._by_key[(subtask_id, url)] = chunks
        return chunks

    def fetch(self, subtask_id: str) -> list[WebChunk]:
        """All chunks for a subtask, in store order then position order."""
        out: list[WebChunk] = []
        for (owner, _url), chunks in self._by_key.items():
            if owner == subtask_id:
                out.extend(chunks)
        return out

    def urls_for(self, subtask_id: str) -> list[str]:
        return [url for (owner, url) in self._by_key if owner == subtask_id]
