"""Table records and bundle ingestion.

A table bundle on disk looks like::

    bundle/
      manifest.jsonl        # one JSON object per table (metadata)
      payloads/<id>.json    # array of flat records for that table
      embeddings.bin        # optional cached description embeddings

Each manifest line carries: ``id``, ``title``, ``summary``, ``schema_comment``,
``domain``, ``payload_file`` and optionally ``source_uri``.

The schema comment is the code-comment description of the table that analysis
models see in place of the raw data, e.g.::

    # real_gdp_growth_of_canada = [...]
    # Each record has fields:
    #   - year (int): calendar year
    #   - growth_pct (float): annual growth, percent

The first ``name = [...]`` line names the variable the payload is injected
under; ``- field (type): ...`` lines declare the record fields.  Field names
must match the keys of every payload record exactly.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass

import numpy as np

from ..errors import IngestionError, StoreValidationError
from .index import CosineIndex, load_embedding_cache, save_embedding_cache

DOMAINS = (
    "Agriculture",
    "Politics & Economics",
    "Energy & Environment",
    "Finance & Insurance",
    "Metals & Electronics",
    "Society",
    "Art",
    "Technology",
    "Transportation",
)

_VARIABLE_RE = re.compile(r"^#?\s*([A-Za-z_]\w*)\s*=\s*\[\.{3}\]", re.MULTILINE)
_FIELD_RE = re.compile(r"^#\s*-\s*([A-Za-z_]\w*)\s*[(:]", re.MULTILINE)
_IDENT_RE = re.compile(r"^[A-Za-z_]\w*$")


def parse_schema_comment(text: str) -> tuple[str | None, list[str]]:
    """Extract ``(variable_name, field_names)`` from a schema comment."""
    var_match = _VARIABLE_RE.search(text)
    variable = var_match.group(1) if var_match else None
    fields = _FIELD_RE.findall(text)
    return variable, fields


@dataclass
class TableRecord:
    """One structured-knowledge table with its comment-style schema."""

    id: str
    title: str
    summary: str
    schema_comment: str
    payload: list[dict]
    domain: str
    source_uri: str | None = None

    def description(self) -> str:
        """Text embedded for retrieval: title plus summary."""
        return f"{self.title}\n\n{self.summary}"

    def variable_name(self) -> str:
        """Injection variable named in the schema comment; falls back to the id."""
        variable, _ = parse_schema_comment(self.schema_comment)
        if variable:
            return variable
        fallback = re.sub(r"\W+", "_", self.id).strip("_")
        return fallback if _IDENT_RE.match(fallback) else f"table_{abs(hash(self.id)) % 10_000}"

    def validate(self) -> None:
        if not self.payload:
            raise StoreValidationError(f"table {self.id}: payload is empty")
        if self.domain not in DOMAINS:
            raise StoreValidationError(f"table {self.id}: unknown domain {self.domain!r}")
        _, declared = parse_schema_comment(self.schema_comment)
        declared_set = set(declared)
        if not declared_set:
            raise StoreValidationError(f"table {self.id}: schema comment declares no fields")
        for record in self.payload:
            keys = set(record)
            if keys != declared_set:
                missing = sorted(declared_set - keys)
                extra = sorted(keys - declared_set)
                raise StoreValidationError(
                    f"table {self.id}: payload fields do not match schema comment"
                    f" (missing from records: {missing}, absent from schema: {extra})"
                )


class TableStore:
    """In-memory table store with exact cosine retrieval over descriptions.

    ``embed_fn`` maps a list of texts to a list of unit vectors; embeddings are
    computed lazily on first retrieval unless ``ingest(..., eager=True)``.
    Ingestion is a single-writer operation; retrievals may run concurrently
    once ingestion has finished.
    """

    def __init__(self, embed_fn=None, cache_path: str | None = None):
        self._embed_fn = embed_fn
        self._cache_path = cache_path
        self._tables: dict[str, TableRecord] = {}
        self._index: CosineIndex | None = None
        self._pending: list[str] = []  # ids awaiting embedding
        self._embed_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._tables)

    def table_ids(self) -> list[str]:
        return sorted(self._tables)

    def get(self, table_id: str) -> TableRecord:
        try:
            return self._tables[table_id]
        except KeyError:
            raise StoreValidationError(f"unknown table id {table_id!r}") from None

    def add(self, record: TableRecord) -> None:
        record.validate()
        if record.id in self._tables:
            raise StoreValidationError(f"duplicate table id {record.id!r}")
        self._tables[record.id] = record
        self._pending.append(record.id)

    def ingest(self, bundle_dir: str, eager: bool = False) -> int:
        """Load every table listed in ``manifest.jsonl``; returns the count."""
        manifest = os.path.join(bundle_dir, "manifest.jsonl")
        if not os.path.isdir(bundle_dir):
            raise IngestionError(f"bundle directory not found: {bundle_dir}")
        if not os.path.exists(manifest):
            # An empty bundle directory is an empty store, not an error.
            if not os.listdir(bundle_dir):
                return 0
            raise IngestionError(f"manifest not found: {manifest}")
        count = 0
        with open(manifest, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    meta = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise IngestionError(f"{manifest}:{lineno}: malformed JSON: {exc}") from exc
                record = self._load_record(bundle_dir, meta, f"{manifest}:{lineno}")
                self.add(record)
                count += 1
        if self._cache_path is None:
            self._cache_path = os.path.join(bundle_dir, "embeddings.bin")
        self._load_cached_embeddings()
        if eager:
            self.ensure_embedded()
        return count

    def _load_record(self, bundle_dir: str, meta: dict, where: str) -> TableRecord:
        required = ("id", "title", "summary", "schema_comment", "domain", "payload_file")
        for key in required:
            if key not in meta:
                raise IngestionError(f"{where}: manifest record missing {key!r}")
        payload_path = os.path.join(bundle_dir, meta["payload_file"])
        try:
            with open(payload_path, encoding="utf-8") as fh:
                payload = json.load(fh)
        except OSError as exc:
            raise IngestionError(f"{where}: cannot read payload {payload_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise IngestionError(f"{where}: malformed payload {payload_path}: {exc}") from exc
        if not isinstance(payload, list) or not all(isinstance(r, dict) for r in payload):
            raise StoreValidationError(
                f"table {meta['id']}: payload must be an array of flat objects"
            )
        return TableRecord(
            id=str(meta["id"]),
            title=str(meta["title"]),
            summary=str(meta["summary"]),
            schema_comment=str(meta["schema_comment"]),
            payload=payload,
            domain=str(meta["domain"]),
            source_uri=meta.get("source_uri"),
        )

    # -- retrieval ---------------------------------------------------------

    def _load_cached_embeddings(self) -> None:
        if not self._cache_path or not os.path.exists(self._cache_path):
            return
        cached = load_embedding_cache(self._cache_path)
        if not cached:
            return
        dim = len(next(iter(cached.values())))
        self._index = CosineIndex(dim)
        still_pending = []
        for table_id in self._pending:
            vec = cached.get(table_id)
            if vec is None:
                still_pending.append(table_id)
            else:
                self._index.add(table_id, vec)
        self._pending = still_pending

    def ensure_embedded(self) -> None:
        """Embed any tables that do not have a cached vector yet.

        Serialized so concurrent first retrievals embed once; once the
        backlog is empty, retrievals never take the lock's slow path.
        """
        if not self._pending:
            return
        with self._embed_lock:
            if not self._pending:
                return
            if self._embed_fn is None:
                raise StoreValidationError("store has no embedding function configured")
            ids = list(self._pending)
            texts = [self._tables[i].description() for i in ids]
            vectors = self._embed_fn(texts)
            if len(vectors) != len(ids):
                raise StoreValidationError("embedding function returned wrong arity")
            for table_id, vec in zip(ids, vectors):
                vec = np.asarray(vec, dtype=np.float64)
                if self._index is None:
                    self._index = CosineIndex(vec.shape[0])
                self._index.add(table_id, vec)
            self._pending = []
            if self._cache_path:
                save_embedding_cache(self._cache_path, self._index.items())

    def dense_retrieve(
        self, query_vector, k: int, exclude: frozenset[str] | set[str] = frozenset()
    ) -> list[tuple[str, float]]:
        """Top-``k`` tables by cosine similarity, excluded ids filtered out.

        Results are sorted by descending score; ties break on ascending table
        id.  Returns an empty list when every table is excluded.
        """
        if k <= 0:
            raise StoreValidationError(f"k must be positive, got {k}")
        if not self._tables:
            return []
        self.ensure_embedded()
        assert self._index is not None
        return self._index.retrieve(query_vector, k, exclude=exclude)
