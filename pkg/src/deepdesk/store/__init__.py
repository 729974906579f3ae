"""Structured-knowledge store: table bundles, dense retrieval, web-page chunks."""

from .chunks import ChunkStore, WebChunk
from .index import CosineIndex, load_embedding_cache, save_embedding_cache
from .tables import (
    DOMAINS,
    TableRecord,
    TableStore,
    parse_schema_comment,
)

__all__ = [
    "ChunkStore",
    "WebChunk",
    "CosineIndex",
    "load_embedding_cache",
    "save_embedding_cache",
    "DOMAINS",
    "TableRecord",
    "TableStore",
    "parse_schema_comment",
]
