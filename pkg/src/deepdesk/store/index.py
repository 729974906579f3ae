"""Exact in-memory cosine index and its on-disk embedding cache.

At benchmark scale (around a thousand tables) exhaustive search is cheaper
and fully deterministic, so no approximate index is used.  The cache file
layout is: magic ``DDEM``, uint32 version, uint32 dim, uint32 count, then
per record a uint16 id length, the UTF-8 id bytes, and dim float32 values.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import StoreValidationError

_MAGIC = b"DDEM"
_VERSION = 1
_NORM_TOL = 1e-6


def _as_unit(vector, dim: int | None = None) -> np.ndarray:
    vec = np.asarray(vector, dtype=np.float64).reshape(-1)
    if dim is not None and vec.shape[0] != dim:
        raise StoreValidationError(
            f"vector dimension {vec.shape[0]} does not match index dimension {dim}"
        )
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise StoreValidationError("zero vector cannot be normalized")
    if abs(norm - 1.0) > _NORM_TOL:
        vec = vec / norm
    return vec


class CosineIndex:
    """Exact cosine-similarity index over unit vectors keyed by string id."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise StoreValidationError(f"index dimension must be positive, got {dim}")
        self.dim = dim
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, item_id: str, vector) -> None:
        if item_id in self._ids:
            raise StoreValidationError(f"duplicate index id {item_id!r}")
        self._rows.append(_as_unit(vector, self.dim))
        self._ids.append(item_id)

    def items(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self._ids, self._rows))

    def retrieve(
        self, query, k: int, exclude: frozenset[str] | set[str] = frozenset()
    ) -> list[tuple[str, float]]:
        if not self._ids:
            return []
        q = _as_unit(query, self.dim)
        # per-row dot products: unlike a BLAS matrix-vector product, the
        # result for a row does not depend on its position in the store, so
        # identical vectors score identically and ties break on id alone
        ranked = sorted(
            (
                (item_id, float(np.dot(row, q)))
                for item_id, row in zip(self._ids, self._rows)
                if item_id not in exclude
            ),
            key=lambda pair: (-pair[1], pair[0]),
        )
        return ranked[:k]


def save_embedding_cache(path: str, items: list[tuple[str, np.ndarray]]) -> None:
    if not items:
        return
    dim = int(np.asarray(items[0][1]).reshape(-1).shape[0])
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, dim, len(items)))
        for item_id, vec in items:
            raw = item_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(vec, dtype=np.float32).tobytes())
    os.replace(tmp, path)


def load_embedding_cache(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.read(4 + 12)
        if len(header) < 16 or header[:4] != _MAGIC:
            raise StoreValidationError(f"not an embedding cache: {path}")
        version, dim, count = struct.unpack("<III", header[4:])
        if version != _VERSION:
            raise StoreValidationError(f"unsupported embedding cache version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            item_id = fh.read(id_len).decode("utf-8")
            data = fh.read(4 * dim)
            if len(data) < 4 * dim:
                raise StoreValidationError(f"truncated embedding cache: {path}")
            out[item_id] = np.frombuffer(data, dtype=np.float32).astype(np.float64)
    return out
