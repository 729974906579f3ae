"""Per-question knowledge-point annotations consumed by the knowledge metrics.

File format (``points/<question_id>.json``)::

    {
      "question_id": "q-1",
      "question_text": "...",
      "main_conclusion": "...",
      "key_points": [{"text": "...", "table_id": "t-1"}, ...],
      "ground_truth_tables": ["t-1", "t-2"],
      "domain": "Art"
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..errors import EvalError


@dataclass(frozen=True)
class KeyPoint:
    text: str
    table_id: str


@dataclass(frozen=True)
class KnowledgePointSet:
    question_id: str
    question_text: str
    main_conclusion: str
    key_points: tuple[KeyPoint, ...]
    ground_truth_tables: frozenset[str]
    domain: str | None = None

    def validate(self) -> None:
        if not self.main_conclusion.strip():
            raise EvalError(f"{self.question_id}: main conclusion is empty")
        if not self.key_points:
            raise EvalError(f"{self.question_id}: needs at least one key point")
        for kp in self.key_points:
            if kp.table_id not in self.ground_truth_tables:
                raise EvalError(
                    f"{self.question_id}: key point table {kp.table_id!r} "
                    "is not in ground_truth_tables")


def load_points(path: str) -> KnowledgePointSet:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise EvalError(f"cannot read points file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise EvalError(f"malformed points file {path}: {exc}") from exc
    try:
        points = KnowledgePointSet(
            question_id=data["question_id"],
            question_text=data.get("question_text", ""),
            main_conclusion=data["main_conclusion"],
            key_points=tuple(KeyPoint(p["text"], p["table_id"])
                             for p in data["key_points"]),
            ground_truth_tables=frozenset(data["ground_truth_tables"]),
            domain=data.get("domain"),
        )
    except (KeyError, TypeError) as exc:
        raise EvalError(f"points file {path} missing field: {exc}") from exc
    points.validate()
    return points
