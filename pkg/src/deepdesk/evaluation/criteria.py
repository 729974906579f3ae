"""Rubric configuration for comparative report scoring.

Four dimensions are scored: Comprehensiveness, Depth, Readability, and
Coherence.  Each dimension holds weighted criteria (weights sum to 1) and
the dimensions themselves are weighted equally.  Criteria ship as editable
data; the defaults below give five per dimension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from ..errors import EvalError

DIMENSION_NAMES = ("Comprehensiveness", "Depth", "Readability", "Coherence")
DIMENSION_LABELS = {
    "Comprehensiveness": "Comp.",
    "Depth": "Depth",
    "Readability": "Read.",
    "Coherence": "Coher.",
}
_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class Criterion:
    text: str
    weight: float


@dataclass(frozen=True)
class Dimension:
    name: str
    criteria: tuple[Criterion, ...]


@dataclass(frozen=True)
class CriterionSet:
    dimensions: tuple[Dimension, ...]

    @property
    def dimension_weight(self) -> float:
        return 1.0 / len(self.dimensions)

    def validate(self) -> None:
        if not self.dimensions:
            raise EvalError("criterion set has no dimensions")
        for dim in self.dimensions:
            if dim.name not in DIMENSION_NAMES:
                raise EvalError(f"unknown dimension {dim.name!r}")
            if not dim.criteria:
                raise EvalError(f"dimension {dim.name} has no criteria")
            for c in dim.criteria:
                if c.weight < 0:
                    raise EvalError(f"negative weight on criterion {c.text!r}")
            total = sum(c.weight for c in dim.criteria)
            if abs(total - 1.0) > _WEIGHT_TOL:
                raise EvalError(
                    f"criterion weights in {dim.name} sum to {total!r}, not 1")

    def to_dict(self) -> dict:
        return {
            "dimensions": [
                {"name": d.name,
                 "criteria": [{"text": c.text, "weight": c.weight} for c in d.criteria]}
                for d in self.dimensions
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CriterionSet":
        try:
            dims = tuple(
                Dimension(
                    name=d["name"],
                    criteria=tuple(Criterion(c["text"], float(c["weight"]))
                                   for c in d["criteria"]),
                )
                for d in data["dimensions"]
            )
        except (KeyError, TypeError) as exc:
            raise EvalError(f"malformed criteria config: {exc}") from exc
        cs = cls(dimensions=dims)
        cs.validate()
        return cs

    @classmethod
    def load(cls, path: str) -> "CriterionSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


_DEFAULTS: dict[str, list[str]] = {
    "Comprehensiveness": [
        "Covers every major aspect the question asks about",
        "Draws on both quantitative data and qualitative context",
        "Addresses the stated temporal and geographic scope",
        "Considers multiple stakeholders or segments where relevant",
        "Leaves no obvious follow-up question unaddressed",
    ],
    "Depth": [
        "Goes beyond restating sources to derive its own analysis",
        "Quantifies claims with specific figures where possible",
        "Explains causal mechanisms rather than listing facts",
        "Surfaces non-obvious patterns, outliers, or trade-offs",
        "Supports conclusions with evidence chains",
    ],
    "Readability": [
        "Clear section structure with informative headings",
        "Figures and tables are legible and well captioned",
        "Prose is concise and free of filler",
        "Terminology is used consistently and defined when needed",
        "Data presentation (units, rounding) is consistent",
    ],
    "Coherence": [
        "Sections follow a logical progression",
        "Claims do not contradict each other across sections",
        "Conclusions follow from the evidence presented",
        "Transitions connect findings to the overall question",
        "No orphaned figures or references to absent content",
    ],
}


def default_criterion_set() -> CriterionSet:
    dims = tuple(
        Dimension(
            name=name,
            criteria=tuple(Criterion(text, 1.0 / len(texts)) for text in texts),
        )
        for name, texts in ((n, _DEFAULTS[n]) for n in DIMENSION_NAMES)
    )
    return CriterionSet(dimensions=dims)
