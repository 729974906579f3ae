"""Metric computations over judge verdicts.

Three families:

* comparative rubric scoring of a generated vs a reference report
  (per-criterion score pairs, weighted into dimension and intermediate
  scores, overall = gen / (gen + ref));
* knowledge metrics against annotations (main-conclusion alignment on a
  0-10 judge scale rescaled to 0-100; key-point coverage as the mean of
  binary indicators; supportiveness as the mean of coverage AND table-use);
* pairwise vision preference over compiled report pages, randomized
  presentation order per pair.

All aggregation is a pure fold over judge outputs, so cached verdicts
reproduce results bit-identically.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field

from ..errors import EvalError
from ..gateway import Gateway, ModelRole
from .criteria import CriterionSet
from .judge_cache import JudgeCache
from .points import KnowledgePointSet

logger = logging.getLogger(__name__)

_PAIR_RE = re.compile(r"A\s*=\s*(\d+(?:\.\d+)?)\s*[,;]?\s*B\s*=\s*(\d+(?:\.\d+)?)")
_SCORE_RE = re.compile(r"SCORE:\s*(-?\d+)")
_LIST_RE = re.compile(r"\[([01\s,]*)\]")
_PREFER_RE = re.compile(r"PREFER:\s*(FIRST|SECOND)", re.IGNORECASE)

CRITERION_PROMPT = """\
Compare two research reports on one criterion and score each 0-10.
Dimension: {dimension}
Criterion: {criterion}

REPORT A:
{gen}

REPORT B:
{ref}

Reply with one line: `SCORES A=<0-10> B=<0-10>`"""

MAIN_PROMPT = """\
Rate how well the report's overall conclusions align with the reference
conclusion for this question, on an integer scale 0-10.
Question: {question}
Reference conclusion: {conclusion}

REPORT:
{report}

Reply with one line: `SCORE: <0-10>`"""

COVERAGE_PROMPT = """\
For each key point below, decide whether the report covers it.
Question: {question}

Key points:
{points}

REPORT:
{report}

Reply with one JSON array of {n} binary indicators (1 = covered), e.g. [1,0,1]."""

TABLE_USE_PROMPT = """\
For each key point below, decide whether the report's analysis actually
uses the data table named next to it (not merely reaches a similar
conclusion from other sources).
Question: {question}

Key points and their source tables:
{points}

REPORT:
{report}

Reply with one JSON array of {n} binary indicators (1 = table used)."""

VISION_PROMPT = """\
Two research reports answering the same question are shown as page images:
the first {n_first} image(s) are Report One, the remaining {n_second} are
Report Two. Judge which report is better overall, considering layout,
figure quality and content. You must choose one; ties are not allowed.
Question: {question}

Reply with one line: `PREFER: FIRST` or `PREFER: SECOND`"""


class CachedTextJudge:
    """Text judge wrapper: disk cache in front of the judge_text role."""

    def __init__(self, gateway: Gateway, cache: JudgeCache | None = None,
                 model_label: str = "default"):
        self.gateway = gateway
        self.cache = cache
        self.model_label = model_label

    def ask(self, prompt: str) -> str:
        key = None
        if self.cache is not None:
            key = JudgeCache.key(ModelRole.judge_text.value, self.model_label, prompt)
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        response = self.gateway.chat(ModelRole.judge_text,
                                     [{"role": "user", "content": prompt}])
        if self.cache is not None and key is not None:
            self.cache.put(key, response)
        return response


class CachedVisionJudge:
    def __init__(self, gateway: Gateway, cache: JudgeCache | None = None,
                 model_label: str = "default"):
        self.gateway = gateway
        self.cache = cache
        self.model_label = model_label

    def ask(self, images: list[str], instruction: str) -> str:
        key = None
        if self.cache is not None:
            import hashlib

            digests = []
            for path in images:
                with open(path, "rb") as fh:
                    digests.append(hashlib.sha256(fh.read()).hexdigest()[:16])
            key = JudgeCache.key(ModelRole.judge_vision.value, self.model_label,
                                 instruction, digests)
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        response = self.gateway.analyze_image(ModelRole.judge_vision, images, instruction)
        if self.cache is not None and key is not None:
            self.cache.put(key, response)
        return response


# -- comparative rubric scoring ------------------------------------------------


@dataclass
class CriterionScore:
    dimension: str
    criterion: str
    weight: float
    gen: float
    ref: float


@dataclass
class ScoreSheet:
    criterion_scores: list[CriterionScore]
    dimension_scores: dict[str, dict]
    gen_intermediate: float
    ref_intermediate: float
    overall: float
    excluded_criteria: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "criteria": [
                {"dimension": c.dimension, "criterion": c.criterion,
                 "weight": c.weight, "gen": c.gen, "ref": c.ref}
                for c in self.criterion_scores
            ],
            "dimensions": self.dimension_scores,
            "gen_intermediate": self.gen_intermediate,
            "ref_intermediate": self.ref_intermediate,
            "overall": self.overall,
            "excluded_criteria": list(self.excluded_criteria),
        }


def _judge_pair(judge: CachedTextJudge, dimension: str, criterion: str,
                gen: str, ref: str) -> tuple[float, float] | None:
    prompt = CRITERION_PROMPT.format(dimension=dimension, criterion=criterion,
                                     gen=gen, ref=ref)
    for attempt in range(2):
        response = judge.ask(prompt)
        match = _PAIR_RE.search(response)
        if match:
            return float(match.group(1)), float(match.group(2))
        prompt = prompt + "\nYour previous reply was unparseable; use the exact format."
    return None


def race_score(judge: CachedTextJudge, gen: str, ref: str,
               criterion_set: CriterionSet) -> ScoreSheet:
    """Criterion-by-criterion comparison aggregated into the overall ratio."""
    if not gen.strip() or not ref.strip():
        raise EvalError("both reports must be non-empty")
    criterion_set.validate()

    scores: list[CriterionScore] = []
    excluded: list[str] = []
    per_dimension: dict[str, list[CriterionScore]] = {}
    for dim in criterion_set.dimensions:
        kept: list[CriterionScore] = []
        for criterion in dim.criteria:
            pair = _judge_pair(judge, dim.name, criterion.text, gen, ref)
            if pair is None:
                excluded.append(criterion.text)
                logger.warning("criterion excluded after unparseable judge output: %s",
                               criterion.text)
                continue
            score = CriterionScore(dim.name, criterion.text, criterion.weight,
                                   gen=pair[0], ref=pair[1])
            kept.append(score)
            scores.append(score)
        per_dimension[dim.name] = kept

    dimension_scores: dict[str, dict] = {}
    scored_dims = {name: kept for name, kept in per_dimension.items() if kept}
    if not scored_dims:
        raise EvalError("every criterion was excluded; nothing to score")
    dim_weight = 1.0 / len(scored_dims)
    gen_int = 0.0
    ref_int = 0.0
    for name, kept in scored_dims.items():
        total_w = sum(c.weight for c in kept)
        gen_d = sum(c.weight / total_w * c.gen for c in kept)
        ref_d = sum(c.weight / total_w * c.ref for c in kept)
        dimension_scores[name] = {"gen": gen_d, "ref": ref_d, "weight": dim_weight}
        gen_int += dim_weight * gen_d
        ref_int += dim_weight * ref_d

    denominator = gen_int + ref_int
    overall = 0.5 if denominator == 0 else gen_int / denominator
    return ScoreSheet(
        criterion_scores=scores,
        dimension_scores=dimension_scores,
        gen_intermediate=gen_int,
        ref_intermediate=ref_int,
        overall=overall,
        excluded_criteria=excluded,
    )


# -- knowledge metrics --------------------------------------------------------------


def main_alignment(judge: CachedTextJudge, report: str,
                   points: KnowledgePointSet) -> float:
    """0-10 judge score of conclusion agreement, rescaled to 0-100."""
    if not points.main_conclusion.strip():
        raise EvalError("main conclusion is empty")
    prompt = MAIN_PROMPT.format(question=points.question_text,
                                conclusion=points.main_conclusion, report=report)
    value: int | None = None
    for attempt in range(2):
        response = judge.ask(prompt)
        match = _SCORE_RE.search(response)
        if match:
            value = int(match.group(1))
            if 0 <= value <= 10:
                break
        prompt = prompt + "\nReply with `SCORE: <integer 0-10>` only."
    if value is None:
        raise EvalError("alignment judge output unparseable after re-prompt")
    if not 0 <= value <= 10:
        clamped = min(10, max(0, value))
        logger.warning("alignment score %s out of range; clamped to %s", value, clamped)
        value = clamped
    return value * 10.0


def _indicator_list(judge: CachedTextJudge, prompt: str, expected_len: int,
                    what: str) -> list[int]:
    for attempt in range(2):
        response = judge.ask(prompt)
        match = _LIST_RE.search(response)
        if match:
            raw = [t for t in re.split(r"[,\s]+", match.group(1).strip()) if t]
            indicators = [int(t) for t in raw]
            if len(indicators) == expected_len and all(i in (0, 1) for i in indicators):
                return indicators
        prompt = (prompt + f"\nYour previous reply was invalid; return exactly "
                           f"{expected_len} binary values in one JSON array.")
    raise EvalError(
        f"{what} judge returned a list of the wrong length twice "
        f"(expected {expected_len})")


def key_coverage(judge: CachedTextJudge, report: str,
                 points: KnowledgePointSet) -> tuple[float, list[int]]:
    """Fraction of key points the report covers, with per-point indicators."""
    n = len(points.key_points)
    listing = "\n".join(f"{i}. {kp.text}" for i, kp in enumerate(points.key_points, 1))
    prompt = COVERAGE_PROMPT.format(question=points.question_text, points=listing,
                                    report=report, n=n)
    indicators = _indicator_list(judge, prompt, n, "coverage")
    return sum(indicators) / n, indicators


def key_supportiveness(judge: CachedTextJudge, report: str, points: KnowledgePointSet,
                       table_labels: dict[str, str] | None = None,
                       ) -> tuple[float, list[int], list[int]]:
    """Fraction of key points that are covered AND grounded in their table."""
    _, coverage = key_coverage(judge, report, points)
    n = len(points.key_points)
    labels = table_labels or {}
    listing = "\n".join(
        f"{i}. {kp.text} -> table: {labels.get(kp.table_id, kp.table_id)}"
        for i, kp in enumerate(points.key_points, 1))
    prompt = TABLE_USE_PROMPT.format(question=points.question_text, points=listing,
                                     report=report, n=n)
    table_use = _indicator_list(judge, prompt, n, "table-use")
    conjunction = [c & u for c, u in zip(coverage, table_use)]
    return sum(conjunction) / n, coverage, table_use


# -- vision-preference win rate --------------------------------------------------------


@dataclass(frozen=True)
class WinRecord:
    question_id: str
    domain: str | None
    swapped: bool
    a_wins: int  # 1 if agent A's report preferred

    def __post_init__(self):
        if self.a_wins not in (0, 1):
            raise EvalError("preference indicator must be 0 or 1")


@dataclass
class WinSummary:
    win_rate: float
    per_domain: dict[str, float]
    records: list[WinRecord]
    seed: int
    excluded: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "win_rate": self.win_rate,
            "per_domain": dict(sorted(self.per_domain.items())),
            "seed": self.seed,
            "excluded": list(self.excluded),
            "records": [
                {"question_id": r.question_id, "domain": r.domain,
                 "swapped": r.swapped, "a_wins": r.a_wins}
                for r in self.records
            ],
        }


@dataclass(frozen=True)
class VisionPair:
    """One aligned comparison: compiled page images for both agents."""

    question_id: str
    question_text: str
    pages_a: tuple[str, ...]
    pages_b: tuple[str, ...]
    domain: str | None = None


def vision_win_rate(judge: CachedVisionJudge, pairs: list[VisionPair], *,
                    seed: int = 0, excluded: list[str] | None = None) -> WinSummary:
    """Pairwise preference of agent A over agent B across questions.

    Presentation order is randomized per pair from ``seed`` (recorded in each
    WinRecord) so position bias cannot favour either agent systematically.
    """
    records: list[WinRecord] = []
    for pair in pairs:
        rng = random.Random(f"{seed}:{pair.question_id}")
        swapped = rng.random() < 0.5
        first, second = (pair.pages_b, pair.pages_a) if swapped else (pair.pages_a, pair.pages_b)
        prompt = VISION_PROMPT.format(n_first=len(first), n_second=len(second),
                                      question=pair.question_text)
        choice: str | None = None
        ask_prompt = prompt
        for attempt in range(2):
            response = judge.ask([*first, *second], ask_prompt)
            match = _PREFER_RE.search(response)
            if match:
                choice = match.group(1).upper()
                break
            ask_prompt = prompt + "\nAnswer `PREFER: FIRST` or `PREFER: SECOND` only."
        if choice is None:
            raise EvalError(
                f"vision judge gave no usable preference for {pair.question_id}")
        first_wins = choice == "FIRST"
        a_wins = int(first_wins != swapped)
        records.append(WinRecord(question_id=pair.question_id, domain=pair.domain,
                                 swapped=swapped, a_wins=a_wins))
    if not records:
        raise EvalError("no comparable pairs; win rate undefined")
    per_domain: dict[str, list[int]] = {}
    for record in records:
        per_domain.setdefault(record.domain or "unknown", []).append(record.a_wins)
    return WinSummary(
        win_rate=sum(r.a_wins for r in records) / len(records),
        per_domain={d: sum(v) / len(v) for d, v in per_domain.items()},
        records=records,
        seed=seed,
        excluded=list(excluded or []),
    )
