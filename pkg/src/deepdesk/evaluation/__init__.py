"""Evaluation harness: rubric scoring, knowledge metrics, vision win rate, PDF compile."""

from .criteria import Criterion, CriterionSet, Dimension, default_criterion_set
from .points import KeyPoint, KnowledgePointSet, load_points
from .judge_cache import JudgeCache
from .metrics import (
    CachedTextJudge,
    CachedVisionJudge,
    ScoreSheet,
    WinRecord,
    key_coverage,
    key_supportiveness,
    main_alignment,
    race_score,
    vision_win_rate,
)
from .compile import CompiledReport, compile_report

__all__ = [
    "Criterion", "CriterionSet", "Dimension", "default_criterion_set",
    "KeyPoint", "KnowledgePointSet", "load_points",
    "JudgeCache",
    "CachedTextJudge", "CachedVisionJudge", "ScoreSheet", "WinRecord",
    "key_coverage", "key_supportiveness", "main_alignment", "race_score",
    "vision_win_rate",
    "CompiledReport", "compile_report",
]
