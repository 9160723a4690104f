"""Test-set-specialized LLM judging for machine translation.

The package builds per-example in-context demonstration sets from
historical same-source ratings, renders and parses annotation prompts,
talks to pluggable evaluator backends, and meta-evaluates predictions with
character-level span metrics and tie-calibrated pairwise accuracy.
"""

from .core import (
    CategoryPath,
    ErrorSpan,
    EvalReport,
    MqmWeights,
    PromptBundle,
    RatedTranslation,
    SegmentRow,
    Severity,
    SourceSegment,
    TestSuite,
    mqm_score,
    normalize_category,
)

__all__ = [
    "CategoryPath",
    "ErrorSpan",
    "EvalReport",
    "MqmWeights",
    "PromptBundle",
    "RatedTranslation",
    "SegmentRow",
    "Severity",
    "SourceSegment",
    "TestSuite",
    "mqm_score",
    "normalize_category",
]

__version__ = "0.1.0"
