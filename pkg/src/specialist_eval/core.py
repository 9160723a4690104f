"""Domain types shared by every module, plus category normalization and
numeric MQM scoring.

Character offsets everywhere in this package count Unicode scalar values,
which is exactly what Python string indexing does. All types are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Literal, Mapping

from .errors import (
    BuildError,
    DataError,
    InvalidCategory,
    RangeError,
    RoundError,
    SpanIntegrityError,
)

Strategy = Literal["specialist", "shuffled", "fixed_different_source", "augmented"]

STRATEGIES: tuple[str, ...] = (
    "specialist",
    "shuffled",
    "fixed_different_source",
    "augmented",
)

#: Separator used to name merged rating rounds ("round2+round3"). Plain round
#: ids therefore must not contain it.
MERGED_ROUND_SEP = "+"


def nfc(text: str) -> str:
    """NFC-normalize text for exact-match comparisons."""
    return unicodedata.normalize("NFC", text)


class Severity(str, Enum):
    """Error severity. ``neutral`` is the no-error marker and never carries
    a span; the strict ordering critical > major > minor resolves overlaps."""

    MINOR = "minor"
    MAJOR = "major"
    CRITICAL = "critical"
    NEUTRAL = "neutral"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANK[self]

    def folded(self) -> "Severity":
        """Critical folds into major for all scoring purposes."""
        return Severity.MAJOR if self is Severity.CRITICAL else self


_SEVERITY_RANK = {
    Severity.NEUTRAL: 0,
    Severity.MINOR: 1,
    Severity.MAJOR: 2,
    Severity.CRITICAL: 3,
}

#: Main error categories listed in the annotation instructions.
MAIN_CATEGORIES: frozenset[str] = frozenset(
    {
        "accuracy",
        "fluency",
        "style",
        "terminology",
        "non-translation",
        "other",
        "no-error",
    }
)

#: Subcategories listed per main category in the annotation instructions.
#: Real rating corpora use additional subcategories, so these are advisory
#: (normalization passes unknown subs through under a known main).
CATEGORY_TAXONOMY: Mapping[str, tuple[str, ...]] = {
    "accuracy": ("addition", "mistranslation", "omission", "untranslated text"),
    "fluency": (
        "character encoding",
        "grammar",
        "inconsistency",
        "punctuation",
        "register",
        "spelling",
    ),
    "style": ("awkward",),
    "terminology": ("inappropriate for context", "inconsistent use"),
    "non-translation": (),
    "other": (),
    "no-error": (),
}

# Corpus spellings that should map onto a known main category.
_MAIN_ALIASES = {"non-translation!": "non-translation"}


@dataclass(frozen=True)
class CategoryPath:
    """An error category, rendered ``main`` or ``main/sub``."""

    main: str
    sub: str | None = None

    def render(self) -> str:
        return self.main if self.sub is None else f"{self.main}/{self.sub}"

    def __str__(self) -> str:
        return self.render()


def normalize_category(raw: str) -> CategoryPath:
    """Normalize a raw category string.

    Case-folds, trims whitespace, and splits on the first slash. Unknown
    main categories map to ``other`` with the full normalized string kept
    as the subcategory, so nothing is ever silently discarded. Idempotent.
    """
    if not raw or not raw.strip():
        raise InvalidCategory("empty category string")
    folded = raw.strip().casefold()
    head, _, tail = folded.partition("/")
    main = _MAIN_ALIASES.get(head.strip(), head.strip())
    sub = tail.strip() or None
    if main not in MAIN_CATEGORIES:
        return CategoryPath("other", folded)
    return CategoryPath(main, sub)


@dataclass(frozen=True)
class ErrorSpan:
    """One annotated error: its text, scalar-value offsets into the target,
    severity, and category. ``end`` is exclusive."""

    span_text: str
    start: int
    end: int
    severity: Severity
    category: CategoryPath

    def __post_init__(self) -> None:
        if self.severity is Severity.NEUTRAL:
            raise SpanIntegrityError("neutral severity never carries a span")
        if not (0 <= self.start < self.end):
            raise SpanIntegrityError(
                f"invalid offsets [{self.start}, {self.end})"
            )

    def check_against(self, target: str) -> None:
        """Enforce the offset invariant against the target text."""
        if self.end > len(target) or target[self.start : self.end] != self.span_text:
            raise SpanIntegrityError(
                f"target[{self.start}:{self.end}] != {self.span_text!r}"
            )


@dataclass(frozen=True)
class SourceSegment:
    lp: str
    doc_id: str
    seg_id: int
    text: str

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.lp, self.doc_id, self.seg_id)


@dataclass(frozen=True)
class RatedTranslation:
    """One system's output for one source together with its rating.

    Carries the source text alongside the key so that a rated translation is
    self-contained: prompt construction for the shuffled and fixed-source
    baselines mixes entries from different segments.
    """

    lp: str
    dataset: str
    round: str
    system: str
    rater: str
    doc_id: str
    seg_id: int
    source: str
    target: str
    errors: tuple[ErrorSpan, ...] = ()
    score: float | None = None

    def __post_init__(self) -> None:
        errors = tuple(sorted(self.errors, key=lambda e: (e.start, e.end)))
        object.__setattr__(self, "errors", errors)
        for err in errors:
            err.check_against(self.target)
        if self.score is not None and not (0.0 <= self.score <= 100.0):
            raise RangeError(f"score {self.score} outside [0, 100]")

    @property
    def source_key(self) -> tuple[str, str, int]:
        return (self.lp, self.doc_id, self.seg_id)

    @property
    def cell_key(self) -> tuple[str, str, int, str]:
        return (self.lp, self.doc_id, self.seg_id, self.system)


@dataclass(frozen=True)
class TestSuite:
    """The grid of source segments x systems x rating rounds for one
    language pair. A missing (round, system, segment) cell is an explicit
    ``None`` hole, never a silently shorter list."""

    lp: str
    dataset: str
    segments: tuple[SourceSegment, ...]
    rounds: Mapping[str, Mapping[str, tuple[RatedTranslation | None, ...]]]

    def __post_init__(self) -> None:
        n = len(self.segments)
        for round_id, by_system in self.rounds.items():
            if MERGED_ROUND_SEP in round_id:
                raise DataError(
                    f"round id {round_id!r} contains reserved {MERGED_ROUND_SEP!r}"
                )
            for system, cells in by_system.items():
                if len(cells) != n:
                    raise DataError(
                        f"round {round_id!r} system {system!r}: "
                        f"{len(cells)} cells for {n} segments"
                    )
                for seg, cell in zip(self.segments, cells):
                    if cell is None:
                        continue
                    if (
                        cell.source_key != seg.key
                        or cell.system != system
                        or cell.round != round_id
                        or cell.lp != self.lp
                    ):
                        raise DataError(
                            f"misfiled rating {cell.cell_key} under "
                            f"round {round_id!r} system {system!r} segment {seg.key}"
                        )

    @property
    def round_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.rounds))

    def systems(self, round_id: str) -> tuple[str, ...]:
        systems: set[str] = set()
        for base in self.resolve_round(round_id):
            systems.update(self.rounds[base])
        return tuple(sorted(systems))

    def resolve_round(self, round_id: str) -> tuple[str, ...]:
        """Expand a (possibly merged) round id into base round ids.

        A merged id like ``round2+round3`` denotes the union of its parts'
        rating pools; merging a round with itself duplicates its entries.
        """
        parts = tuple(round_id.split(MERGED_ROUND_SEP))
        for part in parts:
            if part not in self.rounds:
                raise RoundError(f"unknown round {part!r}")
        return parts

    def rating(
        self, round_id: str, system: str, seg_index: int
    ) -> RatedTranslation | None:
        """Single-round cell access; holes come back as None."""
        if round_id not in self.rounds:
            raise RoundError(f"unknown round {round_id!r}")
        cells = self.rounds[round_id].get(system)
        return None if cells is None else cells[seg_index]

    def pool(self, round_id: str, system: str, seg_index: int) -> tuple[RatedTranslation, ...]:
        """All ratings of (system, segment) across the merged round parts."""
        out = []
        for base in self.resolve_round(round_id):
            cell = self.rounds[base].get(system, (None,) * len(self.segments))[seg_index]
            if cell is not None:
                out.append(cell)
        return tuple(out)

    def iter_ratings(self) -> Iterator[RatedTranslation]:
        """All ratings in canonical order (round, system, segment index)."""
        for round_id in sorted(self.rounds):
            by_system = self.rounds[round_id]
            for system in sorted(by_system):
                for cell in by_system[system]:
                    if cell is not None:
                        yield cell


@dataclass(frozen=True)
class PromptBundle:
    """One test example plus its ordered ICL demonstrations.

    The test entry's gold errors are retained for meta-evaluation only and
    are never rendered into a prompt.
    """

    test: RatedTranslation
    icl: tuple[RatedTranslation, ...]
    strategy: str
    seed: int | None = None
    filter_applied: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise BuildError(f"unknown strategy {self.strategy!r}")
        for entry in self.icl:
            if entry.system == self.test.system:
                raise BuildError(
                    f"ICL entry from the test system {self.test.system!r}"
                )
            if self.strategy == "specialist" and entry.source_key != self.test.source_key:
                raise BuildError(
                    "specialist ICL entry from a different source: "
                    f"{entry.source_key} != {self.test.source_key}"
                )

    @property
    def key(self) -> tuple[str, str, int, str]:
        return self.test.cell_key


@dataclass(frozen=True)
class SegmentRow:
    """Per-(segment, system) scoring credits; corpus metrics are sums over
    these rows."""

    lp: str
    doc_id: str
    seg_id: int
    system: str
    credit: float
    pred_chars: int
    gold_chars: int

    @property
    def key(self) -> tuple[str, str, int, str]:
        return (self.lp, self.doc_id, self.seg_id, self.system)


@dataclass(frozen=True)
class EvalReport:
    """Per-segment credits plus corpus aggregates; the aggregates are always
    recomputable from the rows."""

    per_segment: tuple[SegmentRow, ...]
    aggregates: Mapping[str, float]
    metadata: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class MqmWeights:
    """Per-error penalty weights. The usual convention; adjust as needed."""

    minor: float = 1.0
    minor_fluency_punctuation: float = 0.1
    major: float = 5.0
    critical: float = 5.0
    non_translation: float = 25.0


DEFAULT_MQM_WEIGHTS = MqmWeights()


def mqm_error_weight(error: ErrorSpan, weights: MqmWeights = DEFAULT_MQM_WEIGHTS) -> float:
    if error.category.main == "non-translation":
        return weights.non_translation
    if error.severity is Severity.MINOR:
        if error.category.main == "fluency" and error.category.sub == "punctuation":
            return weights.minor_fluency_punctuation
        return weights.minor
    if error.severity is Severity.CRITICAL:
        return weights.critical
    return weights.major


def mqm_score(rating: RatedTranslation, weights: MqmWeights = DEFAULT_MQM_WEIGHTS) -> float:
    """Total MQM penalty for a rating (higher = worse)."""
    return sum(mqm_error_weight(e, weights) for e in rating.errors)
