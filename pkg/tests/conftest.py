from __future__ import annotations

import pytest

from specialist_eval.core import (
    CategoryPath,
    ErrorSpan,
    RatedTranslation,
    Severity,
)
from specialist_eval.ingest import suite_from_ratings
from specialist_eval.synth import make_synthetic_suite

MINOR = Severity.MINOR
MAJOR = Severity.MAJOR
CRITICAL = Severity.CRITICAL

ACC = CategoryPath("accuracy", "mistranslation")
FLU = CategoryPath("fluency", "grammar")


def err(target: str, span: str, severity=MINOR, category=ACC, occurrence: int = 0) -> ErrorSpan:
    """Span by text lookup, so fixtures stay readable."""
    at = -1
    for _ in range(occurrence + 1):
        at = target.index(span, at + 1)
    return ErrorSpan(span_text=span, start=at, end=at + len(span), severity=severity, category=category)


def rating(
    system: str,
    seg_id: int,
    target: str,
    errors=(),
    *,
    lp: str = "en-de",
    dataset: str = "fixture",
    round_id: str = "round1",
    rater: str = "r1",
    doc_id: str = "doc0",
    source: str | None = None,
    score: float | None = None,
) -> RatedTranslation:
    return RatedTranslation(
        lp=lp,
        dataset=dataset,
        round=round_id,
        system=system,
        rater=rater,
        doc_id=doc_id,
        seg_id=seg_id,
        source=source if source is not None else f"source sentence {seg_id}",
        target=target,
        errors=tuple(errors),
        score=score,
    )


@pytest.fixture
def tiny_suite():
    """2 segments x 3 systems, pseudo-SxS (r1 rates segment 0, r2 segment 1)."""
    t00 = "the cat sat on the mat"
    t01 = "a cat sat by the mat"
    t02 = "the cat sits on a mat"
    t10 = "birds fly south in winter"
    t11 = "the birds flew south in winter"
    t12 = "birds fly south during winter"
    ratings = [
        rating("sysA", 0, t00, [err(t00, "cat", MINOR)], rater="r1", score=99.0),
        rating("sysB", 0, t01, [err(t01, "a cat", MAJOR)], rater="r1", score=95.0),
        rating("sysC", 0, t02, [err(t02, "sits", MINOR, FLU)], rater="r1", score=99.0),
        rating("sysA", 1, t10, [], rater="r2", score=100.0),
        rating("sysB", 1, t11, [err(t11, "flew", MAJOR, FLU)], rater="r2", score=95.0),
        rating("sysC", 1, t12, [err(t12, "during", MINOR)], rater="r2", score=99.0),
    ]
    return suite_from_ratings(ratings)


@pytest.fixture(scope="session")
def wmt_shaped_suite():
    """12 systems x 100 segments, pseudo-SxS, full coverage."""
    return make_synthetic_suite(
        n_segments=100, systems=12, raters=10, seed=7, duplicate_target_prob=0.1
    )
