"""Deterministic synthetic rating suites for tests and demos.

Each source segment gets its own planted error-phrase vocabulary, shared by
every system that translates it but disjoint from every other segment's.
A system's translation contains a random subset of the segment's phrases,
and each contained phrase is independently marked as a gold error with a
fixed per-phrase severity and category. Because the phrase text is unique
to a segment, error spans copied from same-source demonstrations can match
a test translation while spans from other segments essentially never do.
"""

from __future__ import annotations

from dataclasses import replace
from random import Random
from typing import Sequence

from .core import (
    CategoryPath,
    ErrorSpan,
    RatedTranslation,
    Severity,
    TestSuite,
    mqm_score,
)
from .icl import derive_seed
from .ingest import suite_from_ratings

_SEVERITY_CHOICES = (
    Severity.MINOR,
    Severity.MINOR,
    Severity.MAJOR,
    Severity.MAJOR,
    Severity.CRITICAL,
)

_CATEGORY_CHOICES = (
    "accuracy/mistranslation",
    "accuracy/omission",
    "fluency/grammar",
    "style/awkward",
    "terminology/inappropriate for context",
)


def _names(prefix: str, count_or_names: int | Sequence[str]) -> tuple[str, ...]:
    if isinstance(count_or_names, int):
        return tuple(f"{prefix}{i + 1:02d}" for i in range(count_or_names))
    return tuple(count_or_names)


def make_synthetic_suite(
    lp: str = "en-de",
    dataset: str = "synthetic",
    n_segments: int = 12,
    systems: int | Sequence[str] = 4,
    raters: int | Sequence[str] = 3,
    rounds: Sequence[str] = ("round1",),
    seed: int = 0,
    pseudo_sxs: bool = True,
    phrases_per_segment: int = 4,
    include_prob: float = 0.7,
    error_prob: float = 0.8,
    duplicate_target_prob: float = 0.0,
    holes: Sequence[tuple[str, str, int]] = (),
    with_scores: bool = True,
) -> TestSuite:
    """Build a fully covered suite (minus explicit ``holes``) with the
    planted-vocabulary construction described in the module docstring.

    In pseudo-SxS mode one rater covers all translations of a segment in a
    round, and the assignment rotates across rounds so a second round uses
    a strictly different rater whenever more than one rater exists.
    """
    system_ids = _names("sys", systems)
    rater_ids = _names("rater", raters)
    hole_set = {(r, s, i) for r, s, i in holes}

    # Per-segment planted vocabulary with fixed severity/category per phrase.
    phrase_specs: list[list[tuple[str, Severity, CategoryPath]]] = []
    for seg in range(n_segments):
        rng = Random(derive_seed(seed, "segment", seg))
        specs = []
        for p in range(phrases_per_segment):
            phrase = f"glitch{seg}x{p}"
            severity = rng.choice(_SEVERITY_CHOICES)
            main, _, sub = rng.choice(_CATEGORY_CHOICES).partition("/")
            specs.append((phrase, severity, CategoryPath(main, sub or None)))
        phrase_specs.append(specs)

    ratings: list[RatedTranslation] = []
    for round_index, round_id in enumerate(rounds):
        for seg in range(n_segments):
            source = f"Source passage {seg} with planted wording."
            previous: tuple[str, list[int]] | None = None
            for sys_index, system in enumerate(system_ids):
                if (round_id, system, seg) in hole_set:
                    previous = None
                    continue
                rng = Random(derive_seed(seed, round_id, system, seg))
                if previous is not None and rng.random() < duplicate_target_prob:
                    target, included = previous
                    included = list(included)
                else:
                    included = [
                        p
                        for p in range(phrases_per_segment)
                        if rng.random() < include_prob
                    ]
                    tokens = [f"topic{seg}", f"take{rng.randrange(100000)}"]
                    tokens += [phrase_specs[seg][p][0] for p in included]
                    tokens.append("done.")
                    target = " ".join(tokens)
                previous = (target, list(included))

                errors = []
                for p in included:
                    phrase, severity, category = phrase_specs[seg][p]
                    if rng.random() >= error_prob:
                        continue
                    start = target.index(phrase)
                    errors.append(
                        ErrorSpan(
                            span_text=phrase,
                            start=start,
                            end=start + len(phrase),
                            severity=severity,
                            category=category,
                        )
                    )

                if pseudo_sxs:
                    rater = rater_ids[(seg + round_index) % len(rater_ids)]
                else:
                    rater = rater_ids[(seg + sys_index + round_index) % len(rater_ids)]

                rating = RatedTranslation(
                    lp=lp,
                    dataset=dataset,
                    round=round_id,
                    system=system,
                    rater=rater,
                    doc_id=f"doc{seg // 4}",
                    seg_id=seg,
                    source=source,
                    target=target,
                    errors=tuple(errors),
                )
                if with_scores:
                    rating = replace(rating, score=max(0.0, 100.0 - mqm_score(rating)))
                ratings.append(rating)
    return suite_from_ratings(ratings)
