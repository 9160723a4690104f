"""Scoring and analysis: character-level precision/recall/F1 with severity
partial credit, pairwise accuracy with tie calibration, the paired
permutation test, and the copy/exact-match/rater analyses.

Characters are the classification unit. A hypothesis character scores
credit 1.0 when gold and prediction mark it with the same severity,
0.5 when both mark it but disagree on severity, and 0 otherwise. Critical
folds into major throughout, and any zero denominator yields a 0 component
rather than NaN.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    ErrorSpan,
    EvalReport,
    PromptBundle,
    RatedTranslation,
    SegmentRow,
    Severity,
    nfc,
)
from .errors import (
    AlignmentError,
    CoverageError,
    DataError,
    LabelingError,
    MetaEvalError,
)

#: Per-character labels.
NONE, MINOR, MAJOR = 0, 1, 2

_LABEL_OF = {Severity.MINOR: MINOR, Severity.MAJOR: MAJOR}

CellKey = tuple[str, str, int, str]


@dataclass(frozen=True)
class CharLabeling:
    """One label per hypothesis character, overlaps resolved to the highest
    severity."""

    labels: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.labels)


def char_labels(hypothesis: str, errors: Sequence[ErrorSpan]) -> CharLabeling:
    labels = [NONE] * len(hypothesis)
    for error in errors:
        error.check_against(hypothesis)
        value = _LABEL_OF[error.severity.folded()]
        for i in range(error.start, error.end):
            if value > labels[i]:
                labels[i] = value
    return CharLabeling(tuple(labels))


def segment_credit(gold: CharLabeling, pred: CharLabeling) -> tuple[float, int, int]:
    """Per-segment (credit_sum, predicted error chars, gold error chars)."""
    if len(gold) != len(pred):
        raise LabelingError(f"label lengths differ: {len(gold)} vs {len(pred)}")
    credit = 0.0
    pred_chars = 0
    gold_chars = 0
    for g, p in zip(gold.labels, pred.labels):
        if g != NONE:
            gold_chars += 1
        if p != NONE:
            pred_chars += 1
        if g != NONE and p != NONE:
            credit += 1.0 if g == p else 0.5
    return credit, pred_chars, gold_chars


def score_segment(
    gold: RatedTranslation, pred_errors: Sequence[ErrorSpan]
) -> SegmentRow:
    credit, pred_chars, gold_chars = segment_credit(
        char_labels(gold.target, gold.errors),
        char_labels(gold.target, pred_errors),
    )
    return SegmentRow(
        lp=gold.lp,
        doc_id=gold.doc_id,
        seg_id=gold.seg_id,
        system=gold.system,
        credit=credit,
        pred_chars=pred_chars,
        gold_chars=gold_chars,
    )


def _prf1(credit: float, pred_chars: float, gold_chars: float) -> tuple[float, float, float]:
    precision = credit / pred_chars if pred_chars > 0 else 0.0
    recall = credit / gold_chars if gold_chars > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def corpus_prf1(rows: Iterable[SegmentRow]) -> tuple[float, float, float]:
    """Micro-aggregated precision/recall/F1 over one language pair."""
    rows = list(rows)
    if len({row.lp for row in rows}) > 1:
        raise MetaEvalError("rows span multiple language pairs; aggregate per lp")
    credit = sum(row.credit for row in rows)
    pred_chars = sum(row.pred_chars for row in rows)
    gold_chars = sum(row.gold_chars for row in rows)
    return _prf1(credit, pred_chars, gold_chars)


def corpus_prf1_macro(rows: Iterable[SegmentRow]) -> tuple[float, float, float]:
    """Unweighted mean of per-segment precision/recall/F1 (the alternative
    reading of corpus aggregation; micro is the default everywhere)."""
    rows = list(rows)
    if not rows:
        return (0.0, 0.0, 0.0)
    per_row = [_prf1(r.credit, r.pred_chars, r.gold_chars) for r in rows]
    n = len(per_row)
    return tuple(sum(v[i] for v in per_row) / n for i in range(3))  # type: ignore[return-value]


def mean_prf1(values: Sequence[tuple[float, float, float]]) -> tuple[float, float, float]:
    """Unweighted mean across language pairs."""
    if not values:
        return (0.0, 0.0, 0.0)
    n = len(values)
    return tuple(sum(v[i] for v in values) / n for i in range(3))  # type: ignore[return-value]


def per_system_breakdown(
    rows: Iterable[SegmentRow],
) -> dict[str, tuple[float, float, float]]:
    by_system: dict[str, list[SegmentRow]] = {}
    for row in rows:
        by_system.setdefault(row.system, []).append(row)
    return {system: corpus_prf1(group) for system, group in sorted(by_system.items())}


def make_report(
    rows: Sequence[SegmentRow],
    metadata: Mapping[str, object] | None = None,
    per_system: bool = False,
) -> EvalReport:
    precision, recall, f1 = corpus_prf1(rows)
    precision_m, recall_m, f1_m = corpus_prf1_macro(rows)
    aggregates: dict[str, float] = {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "precision_macro": precision_m,
        "recall_macro": recall_m,
        "f1_macro": f1_m,
    }
    if per_system:
        for system, (p, r, f) in per_system_breakdown(rows).items():
            aggregates[f"precision/{system}"] = p
            aggregates[f"recall/{system}"] = r
            aggregates[f"f1/{system}"] = f
    return EvalReport(
        per_segment=tuple(rows),
        aggregates=aggregates,
        metadata=dict(metadata or {}),
    )


# --- pairwise accuracy with tie calibration ----------------------------------


@dataclass(frozen=True)
class PairwiseInstance:
    """Items competing within one group (a source segment): each item is
    (system, metric_score, gold_score), both scores oriented higher=better."""

    group_key: tuple
    items: tuple[tuple[str, float, float], ...]


def _relation(a: float, b: float, epsilon: float) -> int:
    if abs(a - b) <= epsilon:
        return 0
    return 1 if a > b else -1


def acc23(instances: Sequence[PairwiseInstance]) -> tuple[float, float]:
    """Pairwise ranking accuracy with automatic tie calibration.

    Considers every unordered item pair within each group. The gold relation
    ties only on exact equality; the metric relation ties when the score gap
    is at most epsilon. Epsilon is chosen from {0} plus all observed metric
    gaps to maximize accuracy, breaking ties toward the smaller epsilon.
    Returns (best accuracy, chosen epsilon).
    """
    pairs: list[tuple[float, float, int]] = []
    for instance in instances:
        for (_, m_i, g_i), (_, m_j, g_j) in itertools.combinations(instance.items, 2):
            pairs.append((m_i, m_j, _relation(g_i, g_j, 0.0)))
    if not pairs:
        raise MetaEvalError("no item pairs formable")

    candidates = sorted({0.0} | {abs(m_i - m_j) for m_i, m_j, _ in pairs})
    best_accuracy = -1.0
    best_epsilon = 0.0
    for epsilon in candidates:
        matches = sum(
            1
            for m_i, m_j, gold_rel in pairs
            if _relation(m_i, m_j, epsilon) == gold_rel
        )
        accuracy = matches / len(pairs)
        if accuracy > best_accuracy:
            best_accuracy = accuracy
            best_epsilon = epsilon
    return best_accuracy, best_epsilon


# --- significance -------------------------------------------------------------


def _f1_from_sums(credit, pred_chars, gold_chars):
    precision = np.where(pred_chars > 0, credit / np.maximum(pred_chars, 1e-300), 0.0)
    recall = np.where(gold_chars > 0, credit / np.maximum(gold_chars, 1e-300), 0.0)
    denom = precision + recall
    return np.where(denom > 0, 2 * precision * recall / np.maximum(denom, 1e-300), 0.0)


def paired_permutation_test(
    per_segment_a: Sequence[SegmentRow],
    per_segment_b: Sequence[SegmentRow],
    n_resamples: int = 1000,
    seed: int = 0,
) -> float:
    """Two-sided paired permutation test on the corpus F1 difference.

    Each resample flips every aligned row's A/B assignment with probability
    one half; the p-value is the add-one-smoothed proportion of resamples
    whose absolute statistic reaches the observed one.
    """
    rows_a = {row.key: row for row in per_segment_a}
    rows_b = {row.key: row for row in per_segment_b}
    if len(rows_a) != len(per_segment_a) or len(rows_b) != len(per_segment_b):
        raise AlignmentError("duplicate (segment, system) keys")
    if set(rows_a) != set(rows_b):
        raise AlignmentError("prediction sets cover different (segment, system) keys")

    keys = sorted(rows_a)
    a = np.array([[rows_a[k].credit, rows_a[k].pred_chars, rows_a[k].gold_chars] for k in keys])
    b = np.array([[rows_b[k].credit, rows_b[k].pred_chars, rows_b[k].gold_chars] for k in keys])

    def stat(mat_a, mat_b):
        f1_a = _f1_from_sums(*mat_a.sum(axis=0))
        f1_b = _f1_from_sums(*mat_b.sum(axis=0))
        return f1_a - f1_b

    observed = abs(stat(a, b))

    rng = np.random.default_rng(seed)
    flips = rng.integers(0, 2, size=(n_resamples, len(keys))).astype(bool)
    # Flipped sums for all resamples at once: rows where flip is True swap sides.
    sums_a = flips.astype(float) @ b + (~flips).astype(float) @ a
    sums_b = flips.astype(float) @ a + (~flips).astype(float) @ b
    f1_a = _f1_from_sums(sums_a[:, 0], sums_a[:, 1], sums_a[:, 2])
    f1_b = _f1_from_sums(sums_b[:, 0], sums_b[:, 1], sums_b[:, 2])
    deltas = np.abs(f1_a - f1_b)

    count = int(np.sum(deltas >= observed - 1e-15))
    return (count + 1) / (n_resamples + 1)


# --- copy and exact-match analyses --------------------------------------------


@dataclass(frozen=True)
class ExactMatchRates:
    """Percentages over all predicted errors."""

    gold_match_pct: float
    icl_match_pct: float
    icl_subsuper_match_pct: float
    total_predictions: int


def exact_match_stats(
    predictions: Mapping[CellKey, Sequence[ErrorSpan]],
    bundles: Sequence[PromptBundle],
) -> ExactMatchRates:
    """Rate of predicted error spans that string-match (i) a gold span of
    the same test translation, (ii) an ICL error span of the same bundle,
    and (iii) rule (ii) extended to sub-span and super-span matches."""
    total = 0
    gold_hits = 0
    icl_hits = 0
    subsuper_hits = 0
    for bundle in bundles:
        preds = predictions.get(bundle.key, ())
        if not preds:
            continue
        gold_spans = {nfc(e.span_text) for e in bundle.test.errors}
        icl_spans = {nfc(e.span_text) for entry in bundle.icl for e in entry.errors}
        for pred in preds:
            total += 1
            span = nfc(pred.span_text)
            if span in gold_spans:
                gold_hits += 1
            if span in icl_spans:
                icl_hits += 1
                subsuper_hits += 1
            elif any(span in other or other in span for other in icl_spans):
                subsuper_hits += 1
    if total == 0:
        return ExactMatchRates(0.0, 0.0, 0.0, 0)
    return ExactMatchRates(
        gold_match_pct=100.0 * gold_hits / total,
        icl_match_pct=100.0 * icl_hits / total,
        icl_subsuper_match_pct=100.0 * subsuper_hits / total,
        total_predictions=total,
    )


def copy_count_comparison(
    preds_a: Mapping[CellKey, Sequence[ErrorSpan]],
    preds_b: Mapping[CellKey, Sequence[ErrorSpan]],
    bundles: Sequence[PromptBundle],
) -> tuple[int, int]:
    """Counts of ICL-copied predictions unique to each side.

    Predictions present in both sides (matched by segment, span text,
    severity, and category) are removed first; the remaining predictions
    count when their span text equals an ICL error span of their bundle.
    """

    def signature(key: CellKey, error: ErrorSpan) -> tuple:
        return (key, nfc(error.span_text), error.severity.value, error.category.render())

    def multiset(preds: Mapping[CellKey, Sequence[ErrorSpan]]) -> Counter:
        return Counter(
            signature(key, error) for key, errors in preds.items() for error in errors
        )

    counts_a = multiset(preds_a)
    counts_b = multiset(preds_b)
    shared = counts_a & counts_b
    only_a = counts_a - shared
    only_b = counts_b - shared

    icl_spans_by_key: dict[CellKey, set[str]] = {
        bundle.key: {nfc(e.span_text) for entry in bundle.icl for e in entry.errors}
        for bundle in bundles
    }

    def copied(counter: Counter) -> int:
        total = 0
        for (key, span, _, _), count in counter.items():
            if span in icl_spans_by_key.get(key, set()):
                total += count
        return total

    return copied(only_a), copied(only_b)


# --- cross-rater analysis ------------------------------------------------------


@dataclass(frozen=True)
class CrossRaterResult:
    """F1 matrices indexed [icl_rater][test_rater] over a fully covered
    multi-rater subset, plus the rater-vs-rater agreement matrix."""

    raters: tuple[str, ...]
    f1: tuple[tuple[float, ...], ...]
    agreement: tuple[tuple[float, ...], ...]


def cross_rater_matrix(
    predictions_by_icl_rater: Mapping[str, Mapping[CellKey, Sequence[ErrorSpan]]],
    gold_by_test_rater: Mapping[str, Mapping[CellKey, RatedTranslation]],
) -> CrossRaterResult:
    raters = tuple(sorted(gold_by_test_rater))
    if tuple(sorted(predictions_by_icl_rater)) != raters:
        raise CoverageError("prediction and gold rater sets differ")
    if not raters:
        raise CoverageError("no raters")

    cells = set(gold_by_test_rater[raters[0]])
    for rater in raters:
        if set(gold_by_test_rater[rater]) != cells or set(
            predictions_by_icl_rater[rater]
        ) != cells:
            raise CoverageError("every rater must cover every (segment, system) cell")
    ordered_cells = sorted(cells)
    for cell in ordered_cells:
        targets = {gold_by_test_rater[r][cell].target for r in raters}
        if len(targets) > 1:
            raise DataError(f"raters disagree on the translation text of {cell}")

    def micro_f1(
        pred_of: Mapping[CellKey, Sequence[ErrorSpan]], gold_rater: str
    ) -> float:
        rows = [
            score_segment(gold_by_test_rater[gold_rater][cell], pred_of[cell])
            for cell in ordered_cells
        ]
        return corpus_prf1(rows)[2]

    f1 = tuple(
        tuple(micro_f1(predictions_by_icl_rater[ri], rj) for rj in raters)
        for ri in raters
    )
    agreement = tuple(
        tuple(
            micro_f1(
                {
                    cell: gold_by_test_rater[ri][cell].errors
                    for cell in ordered_cells
                },
                rj,
            )
            for rj in raters
        )
        for ri in raters
    )
    return CrossRaterResult(raters=raters, f1=f1, agreement=agreement)
