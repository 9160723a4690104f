from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import given, strategies as st

from specialist_eval.core import ErrorSpan, PromptBundle, Severity
from specialist_eval.errors import (
    AlignmentError,
    CoverageError,
    LabelingError,
    MetaEvalError,
)
from specialist_eval.meta import (
    MAJOR,
    MINOR,
    NONE,
    CharLabeling,
    PairwiseInstance,
    acc23,
    char_labels,
    copy_count_comparison,
    corpus_prf1,
    corpus_prf1_macro,
    cross_rater_matrix,
    exact_match_stats,
    paired_permutation_test,
    per_system_breakdown,
    score_segment,
    segment_credit,
)

from conftest import ACC, err, rating

# --- independent oracles ------------------------------------------------------


def oracle_label_at(spans, index):
    """Max folded severity over all spans covering the index, by direct scan."""
    best = 0
    for span in spans:
        if span.start <= index < span.end:
            level = 1 if span.severity is Severity.MINOR else 2
            best = max(best, level)
    return best


def oracle_prf1(cases):
    """Per-character brute force over (hypothesis, gold_spans, pred_spans)."""
    credit = 0.0
    pred_n = 0
    gold_n = 0
    for hypothesis, gold, pred in cases:
        for i in range(len(hypothesis)):
            g = oracle_label_at(gold, i)
            p = oracle_label_at(pred, i)
            if g:
                gold_n += 1
            if p:
                pred_n += 1
            if g and p:
                credit += 1.0 if g == p else 0.5
    precision = credit / pred_n if pred_n else 0.0
    recall = credit / gold_n if gold_n else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def random_case(rng, max_len=40, max_spans=5):
    length = rng.randint(1, max_len)
    hypothesis = "".join(rng.choice("abcdefgh ") for _ in range(length))

    def spans():
        out = []
        for _ in range(rng.randint(0, max_spans)):
            start = rng.randrange(length)
            end = rng.randint(start + 1, length)
            severity = rng.choice([Severity.MINOR, Severity.MAJOR, Severity.CRITICAL])
            out.append(ErrorSpan(hypothesis[start:end], start, end, severity, ACC))
        return out

    return hypothesis, spans(), spans()


def oracle_acc_at(instances, epsilon):
    matches = 0
    total = 0
    for instance in instances:
        for (_, m_i, g_i), (_, m_j, g_j) in itertools.combinations(instance.items, 2):
            total += 1
            gold_rel = 0 if g_i == g_j else (1 if g_i > g_j else -1)
            metric_rel = 0 if abs(m_i - m_j) <= epsilon else (1 if m_i > m_j else -1)
            matches += gold_rel == metric_rel
    return matches / total


def random_instances(rng, n_groups=10, max_items=5, step=0.25):
    """Scores on a 0.25 grid so every accuracy plateau is wider than the
    dense-grid step used by the oracle."""
    instances = []
    for g in range(rng.randint(1, n_groups)):
        items = tuple(
            (f"sys{k}", rng.randint(0, 40) * step, rng.randint(0, 4) * 1.0)
            for k in range(rng.randint(2, max_items))
        )
        instances.append(PairwiseInstance(group_key=("g", str(g), 0), items=items))
    return instances


def grid_best_accuracy(instances, step=0.05):
    gaps = [
        abs(m_i - m_j)
        for inst in instances
        for (_, m_i, _), (_, m_j, _) in itertools.combinations(inst.items, 2)
    ]
    top = max(gaps) if gaps else 0.0
    grid = [i * step for i in range(int(top / step) + 1)] + [top]
    return max(oracle_acc_at(instances, e) for e in grid)


# --- char labels and credits ----------------------------------------------------


class TestCharLabels:
    def test_no_errors_all_none(self):
        assert char_labels("abcd", []).labels == (NONE,) * 4

    def test_single_span(self):
        labeling = char_labels("abcdef", [ErrorSpan("abc", 0, 3, Severity.MINOR, ACC)])
        assert labeling.labels == (MINOR, MINOR, MINOR, NONE, NONE, NONE)

    def test_overlap_takes_max_severity(self):
        spans = [
            ErrorSpan("abcd", 0, 4, Severity.MINOR, ACC),
            ErrorSpan("cdef", 2, 6, Severity.MAJOR, ACC),
        ]
        labeling = char_labels("abcdef", spans)
        assert labeling.labels == (MINOR, MINOR, MAJOR, MAJOR, MAJOR, MAJOR)

    def test_critical_folds_to_major(self):
        labeling = char_labels("ab", [ErrorSpan("ab", 0, 2, Severity.CRITICAL, ACC)])
        assert labeling.labels == (MAJOR, MAJOR)


class TestSegmentCredit:
    def test_identity(self):
        labeling = char_labels("abcdef", [ErrorSpan("abc", 0, 3, Severity.MINOR, ACC)])
        assert segment_credit(labeling, labeling) == (3.0, 3, 3)

    def test_worked_example(self):
        gold = char_labels("abcdef", [ErrorSpan("abc", 0, 3, Severity.MINOR, ACC)])
        pred = char_labels("abcdef", [ErrorSpan("ab", 0, 2, Severity.MAJOR, ACC)])
        assert segment_credit(gold, pred) == (1.0, 2, 3)

    def test_disjoint_spans_no_credit(self):
        gold = char_labels("abcdef", [ErrorSpan("ab", 0, 2, Severity.MINOR, ACC)])
        pred = char_labels("abcdef", [ErrorSpan("ef", 4, 6, Severity.MINOR, ACC)])
        assert segment_credit(gold, pred) == (0.0, 2, 2)

    def test_length_mismatch_rejected(self):
        with pytest.raises(LabelingError):
            segment_credit(CharLabeling((0,)), CharLabeling((0, 0)))

    @given(
        st.lists(st.sampled_from([NONE, MINOR, MAJOR]), min_size=1, max_size=30),
        st.data(),
    )
    def test_symmetry_and_bound(self, gold_labels, data):
        pred_labels = data.draw(
            st.lists(
                st.sampled_from([NONE, MINOR, MAJOR]),
                min_size=len(gold_labels),
                max_size=len(gold_labels),
            )
        )
        gold = CharLabeling(tuple(gold_labels))
        pred = CharLabeling(tuple(pred_labels))
        credit, pred_n, gold_n = segment_credit(gold, pred)
        credit_swapped, swapped_pred_n, swapped_gold_n = segment_credit(pred, gold)
        assert credit == credit_swapped
        # The count columns swap roles along with the labelings.
        assert (swapped_pred_n, swapped_gold_n) == (gold_n, pred_n)
        assert credit <= min(pred_n, gold_n)


class TestCorpusPrf1:
    def test_worked_example(self):
        row = score_segment(
            rating("sysA", 0, "abcdef", [ErrorSpan("abc", 0, 3, Severity.MINOR, ACC)]),
            [ErrorSpan("ab", 0, 2, Severity.MAJOR, ACC)],
        )
        precision, recall, f1 = corpus_prf1([row])
        assert abs(precision - 0.5) <= 1e-12
        assert abs(recall - 1 / 3) <= 1e-12
        assert abs(f1 - 0.4) <= 1e-12

    def test_all_correct(self):
        target = "perfectly scored"
        gold = rating("sysA", 0, target, [err(target, "scored")])
        assert corpus_prf1([score_segment(gold, gold.errors)]) == (1.0, 1.0, 1.0)

    def test_matches_brute_force_oracle(self):
        rng = random.Random(123)
        cases = [random_case(rng) for _ in range(100)]
        rows = [
            score_segment(rating("sysA", i, hyp, gold), pred)
            for i, (hyp, gold, pred) in enumerate(cases)
        ]
        fast = corpus_prf1(rows)
        slow = oracle_prf1(cases)
        assert all(abs(a - b) <= 1e-12 for a, b in zip(fast, slow))

    def test_row_order_invariance(self):
        rng = random.Random(5)
        cases = [random_case(rng) for _ in range(30)]
        rows = [
            score_segment(rating("sysA", i, hyp, gold), pred)
            for i, (hyp, gold, pred) in enumerate(cases)
        ]
        shuffled = rows[:]
        rng.shuffle(shuffled)
        assert corpus_prf1(rows) == corpus_prf1(shuffled)

    def test_mixed_lp_rejected(self):
        rows = [
            score_segment(rating("sysA", 0, "ab"), []),
            score_segment(rating("sysA", 0, "cd", lp="zh-en"), []),
        ]
        with pytest.raises(MetaEvalError):
            corpus_prf1(rows)

    def test_empty_everything_is_zero_not_nan(self):
        row = score_segment(rating("sysA", 0, "clean"), [])
        assert corpus_prf1([row]) == (0.0, 0.0, 0.0)

    def test_macro_differs_from_micro_in_general(self):
        t0, t1 = "aaaa", "bb"
        rows = [
            score_segment(rating("sysA", 0, t0, [err(t0, "aaaa")]), [err(t0, "aa")]),
            score_segment(rating("sysA", 1, t1, [err(t1, "bb")]), [err(t1, "bb")]),
        ]
        assert corpus_prf1(rows) != corpus_prf1_macro(rows)


class TestPerSystemBreakdown:
    def test_single_system_equals_corpus(self):
        target = "graded here"
        row = score_segment(rating("sysA", 0, target, [err(target, "here")]), [err(target, "here")])
        assert per_system_breakdown([row]) == {"sysA": corpus_prf1([row])}

    def test_perfect_and_broken_systems(self):
        target = "well formed output"
        good_gold = rating("good", 0, target, [err(target, "formed")])
        bad_gold = rating("bad", 0, target, [err(target, "formed")])
        rows = [
            score_segment(good_gold, good_gold.errors),
            score_segment(bad_gold, [err(target, "output")]),
        ]
        breakdown = per_system_breakdown(rows)
        assert breakdown["good"] == (1.0, 1.0, 1.0)
        assert breakdown["bad"] == (0.0, 0.0, 0.0)


# --- acc23 ------------------------------------------------------------------------


class TestAcc23:
    def test_single_group_example(self):
        instance = PairwiseInstance(
            group_key=("g", "d", 0),
            items=(("a", 1.0, 1.0), ("b", 2.0, 1.0), ("c", 3.0, 3.0)),
        )
        accuracy, epsilon = acc23([instance])
        assert abs(accuracy - 2 / 3) <= 1e-12

    def test_perfect_metric_without_gold_ties(self):
        instance = PairwiseInstance(
            group_key=("g", "d", 0),
            items=(("a", 1.0, 10.0), ("b", 2.0, 20.0), ("c", 3.0, 30.0)),
        )
        accuracy, epsilon = acc23([instance])
        assert (accuracy, epsilon) == (1.0, 0.0)

    def test_constant_metric_with_all_gold_ties(self):
        instance = PairwiseInstance(
            group_key=("g", "d", 0),
            items=(("a", 5.0, 1.0), ("b", 5.0, 1.0), ("c", 5.0, 1.0)),
        )
        accuracy, _ = acc23([instance])
        assert accuracy == 1.0

    def test_no_pairs_rejected(self):
        lonely = PairwiseInstance(group_key=("g", "d", 0), items=(("a", 1.0, 1.0),))
        with pytest.raises(MetaEvalError):
            acc23([lonely])

    def test_matches_dense_grid_oracle(self):
        rng = random.Random(99)
        for _ in range(40):
            instances = random_instances(rng)
            accuracy, epsilon = acc23(instances)
            assert accuracy == grid_best_accuracy(instances)
            assert oracle_acc_at(instances, epsilon) == accuracy

    def test_tie_break_toward_smaller_epsilon(self):
        # Gold has no ties, and the metric is already perfectly ordered:
        # every epsilon below the smallest gap gives accuracy 1, so 0 wins.
        instance = PairwiseInstance(
            group_key=("g", "d", 0),
            items=(("a", 1.0, 1.0), ("b", 4.0, 2.0), ("c", 9.0, 3.0)),
        )
        _, epsilon = acc23([instance])
        assert epsilon == 0.0


# --- permutation test ---------------------------------------------------------------


def _perfect_and_empty_rows(n_segments=200):
    rows_a = []
    rows_b = []
    for i in range(n_segments):
        target = f"segment {i} has a planted mistake token{i}"
        gold = rating("sysA", i, target, [err(target, f"token{i}")])
        rows_a.append(score_segment(gold, gold.errors))
        rows_b.append(score_segment(gold, []))
    return rows_a, rows_b


class TestPairedPermutationTest:
    def test_identical_inputs_give_p_one(self):
        rows_a, _ = _perfect_and_empty_rows(50)
        assert paired_permutation_test(rows_a, rows_a, n_resamples=200, seed=0) == 1.0

    def test_one_sided_separation_is_significant(self):
        rows_a, rows_b = _perfect_and_empty_rows(200)
        p = paired_permutation_test(rows_a, rows_b, n_resamples=1000, seed=0)
        assert p < 0.05

    def test_swap_symmetry(self):
        rows_a, rows_b = _perfect_and_empty_rows(60)
        p_ab = paired_permutation_test(rows_a, rows_b, n_resamples=500, seed=3)
        p_ba = paired_permutation_test(rows_b, rows_a, n_resamples=500, seed=3)
        assert p_ab == p_ba

    def test_deterministic_given_seed_and_in_unit_interval(self):
        rows_a, rows_b = _perfect_and_empty_rows(30)
        p1 = paired_permutation_test(rows_a, rows_b, n_resamples=300, seed=11)
        p2 = paired_permutation_test(rows_a, rows_b, n_resamples=300, seed=11)
        assert p1 == p2
        assert 0.0 < p1 <= 1.0

    def test_misaligned_keys_rejected(self):
        rows_a, rows_b = _perfect_and_empty_rows(5)
        with pytest.raises(AlignmentError):
            paired_permutation_test(rows_a, rows_b[:-1], n_resamples=10, seed=0)


# --- copy analyses -------------------------------------------------------------------


def _bundle_with_icl_errors():
    test_t = "the cat sat on the mat"
    icl_t = "the cat sat by a mat"
    test = rating("sysT", 0, test_t, [err(test_t, "cat")])
    icl = rating("sysA", 0, icl_t, [err(icl_t, "cat"), err(icl_t, "mat")])
    return PromptBundle(test=test, icl=(icl,), strategy="specialist")


class TestExactMatchStats:
    def test_all_copied_from_icl(self):
        bundle = _bundle_with_icl_errors()
        preds = {bundle.key: [err(bundle.test.target, "cat"), err(bundle.test.target, "mat")]}
        rates = exact_match_stats(preds, [bundle])
        assert rates.icl_match_pct == 100.0
        assert rates.icl_subsuper_match_pct == 100.0

    def test_gold_match_rate(self):
        bundle = _bundle_with_icl_errors()
        preds = {bundle.key: [err(bundle.test.target, "cat"), err(bundle.test.target, "sat")]}
        rates = exact_match_stats(preds, [bundle])
        assert rates.gold_match_pct == 50.0

    def test_super_span_counts_only_under_rule_three(self):
        bundle = _bundle_with_icl_errors()
        preds = {bundle.key: [err(bundle.test.target, "the cat")]}
        rates = exact_match_stats(preds, [bundle])
        assert rates.icl_match_pct == 0.0
        assert rates.icl_subsuper_match_pct == 100.0

    def test_no_predictions(self):
        rates = exact_match_stats({}, [_bundle_with_icl_errors()])
        assert rates.total_predictions == 0


class TestCopyCountComparison:
    def test_identical_sides_cancel(self):
        bundle = _bundle_with_icl_errors()
        preds = {bundle.key: [err(bundle.test.target, "cat")]}
        assert copy_count_comparison(preds, preds, [bundle]) == (0, 0)

    def test_one_sided_copies_counted(self):
        bundle = _bundle_with_icl_errors()
        preds_a = {bundle.key: [err(bundle.test.target, "sat")]}  # not an ICL span
        preds_b = {bundle.key: [err(bundle.test.target, "cat"), err(bundle.test.target, "mat")]}
        assert copy_count_comparison(preds_a, preds_b, [bundle]) == (0, 2)

    def test_shared_predictions_removed_before_counting(self):
        bundle = _bundle_with_icl_errors()
        shared = err(bundle.test.target, "cat")
        preds_a = {bundle.key: [shared]}
        preds_b = {bundle.key: [shared, err(bundle.test.target, "mat")]}
        assert copy_count_comparison(preds_a, preds_b, [bundle]) == (0, 1)


# --- cross-rater matrix -----------------------------------------------------------------


def _multi_rater_fixture():
    """Two raters with disjoint annotations over the same four cells."""
    cells = {}
    for seg in (0, 1):
        for system in ("sysA", "sysB"):
            target = f"first{seg} chunk and second{seg} chunk of {system}"
            cells[(seg, system)] = target
    gold = {}
    for rater, marked in (("r1", "first"), ("r2", "second")):
        gold[rater] = {}
        for (seg, system), target in cells.items():
            span = f"{marked}{seg}"
            gold[rater][("en-de", "doc0", seg, system)] = rating(
                system, seg, target, [err(target, span)], rater=rater
            )
    return gold


class TestCrossRaterMatrix:
    def test_agreement_diagonal_is_one_and_disjoint_off_diagonal_zero(self):
        gold = _multi_rater_fixture()
        preds = {
            rater: {cell: ratings.errors for cell, ratings in by_cell.items()}
            for rater, by_cell in gold.items()
        }
        result = cross_rater_matrix(preds, gold)
        assert result.raters == ("r1", "r2")
        assert result.agreement[0][0] == 1.0
        assert result.agreement[1][1] == 1.0
        assert result.agreement[0][1] == 0.0
        assert result.agreement[1][0] == 0.0
        assert result.f1 == result.agreement

    def test_incomplete_coverage_rejected(self):
        gold = _multi_rater_fixture()
        preds = {
            rater: {cell: ratings.errors for cell, ratings in by_cell.items()}
            for rater, by_cell in gold.items()
        }
        del gold["r2"][("en-de", "doc0", 0, "sysA")]
        with pytest.raises(CoverageError):
            cross_rater_matrix(preds, gold)
