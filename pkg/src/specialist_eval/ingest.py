"""Loading, converting, and validating rating corpora.

The canonical storage format is UTF-8 line-delimited JSON, one rated
translation per line with fields in this exact order for reproducible
diffs::

    lp, dataset, round, system, rater, doc_id, seg_id, source, target,
    errors[{span, start, end, severity, category}], score

WMT-style TSV releases vary across years; a single converter isolates
their quirks behind this format.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    ErrorSpan,
    RatedTranslation,
    Severity,
    SourceSegment,
    TestSuite,
    normalize_category,
)
from .errors import (
    ConsistencyError,
    EmptySuiteError,
    ParseError,
    RoundError,
    TagError,
)

logger = logging.getLogger(__name__)

_OPEN_TAG = "<v>"
_CLOSE_TAG = "</v>"

_TSV_SEVERITIES = {
    "minor": Severity.MINOR,
    "major": Severity.MAJOR,
    "critical": Severity.CRITICAL,
    "neutral": Severity.NEUTRAL,
    "no-error": Severity.NEUTRAL,
    "no error": Severity.NEUTRAL,
}


# --- canonical records ----------------------------------------------------


def rating_to_record(rating: RatedTranslation) -> dict:
    """Serialize one rating with the canonical field order."""
    return {
        "lp": rating.lp,
        "dataset": rating.dataset,
        "round": rating.round,
        "system": rating.system,
        "rater": rating.rater,
        "doc_id": rating.doc_id,
        "seg_id": rating.seg_id,
        "source": rating.source,
        "target": rating.target,
        "errors": [
            {
                "span": e.span_text,
                "start": e.start,
                "end": e.end,
                "severity": e.severity.value,
                "category": e.category.render(),
            }
            for e in rating.errors
        ],
        "score": rating.score,
    }


def rating_from_record(record: dict) -> RatedTranslation:
    errors = tuple(
        ErrorSpan(
            span_text=e["span"],
            start=e["start"],
            end=e["end"],
            severity=Severity(e["severity"]),
            category=normalize_category(e["category"]),
        )
        for e in record.get("errors", [])
    )
    return RatedTranslation(
        lp=record["lp"],
        dataset=record["dataset"],
        round=record["round"],
        system=record["system"],
        rater=record["rater"],
        doc_id=record["doc_id"],
        seg_id=int(record["seg_id"]),
        source=record["source"],
        target=record["target"],
        errors=errors,
        score=record.get("score"),
    )


def dumps_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False)


def save_canonical(ratings: Iterable[RatedTranslation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rating in ratings:
            fh.write(dumps_record(rating_to_record(rating)) + "\n")


def suite_from_ratings(ratings: Sequence[RatedTranslation]) -> TestSuite:
    """Assemble a suite from records; segment order is first appearance."""
    if not ratings:
        raise EmptySuiteError("no ratings")
    lps = {r.lp for r in ratings}
    datasets = {r.dataset for r in ratings}
    if len(lps) > 1:
        raise ConsistencyError(f"mixed language pairs in one suite: {sorted(lps)}")
    if len(datasets) > 1:
        raise ConsistencyError(f"mixed datasets in one suite: {sorted(datasets)}")

    segments: list[SourceSegment] = []
    index: dict[tuple[str, str, int], int] = {}
    for r in ratings:
        if r.source_key not in index:
            index[r.source_key] = len(segments)
            segments.append(
                SourceSegment(lp=r.lp, doc_id=r.doc_id, seg_id=r.seg_id, text=r.source)
            )
        elif segments[index[r.source_key]].text != r.source:
            raise ConsistencyError(
                f"segment {r.source_key} has two different source texts"
            )

    cells: dict[str, dict[str, list[RatedTranslation | None]]] = {}
    for r in ratings:
        by_system = cells.setdefault(r.round, {})
        slots = by_system.setdefault(r.system, [None] * len(segments))
        seg_idx = index[r.source_key]
        if slots[seg_idx] is not None:
            raise ConsistencyError(
                f"duplicate rating for round {r.round!r} system {r.system!r} "
                f"segment {r.source_key}"
            )
        slots[seg_idx] = r

    rounds = {
        round_id: {system: tuple(slots) for system, slots in by_system.items()}
        for round_id, by_system in cells.items()
    }
    return TestSuite(
        lp=ratings[0].lp,
        dataset=ratings[0].dataset,
        segments=tuple(segments),
        rounds=rounds,
    )


def load_canonical(path: str | Path) -> TestSuite:
    """Load and fully validate a canonical suite file."""
    ratings: list[RatedTranslation] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", line_no) from exc
            if not isinstance(record, dict):
                raise ParseError("record is not a JSON object", line_no)
            try:
                ratings.append(rating_from_record(record))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad record: {exc!r}", line_no) from exc
    if not ratings:
        raise EmptySuiteError(f"{path}: no records")
    return suite_from_ratings(ratings)


def suite_digest(suite: TestSuite) -> str:
    """Content hash over the canonical serialization, stable across runs."""
    h = hashlib.sha256()
    for rating in suite.iter_ratings():
        h.update(dumps_record(rating_to_record(rating)).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


# --- WMT TSV conversion ----------------------------------------------------


def _split_marked_target(target: str) -> tuple[str, tuple[int, int] | None]:
    """Strip ``<v>``/``</v>`` markup, returning the clean target and the
    marked range in scalar-value offsets. At most one pair is allowed:
    the WMT convention is one error per row."""
    opens = [i for i in _find_all(target, _OPEN_TAG)]
    closes = [i for i in _find_all(target, _CLOSE_TAG)]
    if not opens and not closes:
        return target, None
    if len(opens) != 1 or len(closes) != 1:
        raise TagError(f"expected exactly one marked span: {target!r}")
    open_at, close_at = opens[0], closes[0]
    if close_at < open_at + len(_OPEN_TAG):
        raise TagError(f"unbalanced span markup: {target!r}")
    clean = (
        target[:open_at]
        + target[open_at + len(_OPEN_TAG) : close_at]
        + target[close_at + len(_CLOSE_TAG) :]
    )
    start = open_at
    end = close_at - len(_OPEN_TAG)
    return clean, (start, end)


def _find_all(text: str, needle: str) -> Iterable[int]:
    at = text.find(needle)
    while at != -1:
        yield at
        at = text.find(needle, at + 1)


def convert_wmt_tsv(
    path: str | Path,
    lp: str,
    dataset: str = "wmt",
    round_id: str = "round1",
) -> list[RatedTranslation]:
    """Convert a WMT-style ratings TSV into canonical records.

    Expects a header with columns (system, doc, seg_id, rater, source,
    target, category, severity); ``doc`` doubles as the document id. Each
    row carries at most one ``<v>``-marked error span; rows with category
    no-error (or neutral severity) contribute no span. Rows are aggregated
    into one record per (system, segment).
    """
    grouped: dict[tuple[str, str, int], dict] = {}
    order: list[tuple[str, str, int]] = []

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        required = {"system", "doc", "seg_id", "rater", "source", "target", "category", "severity"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ParseError(
                f"TSV header must contain {sorted(required)}, got {reader.fieldnames}"
            )
        for line_no, row in enumerate(reader, start=2):
            try:
                seg_id = int(row["seg_id"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad seg_id {row.get('seg_id')!r}", line_no) from exc
            key = (row["system"], row["doc"], seg_id)
            clean_target, marked = _split_marked_target(row["target"])

            severity_raw = (row["severity"] or "").strip().casefold()
            if severity_raw not in _TSV_SEVERITIES:
                raise ParseError(f"unknown severity {row['severity']!r}", line_no)
            severity = _TSV_SEVERITIES[severity_raw]
            category = normalize_category(row["category"]) if row["category"].strip() else None
            is_error = (
                severity is not Severity.NEUTRAL
                and category is not None
                and category.main != "no-error"
            )

            entry = grouped.get(key)
            if entry is None:
                entry = {
                    "rater": row["rater"],
                    "source": row["source"],
                    "target": clean_target,
                    "errors": [],
                }
                grouped[key] = entry
                order.append(key)
            else:
                if entry["target"] != clean_target:
                    raise ConsistencyError(
                        f"inconsistent target for {key}: "
                        f"{entry['target']!r} vs {clean_target!r}"
                    )
                if entry["source"] != row["source"]:
                    raise ConsistencyError(f"inconsistent source for {key}")
                if entry["rater"] != row["rater"]:
                    raise ConsistencyError(
                        f"multiple raters for {key}; split multi-rater data "
                        "into per-rater files before converting"
                    )

            if not is_error:
                continue
            if marked is None:
                # Whole-segment errors (e.g. non-translation) carry no markup.
                if not clean_target:
                    logger.warning("error row with empty target at %s; skipped", key)
                    continue
                marked = (0, len(clean_target))
            start, end = marked
            if start == end:
                logger.warning("empty marked span at %s; skipped", key)
                continue
            entry["errors"].append(
                ErrorSpan(
                    span_text=clean_target[start:end],
                    start=start,
                    end=end,
                    severity=severity,
                    category=category,
                )
            )

    ratings = []
    for key in order:
        system, doc_id, seg_id = key
        entry = grouped[key]
        ratings.append(
            RatedTranslation(
                lp=lp,
                dataset=dataset,
                round=round_id,
                system=system,
                rater=entry["rater"],
                doc_id=doc_id,
                seg_id=seg_id,
                source=entry["source"],
                target=entry["target"],
                errors=tuple(entry["errors"]),
            )
        )
    return ratings


# --- validation ------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    """Empty lists mean the round is fully pseudo-SxS and hole-free."""

    pseudo_sxs_violations: tuple[tuple[tuple[str, str, int], frozenset[str]], ...]
    coverage_holes: tuple[tuple[str, str, tuple[str, str, int]], ...]

    @property
    def ok(self) -> bool:
        return not self.pseudo_sxs_violations and not self.coverage_holes


def validate_pseudo_sxs(suite: TestSuite, round_id: str) -> ValidationReport:
    """Check that every segment's ratings in a round share a single rater."""
    violations = []
    holes = []
    parts = suite.resolve_round(round_id)
    for seg_index, segment in enumerate(suite.segments):
        raters: set[str] = set()
        for part in parts:
            for system in sorted(suite.rounds[part]):
                cell = suite.rounds[part][system][seg_index]
                if cell is None:
                    holes.append((part, system, segment.key))
                else:
                    raters.add(cell.rater)
        if len(raters) > 1:
            violations.append((segment.key, frozenset(raters)))
    return ValidationReport(tuple(violations), tuple(holes))


# --- dataset statistics -----------------------------------------------------


def suite_stats(
    suite: TestSuite,
    target_system: str,
    filter_applied: bool,
    icl_round: str | None = None,
) -> tuple[float, float]:
    """Mean ICL-example count and mean total ICL-error count per test
    example for specialist construction; ``target_system="all"`` pools the
    hold-one-out sweep over every system."""
    from .icl import BuildOptions, build_specialist, filter_exact_matches

    icl_round = icl_round or sole_round(suite)
    if target_system == "all":
        targets = suite.systems(icl_round)
    else:
        targets = (target_system,)

    counts: list[int] = []
    error_counts: list[int] = []
    for target in targets:
        opts = BuildOptions(strategy="specialist", seed=0, icl_round=icl_round)
        bundles = build_specialist(suite, target, opts).bundles
        if filter_applied:
            bundles = filter_exact_matches(bundles)
        for bundle in bundles:
            counts.append(len(bundle.icl))
            error_counts.append(sum(len(e.errors) for e in bundle.icl))
    if not counts:
        return (0.0, 0.0)
    return (sum(counts) / len(counts), sum(error_counts) / len(error_counts))


def sole_round(suite: TestSuite) -> str:
    if len(suite.rounds) != 1:
        raise RoundError(
            f"suite has rounds {suite.round_ids}; specify one explicitly"
        )
    return next(iter(suite.rounds))
