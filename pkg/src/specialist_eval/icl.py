"""Construction of per-example ICL demonstration sets: the specialist
strategy, the shuffled and fixed-different-source baselines, and the
filter / subset / augment / round-substitution variants.

All builders are deterministic given (suite, options, seed). ICL entries
inside a bundle are ordered by system id (and, for merged rounds, by the
order the rounds were merged in); randomized strategies derive their RNG
streams from the seed plus stable string labels, never from object hashes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from random import Random
from typing import Iterable, Mapping, Sequence

from .core import (
    MERGED_ROUND_SEP,
    PromptBundle,
    RatedTranslation,
    TestSuite,
    nfc,
)
from .errors import AlignmentError, BuildError, ParseError, RoundError
from .ingest import rating_from_record, rating_to_record

logger = logging.getLogger(__name__)

_SHUFFLE_RETRIES = 20


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from a base seed and string labels."""
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


@dataclass(frozen=True)
class BuildOptions:
    strategy: str
    seed: int
    icl_round: str
    eval_round: str | None = None  # defaults to icl_round when it is a plain round
    filter: bool = False
    subset_size: int | None = None
    augment_with: str | None = None
    #: Demonstration order inside a bundle: "system" keeps the deterministic
    #: system-id sort, "shuffled" applies a seeded per-bundle permutation.
    icl_order: str = "system"

    def resolved_eval_round(self) -> str:
        if self.eval_round is not None:
            return self.eval_round
        if MERGED_ROUND_SEP in self.icl_round:
            raise RoundError(
                "eval_round must be explicit when icl_round is merged: "
                f"{self.icl_round!r}"
            )
        return self.icl_round


@dataclass
class BuildResult:
    """Bundles plus the skip/warning bookkeeping the builders accumulate."""

    bundles: list[PromptBundle]
    skipped: list[tuple[tuple[str, str, int, str], str]] = field(default_factory=list)
    empty_icl: int = 0


def _icl_pool(
    suite: TestSuite, icl_round: str, target_system: str, seg_index: int
) -> list[RatedTranslation]:
    """Same-source ratings from every system but the target, ordered by
    system id then merge order."""
    pool: list[RatedTranslation] = []
    for system in suite.systems(icl_round):
        if system == target_system:
            continue
        pool.extend(suite.pool(icl_round, system, seg_index))
    return pool


def build_specialist(
    suite: TestSuite, target_system: str, opts: BuildOptions
) -> BuildResult:
    """One bundle per test segment whose ICL examples are all historical
    ratings of the same source, holding the target system out."""
    eval_round = opts.resolved_eval_round()
    suite.resolve_round(opts.icl_round)
    if target_system not in suite.systems(eval_round):
        raise BuildError(
            f"target system {target_system!r} has no ratings in round {eval_round!r}"
        )

    result = BuildResult(bundles=[])
    for seg_index, segment in enumerate(suite.segments):
        test = suite.rating(eval_round, target_system, seg_index)
        if test is None:
            result.skipped.append(((*segment.key, target_system), "no test rating"))
            continue
        pool = _icl_pool(suite, opts.icl_round, target_system, seg_index)
        if not pool:
            result.empty_icl += 1
            logger.warning("no ICL examples available for %s", segment.key)
        result.bundles.append(
            PromptBundle(
                test=test,
                icl=tuple(pool),
                strategy="specialist",
                seed=opts.seed,
                filter_applied=False,
            )
        )
    return result


def substitute_icl_round(
    suite: TestSuite,
    target_system: str,
    icl_round: str,
    eval_round: str,
    seed: int = 0,
) -> BuildResult:
    """Specialist bundles whose demonstrations come from ``icl_round`` while
    the gold test ratings come from ``eval_round``."""
    opts = BuildOptions(
        strategy="specialist", seed=seed, icl_round=icl_round, eval_round=eval_round
    )
    return build_specialist(suite, target_system, opts)


def merge_rounds(suite: TestSuite, rounds: Sequence[str]) -> str:
    """Name the union pool of several rounds. No de-duplication: the same
    translation may appear once per round it was rated in."""
    if len(rounds) < 2:
        raise RoundError("merging needs at least two rounds")
    for round_id in rounds:
        suite.resolve_round(round_id)
    return MERGED_ROUND_SEP.join(rounds)


def build_shuffled(
    suite: TestSuite, target_system: str, opts: BuildOptions
) -> BuildResult:
    """Permute the global multiset of specialist ICL examples across test
    examples, preserving per-bundle counts exactly. No bundle may contain a
    translation produced by the test system; unsatisfiable assignments are
    reshuffled with a derived seed a bounded number of times."""
    base = build_specialist(suite, target_system, opts)
    examples = [entry for bundle in base.bundles for entry in bundle.icl]

    for attempt in range(_SHUFFLE_RETRIES):
        rng = Random(derive_seed(opts.seed, "shuffled", attempt))
        permuted = list(examples)
        rng.shuffle(permuted)
        bundles: list[PromptBundle] = []
        cursor = 0
        ok = True
        for bundle in base.bundles:
            take = permuted[cursor : cursor + len(bundle.icl)]
            cursor += len(bundle.icl)
            if any(entry.system == bundle.test.system for entry in take):
                ok = False
                break
            bundles.append(
                PromptBundle(
                    test=bundle.test,
                    icl=tuple(take),
                    strategy="shuffled",
                    seed=opts.seed,
                    filter_applied=False,
                )
            )
        if ok:
            return BuildResult(
                bundles=bundles, skipped=base.skipped, empty_icl=base.empty_icl
            )
    raise BuildError(
        f"same-system constraint unsatisfiable after {_SHUFFLE_RETRIES} shuffles"
    )


def build_fixed_different_source(
    suite: TestSuite, target_system: str, opts: BuildOptions
) -> BuildResult:
    """For each test segment, take all ICL examples from one seeded donor
    segment that is strictly different from the test segment but was rated
    by the same rater."""
    base = build_specialist(suite, target_system, opts)

    # Per segment: the hold-one-out pool and its rater set, reused across bundles.
    pools: list[list[RatedTranslation]] = []
    rater_sets: list[frozenset[str]] = []
    for seg_index in range(len(suite.segments)):
        pool = _icl_pool(suite, opts.icl_round, target_system, seg_index)
        pools.append(pool)
        rater_sets.append(frozenset(entry.rater for entry in pool))

    result = BuildResult(bundles=[], skipped=list(base.skipped), empty_icl=0)
    seg_index_of = {seg.key: i for i, seg in enumerate(suite.segments)}
    for bundle in base.bundles:
        test_index = seg_index_of[bundle.test.source_key]
        rater = bundle.test.rater
        wanted = len(bundle.icl)
        candidates = [
            j
            for j in range(len(suite.segments))
            if j != test_index and pools[j] and rater_sets[j] == frozenset({rater})
        ]
        # Prefer donors that preserve the specialist ICL count exactly.
        parity = [j for j in candidates if len(pools[j]) == wanted]
        pick_from = parity or candidates
        if not pick_from:
            result.skipped.append((bundle.key, "no same-rater donor segment"))
            logger.warning("no same-rater donor for %s; bundle skipped", bundle.key)
            continue
        rng = Random(derive_seed(opts.seed, "fixed_diff", *bundle.key))
        donor = rng.choice(pick_from)
        if not parity:
            logger.warning(
                "donor for %s has %d ICL examples (specialist has %d)",
                bundle.key,
                len(pools[donor]),
                wanted,
            )
        result.bundles.append(
            PromptBundle(
                test=bundle.test,
                icl=tuple(pools[donor]),
                strategy="fixed_different_source",
                seed=opts.seed,
                filter_applied=False,
            )
        )
    return result


def filter_exact_matches(
    bundles: Iterable[PromptBundle],
    gold_ratings: Mapping[tuple[str, str, int], RatedTranslation] | None = None,
) -> list[PromptBundle]:
    """Drop every ICL error whose span text equals a gold error span of the
    test translation (category and severity ignored), and drop entire ICL
    entries whose target equals the test translation. Comparisons are raw
    string equality on NFC-normalized text. Idempotent."""
    out = []
    for bundle in bundles:
        gold = bundle.test
        if gold_ratings is not None:
            gold = gold_ratings.get(bundle.test.source_key, bundle.test)
        gold_spans = {nfc(e.span_text) for e in gold.errors}
        test_target = nfc(bundle.test.target)
        kept_icl = []
        for entry in bundle.icl:
            if nfc(entry.target) == test_target:
                continue
            kept_errors = tuple(
                e for e in entry.errors if nfc(e.span_text) not in gold_spans
            )
            if len(kept_errors) != len(entry.errors):
                entry = replace(entry, errors=kept_errors)
            kept_icl.append(entry)
        out.append(
            PromptBundle(
                test=bundle.test,
                icl=tuple(kept_icl),
                strategy=bundle.strategy,
                seed=bundle.seed,
                filter_applied=True,
            )
        )
    return out


def take_nested_subset(
    bundles: Iterable[PromptBundle], n: int, seed: int
) -> list[PromptBundle]:
    """Per bundle, fix one seeded permutation of its ICL list and keep the
    first ``n`` entries, so subsets of growing size nest."""
    if n < 1:
        raise BuildError(f"subset size must be >= 1, got {n}")
    out = []
    for bundle in bundles:
        rng = Random(derive_seed(seed, "subset", *bundle.key))
        permuted = list(bundle.icl)
        rng.shuffle(permuted)
        if n > len(permuted):
            logger.warning(
                "subset size %d exceeds %d available for %s; keeping all",
                n,
                len(permuted),
                bundle.key,
            )
        out.append(replace(bundle, icl=tuple(permuted[:n])))
    return out


def augment_with_shuffled(
    specialist_bundles: Sequence[PromptBundle],
    shuffled_bundles: Sequence[PromptBundle],
) -> list[PromptBundle]:
    """Concatenate per test example: shuffled ICL first, specialist last."""
    by_key = {bundle.key: bundle for bundle in shuffled_bundles}
    if len(by_key) != len(shuffled_bundles):
        raise AlignmentError("duplicate test keys in shuffled bundles")
    if set(by_key) != {bundle.key for bundle in specialist_bundles}:
        raise AlignmentError("specialist and shuffled bundles cover different tests")
    out = []
    for spec in specialist_bundles:
        shuf = by_key[spec.key]
        out.append(
            PromptBundle(
                test=spec.test,
                icl=shuf.icl + spec.icl,
                strategy="augmented",
                seed=shuf.seed,
                filter_applied=spec.filter_applied and shuf.filter_applied,
            )
        )
    return out


def build_bundles(
    suite: TestSuite, target_system: str, opts: BuildOptions
) -> BuildResult:
    """Strategy dispatch plus the augment -> filter -> subset pipeline."""
    builders = {
        "specialist": build_specialist,
        "shuffled": build_shuffled,
        "fixed_different_source": build_fixed_different_source,
    }
    if opts.strategy not in builders:
        raise BuildError(f"unknown strategy {opts.strategy!r}")
    if opts.icl_order not in ("system", "shuffled"):
        raise BuildError(f"unknown ICL order {opts.icl_order!r}")
    if opts.subset_size is not None:
        max_icl = len(suite.systems(opts.icl_round)) - 1
        if not (1 <= opts.subset_size <= max_icl):
            raise BuildError(
                f"subset size {opts.subset_size} outside [1, {max_icl}]"
            )

    result = builders[opts.strategy](suite, target_system, opts)
    bundles = result.bundles
    if opts.icl_order == "shuffled":
        reordered = []
        for bundle in bundles:
            rng = Random(derive_seed(opts.seed, "order", *bundle.key))
            permuted = list(bundle.icl)
            rng.shuffle(permuted)
            reordered.append(replace(bundle, icl=tuple(permuted)))
        bundles = reordered
    if opts.augment_with is not None:
        if opts.augment_with != "shuffled" or opts.strategy != "specialist":
            raise BuildError(
                "augmentation only supports specialist bundles + shuffled ICL"
            )
        shuffled = build_shuffled(suite, target_system, opts)
        bundles = augment_with_shuffled(bundles, shuffled.bundles)
    if opts.filter:
        bundles = filter_exact_matches(bundles)
    if opts.subset_size is not None:
        bundles = take_nested_subset(bundles, opts.subset_size, opts.seed)
    result.bundles = bundles
    return result


# --- bundle files -----------------------------------------------------------


def bundle_to_record(bundle: PromptBundle) -> dict:
    return {
        "strategy": bundle.strategy,
        "seed": bundle.seed,
        "filter_applied": bundle.filter_applied,
        "test": rating_to_record(bundle.test),
        "icl": [rating_to_record(entry) for entry in bundle.icl],
    }


def bundle_from_record(record: dict) -> PromptBundle:
    return PromptBundle(
        test=rating_from_record(record["test"]),
        icl=tuple(rating_from_record(entry) for entry in record["icl"]),
        strategy=record["strategy"],
        seed=record.get("seed"),
        filter_applied=bool(record.get("filter_applied", False)),
    )


def save_bundles(bundles: Iterable[PromptBundle], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for bundle in bundles:
            fh.write(json.dumps(bundle_to_record(bundle), ensure_ascii=False) + "\n")


def load_bundles(path: str | Path) -> list[PromptBundle]:
    bundles = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                bundles.append(bundle_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad bundle record: {exc!r}", line_no) from exc
    return bundles
