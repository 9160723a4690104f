"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration problem, 2 data error,
3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .core import ErrorSpan, RatedTranslation
from .errors import (
    BackendCallError,
    BackendError,
    ConfigError,
    DataError,
    MetaEvalError,
)
from .icl import BuildOptions, build_bundles, load_bundles, save_bundles
from .ingest import (
    convert_wmt_tsv,
    load_canonical,
    save_canonical,
    sole_round,
    suite_stats,
    validate_pseudo_sxs,
)
from .meta import (
    acc23,
    copy_count_comparison,
    corpus_prf1,
    corpus_prf1_macro,
    cross_rater_matrix,
    exact_match_stats,
    paired_permutation_test,
    per_system_breakdown,
)
from .pipeline import (
    instances_from_predictions,
    load_config,
    load_predictions,
    rows_from_predictions,
    run_multi_seed,
    sweep_icl_sizes,
    write_tables,
)
from .prompting import render_automqm, render_da
from .synth import make_synthetic_suite


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(payload) -> None:
    print(json.dumps(payload, ensure_ascii=False, indent=2))


def _strategy(value: str) -> str:
    names = {"specialist", "shuffled", "fixed-diff"}
    if value not in names:
        raise argparse.ArgumentTypeError(f"choose from {sorted(names)}")
    return {"fixed-diff": "fixed_different_source"}.get(value, value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specialist", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[], help="convert a WMT-style ratings TSV")
    p.add_argument("--wmt-tsv", required=True)
    p.add_argument("--lp", required=True, help="language pair tag, e.g. en-de")
    p.add_argument("--dataset", default="wmt")
    p.add_argument("--round", default="round1")
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="pseudo-SxS and coverage report")
    p.add_argument("--suite", required=True)
    p.add_argument("--round", required=True)

    p = sub.add_parser("build", help="construct ICL prompt bundles")
    p.add_argument("--suite", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--strategy", type=_strategy, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--filter", action="store_true")
    p.add_argument("--subset-n", type=int, default=None)
    p.add_argument("--icl-round", default=None, help="round id, or comma list to merge")
    p.add_argument("--eval-round", default=None)
    p.add_argument("--augment", choices=["shuffled"], default=None)
    p.add_argument("--icl-order", choices=["system", "shuffled"], default="system")
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="render bundles into prompts")
    p.add_argument("--bundles", required=True)
    p.add_argument("--task", choices=["automqm", "da"], required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run a full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--suite", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--strategy", type=_strategy, default=None)
    p.add_argument("--systems", default=None, help='"all" or comma list')
    p.add_argument("--cache-dir", default=None)
    p.add_argument(
        "--seeds",
        type=int,
        default=None,
        help="run count for mean/stdev reporting (default: 10 for the "
        "shuffled and fixed-source baselines, 1 otherwise)",
    )

    p = sub.add_parser("score", help="character-level P/R/F1 of a prediction dump")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--round", default=None)
    p.add_argument("--per-system", action="store_true")
    p.add_argument("--macro", action="store_true", help="also report macro means")

    p = sub.add_parser("acc23", help="pairwise accuracy with tie calibration")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--round", default=None)

    p = sub.add_parser("significance", help="paired permutation test on corpus F1")
    p.add_argument("--pred-a", required=True)
    p.add_argument("--pred-b", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--round", default=None)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("analyze", help="copy, exact-match, cross-rater, and stats analyses")
    asub = p.add_subparsers(dest="analysis", required=True)

    a = asub.add_parser("copies", help="side-only ICL-copied prediction counts")
    a.add_argument("--pred-a", required=True)
    a.add_argument("--pred-b", required=True)
    a.add_argument("--bundles", required=True)

    a = asub.add_parser("matches", help="exact-match rates vs gold and ICL spans")
    a.add_argument("--pred", required=True)
    a.add_argument("--bundles", required=True)

    a = asub.add_parser("crossrater", help="ICL-rater x test-rater F1 matrices")
    a.add_argument("--pred", action="append", required=True, metavar="RATER=FILE")
    a.add_argument("--gold", action="append", required=True, metavar="RATER=FILE")
    a.add_argument("--round", default=None)

    a = asub.add_parser("stats", help="average ICL example and error counts")
    a.add_argument("--suite", required=True)
    a.add_argument("--system", default="all")
    a.add_argument("--filter", action="store_true")
    a.add_argument("--icl-round", default=None)

    p = sub.add_parser("sweep", help="ICL-size scaling sweep with nested subsets")
    p.add_argument("--config", required=True)
    p.add_argument("--sizes", required=True, help="comma list, e.g. 1,2,3")

    p = sub.add_parser("report", help="emit summary CSV tables from prediction dumps")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("synth", help="generate a synthetic suite")
    p.add_argument("--out", required=True)
    p.add_argument("--lp", default="en-de")
    p.add_argument("--segments", type=int, default=12)
    p.add_argument("--systems", type=int, default=4)
    p.add_argument("--raters", type=int, default=3)
    p.add_argument("--rounds", default="round1", help="comma list of round ids")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-pseudo-sxs", action="store_true")
    p.add_argument("--duplicate-prob", type=float, default=0.0)

    return parser


def _load_gold(path: str, round_arg: str | None):
    suite = load_canonical(path)
    return suite, (round_arg or sole_round(suite))


def _pred_error_map(path: str) -> dict[tuple[str, str, int, str], tuple[ErrorSpan, ...]]:
    return {
        pred.cell_key: pred.errors or ()
        for pred in load_predictions(path)
        if pred.errors is not None
    }


def _rater_files(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        rater, eq, path = pair.partition("=")
        if not eq or not rater or not path:
            raise ConfigError(f"expected RATER=FILE, got {pair!r}")
        out[rater] = path
    return out


def _cmd_ingest(args) -> None:
    ratings = convert_wmt_tsv(args.wmt_tsv, lp=args.lp, dataset=args.dataset, round_id=args.round)
    if not ratings:
        raise DataError(f"{args.wmt_tsv}: no rows converted")
    save_canonical(ratings, args.out)
    _emit({"records": len(ratings), "out": args.out})


def _cmd_validate(args) -> None:
    suite = load_canonical(args.suite)
    report = validate_pseudo_sxs(suite, args.round)
    _emit(
        {
            "pseudo_sxs": report.ok and not report.pseudo_sxs_violations,
            "violations": [
                {"segment": list(key), "raters": sorted(raters)}
                for key, raters in report.pseudo_sxs_violations
            ],
            "holes": [
                {"round": r, "system": s, "segment": list(key)}
                for r, s, key in report.coverage_holes
            ],
        }
    )


def _cmd_build(args) -> None:
    suite = load_canonical(args.suite)
    icl_round = args.icl_round or sole_round(suite)
    icl_round = "+".join(icl_round.split(","))
    opts = BuildOptions(
        strategy=args.strategy,
        seed=args.seed,
        icl_round=icl_round,
        eval_round=args.eval_round,
        filter=args.filter,
        subset_size=args.subset_n,
        augment_with=args.augment,
        icl_order=args.icl_order,
    )
    result = build_bundles(suite, args.system, opts)
    save_bundles(result.bundles, args.out)
    _emit(
        {
            "bundles": len(result.bundles),
            "skipped": len(result.skipped),
            "empty_icl": result.empty_icl,
            "out": args.out,
        }
    )


def _cmd_render(args) -> None:
    bundles = load_bundles(args.bundles)
    render = render_automqm if args.task == "automqm" else render_da
    with open(args.out, "w", encoding="utf-8") as fh:
        for bundle in bundles:
            prompt = render(bundle)
            record = {
                "lp": bundle.test.lp,
                "doc_id": bundle.test.doc_id,
                "seg_id": bundle.test.seg_id,
                "system": bundle.test.system,
                "digest": prompt.digest,
                "system_message": prompt.system_message,
                "user_message": prompt.user_message,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    _emit({"prompts": len(bundles), "out": args.out})


def _cmd_run(args) -> None:
    overrides = {
        "suite": args.suite,
        "out_dir": args.out_dir,
        "seed": args.seed,
        "strategy": args.strategy,
        "cache_dir": args.cache_dir,
        "n_seeds": args.seeds,
    }
    if args.systems is not None:
        overrides["systems"] = "all" if args.systems == "all" else args.systems.split(",")
    config = load_config(args.config, overrides)
    result = run_multi_seed(config)
    if len(result.runs) == 1:
        run = result.runs[0]
        _emit(
            {
                "aggregates": dict(run.report.aggregates),
                "counts": run.report.metadata.get("counts", {}),
                "paths": {name: str(path) for name, path in run.paths.items()},
                "out_dir": config.out_dir,
            }
        )
    else:
        _emit(
            {
                "n_seeds": result.summary["n_seeds"],
                "mean": result.summary["mean"],
                "stdev": result.summary["stdev"],
                "summary_path": str(result.path),
                "out_dir": config.out_dir,
            }
        )


def _cmd_score(args) -> None:
    suite, round_id = _load_gold(args.gold, args.round)
    predictions = load_predictions(args.pred)
    if not any(pred.errors is not None for pred in predictions):
        raise MetaEvalError(f"{args.pred} carries no error annotations")
    rows, missing = rows_from_predictions(suite, round_id, predictions)
    precision, recall, f1 = corpus_prf1(rows)
    payload = {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "segments": len(rows),
        "missing_predictions": missing,
    }
    if args.macro:
        pm, rm, fm = corpus_prf1_macro(rows)
        payload.update({"precision_macro": pm, "recall_macro": rm, "f1_macro": fm})
    if args.per_system:
        payload["per_system"] = {
            system: {"precision": p, "recall": r, "f1": f}
            for system, (p, r, f) in per_system_breakdown(rows).items()
        }
    _emit(payload)


def _cmd_acc23(args) -> None:
    suite, round_id = _load_gold(args.gold, args.round)
    predictions = load_predictions(args.pred)
    instances = instances_from_predictions(suite, round_id, predictions)
    accuracy, epsilon = acc23(instances)
    pairs = sum(
        len(inst.items) * (len(inst.items) - 1) // 2 for inst in instances
    )
    _emit({"acc23": accuracy, "epsilon": epsilon, "groups": len(instances), "pairs": pairs})


def _cmd_significance(args) -> None:
    suite, round_id = _load_gold(args.gold, args.round)
    rows_a, _ = rows_from_predictions(suite, round_id, load_predictions(args.pred_a))
    rows_b, _ = rows_from_predictions(suite, round_id, load_predictions(args.pred_b))
    p_value = paired_permutation_test(rows_a, rows_b, n_resamples=args.n, seed=args.seed)
    f1_a = corpus_prf1(rows_a)[2]
    f1_b = corpus_prf1(rows_b)[2]
    _emit({"p_value": p_value, "f1_a": f1_a, "f1_b": f1_b, "delta": f1_a - f1_b})


def _cmd_analyze(args) -> None:
    if args.analysis == "copies":
        bundles = load_bundles(args.bundles)
        a_only, b_only = copy_count_comparison(
            _pred_error_map(args.pred_a), _pred_error_map(args.pred_b), bundles
        )
        _emit({"a_only_copies": a_only, "b_only_copies": b_only})
    elif args.analysis == "matches":
        bundles = load_bundles(args.bundles)
        rates = exact_match_stats(_pred_error_map(args.pred), bundles)
        _emit(
            {
                "gold_match_pct": rates.gold_match_pct,
                "icl_match_pct": rates.icl_match_pct,
                "icl_subsuper_match_pct": rates.icl_subsuper_match_pct,
                "total_predictions": rates.total_predictions,
            }
        )
    elif args.analysis == "crossrater":
        preds = {
            rater: _pred_error_map(path)
            for rater, path in _rater_files(args.pred).items()
        }
        gold: dict[str, dict[tuple[str, str, int, str], RatedTranslation]] = {}
        for rater, path in _rater_files(args.gold).items():
            suite, round_id = _load_gold(path, args.round)
            gold[rater] = {
                rating.cell_key: rating
                for rating in suite.iter_ratings()
                if rating.round == round_id
            }
        result = cross_rater_matrix(preds, gold)
        _emit(
            {
                "raters": list(result.raters),
                "f1": [list(row) for row in result.f1],
                "agreement": [list(row) for row in result.agreement],
            }
        )
    else:
        suite = load_canonical(args.suite)
        avg_icl, avg_errors = suite_stats(
            suite, args.system, args.filter, icl_round=args.icl_round
        )
        _emit({"avg_icl_examples": avg_icl, "avg_icl_errors": avg_errors})


def _cmd_sweep(args) -> None:
    config = load_config(args.config, {})
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes:
        raise ConfigError("no sweep sizes given")
    rows = sweep_icl_sizes(config, sizes)
    _emit(
        [
            {"n": n, "precision": p, "recall": r, "f1": f}
            for n, p, r, f in rows
        ]
    )


def _cmd_report(args) -> None:
    with open(args.config, encoding="utf-8") as fh:
        try:
            table_config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
    written = write_tables(table_config, args.out_dir)
    _emit({"tables": [str(path) for path in written]})


def _cmd_synth(args) -> None:
    suite = make_synthetic_suite(
        lp=args.lp,
        n_segments=args.segments,
        systems=args.systems,
        raters=args.raters,
        rounds=tuple(args.rounds.split(",")),
        seed=args.seed,
        pseudo_sxs=not args.no_pseudo_sxs,
        duplicate_target_prob=args.duplicate_prob,
    )
    save_canonical(suite.iter_ratings(), args.out)
    _emit({"segments": len(suite.segments), "rounds": list(suite.round_ids), "out": args.out})


_COMMANDS = {
    "ingest": _cmd_ingest,
    "validate": _cmd_validate,
    "build": _cmd_build,
    "render": _cmd_render,
    "run": _cmd_run,
    "score": _cmd_score,
    "acc23": _cmd_acc23,
    "significance": _cmd_significance,
    "analyze": _cmd_analyze,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
    "synth": _cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BackendError, BackendCallError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
