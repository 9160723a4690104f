"""End-to-end experiment orchestration from a single declarative config:
ingest -> build -> render -> evaluate -> parse -> score -> report.

Runs are resumable through the response cache and never abort on item
failures: every failed item is recorded in a partial-failure manifest and
scored as an empty prediction. All artifacts embed the config digest, and
with a deterministic backend two runs of the same config are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .backends import (
    BatchStats,
    DecodingParams,
    DiskCache,
    EvalRequest,
    HttpBackend,
    ParrotBackend,
    ReplayBackend,
    evaluate_batch,
)
from .core import (
    ErrorSpan,
    EvalReport,
    PromptBundle,
    SegmentRow,
    Severity,
    TestSuite,
    mqm_score,
    normalize_category,
)
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    MetaEvalError,
    ParseError,
)
from .icl import BuildOptions, build_bundles, bundle_to_record
from .ingest import load_canonical, sole_round, suite_digest
from .meta import (
    PairwiseInstance,
    acc23,
    corpus_prf1,
    make_report,
    score_segment,
)
from .prompting import (
    ParseStats,
    render_automqm,
    render_da,
    parse_automqm_response,
    parse_da_response,
)

logger = logging.getLogger(__name__)

_STRATEGY_ALIASES = {
    "specialist": "specialist",
    "shuffled": "shuffled",
    "fixed-diff": "fixed_different_source",
    "fixed_different_source": "fixed_different_source",
}


@dataclass
class ExperimentConfig:
    suite: str
    out_dir: str
    systems: str | Sequence[str] = "all"
    strategy: str = "specialist"
    seed: int = 0
    filter: bool = False
    subset_size: int | None = None
    icl_round: str | None = None
    eval_round: str | None = None
    augment_with: str | None = None
    icl_order: str = "system"
    task: str = "automqm"
    backend: Mapping[str, object] = field(default_factory=lambda: {"type": "parrot"})
    temperature: float = 0.0
    max_tokens: int = 8192
    max_in_flight: int = 4
    cache_dir: str | None = None
    per_system: bool = False
    n_seeds: int | None = None  # None: 10 for the randomized baselines, else 1

    def __post_init__(self) -> None:
        if self.strategy not in _STRATEGY_ALIASES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        self.strategy = _STRATEGY_ALIASES[self.strategy]
        if self.task not in ("automqm", "da"):
            raise ConfigError(f"unknown task {self.task!r}")
        backend_type = self.backend.get("type")
        if backend_type not in ("parrot", "replay", "http"):
            raise ConfigError(f"unknown backend type {backend_type!r}")
        if self.task == "da" and backend_type == "parrot":
            raise ConfigError("the parrot backend only produces error annotations")
        if self.n_seeds is not None and self.n_seeds < 1:
            raise ConfigError(f"n_seeds must be >= 1, got {self.n_seeds}")

    def resolved_n_seeds(self) -> int:
        """Randomized baselines report the average of 10 seeded runs unless
        told otherwise."""
        if self.n_seeds is not None:
            return self.n_seeds
        return 10 if self.strategy in ("shuffled", "fixed_different_source") else 1


def load_config(path: str | Path, overrides: Mapping[str, object] | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    missing = {"suite", "out_dir"} - set(raw)
    if missing:
        raise ConfigError(f"config is missing required fields: {sorted(missing)}")
    return ExperimentConfig(**raw)


def make_backend(config: ExperimentConfig):
    params = DecodingParams(temperature=config.temperature, max_tokens=config.max_tokens)
    spec = dict(config.backend)
    backend_type = spec["type"]
    if backend_type == "parrot":
        return ParrotBackend(params=params)
    if backend_type == "replay":
        if "directory" not in spec or "identity" not in spec:
            raise ConfigError("replay backend needs 'directory' and 'identity'")
        return ReplayBackend(spec["directory"], spec["identity"], params=params)
    if "base_url" not in spec or "model" not in spec:
        raise ConfigError("http backend needs 'base_url' and 'model'")
    return HttpBackend(
        base_url=spec["base_url"],
        model=spec["model"],
        token_env=spec.get("token_env"),
        params=params,
    )


def config_digest(config: ExperimentConfig, suite_content_digest: str) -> str:
    """Experiment identity: suite content plus every setting that changes
    predictions. Execution details (paths, concurrency) are excluded."""
    payload = json.dumps(
        {
            "suite": suite_content_digest,
            "systems": list(config.systems) if config.systems != "all" else "all",
            "strategy": config.strategy,
            "seed": config.seed,
            "filter": config.filter,
            "subset_size": config.subset_size,
            "icl_round": config.icl_round,
            "eval_round": config.eval_round,
            "augment_with": config.augment_with,
            "icl_order": config.icl_order,
            "task": config.task,
            "backend": dict(config.backend),
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
            "n_seeds": config.resolved_n_seeds(),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# --- prediction files ---------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    """One line of a prediction dump: error spans, a scalar score, or both."""

    lp: str
    doc_id: str
    seg_id: int
    system: str
    errors: tuple[ErrorSpan, ...] | None = None
    score: float | None = None

    @property
    def cell_key(self) -> tuple[str, str, int, str]:
        return (self.lp, self.doc_id, self.seg_id, self.system)


def prediction_to_record(pred: PredictionRecord) -> dict:
    record: dict = {
        "lp": pred.lp,
        "doc_id": pred.doc_id,
        "seg_id": pred.seg_id,
        "system": pred.system,
    }
    if pred.errors is not None:
        record["errors"] = [
            {
                "span": e.span_text,
                "start": e.start,
                "end": e.end,
                "severity": e.severity.value,
                "category": e.category.render(),
            }
            for e in pred.errors
        ]
    if pred.score is not None:
        record["score"] = pred.score
    return record


def prediction_from_record(record: dict) -> PredictionRecord:
    errors = None
    if "errors" in record:
        errors = tuple(
            ErrorSpan(
                span_text=e["span"],
                start=e["start"],
                end=e["end"],
                severity=Severity(e["severity"]),
                category=normalize_category(e["category"]),
            )
            for e in record["errors"]
        )
    return PredictionRecord(
        lp=record["lp"],
        doc_id=record["doc_id"],
        seg_id=int(record["seg_id"]),
        system=record["system"],
        errors=errors,
        score=record.get("score"),
    )


def save_predictions(predictions: Iterable[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pred in predictions:
            fh.write(json.dumps(prediction_to_record(pred), ensure_ascii=False) + "\n")


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(prediction_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad prediction record: {exc!r}", line_no) from exc
    return out


def rows_from_predictions(
    suite: TestSuite,
    round_id: str,
    predictions: Sequence[PredictionRecord],
    systems: Sequence[str] | None = None,
) -> tuple[list[SegmentRow], int]:
    """Score a prediction dump against the gold round. Gold cells without a
    prediction are scored as empty predictions; the count of such holes is
    returned alongside the rows."""
    by_key = {pred.cell_key: pred for pred in predictions}
    rows = []
    missing = 0
    for system in systems if systems is not None else suite.systems(round_id):
        for seg_index in range(len(suite.segments)):
            gold = suite.rating(round_id, system, seg_index)
            if gold is None:
                continue
            pred = by_key.get(gold.cell_key)
            if pred is None or pred.errors is None:
                missing += 1
                pred_errors: tuple[ErrorSpan, ...] = ()
            else:
                pred_errors = pred.errors
            rows.append(score_segment(gold, pred_errors))
    if missing:
        logger.warning("%d gold cells had no prediction; scored as empty", missing)
    return rows, missing


def instances_from_predictions(
    suite: TestSuite,
    round_id: str,
    predictions: Sequence[PredictionRecord],
) -> list[PairwiseInstance]:
    """Group predicted scores into within-segment pairwise instances; gold
    scores fall back to the negated MQM penalty when the suite carries no
    scalar scores."""
    by_key = {pred.cell_key: pred for pred in predictions}
    instances = []
    for seg_index, segment in enumerate(suite.segments):
        items = []
        for system in suite.systems(round_id):
            gold = suite.rating(round_id, system, seg_index)
            if gold is None:
                continue
            pred = by_key.get(gold.cell_key)
            if pred is None or pred.score is None:
                continue
            gold_score = gold.score if gold.score is not None else -mqm_score(gold)
            items.append((system, float(pred.score), float(gold_score)))
        if len(items) >= 2:
            instances.append(PairwiseInstance(group_key=segment.key, items=tuple(items)))
    if not instances:
        raise MetaEvalError("no segment has two or more scored systems")
    return instances


# --- the run itself -------------------------------------------------------------


@dataclass
class _Item:
    bundle: PromptBundle
    prompt: object | None = None
    response: str | None = None
    errors: tuple[ErrorSpan, ...] | None = None
    score: float | None = None
    failure: tuple[str, str] | None = None


@dataclass
class RunResult:
    report: EvalReport
    predictions: list[PredictionRecord]
    paths: dict[str, Path]


def run_experiment(config: ExperimentConfig) -> RunResult:
    suite = load_canonical(config.suite)
    sdigest = suite_digest(suite)
    digest = config_digest(config, sdigest)

    icl_round = config.icl_round or sole_round(suite)
    opts = BuildOptions(
        strategy=config.strategy,
        seed=config.seed,
        icl_round=icl_round,
        eval_round=config.eval_round,
        filter=config.filter,
        subset_size=config.subset_size,
        augment_with=config.augment_with,
        icl_order=config.icl_order,
    )
    eval_round = opts.resolved_eval_round()

    if config.systems == "all":
        targets = suite.systems(eval_round)
    else:
        targets = tuple(config.systems)
        unknown = set(targets) - set(suite.systems(eval_round))
        if unknown:
            raise ConfigError(f"systems not in round {eval_round!r}: {sorted(unknown)}")

    backend = make_backend(config)
    cache = DiskCache(config.cache_dir) if config.cache_dir else None

    items: list[_Item] = []
    skipped = 0
    empty_icl = 0
    for target in sorted(targets):
        result = build_bundles(suite, target, opts)
        skipped += len(result.skipped)
        empty_icl += result.empty_icl
        items.extend(_Item(bundle=bundle) for bundle in result.bundles)

    render = render_automqm if config.task == "automqm" else render_da
    for item in items:
        try:
            item.prompt = render(item.bundle)
        except DataError as exc:
            item.failure = ("render", f"{type(exc).__name__}: {exc}")

    live = [item for item in items if item.failure is None]
    requests = [EvalRequest(prompt=item.prompt, bundle=item.bundle) for item in live]
    batch_stats = BatchStats()
    try:
        responses: Sequence[str | None] = evaluate_batch(
            requests,
            backend,
            max_in_flight=config.max_in_flight,
            cache=cache,
            stats=batch_stats,
        )
    except BackendError as exc:
        responses = exc.partial
        for index, message in exc.failures:
            live[index].failure = ("evaluate", message)
    for item, response in zip(live, responses):
        if response is not None:
            item.response = response
    logger.info(
        "evaluated %d prompts (%d cache hits, %d calls, %d retries)",
        len(requests),
        batch_stats.cache_hits,
        batch_stats.calls,
        batch_stats.retries,
    )

    parse_totals = ParseStats()
    for item in items:
        if item.failure is not None or item.response is None:
            continue
        try:
            if config.task == "automqm":
                spans, stats = parse_automqm_response(item.response, item.bundle.test.target)
                item.errors = tuple(spans)
                parse_totals.parsed_errors += stats.parsed_errors
                parse_totals.dropped_unalignable += stats.dropped_unalignable
                parse_totals.repaired += stats.repaired
            else:
                item.score = parse_da_response(item.response)
        except DataError as exc:
            item.failure = ("parse", f"{type(exc).__name__}: {exc}")

    predictions = []
    for item in items:
        if item.failure is not None:
            continue
        test = item.bundle.test
        predictions.append(
            PredictionRecord(
                lp=test.lp,
                doc_id=test.doc_id,
                seg_id=test.seg_id,
                system=test.system,
                errors=item.errors if config.task == "automqm" else None,
                score=item.score,
            )
        )

    failures = [item for item in items if item.failure is not None]
    counts = {
        "bundles": len(items),
        "skipped_bundles": skipped,
        "empty_icl_bundles": empty_icl,
        "failures": len(failures),
        "parsed_errors": parse_totals.parsed_errors,
        "dropped_unalignable": parse_totals.dropped_unalignable,
        "repaired": parse_totals.repaired,
    }
    metadata = {
        "config_digest": digest,
        "suite_digest": sdigest,
        "dataset": suite.dataset,
        "lp": suite.lp,
        "task": config.task,
        "strategy": config.strategy,
        "seed": config.seed,
        "icl_round": icl_round,
        "eval_round": eval_round,
        "systems": list(sorted(targets)),
        "backend": backend.identity,
        "counts": counts,
    }

    if config.task == "automqm":
        rows = []
        for item in items:
            # Failed items are scored as empty predictions rather than dropped.
            rows.append(score_segment(item.bundle.test, item.errors or ()))
        report = make_report(rows, metadata=metadata, per_system=config.per_system)
    else:
        scored = {p.cell_key: p for p in predictions if p.score is not None}
        instances = _da_instances(suite, eval_round, sorted(targets), scored)
        accuracy, epsilon = acc23(instances)
        report = EvalReport(
            per_segment=(),
            aggregates={"acc23": accuracy, "epsilon": epsilon},
            metadata=metadata,
        )

    paths = _write_artifacts(config, items, predictions, report)
    return RunResult(report=report, predictions=predictions, paths=paths)


def _da_instances(
    suite: TestSuite,
    eval_round: str,
    targets: Sequence[str],
    scored: Mapping[tuple[str, str, int, str], PredictionRecord],
) -> list[PairwiseInstance]:
    instances = []
    for seg_index, segment in enumerate(suite.segments):
        items = []
        for system in targets:
            gold = suite.rating(eval_round, system, seg_index)
            if gold is None:
                continue
            pred = scored.get(gold.cell_key)
            if pred is None:
                continue
            gold_score = gold.score if gold.score is not None else -mqm_score(gold)
            items.append((system, float(pred.score), float(gold_score)))
        if len(items) >= 2:
            instances.append(PairwiseInstance(group_key=segment.key, items=tuple(items)))
    if not instances:
        raise MetaEvalError("no segment has two or more scored systems")
    return instances


def _report_to_json(report: EvalReport) -> str:
    payload = dict(report.metadata)
    payload["aggregates"] = dict(report.aggregates)
    payload["per_segment"] = [
        [row.lp, row.doc_id, row.seg_id, row.system, row.credit, row.pred_chars, row.gold_chars]
        for row in report.per_segment
    ]
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"


def _write_artifacts(
    config: ExperimentConfig,
    items: Sequence[_Item],
    predictions: Sequence[PredictionRecord],
    report: EvalReport,
) -> dict[str, Path]:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # Every artifact file names the config digest it was produced under.
    tag = str(report.metadata["config_digest"])[:12]
    paths = {
        "bundles": out_dir / f"bundles-{tag}.jsonl",
        "prompts": out_dir / f"prompts-{tag}.jsonl",
        "responses": out_dir / f"responses-{tag}.jsonl",
        "predictions": out_dir / f"predictions-{tag}.jsonl",
        "report": out_dir / f"report-{tag}.json",
    }

    with open(paths["bundles"], "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(bundle_to_record(item.bundle), ensure_ascii=False) + "\n")

    with open(paths["prompts"], "w", encoding="utf-8") as fh:
        for item in items:
            if item.prompt is None:
                continue
            test = item.bundle.test
            record = {
                "lp": test.lp,
                "doc_id": test.doc_id,
                "seg_id": test.seg_id,
                "system": test.system,
                "digest": item.prompt.digest,
                "system_message": item.prompt.system_message,
                "user_message": item.prompt.user_message,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    with open(paths["responses"], "w", encoding="utf-8") as fh:
        for item in items:
            if item.response is None:
                continue
            test = item.bundle.test
            record = {
                "lp": test.lp,
                "doc_id": test.doc_id,
                "seg_id": test.seg_id,
                "system": test.system,
                "digest": item.prompt.digest if item.prompt else None,
                "response": item.response,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    save_predictions(predictions, paths["predictions"])

    failures = [item for item in items if item.failure is not None]
    if failures:
        paths["failures"] = out_dir / f"failures-{tag}.jsonl"
        with open(paths["failures"], "w", encoding="utf-8") as fh:
            for item in failures:
                test = item.bundle.test
                stage, message = item.failure
                record = {
                    "stage": stage,
                    "lp": test.lp,
                    "doc_id": test.doc_id,
                    "seg_id": test.seg_id,
                    "system": test.system,
                    "error": message,
                }
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    paths["report"].write_text(_report_to_json(report), encoding="utf-8")
    return paths


@dataclass
class MultiSeedResult:
    runs: list[RunResult]
    summary: Mapping[str, object]
    path: Path | None


def run_multi_seed(config: ExperimentConfig) -> MultiSeedResult:
    """Run the configured experiment once per seed (seed, seed+1, ...) and
    summarize the aggregate metrics as mean and sample standard deviation,
    matching the usual reporting convention for the randomized baselines."""
    import statistics
    from dataclasses import replace as dc_replace

    n = config.resolved_n_seeds()
    if n == 1:
        single = run_experiment(dc_replace(config, n_seeds=1))
        return MultiSeedResult(runs=[single], summary=dict(single.report.aggregates), path=None)

    suite = load_canonical(config.suite)
    tag = config_digest(config, suite_digest(suite))[:12]
    runs = []
    for i in range(n):
        sub_config = dc_replace(
            config,
            seed=config.seed + i,
            n_seeds=1,
            out_dir=str(Path(config.out_dir) / f"seed{config.seed + i:03d}"),
        )
        runs.append(run_experiment(sub_config))

    metric_names = sorted(
        name for name in runs[0].report.aggregates if "/" not in name
    )
    per_seed = {
        name: [run.report.aggregates[name] for run in runs] for name in metric_names
    }
    summary = {
        "config_digest": tag,
        "strategy": config.strategy,
        "n_seeds": n,
        "seeds": [config.seed + i for i in range(n)],
        "mean": {name: statistics.fmean(values) for name, values in per_seed.items()},
        "stdev": {name: statistics.stdev(values) for name, values in per_seed.items()},
        "runs": [
            {
                "seed": config.seed + i,
                "config_digest": run.report.metadata["config_digest"],
                "aggregates": dict(run.report.aggregates),
            }
            for i, run in enumerate(runs)
        ],
    }
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"seeds_summary-{tag}.json"
    path.write_text(
        json.dumps(summary, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return MultiSeedResult(runs=runs, summary=summary, path=path)


def sweep_icl_sizes(
    config: ExperimentConfig, sizes: Sequence[int]
) -> list[tuple[int, float, float, float]]:
    """Run the experiment once per ICL subset size with a shared permutation
    seed, so the size-n demonstration set nests inside the size-(n+1) one.
    Emits the scaling-curve rows and a sweep CSV under the output directory."""
    from dataclasses import replace as dc_replace

    rows = []
    for n in sizes:
        sub_config = dc_replace(
            config,
            subset_size=n,
            out_dir=str(Path(config.out_dir) / f"icl{n:03d}"),
        )
        result = run_experiment(sub_config)
        agg = result.report.aggregates
        rows.append((n, agg["precision"], agg["recall"], agg["f1"]))

    suite = load_canonical(config.suite)
    tag = config_digest(config, suite_digest(suite))[:12]
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"sweep-{tag}.csv", "w", encoding="utf-8") as fh:
        fh.write("n,precision,recall,f1\n")
        for n, precision, recall, f1 in rows:
            fh.write(f"{n},{precision!r},{recall!r},{f1!r}\n")
    return rows


# --- report tables ---------------------------------------------------------------


def write_tables(table_config: Mapping[str, object], out_dir: str | Path) -> list[Path]:
    """Emit summary CSVs from prediction dumps.

    ``table1.csv`` has one row per metric and one column per dataset holding
    the unweighted mean of per-language-pair F1. Each dataset then gets its
    own breakdown table (``table2.csv``, ``table3.csv``, ...) with
    per-language-pair F1/precision/recall columns, and ``report.json``
    carries the same numbers as one nested document. Values are fractions
    in [0, 1], written at full precision.
    """
    datasets = table_config.get("datasets")
    if not isinstance(datasets, list) or not datasets:
        raise ConfigError("report config needs a non-empty 'datasets' list")

    metrics: list[str] = list(table_config.get("metrics", []))
    scores: dict[tuple[str, str, str], tuple[float, float, float]] = {}
    lps_by_dataset: dict[str, list[str]] = {}

    for dataset in datasets:
        name = dataset["name"]
        lps_by_dataset[name] = []
        for lp_spec in dataset["lps"]:
            lp = lp_spec["lp"]
            lps_by_dataset[name].append(lp)
            suite = load_canonical(lp_spec["gold"])
            if suite.lp != lp:
                raise ConfigError(f"gold suite {lp_spec['gold']} is {suite.lp}, not {lp}")
            round_id = lp_spec.get("round") or sole_round(suite)
            for metric, pred_path in lp_spec["predictions"].items():
                if metric not in metrics:
                    metrics.append(metric)
                records = load_predictions(pred_path)
                rows, _ = rows_from_predictions(suite, round_id, records)
                scores[(name, metric, lp)] = corpus_prf1(rows)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    table1 = out_dir / "table1.csv"
    with open(table1, "w", encoding="utf-8") as fh:
        names = [d["name"] for d in datasets]
        fh.write(",".join(["metric"] + names) + "\n")
        for metric in metrics:
            cells = [metric]
            for name in names:
                values = [
                    scores[(name, metric, lp)][2]
                    for lp in lps_by_dataset[name]
                    if (name, metric, lp) in scores
                ]
                cells.append(repr(sum(values) / len(values)) if values else "")
            fh.write(",".join(cells) + "\n")
    written.append(table1)

    for index, dataset in enumerate(datasets):
        name = dataset["name"]
        path = out_dir / f"table{index + 2}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            header = ["metric"]
            for lp in lps_by_dataset[name]:
                header += [f"{lp}_f1", f"{lp}_precision", f"{lp}_recall"]
            fh.write(",".join(header) + "\n")
            for metric in metrics:
                cells = [metric]
                for lp in lps_by_dataset[name]:
                    if (name, metric, lp) in scores:
                        precision, recall, f1 = scores[(name, metric, lp)]
                        cells += [repr(f1), repr(precision), repr(recall)]
                    else:
                        cells += ["", "", ""]
                fh.write(",".join(cells) + "\n")
        written.append(path)

    document = {
        "metrics": metrics,
        "datasets": {
            name: {
                lp: {
                    metric: dict(
                        zip(
                            ("precision", "recall", "f1"),
                            scores[(name, metric, lp)],
                        )
                    )
                    for metric in metrics
                    if (name, metric, lp) in scores
                }
                for lp in lps
            }
            for name, lps in lps_by_dataset.items()
        },
    }
    doc_path = out_dir / "report.json"
    doc_path.write_text(
        json.dumps(document, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    written.append(doc_path)
    return written
