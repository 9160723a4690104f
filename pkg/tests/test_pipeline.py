from __future__ import annotations

import json
from dataclasses import replace

import pytest

from specialist_eval.backends import DecodingParams, DiskCache, cache_key
from specialist_eval.errors import ConfigError, MetaEvalError
from specialist_eval.icl import BuildOptions, build_bundles, load_bundles
from specialist_eval.ingest import save_canonical
from specialist_eval.meta import corpus_prf1
from specialist_eval.pipeline import (
    ExperimentConfig,
    PredictionRecord,
    instances_from_predictions,
    load_config,
    load_predictions,
    prediction_from_record,
    prediction_to_record,
    rows_from_predictions,
    run_experiment,
    run_multi_seed,
    save_predictions,
    sweep_icl_sizes,
    write_tables,
)
from specialist_eval.prompting import render_da
from specialist_eval.synth import make_synthetic_suite

from conftest import err, rating


@pytest.fixture
def suite_path(tmp_path):
    suite = make_synthetic_suite(n_segments=8, systems=4, raters=3, seed=21)
    path = tmp_path / "suite.jsonl"
    save_canonical(suite.iter_ratings(), path)
    return path


def parrot_config(suite_path, out_dir, **kw) -> ExperimentConfig:
    return ExperimentConfig(
        suite=str(suite_path), out_dir=str(out_dir), backend={"type": "parrot"}, **kw
    )


class TestConfig:
    def test_load_with_overrides(self, suite_path, tmp_path):
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps({"suite": str(suite_path), "out_dir": str(tmp_path / "o"), "seed": 4}),
            encoding="utf-8",
        )
        config = load_config(config_path, {"seed": 9, "strategy": "shuffled"})
        assert config.seed == 9
        assert config.strategy == "shuffled"

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text('{"suite": "x", "out_dir": "y", "bogus": 1}', encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_parrot_cannot_score_da(self, suite_path, tmp_path):
        with pytest.raises(ConfigError):
            parrot_config(suite_path, tmp_path / "out", task="da")

    def test_fixed_diff_alias(self, suite_path, tmp_path):
        config = parrot_config(suite_path, tmp_path / "out", strategy="fixed-diff")
        assert config.strategy == "fixed_different_source"


class TestPredictionFiles:
    def test_round_trip(self, tmp_path):
        target = "some translated text"
        records = [
            PredictionRecord(
                lp="en-de",
                doc_id="doc0",
                seg_id=0,
                system="sysA",
                errors=(err(target, "translated"),),
            ),
            PredictionRecord(lp="en-de", doc_id="doc0", seg_id=1, system="sysA", score=88.0),
        ]
        path = tmp_path / "preds.jsonl"
        save_predictions(records, path)
        assert load_predictions(path) == records

    def test_record_shape(self):
        record = prediction_to_record(
            PredictionRecord(lp="en-de", doc_id="d", seg_id=1, system="s", score=5.0)
        )
        assert list(record) == ["lp", "doc_id", "seg_id", "system", "score"]
        assert prediction_from_record(record).score == 5.0


class TestRunExperiment:
    def test_parrot_end_to_end(self, suite_path, tmp_path):
        config = parrot_config(suite_path, tmp_path / "out", systems="all", per_system=True)
        result = run_experiment(config)
        assert result.report.aggregates["f1"] > 0
        assert len(result.report.per_segment) == 8 * 4
        digest_tag = result.report.metadata["config_digest"][:12]
        for name in ("bundles", "prompts", "responses", "predictions", "report"):
            assert result.paths[name].exists()
            assert digest_tag in result.paths[name].name
        assert "failures" not in result.paths

    def test_aggregates_recomputable_from_rows(self, suite_path, tmp_path):
        result = run_experiment(parrot_config(suite_path, tmp_path / "out"))
        precision, recall, f1 = corpus_prf1(list(result.report.per_segment))
        assert (precision, recall, f1) == (
            result.report.aggregates["precision"],
            result.report.aggregates["recall"],
            result.report.aggregates["f1"],
        )

    def test_reruns_are_byte_identical(self, suite_path, tmp_path):
        config_a = parrot_config(suite_path, tmp_path / "run_a")
        config_b = parrot_config(suite_path, tmp_path / "run_b")
        paths_a = run_experiment(config_a).paths
        paths_b = run_experiment(config_b).paths
        for name in ("predictions", "report", "bundles", "prompts", "responses"):
            assert paths_a[name].read_bytes() == paths_b[name].read_bytes(), name

    def test_hold_one_out_audited_post_hoc(self, suite_path, tmp_path):
        config = parrot_config(suite_path, tmp_path / "out", systems="all")
        result = run_experiment(config)
        bundles = load_bundles(result.paths["bundles"])
        assert len(bundles) == 8 * 4
        for bundle in bundles:
            assert all(entry.system != bundle.test.system for entry in bundle.icl)

    def test_specialist_beats_shuffled_under_parrot(self, suite_path, tmp_path):
        spec = run_experiment(parrot_config(suite_path, tmp_path / "spec"))
        shuf = run_experiment(
            parrot_config(suite_path, tmp_path / "shuf", strategy="shuffled", seed=1)
        )
        assert spec.report.aggregates["f1"] > shuf.report.aggregates["f1"]

    def test_cache_makes_second_run_identical(self, suite_path, tmp_path):
        cache_dir = tmp_path / "cache"
        config = parrot_config(suite_path, tmp_path / "one", cache_dir=str(cache_dir))
        first = run_experiment(config)
        again = run_experiment(replace(config, out_dir=str(tmp_path / "two")))
        assert first.paths["report"].read_bytes() == again.paths["report"].read_bytes()
        assert any(cache_dir.iterdir())

    def test_backend_failures_produce_manifest_not_abort(self, suite_path, tmp_path):
        config = ExperimentConfig(
            suite=str(suite_path),
            out_dir=str(tmp_path / "out"),
            backend={"type": "replay", "directory": str(tmp_path / "empty"), "identity": "gone"},
        )
        result = run_experiment(config)
        assert result.paths["failures"].exists()
        failures = [json.loads(line) for line in result.paths["failures"].read_text().splitlines()]
        assert all(f["stage"] == "evaluate" for f in failures)
        assert result.report.aggregates["f1"] == 0.0
        assert result.report.metadata["counts"]["failures"] == len(failures) == 8 * 4

    def test_da_with_replayed_oracle_scores(self, suite_path, tmp_path):
        # Record "Score: [[gold]]" responses under the replay identity, then
        # run the DA pipeline against them: a perfect metric calibrates to 1.0.
        suite_dir = tmp_path / "recorded"
        store = DiskCache(suite_dir)
        from specialist_eval.ingest import load_canonical

        suite = load_canonical(suite_path)
        params = DecodingParams()
        for target in ("sys01", "sys02"):
            for bundle in build_bundles(
                suite, target, BuildOptions(strategy="specialist", seed=0, icl_round="round1")
            ).bundles:
                prompt = render_da(bundle)
                store.put(
                    cache_key("oracle:da", prompt, params),
                    f"Score: [[{bundle.test.score}]]",
                )
        config = ExperimentConfig(
            suite=str(suite_path),
            out_dir=str(tmp_path / "da_out"),
            systems=["sys01", "sys02"],
            task="da",
            backend={"type": "replay", "directory": str(suite_dir), "identity": "oracle:da"},
        )
        result = run_experiment(config)
        assert result.report.aggregates["acc23"] == 1.0
        predictions = load_predictions(result.paths["predictions"])
        assert all(p.score is not None for p in predictions)


class TestMultiSeed:
    def test_randomized_strategies_default_to_ten_seeds(self, suite_path, tmp_path):
        shuffled = parrot_config(suite_path, tmp_path / "a", strategy="shuffled")
        fixed = parrot_config(suite_path, tmp_path / "b", strategy="fixed-diff")
        plain = parrot_config(suite_path, tmp_path / "c")
        assert shuffled.resolved_n_seeds() == 10
        assert fixed.resolved_n_seeds() == 10
        assert plain.resolved_n_seeds() == 1

    def test_summary_reports_mean_and_stdev(self, suite_path, tmp_path):
        import statistics

        config = parrot_config(
            suite_path, tmp_path / "multi", strategy="shuffled", n_seeds=3, seed=5
        )
        result = run_multi_seed(config)
        assert len(result.runs) == 3
        f1_values = [run.report.aggregates["f1"] for run in result.runs]
        assert result.summary["mean"]["f1"] == pytest.approx(statistics.fmean(f1_values))
        assert result.summary["stdev"]["f1"] == pytest.approx(statistics.stdev(f1_values))
        assert result.summary["seeds"] == [5, 6, 7]
        assert result.path is not None and result.path.exists()

    def test_single_seed_passthrough(self, suite_path, tmp_path):
        config = parrot_config(suite_path, tmp_path / "single")
        result = run_multi_seed(config)
        assert len(result.runs) == 1
        assert result.path is None
        assert result.summary["f1"] == result.runs[0].report.aggregates["f1"]


class TestSweep:
    def test_rows_and_full_size_matches_plain_run(self, suite_path, tmp_path):
        config = parrot_config(suite_path, tmp_path / "sweep", systems=["sys02"])
        rows = sweep_icl_sizes(config, [1, 2, 3])
        assert [n for n, *_ in rows] == [1, 2, 3]
        plain = run_experiment(
            parrot_config(suite_path, tmp_path / "plain", systems=["sys02"])
        )
        assert rows[-1][3] == plain.report.aggregates["f1"]
        assert list((tmp_path / "sweep").glob("sweep-*.csv"))

    def test_nested_subsets_across_sizes(self, suite_path, tmp_path):
        config = parrot_config(suite_path, tmp_path / "sweep2", systems=["sys02"])
        sweep_icl_sizes(config, [1, 2])
        small = load_bundles(next((tmp_path / "sweep2" / "icl001").glob("bundles-*.jsonl")))
        big = load_bundles(next((tmp_path / "sweep2" / "icl002").glob("bundles-*.jsonl")))
        for a, b in zip(small, big):
            assert b.icl[: len(a.icl)] == a.icl


class TestScoringHelpers:
    def test_rows_from_predictions_scores_missing_as_empty(self, tmp_path):
        suite = make_synthetic_suite(n_segments=3, systems=2, seed=2)
        gold = suite.rating("round1", "sys01", 0)
        records = [
            PredictionRecord(
                lp=gold.lp,
                doc_id=gold.doc_id,
                seg_id=gold.seg_id,
                system="sys01",
                errors=gold.errors,
            )
        ]
        rows, missing = rows_from_predictions(suite, "round1", records)
        assert len(rows) == 6
        assert missing == 5

    def test_instances_require_two_scored_systems(self):
        suite = make_synthetic_suite(n_segments=2, systems=3, seed=2)
        with pytest.raises(MetaEvalError):
            instances_from_predictions(suite, "round1", [])


class TestWriteTables:
    def test_tables_shape(self, tmp_path):
        suite = make_synthetic_suite(n_segments=4, systems=3, seed=8)
        gold_path = tmp_path / "gold.jsonl"
        save_canonical(suite.iter_ratings(), gold_path)

        perfect = [
            PredictionRecord(r.lp, r.doc_id, r.seg_id, r.system, errors=r.errors)
            for r in suite.iter_ratings()
        ]
        empty = [
            PredictionRecord(r.lp, r.doc_id, r.seg_id, r.system, errors=())
            for r in suite.iter_ratings()
        ]
        save_predictions(perfect, tmp_path / "perfect.jsonl")
        save_predictions(empty, tmp_path / "empty.jsonl")

        table_config = {
            "datasets": [
                {
                    "name": "mini",
                    "lps": [
                        {
                            "lp": "en-de",
                            "gold": str(gold_path),
                            "predictions": {
                                "oracle": str(tmp_path / "perfect.jsonl"),
                                "null": str(tmp_path / "empty.jsonl"),
                            },
                        }
                    ],
                }
            ]
        }
        written = write_tables(table_config, tmp_path / "tables")
        table1 = (tmp_path / "tables" / "table1.csv").read_text().splitlines()
        assert table1[0] == "metric,mini"
        cells = dict(line.split(",", 1) for line in table1[1:])
        assert float(cells["oracle"]) == 1.0
        assert float(cells["null"]) == 0.0
        table2 = (tmp_path / "tables" / "table2.csv").read_text().splitlines()
        assert table2[0] == "metric,en-de_f1,en-de_precision,en-de_recall"
        document = json.loads((tmp_path / "tables" / "report.json").read_text())
        assert document["datasets"]["mini"]["en-de"]["oracle"]["f1"] == 1.0
        assert len(written) == 3
