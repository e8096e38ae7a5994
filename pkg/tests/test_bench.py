import json
import math

import numpy as np
import pytest

from hedgeforest.bench import (
    CellError,
    ConfigError,
    ExperimentConfig,
    RunManifest,
    bias_variance_check,
    cell_ratios,
    method_list,
    parse_kappa,
    repetition_seeds,
    rmse_ratio,
    run_cell,
    run_experiment,
    run_repetition,
    summarize,
)
from hedgeforest.data import Dataset, generate_friedman
from hedgeforest.forest import ForestConfig

from oracles import quantile_type7


def tiny_config(**kw):
    base = dict(datasets=("friedman1",), n_train=(100,), B=2, kappas=(2.0,),
                forest={"num_trees": 20}, friedman={"n_total": 300, "noise_sd": 1.0, "seed": 0})
    base.update(kw)
    return ExperimentConfig(**base)


class TestRatios:
    def test_identical(self):
        x = np.random.default_rng(0).uniform(0.5, 2, size=10)
        assert rmse_ratio(x, x) == 1.0

    @pytest.mark.parametrize("c", [0.01, 0.5, 2.0, 37.0])
    def test_scaled(self, c):
        x = np.random.default_rng(1).uniform(0.5, 2, size=10)
        assert rmse_ratio(c * x, x) == pytest.approx(math.sqrt(c), rel=1e-12, abs=0)

    def test_zero_denominator(self):
        assert rmse_ratio([0.0, 0.0], [0.0, 0.0], with_flag=True) == (1.0, True)
        assert rmse_ratio([1.0], [1.0], with_flag=True) == (1.0, False)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            rmse_ratio([1.0, 2.0], [1.0])


class TestBiasVariance:
    @pytest.mark.parametrize("e,expected", [((1, 1), (1, 1, 0)), ((-1, 1), (1, 0, 1)), ((0, 2), (2, 1, 1))])
    def test_examples(self, e, expected):
        assert bias_variance_check(e) == pytest.approx(expected)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            bias_variance_check([1.0])


class TestSummary:
    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(2)
        rows = []
        for n in (200, 400):
            for i in range(14):
                rows.append({"dataset": f"d{i}", "n_train": n, "comparison": "HRF/RF",
                             "kappa": "2.0", "estimator": "sample", "ratio": rng.uniform(0.7, 1.1)})
        out = summarize(rows)
        assert [r["n_train"] for r in out] == [200, 400]
        for r in out:
            vals = [x["ratio"] for x in rows if x["n_train"] == r["n_train"]]
            for name, q in [("min", 0), ("q1", 0.25), ("median", 0.5), ("q3", 0.75), ("max", 1)]:
                assert r[name] == quantile_type7(vals, q)
            assert r["n_datasets"] == 14

    def test_kappa_ordering(self):
        rows = [{"n_train": 1, "comparison": "HRF/RF", "kappa": k, "estimator": "sample", "ratio": 1.0}
                for k in ("inf", "2.0", "1.0", "1.5")]
        assert [r["kappa"] for r in summarize(rows)] == ["1.0", "1.5", "2.0", "inf"]

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize([])


class TestConfig:
    def test_kappa_parsing(self):
        assert parse_kappa("inf") == math.inf
        assert parse_kappa("1.5") == 1.5
        with pytest.raises(ConfigError):
            parse_kappa(0.9)
        with pytest.raises(ConfigError):
            parse_kappa("abc")

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"datsets": ["x"]})

    def test_round_trip(self):
        cfg = tiny_config(kappas=(1, 1.5, "inf"), estimators=("sample", "qis"))
        back = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert back == cfg
        assert back.estimators == ("sample", "nonlinear_shrinkage")

    def test_validation(self):
        with pytest.raises(ConfigError):
            tiny_config(B=0)
        with pytest.raises(ConfigError):
            tiny_config(estimators=("bogus",))
        with pytest.raises(ConfigError):
            tiny_config(forest={"trees": 3})

    def test_method_grid(self):
        cfg = tiny_config(kappas=(1, 1.5, 2, 2.5, "inf"), estimators=("sample", "nonlinear"))
        methods = method_list(cfg)
        assert sum(m.name == "HRF" for m in methods) == 10
        assert [m.name for m in methods if m.name != "HRF"] == ["RF", "WRF", "HRFcan"]
        assert len({m.key for m in methods}) == len(methods)

    def test_no_winham_without_bootstrap(self):
        cfg = tiny_config(forest=ForestConfig(num_trees=5, bootstrap=False))
        assert "WRF" not in [m.name for m in method_list(cfg)]


class TestRepetitions:
    def test_seeds(self):
        a = repetition_seeds(0, "x", 200, 0)
        assert a == repetition_seeds(0, "x", 200, 0)
        assert len({a, repetition_seeds(1, "x", 200, 0), repetition_seeds(0, "y", 200, 0),
                    repetition_seeds(0, "x", 400, 0), repetition_seeds(0, "x", 200, 1)}) == 5

    def test_shared_forest_and_split(self):
        cfg = tiny_config(kappas=(1.0, math.inf), estimators=("sample", "nonlinear"))
        ds = generate_friedman(300, seed=0)
        methods = method_list(cfg)
        a = run_repetition(ds, 100, 0, cfg, methods)
        b = run_repetition(ds, 100, 0, cfg, methods[:1])
        assert a["fingerprint"] == b["fingerprint"]
        assert a["mse"][methods[0].key] == b["mse"][methods[0].key]

    def test_hrf_canonical_equals_sample_kappa_one(self):
        cfg = tiny_config(kappas=(1.0,), estimators=("sample",))
        cell = run_cell(generate_friedman(300, seed=0), 100, cfg)
        rows = {r["comparison"]: r for r in cell_ratios(cell)}
        assert rows["HRF/HRFcan"]["ratio"] == 1.0

    def test_threads_do_not_change_results(self):
        cfg = tiny_config(B=3)
        ds = generate_friedman(300, seed=0)
        a, b = run_cell(ds, 100, cfg, threads=1), run_cell(ds, 100, cfg, threads=3)
        for k in a.mse:
            np.testing.assert_array_equal(a.mse[k], b.mse[k])
        assert a.fingerprints == b.fingerprints

    def test_degenerate_residuals(self):
        X = np.random.default_rng(0).uniform(size=(60, 3))
        ds = Dataset(X, np.zeros(60), "flat")
        cfg = tiny_config(datasets=("flat",), n_train=(30,))
        cell = run_cell(ds, 30, cfg)
        hrf = [m.key for m in cell.methods if m.name == "HRF"][0]
        assert cell.degenerate[hrf].all()
        assert np.all(cell.mse[hrf] == 0.0)
        assert all(r["flag"] == 1 for r in cell_ratios(cell))

    def test_n_train_too_large(self):
        with pytest.raises(CellError):
            run_cell(generate_friedman(50, seed=0), 50, tiny_config())


class TestExperiment:
    def test_outputs(self, tmp_path):
        cfg = tiny_config(kappas=(1.0, "inf"))
        manifest = run_experiment(cfg, tmp_path)
        for name in ("raw_mse.csv", "ratios.csv", "summary.csv", "manifest.json"):
            assert (tmp_path / name).is_file()
        raw = (tmp_path / "raw_mse.csv").read_text().splitlines()
        # RF, 2 HRF, WRF, HRFcan over B=2 reps plus the header
        assert len(raw) == 1 + 5 * 2
        back = RunManifest.from_json((tmp_path / "manifest.json").read_text())
        assert back == manifest
        assert back.cells[0]["status"] == "ok"
        assert ExperimentConfig.from_dict(back.config) == cfg

    def test_missing_dataset(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HEDGEFOREST_DATA_DIR", str(tmp_path))
        with pytest.raises(FileNotFoundError):
            run_experiment(tiny_config(datasets=("201_pol",)), tmp_path / "out")

    def test_failed_cell_reported(self, tmp_path):
        cfg = tiny_config(n_train=(100, 300))
        with pytest.raises(CellError):
            run_experiment(cfg, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert [c["status"] for c in manifest["cells"]] == ["ok", "failed"]
