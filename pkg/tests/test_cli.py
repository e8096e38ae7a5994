import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hedgeforest.cli import main
from hedgeforest.data import Dataset, generate_friedman, write_tsv


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def read_weights(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["weight"]) for r in rows])


@pytest.fixture
def bench_config(tmp_path):
    cfg = {"datasets": ["friedman1"], "n_train": [200], "B": 2, "kappas": [2.0],
           "forest": {"num_trees": 25}, "friedman": {"n_total": 400, "noise_sd": 1.0, "seed": 0}}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestParser:
    @pytest.mark.parametrize("cmd", [[], ["fetch"], ["weights"], ["bench"], ["summarize"]])
    def test_help(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc:
            main(cmd + ["--help"])
        assert exc.value.code == 0
        assert "usage" in capsys.readouterr().out

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["bench", "--bogus"])
        assert exc.value.code == 2

    def test_missing_subcommand(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "hedgeforest", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and "hedgeforest" in res.stdout


class TestWeights:
    def test_zero_matrix_is_degenerate(self, tmp_path, capsys):
        (tmp_path / "r.csv").write_text("a,b\n0,0\n0,0\n0,0\n")
        code, out, err = run(["weights", str(tmp_path / "r.csv"), "--estimator", "sample"], capsys)
        assert code == 0
        assert json.loads(err)["degenerate"] is True
        assert out.splitlines() == ["tree,weight", "0,0.5", "1,0.5"]

    def test_kappa_below_one(self, tmp_path, capsys):
        (tmp_path / "r.csv").write_text("0,0\n1,1\n")
        with pytest.raises(SystemExit) as exc:
            main(["weights", str(tmp_path / "r.csv"), "--kappa", "0.5"])
        assert exc.value.code == 2

    def test_inf_and_out_file(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        R = rng.normal(size=(40, 4)) * [1.0, 2.0, 3.0, 4.0]
        np.savetxt(tmp_path / "r.csv", R, delimiter=",")
        code, _, err = run(["weights", str(tmp_path / "r.csv"), "--kappa", "inf", "--estimator", "sample",
                            "--out", str(tmp_path / "w.csv")], capsys)
        assert code == 0
        w = read_weights(tmp_path / "w.csv")
        S = np.cov(R, rowvar=False, bias=True)
        Q = S + np.outer(R.mean(0), R.mean(0))
        ref = np.linalg.solve(Q, np.ones(4))
        np.testing.assert_allclose(w, ref / ref.sum(), atol=1e-8)
        assert json.loads(err)["objective"] == pytest.approx(float(ref @ Q @ ref) / ref.sum() ** 2)

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["weights", str(tmp_path / "nope.csv")], capsys)
        assert code == 2 and "error" in err

    def test_garbage_file(self, tmp_path, capsys):
        (tmp_path / "r.csv").write_text("a,b\n1,x\n")
        code, _, _ = run(["weights", str(tmp_path / "r.csv")], capsys)
        assert code == 1

    def test_qis_too_few_rows(self, tmp_path, capsys):
        (tmp_path / "r.csv").write_text("1,2\n3,4\n5,7\n")
        code, _, err = run(["weights", str(tmp_path / "r.csv")], capsys)
        assert code == 1 and "QIS" in err


class TestBench:
    def test_smoke_and_determinism(self, tmp_path, bench_config, capsys):
        code, out, _ = run(["bench", "--config", str(bench_config), "--out-dir", str(tmp_path / "a")], capsys)
        assert code == 0 and "ok" in out
        code, _, _ = run(["bench", "--config", str(bench_config), "--out-dir", str(tmp_path / "b"),
                          "--threads", "2"], capsys)
        assert code == 0
        for name in ("raw_mse.csv", "ratios.csv", "summary.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_flags_override_file(self, tmp_path, bench_config, capsys):
        code, _, _ = run(["bench", "--config", str(bench_config), "--out-dir", str(tmp_path),
                          "--seed", "5", "--kappa", "1", "inf", "--estimator", "sample", "nonlinear",
                          "--B", "1"], capsys)
        assert code == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["master_seed"] == 5
        assert manifest["config"]["kappas"] == ["1.0", "inf"]
        assert manifest["config"]["B"] == 1
        with open(tmp_path / "ratios.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len({(r["kappa"], r["estimator"]) for r in rows}) == 4

    def test_seed_changes_output(self, tmp_path, bench_config, capsys):
        run(["bench", "--config", str(bench_config), "--out-dir", str(tmp_path / "a")], capsys)
        run(["bench", "--config", str(bench_config), "--out-dir", str(tmp_path / "b"), "--seed", "1"], capsys)
        assert (tmp_path / "a" / "raw_mse.csv").read_bytes() != (tmp_path / "b" / "raw_mse.csv").read_bytes()

    def test_bad_config(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"B": 2, "colour": "red"}))
        code, _, err = run(["bench", "--config", str(tmp_path / "c.json")], capsys)
        assert code == 2 and "colour" in err

    def test_unreadable_config(self, tmp_path, capsys):
        code, _, _ = run(["bench", "--config", str(tmp_path / "missing.json")], capsys)
        assert code == 2

    def test_runtime_failure(self, tmp_path, bench_config, capsys):
        code, _, err = run(["bench", "--config", str(bench_config), "--n-train", "400",
                            "--out-dir", str(tmp_path)], capsys)
        assert code == 1 and "failed" in err

    def test_data_dir_env(self, tmp_path, capsys, monkeypatch):
        ds = generate_friedman(150, seed=3)
        write_tsv(Dataset(ds.features, ds.target, "mydata", ds.column_names), tmp_path / "mydata.tsv")
        (tmp_path / "c.json").write_text(json.dumps(
            {"datasets": ["mydata"], "n_train": [100], "B": 1, "forest": {"num_trees": 10}}))
        monkeypatch.setenv("HEDGEFOREST_DATA_DIR", str(tmp_path))
        code, _, _ = run(["bench", "--config", str(tmp_path / "c.json"), "--out-dir", str(tmp_path / "o")], capsys)
        assert code == 0


class TestSummarize:
    def test_from_bench_output(self, tmp_path, bench_config, capsys):
        run(["bench", "--config", str(bench_config), "--out-dir", str(tmp_path)], capsys)
        code, _, _ = run(["summarize", str(tmp_path / "ratios.csv"), "--out", str(tmp_path / "s.csv")], capsys)
        assert code == 0
        assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "summary.csv").read_bytes()
        code, out, _ = run(["summarize", str(tmp_path / "ratios.csv")], capsys)
        assert out == (tmp_path / "summary.csv").read_text()

    def test_missing_file(self, tmp_path, capsys):
        code, _, _ = run(["summarize", str(tmp_path / "none.csv")], capsys)
        assert code == 2


class TestFetch:
    def write_registry(self, tmp_path, entries):
        path = tmp_path / "registry.json"
        path.write_text(json.dumps({"version": 1, "datasets": entries}))
        return path

    def test_local_file_validated(self, tmp_path, capsys):
        ds = generate_friedman(20, seed=0)
        write_tsv(ds, tmp_path / "toy.tsv")
        reg = self.write_registry(tmp_path, [{"name": "toy", "n_total": 20, "d": 10, "path": "toy.tsv"}])
        code, out, _ = run(["fetch", "--registry", str(reg), "--dest", str(tmp_path / "data")], capsys)
        assert code == 0 and "toy: ok 20 x 10" in out
        sums = json.loads((tmp_path / "data" / "checksums.json").read_text())
        assert len(sums["toy"]["sha256"]) == 64

    def test_shape_mismatch(self, tmp_path, capsys):
        write_tsv(generate_friedman(20, seed=0), tmp_path / "pol.tsv")
        reg = self.write_registry(tmp_path, [{"name": "201_pol", "n_total": 15000, "d": 48, "path": "pol.tsv"}])
        code, out, _ = run(["fetch", "--registry", str(reg), "--dest", str(tmp_path)], capsys)
        assert code == 1
        assert "expected 15000 x 48, found 20 x 10" in out

    def test_cached_file_is_not_downloaded(self, tmp_path, capsys, monkeypatch):
        ds = Dataset(np.zeros((40768, 10)), np.zeros(40768), "564_fried", tuple(f"x{j}" for j in range(10)))
        write_tsv(ds, tmp_path / "564_fried.tsv")
        import gzip
        import shutil
        with open(tmp_path / "564_fried.tsv", "rb") as src, gzip.open(tmp_path / "564_fried.tsv.gz", "wb") as dst:
            shutil.copyfileobj(src, dst)

        def no_network(*args, **kwargs):
            raise AssertionError("network access attempted")

        monkeypatch.setattr("urllib.request.urlopen", no_network)
        code, out, _ = run(["fetch", "--only", "564_fried", "--dest", str(tmp_path)], capsys)
        assert code == 0 and "564_fried: ok 40768 x 10" in out

    def test_unknown_name(self, tmp_path, capsys):
        code, _, _ = run(["fetch", "--only", "nope", "--dest", str(tmp_path)], capsys)
        assert code == 2

    def test_network_failure(self, tmp_path, capsys, monkeypatch):
        def offline(*args, **kwargs):
            raise OSError("offline")

        monkeypatch.setattr("urllib.request.urlopen", offline)
        code, out, _ = run(["fetch", "--only", "201_pol", "--dest", str(tmp_path)], capsys)
        assert code == 1 and "FAILED" in out
