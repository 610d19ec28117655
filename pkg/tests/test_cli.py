import csv
import io
import json

import numpy as np
import pytest

from fkwc.cli import BUNDLED_STUDIES, bundled_study, main
from fkwc.core import TENSOR_MAGIC, load_sample
from fkwc.evaluation import TestSpec
from fkwc.simgen import make_scenario, save_scenario, scenario_from_config


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out=out, err=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv("FKWC_SEED", raising=False)


@pytest.fixture
def noise_csv(tmp_path):
    def make(seed, n=60, grid=20):
        p = tmp_path / f"noise{seed}.csv"
        vals = np.random.default_rng(seed).standard_normal((n, grid)).cumsum(axis=1)
        p.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in vals) + "\n")
        return p

    return make


@pytest.fixture
def scenario_file(tmp_path):
    def make(sc):
        p = tmp_path / "scenario.json"
        save_scenario(sc, p)
        return p

    return make


class TestDetect:
    def test_json_schema(self, noise_csv):
        code, out, _ = run(["detect", noise_csv(0), "--depth", "mfhd", "--reps", 99, "--seed", 4])
        assert code == 0
        res = json.loads(out)
        assert set(res) == {"method", "depth", "statistic", "p_value", "changepoints", "n", "seed", "params"}
        assert res["method"] == "amoc" and res["depth"] == "mfhd" and res["seed"] == 4 and res["n"] == 60
        assert 0 < res["p_value"] <= 1

    def test_csv_output(self, noise_csv):
        code, out, _ = run(["--output", "csv", "detect", noise_csv(0), "--method", "epidemic", "--depth", "norm",
                            "--reps", 49])
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0][:3] == ["method", "depth", "statistic"]
        assert rows[1][0] == "epidemic"

    def test_global_flags_after_subcommand(self, noise_csv):
        a = run(["--seed", 3, "detect", noise_csv(1), "--depth", "rp", "--basis-size", 9, "--reps", 19])
        b = run(["detect", noise_csv(1), "--depth", "rp", "--basis-size", 9, "--reps", 19, "--seed", 3])
        assert a == b and a[0] == 0

    def test_reproducible(self, noise_csv):
        argv = ["detect", noise_csv(2), "--depth", "rp-deriv", "--m-projections", 10, "--basis-size", 9,
                "--reps", 99, "--seed", 8]
        assert run(argv)[1] == run(argv)[1]

    def test_scores_out(self, noise_csv, tmp_path):
        path = tmp_path / "scores.csv"
        code, _, _ = run(["detect", noise_csv(3), "--depth", "norm", "--method", "pelt", "--scores-out", path])
        assert code == 0
        rows = list(csv.DictReader(path.open()))
        assert len(rows) == 60 and list(rows[0]) == ["index", "score", "rank"]
        assert sorted(int(r["rank"]) for r in rows) == list(range(1, 61))

    def test_center_flag(self, noise_csv):
        code, out, _ = run(["detect", noise_csv(4), "--depth", "norm", "--method", "pelt", "--center"])
        assert code == 0 and json.loads(out)["params"]["center"] is True

    def test_pelt_on_five_change_file(self, tmp_path, scenario_file):
        sc = make_scenario("five-alternating", 400, grid_size=50, seed=21)
        sample_path = tmp_path / "five.bin"
        assert run(["simulate", scenario_file(sc), "--out", sample_path])[0] == 0
        truth = json.loads((tmp_path / "five.bin.truth.json").read_text())["changepoints"]
        code, out, _ = run(["detect", sample_path, "--method", "pelt", "--depth", "rp-deriv",
                            "--lambda-prime", 0.3])
        assert code == 0
        found = json.loads(out)["changepoints"]
        assert len(found) == 5
        assert max(abs(a - b) for a, b in zip(found, truth)) <= 15

    def test_noise_rarely_rejected(self, noise_csv):
        ps = []
        for seed in range(100):
            code, out, _ = run(["detect", noise_csv(100 + seed), "--depth", "mfhd-deriv", "--reps", 199,
                                "--seed", seed])
            assert code == 0
            ps.append(json.loads(out)["p_value"])
        assert np.mean(np.array(ps) > 0.05) >= 0.9

    def test_invalid_depth(self, noise_csv, capsys):
        code, _, _ = run(["detect", noise_csv(0), "--depth", "tukey"])
        assert code == 2
        assert "mfhd-deriv" in capsys.readouterr().err

    @pytest.mark.parametrize("flag", [["--reps", 0], ["--threads", 0], ["--min-gap", -1], ["--bogus"]])
    def test_invalid_flags(self, noise_csv, flag):
        assert run(["detect", noise_csv(0), *flag])[0] == 2

    def test_basis_too_large_for_grid(self, noise_csv):
        code, _, err = run(["detect", noise_csv(0), "--depth", "rp"])
        assert code == 2 and "cannot represent" in err

    def test_invalid_lambda(self, noise_csv):
        code, _, err = run(["detect", noise_csv(0), "--method", "pelt", "--lambda", -1])
        assert code == 2 and "penalty" in err

    def test_missing_file(self, tmp_path):
        code, _, err = run(["detect", tmp_path / "absent.csv"])
        assert code == 3 and "absent.csv" in err

    @pytest.mark.parametrize("content", [b"1,2,3\n4,5\n", b"1,a\n", TENSOR_MAGIC + b"\x01\x00"])
    def test_malformed_input(self, tmp_path, content):
        p = tmp_path / "bad.dat"
        p.write_bytes(content)
        assert run(["detect", p])[0] == 3


class TestSimulate:
    def test_amoc_truth(self, tmp_path, scenario_file):
        code, out, _ = run(["simulate", scenario_file(make_scenario("amoc", 200, grid_size=10)),
                            "--out", tmp_path / "x.csv"])
        assert code == 0
        assert json.loads(out)["changepoints"] == [100]
        truth = json.loads((tmp_path / "x.csv.truth.json").read_text())
        assert truth == {"n": 200, "changepoints": [100], "seed": 0}
        assert load_sample(tmp_path / "x.csv").n == 200

    def test_same_seed_same_bytes(self, tmp_path, scenario_file):
        path = scenario_file(make_scenario("epidemic", 80, "t3", grid_size=12))
        run(["simulate", path, "--out", tmp_path / "a.bin", "--seed", 5])
        run(["simulate", path, "--out", tmp_path / "b.bin", "--seed", 5, "--truth-out", tmp_path / "b.json"])
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        assert (tmp_path / "a.bin.truth.json").read_text() == (tmp_path / "b.json").read_text()

    def test_seed_precedence(self, tmp_path, scenario_file, monkeypatch):
        sc = make_scenario("epidemic", 60, grid_size=10)
        d = sc.to_dict()
        d.pop("seed")
        path = tmp_path / "s.json"
        path.write_text(json.dumps(d))
        monkeypatch.setenv("FKWC_SEED", "17")
        assert json.loads(run(["simulate", path, "--out", tmp_path / "a.bin"])[1])["seed"] == 17
        assert json.loads(run(["simulate", path, "--out", tmp_path / "a.bin", "--seed", 2])[1])["seed"] == 2
        d["seed"] = 9
        path.write_text(json.dumps(d))
        assert json.loads(run(["simulate", path, "--out", tmp_path / "a.bin"])[1])["seed"] == 9

    def test_bad_env_seed(self, tmp_path, scenario_file, monkeypatch):
        d = make_scenario("none", 5, grid_size=4).to_dict()
        d.pop("seed")
        path = tmp_path / "s.json"
        path.write_text(json.dumps(d))
        monkeypatch.setenv("FKWC_SEED", "abc")
        assert run(["simulate", path, "--out", tmp_path / "a.bin"])[0] == 2

    def test_segments_not_summing_to_n(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"n": 100, "layout": "amoc",
                                 "segments": [{"alpha": 0.2, "beta": 1, "length": 40},
                                              {"alpha": 0.2, "beta": 3, "length": 50}]}))
        code, _, err = run(["simulate", p, "--out", tmp_path / "x.bin"])
        assert code == 2 and "sum to 90" in err

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{not json")
        assert run(["simulate", p, "--out", tmp_path / "x.bin"])[0] == 2

    def test_missing_scenario(self, tmp_path):
        assert run(["simulate", tmp_path / "nope.json", "--out", tmp_path / "x.bin"])[0] == 3

    def test_unwritable_output(self, tmp_path, scenario_file):
        path = scenario_file(make_scenario("none", 5, grid_size=4))
        assert run(["simulate", path, "--out", tmp_path / "missing-dir" / "x.bin"])[0] == 3


class TestStudy:
    def small_config(self, tmp_path, **over):
        cfg = {"kind": "pelt", "seed": 3, "reps": 3, "depth": "norm", "lambda_primes": [0.2, 0.3],
               "scenarios": [{"name": "amoc", "layout": "amoc", "n": 60, "grid_size": 10}]}
        cfg.update(over)
        p = tmp_path / "study.json"
        p.write_text(json.dumps(cfg))
        return p

    def test_writes_reports(self, tmp_path):
        out_dir = tmp_path / "out"
        code, out, _ = run(["study", self.small_config(tmp_path), "--out-dir", out_dir])
        assert code == 0
        assert json.loads(out)["rows"] == 2
        assert (out_dir / "report.csv").read_text().startswith("scenario,lambda_prime")
        assert json.loads((out_dir / "summary.json").read_text())["seed"] == 3
        assert (out_dir / "details.csv").exists()

    def test_reproducible_and_thread_independent(self, tmp_path):
        cfg = self.small_config(tmp_path)
        run(["study", cfg, "--out-dir", tmp_path / "a"])
        run(["study", cfg, "--out-dir", tmp_path / "b", "--threads", 2])
        for name in ("report.csv", "summary.json", "details.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_reps_override(self, tmp_path):
        code, out, _ = run(["study", self.small_config(tmp_path), "--out-dir", tmp_path / "o", "--reps", 2])
        assert code == 0 and json.loads(out)["reps"] == 2

    def test_csv_stdout(self, tmp_path):
        code, out, _ = run(["--output", "csv", "study", self.small_config(tmp_path), "--out-dir", tmp_path / "o"])
        assert code == 0 and out.startswith("scenario,lambda_prime")

    @pytest.mark.parametrize("over", [{"scenarios": []}, {"kind": "nope"}, {"lambda_primes": []},
                                      {"scenarios": [{"layout": "amoc"}]}])
    def test_invalid_config(self, tmp_path, over):
        assert run(["study", self.small_config(tmp_path, **over), "--out-dir", tmp_path / "o"])[0] == 2

    def test_non_object_config(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("[1, 2]")
        assert run(["study", p, "--out-dir", tmp_path / "o"])[0] == 2

    @pytest.mark.parametrize("name", BUNDLED_STUDIES)
    def test_bundled_configs_parse(self, name):
        cfg = bundled_study(name)
        for d in cfg["scenarios"]:
            scenario_from_config(d)
        for t in cfg.get("tests", []):
            TestSpec.from_dict(t)
