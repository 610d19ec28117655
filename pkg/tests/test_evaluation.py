import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fkwc.core import ChangePointSet
from fkwc.detect import Detector, NullMode, amoc_test, epidemic_test
from fkwc.depth import DepthMethod
from fkwc.evaluation import (
    PELT_COLUMNS,
    POWER_COLUMNS,
    TestSpec,
    _NullCache,
    energy_distance,
    mean_abs_count_error,
    rates,
    replicate_p_value,
    replicate_seeds,
    run_pelt_study,
    run_power_study,
    run_study,
)
from fkwc.rankstat import as_ranks, ranks_from_scores

from oracles import energy_distance_loops

point_sets = st.sets(st.integers(1, 99), min_size=1, max_size=10).map(sorted)


def small_power_config(**over):
    cfg = {
        "kind": "power",
        "seed": 11,
        "reps": 12,
        "null_reps": 199,
        "tests": [{"detector": "amoc", "depth": "mfhd"}, {"detector": "epidemic", "depth": "norm", "min_gap_fraction": 0.1}],
        "scenarios": [
            {"name": "amoc-mag", "layout": "amoc", "n": 40, "grid_size": 15},
            {"name": "null", "layout": "none", "n": 40, "grid_size": 15},
        ],
    }
    cfg.update(over)
    return cfg


def small_pelt_config(**over):
    cfg = {
        "kind": "pelt",
        "seed": 12,
        "reps": 4,
        "depth": "norm",
        "lambda_primes": [0.1, 0.3],
        "scenarios": [{"name": "five", "layout": "five-alternating", "n": 120, "grid_size": 15},
                      {"name": "none", "layout": "none", "n": 60, "grid_size": 15}],
    }
    cfg.update(over)
    return cfg


class TestEnergyDistance:
    def test_identical_singletons(self):
        assert energy_distance((10,), (10,)) == 0.0

    def test_separated_singletons(self):
        assert energy_distance((10,), (20,)) == 20.0

    def test_change_point_sets(self):
        a = ChangePointSet(100, (10, 40))
        assert energy_distance(a, a) == 0.0

    def test_empty_is_undefined(self):
        assert energy_distance((), (5,)) is None
        assert energy_distance((5,), ()) is None

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a = sorted(rng.choice(500, size=int(rng.integers(1, 8)), replace=False).tolist())
            b = sorted(rng.choice(500, size=int(rng.integers(1, 8)), replace=False).tolist())
            assert energy_distance(a, b) == energy_distance_loops(a, b)

    @settings(max_examples=200, deadline=None)
    @given(point_sets, point_sets)
    def test_symmetric_and_zero_iff_equal(self, a, b):
        d = energy_distance(a, b)
        assert d == energy_distance(b, a)
        assert d >= 0.0
        assert (d == 0.0) == (a == b)


class TestSeeds:
    def test_replicate_seeds_stable(self):
        a = replicate_seeds(5, 10)
        assert a == replicate_seeds(5, 10)
        assert replicate_seeds(5, 3) == a[:3]
        assert len(set(a)) == 10

    def test_gap(self):
        assert TestSpec(Detector.EPIDEMIC, DepthMethod.MFHD, min_gap_fraction=0.1).gap(200) == 20
        assert TestSpec(Detector.EPIDEMIC, DepthMethod.MFHD, min_gap=3).gap(200) == 3
        assert TestSpec(Detector.EPIDEMIC, DepthMethod.MFHD).gap(200) == 2


class TestReplicatePValue:
    @pytest.mark.parametrize("detector", [Detector.AMOC, Detector.EPIDEMIC])
    def test_tied_ranks_use_own_permutations(self, detector):
        rng = np.random.default_rng(1)
        r = ranks_from_scores(np.round(rng.standard_normal(30)))
        assert not r.distinct
        spec = TestSpec(detector, DepthMethod.MFHD, min_gap=2)
        nulls = _NullCache(NullMode.PERMUTATION, 199, 0)
        p = replicate_p_value(r, spec, nulls, seed=7)
        if detector is Detector.AMOC:
            assert p == amoc_test(r, "permutation", 199, 7).p_value
        else:
            assert p == epidemic_test(r, 2, "permutation", 199, 7).p_value

    def test_distinct_ranks_use_shared_null(self):
        r = as_ranks(np.random.default_rng(2).permutation(50) + 1)
        spec = TestSpec(Detector.AMOC, DepthMethod.MFHD)
        nulls = _NullCache(NullMode.PERMUTATION, 299, 3)
        p = replicate_p_value(r, spec, nulls, seed=99)
        stat = amoc_test(r, "asymptotic").statistic
        null = nulls.get(Detector.AMOC, 50, 2)
        assert p == (1 + np.sum(null >= stat - 1e-9 * max(1.0, stat))) / 300

    def test_pelt_rejected(self):
        with pytest.raises(ValueError):
            replicate_p_value(as_ranks([1, 2, 3, 4]), TestSpec(Detector.PELT, DepthMethod.MFHD),
                              _NullCache(NullMode.PERMUTATION, 9, 0), 0)


class TestPowerStudy:
    def test_rows_and_columns(self):
        report = run_power_study(small_power_config())
        assert report.kind == "power" and report.reps == 12
        assert len(report.rows) == 4
        parsed = list(csv.DictReader(io.StringIO(report.to_csv())))
        assert tuple(parsed[0].keys()) == POWER_COLUMNS
        for row in report.rows:
            assert 0.0 <= row["rate"] <= 1.0
        assert report.rows[0]["effect"] == "beta 1->3"
        assert rates(report)[("null", "amoc:mfhd")] == report.rows[2]["rate"]

    def test_reproducible_bytes(self):
        a = run_power_study(small_power_config())
        b = run_power_study(small_power_config())
        c = run_power_study(small_power_config(), threads=2)
        assert a.to_csv() == b.to_csv() == c.to_csv()
        assert a.to_json() == b.to_json()
        assert json.loads(a.to_json())["seed"] == 11

    def test_seed_changes_output(self):
        a = run_power_study(small_power_config(reps=30))
        b = run_power_study(small_power_config(reps=30), seed=12)
        assert a.to_csv() != b.to_csv()

    def test_power_increases_with_effect(self):
        ratios = [1.0, 1.5, 2.0, 3.0]
        cfg = small_power_config(
            reps=60,
            tests=[{"detector": "amoc", "depth": "mfhd"}],
            scenarios=[{"name": f"b{r}", "layout": "amoc", "n": 60, "grid_size": 15, "changed_beta": r} for r in ratios],
        )
        rows = run_power_study(cfg).rows
        inversions = [(a, b) for a, b in zip(rows[:-1], rows[1:]) if b["rate"] < a["rate"]]
        assert len(inversions) <= 1
        for a, b in inversions:
            assert a["rate"] - b["rate"] <= 2 * max(a["se"], b["se"])
        assert rows[-1]["rate"] > rows[0]["rate"]

    @pytest.mark.parametrize("over,match", [({"scenarios": []}, "scenarios"), ({"tests": []}, "tests"),
                                            ({"reps": 0}, "reps")])
    def test_invalid(self, over, match):
        with pytest.raises(ValueError, match=match):
            run_power_study(small_power_config(**over))


class TestPeltStudy:
    def test_rows(self):
        report = run_pelt_study(small_pelt_config())
        assert len(report.rows) == 4
        assert len(report.details) == 2 * 4 + 2 * 4
        parsed = list(csv.DictReader(io.StringIO(report.to_csv())))
        assert tuple(parsed[0].keys()) == PELT_COLUMNS
        for row in report.rows:
            assert 0.0 <= row["failure_fraction"] <= 1.0
            assert row["mean_abs_error"] >= 0.0
        none_rows = [r for r in report.rows if r["scenario"] == "none"]
        assert all(r["failure_fraction"] == 0.0 for r in none_rows)
        assert set(mean_abs_count_error(report, "five")) == {0.1, 0.3}

    def test_details_consistent(self):
        report = run_pelt_study(small_pelt_config())
        for d in report.details:
            if d["energy"] is None:
                assert d["ell"] == 0 or d["ell_hat"] == 0
            if d["ell"] == 0:
                assert d["energy"] is None

    def test_reproducible(self):
        a = run_study(small_pelt_config())
        b = run_study(small_pelt_config(), threads=2)
        assert a.to_csv() == b.to_csv() and a.details_csv() == b.details_csv()

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            run_study({"kind": "power-ish"})

    def test_empty_lambdas(self):
        with pytest.raises(ValueError):
            run_pelt_study(small_pelt_config(lambda_primes=[]))
