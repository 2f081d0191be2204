import csv

import numpy as np
import pytest

from shufflevar import MeasurementSeries, build_design, mom_estimate, shuffle_estimate
from shufflevar.cli import main
from shufflevar.io import write_dataset
from shufflevar.permutations import reverse_perm
from shufflevar.sweeps import read_sweep_table

SCHED = ["a", "a", "b", "b", "a", "b"]


@pytest.fixture
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    design = build_design(SCHED, ["x"] * 3 + ["y"] * 3)
    series = [
        MeasurementSeries(rng.standard_normal(6), series_id=f"v{j}") for j in range(2)
    ]
    path = tmp_path / "data.csv"
    write_dataset(path, design, series)
    return path, design, series


def read_csv_rows(path):
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return header, [dict(zip(header, r)) for r in body]


class TestEstimate:
    def test_matches_direct_api(self, dataset, tmp_path):
        path, design, series = dataset
        out = tmp_path / "est.csv"
        rc = main(
            ["estimate", "-i", str(path), "--permutation", "reverse",
             "--estimators", "shuffle,mom", "-o", str(out)]
        )
        assert rc == 0
        header, rows = read_csv_rows(out)
        assert header == [
            "series_id", "method", "alpha", "sigma2_A_raw", "sigma2_A",
            "noise_level", "ms_between", "omega2", "flags",
        ]
        assert len(rows) == 4  # 2 series x 2 methods
        P = reverse_perm(design.T)
        for rec in rows:
            s = next(s for s in series if s.series_id == rec["series_id"])
            if rec["method"] == "shuffle":
                e = shuffle_estimate(s.values, design, P)
                assert float(rec["alpha"]) == pytest.approx(e.alpha, rel=1e-15)
            else:
                e = mom_estimate(s.values, design)
                assert rec["alpha"] == ""
            assert float(rec["sigma2_A_raw"]) == pytest.approx(e.sigma2_A_raw, rel=1e-15)
            assert float(rec["omega2"]) == pytest.approx(e.omega2, rel=1e-15)

    def test_config_comment_header(self, dataset, tmp_path):
        path, _, _ = dataset
        out = tmp_path / "est.csv"
        main(["estimate", "-i", str(path), "-o", str(out)])
        head = out.read_text().splitlines()[:6]
        assert all(line.startswith("#") for line in head)
        assert any("permutation = reverse" in line for line in head)

    def test_trivial_permutation_soft_failure(self, tmp_path):
        # reversal only relabels this schedule, so shuffle rows become
        # error records while mom rows still succeed
        design = build_design(["a", "a", "b", "b"])
        series = [MeasurementSeries([1.0, 2.0, 3.0, 4.0], series_id="v0")]
        data = tmp_path / "d.csv"
        write_dataset(data, design, series)
        out = tmp_path / "est.csv"
        rc = main(
            ["estimate", "-i", str(data), "--permutation", "reverse",
             "--estimators", "shuffle,mom", "-o", str(out)]
        )
        assert rc == 0
        _, rows = read_csv_rows(out)
        shuffle_row = next(r for r in rows if r["method"] == "shuffle")
        assert shuffle_row["flags"] == "TrivialPermutation"
        assert shuffle_row["sigma2_A_raw"] == "nan"
        mom_row = next(r for r in rows if r["method"] == "mom")
        assert float(mom_row["sigma2_A_raw"]) == pytest.approx(1.75)

    def test_threads_identical_output(self, dataset, tmp_path):
        path, _, _ = dataset
        out1, out4 = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["estimate", "-i", str(path), "-o", str(out1)])
        main(["estimate", "-i", str(path), "--threads", "4", "-o", str(out4)])
        strip = lambda p: [l for l in p.read_text().splitlines() if "threads" not in l]
        assert strip(out1) == strip(out4)

    def test_missing_input_exit_code(self, tmp_path, capsys):
        rc = main(["estimate", "-i", str(tmp_path / "missing.csv")])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestAlpha:
    def test_schedule_report(self, tmp_path):
        out = tmp_path / "alpha.txt"
        rc = main(
            ["alpha", "--schedule", ",".join(SCHED), "--permutation", "reverse",
             "-o", str(out)]
        )
        assert rc == 0
        text = out.read_text()
        assert "alpha = 0.111111111111" in text
        assert "trivial = no" in text

    def test_gap_with_noise(self, tmp_path):
        out = tmp_path / "alpha.txt"
        rc = main(
            ["alpha", "--schedule", ",".join(SCHED), "--permutation", "reverse",
             "--noise", "exp-nugget:0.7,30", "-o", str(out)]
        )
        assert rc == 0
        # reversal conserves stationary noise exactly
        gap_line = next(
            l for l in out.read_text().splitlines() if "noise_conservation_gap" in l
        )
        assert abs(float(gap_line.split("=")[1])) < 1e-12

    def test_requires_schedule_or_input(self):
        with pytest.raises(SystemExit):
            main(["alpha", "--permutation", "reverse"])


class TestDiagnose:
    def test_candidates_listed(self, tmp_path):
        out = tmp_path / "diag.txt"
        rc = main(
            ["diagnose", "--schedule", ",".join(SCHED), "--noise",
             "exp-nugget:0.7,30", "-o", str(out)]
        )
        assert rc == 0
        text = out.read_text()
        assert "consistency_diagnostic" in text
        for spec in ("reverse:", "shift:1:", "block-random:", "odd-even:"):
            assert spec in text
        assert "gap =" in text


class TestSimulate:
    def test_preset_block_small(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = main(
            ["simulate", "--preset", "block", "--replicates", "3",
             "--seed", "1", "-o", str(out)]
        )
        assert rc == 0
        rows = read_sweep_table(out)
        assert len(rows) == 10  # default grid
        assert all(r.n_reps == 3 for r in rows)

    def test_config_file(self, tmp_path):
        ini = tmp_path / "sweep.ini"
        ini.write_text(
            "[sweep]\n"
            "kind = timeseries\n"
            "m = 8\nn = 3\n"
            "sigma2_A_grid = 0.0, 0.4\n"
            "replicates = 5\nseed = 2\n"
            "estimators = shuffle, mom\n"
        )
        out = tmp_path / "sweep.csv"
        rc = main(["simulate", "--config", str(ini), "-o", str(out)])
        assert rc == 0
        rows = read_sweep_table(out)
        assert [r.estimator for r in rows] == ["shuffle", "mom"] * 2

    def test_requires_preset_or_config(self):
        with pytest.raises(SystemExit):
            main(["simulate"])

    def test_matches_library_result(self, tmp_path):
        from shufflevar.sweeps import SweepConfig, run_timeseries_sweep

        ini = tmp_path / "sweep.ini"
        ini.write_text(
            "[sweep]\nkind = timeseries\nm = 8\nn = 3\n"
            "sigma2_A_grid = 0.4\nreplicates = 6\nseed = 9\n"
        )
        out = tmp_path / "sweep.csv"
        main(["simulate", "--config", str(ini), "-o", str(out)])
        rows = read_sweep_table(out)
        direct = run_timeseries_sweep(
            SweepConfig(m=8, n=3, sigma2_A_grid=(0.4,), replicates=6, seed=9)
        )
        assert rows == direct.rows


class TestParser:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])
