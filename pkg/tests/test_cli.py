"""Tests for the command-line interface: exit codes, outputs, determinism."""

import numpy as np
import pytest

from robustkf.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_REGRESSION,
    main,
    resolve_config_text,
)
from robustkf.harness import metrics_from_csv


@pytest.fixture()
def dt_config(tmp_path):
    path = tmp_path / "dt.ini"
    path.write_text(resolve_config_text("benchmark_dt"))
    return path


def run_cli(*argv) -> int:
    return main(list(argv))


class TestValidate:
    def test_packaged_benchmarks_are_ok(self, capsys):
        assert run_cli("validate", "benchmark_dt") == EXIT_OK
        out = capsys.readouterr().out
        assert "OK: DT system" in out
        assert "U(-0.3, 0.3)" in out
        assert run_cli("validate", "benchmark_ct") == EXIT_OK

    def test_missing_q_names_key(self, tmp_path, capsys):
        bad = resolve_config_text("benchmark_dt").replace("Q = [[1.0]]\n", "")
        path = tmp_path / "bad.ini"
        path.write_text(bad)
        assert run_cli("validate", str(path)) == EXIT_CONFIG
        assert "Q" in capsys.readouterr().err

    def test_reversed_bounds(self, tmp_path, capsys):
        bad = resolve_config_text("benchmark_dt").replace(
            "uniform(-0.3, 0.3)", "uniform(0.3, -0.3)"
        )
        path = tmp_path / "bad.ini"
        path.write_text(bad)
        assert run_cli("validate", str(path)) == EXIT_CONFIG

    def test_unknown_config(self, capsys):
        assert run_cli("validate", "no_such_benchmark") == EXIT_CONFIG
        assert "not found" in capsys.readouterr().err


class TestRun:
    def test_outputs_and_determinism(self, tmp_path, dt_config):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        args = ["run", str(dt_config), "--case", "II", "--seeds", "2",
                "--horizon", "30"]
        assert run_cli(*args, "--out", str(out1)) == EXIT_OK
        assert run_cli(*args, "--out", str(out2)) == EXIT_OK
        assert (out1 / "metrics.csv").exists()
        assert (out1 / "metrics.json").exists()
        traces1 = sorted(p.name for p in out1.glob("trace_*.csv"))
        assert len(traces1) == 20  # 10 grid points x 2 seeds
        for name in traces1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        # metrics identical except the wall-clock column
        t1 = metrics_from_csv((out1 / "metrics.csv").read_text())
        t2 = metrics_from_csv((out2 / "metrics.csv").read_text())
        for r1, r2 in zip(t1.rows, t2.rows):
            assert (r1.filter, r1.state, r1.case, r1.runs) == (
                r2.filter, r2.state, r2.case, r2.runs
            )
            assert r1.mean_abs_err == r2.mean_abs_err
            assert r1.sd_abs_err == r2.sd_abs_err

    def test_prints_table(self, tmp_path, dt_config, capsys):
        out = tmp_path / "r"
        assert run_cli(
            "run", str(dt_config), "--case", "I", "--seeds", "1",
            "--horizon", "20", "--out", str(out),
        ) == EXIT_OK
        printed = capsys.readouterr().out
        assert "robust" in printed and "nominal" in printed
        assert "Case I" in printed


class TestCompare:
    @pytest.fixture()
    def metrics_path(self, tmp_path, dt_config):
        out = tmp_path / "m"
        run_cli("run", str(dt_config), "--case", "I", "--seeds", "2",
                "--horizon", "60", "--out", str(out))
        return out / "metrics.csv"

    def test_self_compare_is_clean(self, metrics_path, capsys):
        assert run_cli("compare", str(metrics_path), str(metrics_path)) == EXIT_OK
        out = capsys.readouterr().out
        for line in out.splitlines()[1:]:
            assert line.split()[-1] == "1.000"

    def test_robust_vs_nominal_ratio_below_one(self, tmp_path, metrics_path, capsys):
        table = metrics_from_csv(metrics_path.read_text())
        rob = [r for r in table.rows if r.filter == "robust"]
        nom = [r for r in table.rows if r.filter == "nominal"]
        from robustkf.harness import MetricsTable, metrics_to_csv

        a = tmp_path / "rob.csv"
        b = tmp_path / "nom.csv"
        a.write_text(metrics_to_csv(MetricsTable(rob)))
        b.write_text(metrics_to_csv(MetricsTable(nom)))
        assert run_cli("compare", str(a), str(b)) == EXIT_OK
        for line in capsys.readouterr().out.splitlines()[1:]:
            assert float(line.split()[-1]) < 1.0
        # the reverse direction is a regression
        assert run_cli("compare", str(b), str(a)) == EXIT_REGRESSION

    def test_schema_mismatch(self, tmp_path, metrics_path, capsys):
        other = tmp_path / "other.csv"
        text = metrics_path.read_text().replace(",x2,", ",x3,")
        other.write_text(text)
        assert run_cli("compare", str(metrics_path), str(other)) == EXIT_CONFIG
        assert "mismatch" in capsys.readouterr().err

    def test_tolerance_suppresses_small_regressions(self, tmp_path, metrics_path):
        table = metrics_from_csv(metrics_path.read_text())
        for r in table.rows:
            r.mean_abs_err *= 1.01
            r.sd_abs_err *= 1.01
        from robustkf.harness import metrics_to_csv

        bumped = tmp_path / "bumped.csv"
        bumped.write_text(metrics_to_csv(table))
        assert run_cli("compare", str(bumped), str(metrics_path)) == EXIT_REGRESSION
        assert run_cli(
            "compare", str(bumped), str(metrics_path), "--tolerance", "0.05"
        ) == EXIT_OK


def test_trace_csv_round_trips_through_reader(tmp_path, dt_config):
    out = tmp_path / "rt"
    run_cli("run", str(dt_config), "--case", "I", "--seeds", "1",
            "--horizon", "10", "--out", str(out))
    from robustkf.harness import trace_from_csv, trace_to_csv

    for path in out.glob("trace_*.csv"):
        text = path.read_text()
        trace = trace_from_csv(text)
        assert trace_to_csv(trace) == text
        assert np.all(np.isfinite(trace.truth))
