"""Command-line interface: validation, determinism, report shape, demo data."""

import json
from pathlib import Path

import numpy as np
import yaml

from changediag import cli


def write_cfg(tmp_path: Path, text: str, name="run.cfg") -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


TINY = """
model:
  constructor: multichannel_simultaneous
procedures:
  - {variant: adaptive, b: 3.0, h: 2.0}
grids:
  b: {start: 0.0, step: 0.01, stop: 3.5}
  h: {start: 0.05, step: 0.05, stop: 3.5}
  nu: [0, 10]
mc:
  num_paths: 400
  horizon: 1500
  base_seed: 5
design:
  alpha: 0.05
output:
  dir: PLACEHOLDER
"""


def tiny_cfg(tmp_path, out="out1", **edits):
    raw = yaml.safe_load(TINY)
    raw["output"]["dir"] = str(tmp_path / out)
    for dotted, value in edits.items():
        node = raw
        keys = dotted.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    return write_cfg(tmp_path, yaml.safe_dump(raw), name=f"{out}.cfg")


class TestValidation:
    def test_missing_model_names_field(self, tmp_path, capsys):
        p = write_cfg(tmp_path, "mc: {base_seed: 1}\n")
        code = cli.main(["calibrate", "--config", str(p)])
        assert code == cli.EXIT_VALIDATION
        assert "model" in capsys.readouterr().err

    def test_missing_seed_rejected(self, tmp_path, capsys):
        p = write_cfg(tmp_path, "model: {constructor: gaussian_mean_shift, thetas: [1.0]}\n")
        code = cli.main(["calibrate", "--config", str(p)])
        assert code == cli.EXIT_VALIDATION
        assert "base_seed" in capsys.readouterr().err

    def test_delay_allowance_must_exceed_one(self, tmp_path, capsys):
        p = tiny_cfg(tmp_path, out="rbad", **{"design.r": [1.0]})
        code = cli.main(["design", "--config", str(p)])
        assert code == cli.EXIT_VALIDATION
        assert "design.r" in capsys.readouterr().err

    def test_unknown_variant_rejected(self, tmp_path, capsys):
        p = tiny_cfg(tmp_path, out="vbad", **{"procedures": [{"variant": "bogus"}]})
        code = cli.main(["evaluate", "--config", str(p)])
        assert code == cli.EXIT_VALIDATION
        assert "variant" in capsys.readouterr().err

    def test_evaluate_needs_explicit_thresholds(self, tmp_path, capsys):
        p = tiny_cfg(tmp_path, out="thr", **{"procedures": [{"variant": "adaptive"}]})
        code = cli.main(["evaluate", "--config", str(p)])
        assert code == cli.EXIT_VALIDATION
        assert ".b" in capsys.readouterr().err

    def test_generalized_needs_window(self, tmp_path, capsys):
        p = tiny_cfg(tmp_path, out="win", **{"procedures": [{"variant": "generalized", "b": 1.0, "h": 1.0}]})
        code = cli.main(["evaluate", "--config", str(p)])
        assert code == cli.EXIT_VALIDATION
        assert ".m" in capsys.readouterr().err

    def test_invalid_model_parameters_exit_as_validation(self, tmp_path, capsys):
        p = tiny_cfg(
            tmp_path, out="negtheta",
            **{
                "model": {"constructor": "gaussian_mean_shift", "thetas": [-1.0]},
                "procedures": [{"variant": "min_cusum", "b": 1.0}],
            },
        )
        code = cli.main(["evaluate", "--config", str(p)])
        assert code == cli.EXIT_VALIDATION
        assert "positive" in capsys.readouterr().err


class TestPrintConfig:
    def test_defaults_are_explicit_and_idempotent(self, tmp_path, capsys):
        p = tiny_cfg(tmp_path, out="pc")
        assert cli.main(["evaluate", "--config", str(p), "--print-config"]) == cli.EXIT_OK
        text = capsys.readouterr().out
        resolved = yaml.safe_load(text)
        for key in ("model", "procedures", "grids", "mc", "design", "demo", "output"):
            assert key in resolved
        assert resolved["mc"]["workers"] == 1           # default made explicit
        assert resolved["grids"]["nu"] == [0, 10]
        # normalizing the echo again changes nothing
        assert cli._normalize(resolved) == resolved


class TestDeterminismAndRoundTrip:
    def test_reports_byte_identical_across_workers(self, tmp_path):
        p1 = tiny_cfg(tmp_path, out="d1", **{"mc.workers": 1})
        p2 = tiny_cfg(tmp_path, out="d1", **{"mc.workers": 7})
        p2 = write_cfg(tmp_path, p2.read_text(), name="d2.cfg")
        assert cli.main(["evaluate", "--config", str(p1)]) == cli.EXIT_OK
        first = (tmp_path / "d1" / "evaluate_report.json").read_bytes()
        assert cli.main(["evaluate", "--config", str(p2)]) == cli.EXIT_OK
        second = (tmp_path / "d1" / "evaluate_report.json").read_bytes()
        assert first == second

    def test_seed_override_changes_results(self, tmp_path):
        p = tiny_cfg(tmp_path, out="s1")
        cli.main(["evaluate", "--config", str(p)])
        base = json.loads((tmp_path / "s1" / "evaluate_report.json").read_text())
        cli.main(["evaluate", "--config", str(p), "--seed", "99"])
        other = json.loads((tmp_path / "s1" / "evaluate_report.json").read_text())
        assert base["results"] != other["results"]
        assert other["config"]["mc"]["base_seed"] == 99

    def test_config_echo_reproduces_run(self, tmp_path):
        p = tiny_cfg(tmp_path, out="echo")
        cli.main(["evaluate", "--config", str(p)])
        report = json.loads((tmp_path / "echo" / "evaluate_report.json").read_text())
        echo = report["config"]
        echo_path = write_cfg(tmp_path, yaml.safe_dump(echo), name="echo.cfg")
        cli.main(["evaluate", "--config", str(echo_path), "--out", str(tmp_path / "echo")])
        again = json.loads((tmp_path / "echo" / "evaluate_report.json").read_text())
        assert again["results"] == report["results"]
        assert again["config"] == report["config"]


class TestEvaluate:
    def test_report_carries_se_and_counts_everywhere(self, tmp_path):
        p = tiny_cfg(tmp_path, out="ev")
        assert cli.main(["evaluate", "--config", str(p)]) == cli.EXIT_OK
        report = json.loads((tmp_path / "ev" / "evaluate_report.json").read_text())
        proc = report["results"]["procedures"][0]
        assert {"mean", "se", "censored", "n"} <= set(proc["arl"])
        for d in proc["delays"]:
            assert {"mean", "se", "censored", "n"} <= set(d)
        for block in proc["misid"]:
            for e in block["per_alternative"]:
                assert {"probability", "se", "retained"} <= set(e)
        assert (tmp_path / "ev" / "evaluate_misid.csv").exists()

    def test_single_alternative_misid_identically_zero(self, tmp_path):
        p = tiny_cfg(
            tmp_path, out="k1",
            **{
                "model": {"constructor": "gaussian_mean_shift", "thetas": [1.0]},
                "procedures": [{"variant": "min_cusum", "b": 2.0}],
            },
        )
        assert cli.main(["evaluate", "--config", str(p)]) == cli.EXIT_OK
        report = json.loads((tmp_path / "k1" / "evaluate_report.json").read_text())
        for block in report["results"]["procedures"][0]["misid"]:
            for e in block["per_alternative"]:
                assert e["probability"] == 0.0

    def test_unreliable_estimate_exit_code(self, tmp_path):
        p = tiny_cfg(
            tmp_path, out="unrel",
            **{
                "procedures": [{"variant": "adaptive", "b": 40.0, "h": 30.0}],
                "mc.horizon": 50,
                "grids.nu": [0],
            },
        )
        assert cli.main(["evaluate", "--config", str(p)]) == cli.EXIT_UNRELIABLE

    def test_zero_isolation_threshold_matches_detection_only(self, tmp_path):
        # with a nonnegative isolation statistic, h = 0 leaves stopping times
        # identical to the plain min-CuSum at the same detection threshold
        from changediag import models, montecarlo as mc_mod
        from changediag.procedures import ProcedureSpec, Scenario

        model = models.multichannel(
            2, [models.gaussian_density(0.0)] * 2, [models.gaussian_density(1.0)] * 2,
            simultaneous=True,
        )
        cfg = mc_mod.MCConfig(base_seed=77, num_paths=600, horizon=2_000)
        sc = Scenario(nu=None)
        a = mc_mod.run_batch(ProcedureSpec("adaptive", 2.5, 0.0, 3), model, sc, cfg)
        b = mc_mod.run_batch(ProcedureSpec("min_cusum", 2.5, 0.0, 3), model, sc, cfg)
        np.testing.assert_array_equal(a.stopping_times, b.stopping_times)


class TestDesignCommand:
    def test_design_writes_regions_and_selection(self, tmp_path):
        p = tiny_cfg(
            tmp_path, out="dsg",
            **{
                "procedures": [{"variant": "adaptive"}],
                "design": {"alpha": 0.05, "r": [2.0], "mirror_symmetric": True},
                "mc.num_paths": 1500,
                "mc.horizon": 1200,
                "grids.b": {"start": 0.0, "step": 0.01, "stop": 4.0},
                "grids.h": {"start": 0.05, "step": 0.05, "stop": 4.0},
            },
        )
        assert cli.main(["design", "--config", str(p)]) == cli.EXIT_OK
        report = json.loads((tmp_path / "dsg" / "design_report.json").read_text())
        entry = report["results"]["designs"][0]
        assert entry["selected"] is not None
        csv_path = tmp_path / "dsg" / entry["region_csv"]
        header = csv_path.read_text().splitlines()[0].split(",")
        assert header == ["b", "h", "in_false_alarm", "in_delay_1", "in_delay_2", "in_delay_3", "feasible"]

    def test_infeasible_design_exit_code(self, tmp_path):
        # grid too short to meet the false-alarm constraint: calibration fails
        p = tiny_cfg(
            tmp_path, out="inf",
            **{
                "procedures": [{"variant": "adaptive"}],
                "design": {"alpha": 0.01, "r": [2.0]},
                "grids.b": {"start": 0.0, "step": 0.01, "stop": 0.3},
                "grids.h": {"start": 0.05, "step": 0.05, "stop": 0.3},
            },
        )
        assert cli.main(["design", "--config", str(p)]) == cli.EXIT_INFEASIBLE


class TestMisidSweep:
    def test_explicit_thresholds_sweep_shape(self, tmp_path):
        p = tiny_cfg(
            tmp_path, out="sw",
            **{
                "procedures": [
                    {"variant": "adaptive", "b": 3.0, "h": 2.0},
                    {"variant": "min_cusum", "b": 3.5},
                ],
                "grids.nu": [0, 10],
            },
        )
        assert cli.main(["misid-sweep", "--config", str(p)]) == cli.EXIT_OK
        report = json.loads((tmp_path / "sw" / "misid_sweep_report.json").read_text())
        sweeps = report["results"]["sweeps"]
        assert len(sweeps) == 2
        assert [e["nu"] for e in sweeps[0]["by_nu"]] == [0, 10]
        assert sweeps[0]["worst_overall"]["probability"] >= 0.0
        lines = (tmp_path / "sw" / "misid_sweep.csv").read_text().splitlines()
        assert lines[0] == "variant,m,r,b,h,nu,j,probability,se,retained,low_power"
        # 2 procedures x 2 change points x 3 alternatives
        assert len(lines) == 1 + 12


class TestDemoPaths:
    def test_trace_and_partial_sums(self, tmp_path):
        p = tiny_cfg(
            tmp_path, out="demo",
            **{
                "model": {"constructor": "gaussian_mean_shift", "thetas": [1.0, 2.0]},
                "demo": {"nu": 50, "true_alternative": 2, "steps": 100, "fixed_time": 75, "windows": [15]},
                "mc.base_seed": 17,
            },
        )
        assert cli.main(["demo-paths", "--config", str(p)]) == cli.EXIT_OK
        trace_lines = (tmp_path / "demo" / "trace.csv").read_text().splitlines()
        header = trace_lines[0].split(",")
        assert len(trace_lines) == 101
        for col in ("time", "x", "cusum_1", "pair_12", "adaptive_12", "reset_1", "gen_m15_1", "gen_full_2"):
            assert col in header
        rows = np.array([[float(v) for v in line.split(",")] for line in trace_lines[1:]])
        cols = {name: rows[:, k] for k, name in enumerate(header)}

        # before the change the plain pairwise statistic drifts upward while
        # the adaptively reset one stays small
        pre = slice(0, 50)
        assert cols["pair_12"][pre][-10:].mean() > 10 * max(cols["adaptive_12"][pre].mean(), 0.05)
        # after the change the reset version of the true-alternative row
        # tracks the plain one closely
        post = slice(50, 100)
        gap = np.abs(cols["adaptive_21"][post] - cols["pair_21"][post])
        assert gap.max() < 0.4

        ps_lines = (tmp_path / "demo" / "partial_sums.csv").read_text().splitlines()
        assert ps_lines[0] == "k,own_sum_1,pair_sum_12"
        ps = np.array([[float(v) for v in line.split(",")] for line in ps_lines[1:]])
        assert ps.shape == (76, 3)
        # pair partial sums over post-change windows are non-positive-ish
        assert ps[ps[:, 0] >= 50, 2].max() <= 1.0

    def test_demo_requires_scalar_gaussian_model(self, tmp_path, capsys):
        p = tiny_cfg(tmp_path, out="dm2")
        assert cli.main(["demo-paths", "--config", str(p)]) == cli.EXIT_VALIDATION
        assert "gaussian_mean_shift" in capsys.readouterr().err
