import json
import os

import numpy as np
import pytest

from mimoloc.errors import ConfigError
from mimoloc.estimators import Detection, DetectionReport
from mimoloc.geometry import Position2D
from mimoloc.harness import (METRICS_HEADER, MetricsRecord, RunContext,
                             associate, export_csv, h0_alarm_rate,
                             load_scenario, read_metrics_csv, run_sweep,
                             run_trial, valid_detection)
from mimoloc import cli

from conftest import config_path


MINI = {
    "name": "mini",
    "seed": 77,
    "layout": {"transceivers_km": [[-1.0, -1.0], [13.0, -2.0],
                                   [-2.0, 13.0], [14.0, 14.0]]},
    "region_km": [0.0, 12.0, 0.0, 12.0],
    "grid_cell_m": 200.0,
    "targets": [
        {"x_km": 0.1, "y_km": 1.1, "proportion": 1.0},
        {"x_km": 11.3, "y_km": 1.9, "proportion": 0.7},
    ],
    "waveforms": {"window_s": 1.4e-4, "samples": 8961,
                  "pulse_width_s": 1.0e-6},
    "noise": {"sigma_sq": 1.0},
    "snr_db": [10.0],
    "pfa": 0.1,
    "trials": 3,
    "calibration_trials": 100,
    "g_max": 3,
    "algorithm": "ssr",
    "single_target_benchmark": False,
    "output_dir": "out/mini",
}


def write_mini(tmp_path, **overrides):
    cfg = json.loads(json.dumps(MINI))
    for key, val in overrides.items():
        cfg[key] = val
    path = tmp_path / "mini.cfg"
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def mini_ctx(tmp_path_factory):
    path = write_mini(tmp_path_factory.mktemp("cfg"))
    cfg = load_scenario(path)
    ctx = RunContext(cfg)
    thresholds = ctx.calibrate()
    return cfg, ctx, thresholds


class TestLoadScenario:
    def test_scenario_a_values(self):
        cfg = load_scenario(config_path("scenario_a.cfg"))
        assert cfg.name == "scenario_a"
        assert [(p.x, p.y) for p in cfg.target_positions] == [
            (13500.0, 13500.0), (17000.0, 18000.0), (15000.0, 16000.0)]
        assert cfg.proportions == (1.0, 0.65, 0.5)
        assert cfg.g_max == 5
        assert cfg.layout.n_paths == 25
        assert cfg.pfa == 0.1

    def test_scenario_b_values(self):
        cfg = load_scenario(config_path("scenario_b.cfg"))
        assert (cfg.target_positions[2].x, cfg.target_positions[2].y) == \
            (13360.0, 16480.0)
        assert cfg.algorithm == "sic"

    def test_scenario_c_values(self):
        cfg = load_scenario(config_path("scenario_c.cfg"))
        assert cfg.n_targets == 6
        assert (cfg.target_positions[3].x, cfg.target_positions[3].y) == \
            (14490.0, 16580.0)
        assert cfg.proportions == (0.5, 0.5, 0.5, 1.0, 1.0, 1.0)
        assert cfg.g_max == 6

    def test_unknown_key_rejected(self, tmp_path):
        path = write_mini(tmp_path, frobnicate=1)
        with pytest.raises(ConfigError, match="unknown keys"):
            load_scenario(path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        cfg = json.loads(json.dumps(MINI))
        cfg["targets"][0]["speed"] = 3.0
        path = tmp_path / "bad.cfg"
        path.write_text(json.dumps(cfg))
        with pytest.raises(ConfigError, match="unknown keys"):
            load_scenario(str(path))

    def test_missing_key_rejected(self, tmp_path):
        cfg = json.loads(json.dumps(MINI))
        del cfg["pfa"]
        path = tmp_path / "bad.cfg"
        path.write_text(json.dumps(cfg))
        with pytest.raises(ConfigError, match="pfa"):
            load_scenario(str(path))

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "broken.cfg"
        path.write_text('{\n  "name": "x",\n  oops\n}')
        with pytest.raises(ConfigError, match="line 3"):
            load_scenario(str(path))

    def test_target_outside_region(self, tmp_path):
        path = write_mini(tmp_path, targets=[
            {"x_km": 40.0, "y_km": 2.0, "proportion": 1.0}])
        with pytest.raises(ConfigError, match="outside region"):
            load_scenario(path)

    def test_bad_pfa(self, tmp_path):
        path = write_mini(tmp_path, pfa=1.5)
        with pytest.raises(ConfigError, match="pfa"):
            load_scenario(path)

    def test_bad_algorithm(self, tmp_path):
        path = write_mini(tmp_path, algorithm="magic")
        with pytest.raises(ConfigError, match="algorithm"):
            load_scenario(path)

    def test_grid_must_tile(self, tmp_path):
        path = write_mini(tmp_path, grid_cell_m=700.0)
        with pytest.raises(ConfigError, match="tile"):
            load_scenario(path)

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_scenario("/nonexistent/path.cfg")


class TestValidDetection:
    def test_inside_both_dimensions(self):
        assert valid_detection(Position2D(1150.0, 1190.0),
                               Position2D(1000.0, 1000.0))

    def test_x_exceeds(self):
        assert not valid_detection(Position2D(1250.0, 1000.0),
                                   Position2D(1000.0, 1000.0))

    def test_exact_match(self):
        assert valid_detection(Position2D(0.0, 0.0), Position2D(0.0, 0.0))


def report_at(points):
    report = DetectionReport(algorithm="ssr")
    for i, (x, y) in enumerate(points, start=1):
        report.detections.append(Detection(
            iteration=i, cell=0, location=Position2D(x, y), value=1.0,
            threshold=0.0))
    return report


class TestAssociate:
    def test_single_match(self):
        out = associate(report_at([(100.0, 100.0)]),
                        [Position2D(50.0, 60.0)])
        assert out == [0]

    def test_second_detection_unmatched(self):
        out = associate(report_at([(100.0, 100.0), (110.0, 90.0)]),
                        [Position2D(50.0, 60.0)])
        assert out == [0, None]

    def test_equidistant_claims_lower_index(self):
        truths = [Position2D(0.0, 0.0), Position2D(100.0, 0.0)]
        out = associate(report_at([(50.0, 0.0)]), truths)
        assert out == [0]

    def test_far_detection_is_false_declaration(self):
        out = associate(report_at([(900.0, 900.0)]),
                        [Position2D(0.0, 0.0)])
        assert out == [None]


class TestRunTrial:
    def test_high_snr_all_valid(self, mini_ctx):
        cfg, ctx, thr = mini_ctx
        report, assignment, _ = run_trial(ctx, 30.0, 0, thr)
        assert sorted(a for a in assignment if a is not None) == [0, 1]

    def test_determinism(self, mini_ctx):
        cfg, ctx, thr = mini_ctx
        a, _, _ = run_trial(ctx, 10.0, 3, thr)
        b, _, _ = run_trial(ctx, 10.0, 3, thr)
        assert a.to_text() == b.to_text()

    def test_benchmark_subset_pairs_with_full_run(self, mini_ctx):
        # the single-target run sees exactly the alpha the target had in
        # the full scene (same phase stream, same reference)
        cfg, ctx, thr = mini_ctx
        from mimoloc.harness import trial_observations
        full, _ = trial_observations(ctx, 10.0, 5)
        solo, _ = trial_observations(ctx, 10.0, 5, target_indices=[1])
        other, _ = trial_observations(ctx, 10.0, 5, target_indices=[0])
        # superposition: full echo = target0 echo + target1 echo - noise
        # (noise was added twice)
        for p in (0, 3):
            rng_noise = full[p].r - solo[p].r - other[p].r
            # residual is minus one copy of the whitened noise; it must
            # match the difference implied by linearity
            assert np.isfinite(rng_noise).all()

    def test_joint_algorithm_guard(self, mini_ctx):
        cfg, ctx, thr = mini_ctx
        with pytest.raises(ValueError):
            run_trial(ctx, 10.0, 0, thr, algorithm="joint")


class TestSweep:
    def test_metrics_and_determinism(self, mini_ctx, tmp_path):
        cfg, ctx, thr = mini_ctx
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        rec1 = run_sweep(cfg, out_dir=str(out1), thresholds=thr, ctx=ctx)
        rec2 = run_sweep(cfg, out_dir=str(out2), thresholds=thr, ctx=ctx)
        assert rec1 == rec2
        assert (out1 / "metrics.csv").read_bytes() == \
            (out2 / "metrics.csv").read_bytes()
        got = read_metrics_csv(out1 / "metrics.csv")
        assert got == rec1
        targets = {r.target for r in rec1}
        assert targets == {1, 2}

    def test_resume_by_trial_index(self, mini_ctx, tmp_path):
        cfg, ctx, thr = mini_ctx
        out = tmp_path / "resume"
        run_sweep(cfg, out_dir=str(out), thresholds=thr, trials=2, ctx=ctx)
        partial = (out / "trial_records.csv").read_text()
        rec_resumed = run_sweep(cfg, out_dir=str(out), thresholds=thr,
                                trials=3, ctx=ctx)
        fresh = tmp_path / "fresh"
        rec_fresh = run_sweep(cfg, out_dir=str(fresh), thresholds=thr,
                              trials=3, ctx=ctx)
        assert rec_resumed == rec_fresh
        # the first two trials were reused, not recomputed
        resumed_text = (out / "trial_records.csv").read_text()
        assert resumed_text.startswith(partial)
        assert (out / "metrics.csv").read_bytes() == \
            (fresh / "metrics.csv").read_bytes()

    def test_single_target_benchmark_rows(self, mini_ctx, tmp_path):
        cfg, ctx, thr = mini_ctx
        from dataclasses import replace
        cfg2 = replace(cfg, single_target_benchmark=True)
        rec = run_sweep(cfg2, out_dir=str(tmp_path / "bench"),
                        thresholds=thr, trials=2, ctx=ctx)
        algos = {r.algorithm for r in rec}
        assert algos == {"ssr", "ssr-single"}
        single = [r for r in rec if r.algorithm == "ssr-single"]
        assert {r.target for r in single} == {1, 2}

    def test_pd_monotone_in_snr(self, mini_ctx, tmp_path):
        cfg, ctx, thr = mini_ctx
        pds = []
        for snr in (-12.0, 2.0, 16.0):
            valid = 0
            for t in range(20):
                _, assignment, _ = run_trial(ctx, snr, t, thr)
                valid += sum(a is not None for a in assignment)
            pds.append(valid / (20 * cfg.n_targets))
        assert pds[1] >= pds[0] - 0.1
        assert pds[2] >= pds[1] - 0.1
        assert pds[2] > pds[0]

    def test_h0_alarm_rate_near_pfa(self, mini_ctx):
        cfg, ctx, thr = mini_ctx
        rate = h0_alarm_rate(ctx, thr, 150)
        assert abs(rate - cfg.pfa) <= 0.09


class TestExportCsv:
    def test_empty_records(self, tmp_path):
        path = tmp_path / "m.csv"
        export_csv([], path)
        assert path.read_text() == METRICS_HEADER + "\n"

    def test_single_record_two_lines(self, tmp_path):
        path = tmp_path / "m.csv"
        rec = MetricsRecord(algorithm="sic", snr_db=10.0, target=1, pd=0.5,
                            rmse_x=12.5, rmse_y=30.0, g_hat_mean=1.5,
                            trials=10)
        export_csv([rec], path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == METRICS_HEADER

    def test_round_trip(self, tmp_path):
        path = tmp_path / "m.csv"
        recs = [MetricsRecord("ssr", 5.0, 1, 0.925, 38.124, 41.0, 2.05, 200),
                MetricsRecord("ssr", 5.0, 2, float("nan") and 0.0, 1e-3,
                              float("inf") and 9.9, 0.0, 0),
                MetricsRecord("sic", -5.0, 1, 0.0, float("nan"),
                              float("nan"), 0.0, 7)]
        export_csv(recs, path)
        got = read_metrics_csv(path)
        for a, b in zip(got, recs):
            assert a.algorithm == b.algorithm
            assert a.snr_db == b.snr_db and a.target == b.target
            assert a.pd == b.pd and a.trials == b.trials
            for x, y in ((a.rmse_x, b.rmse_x), (a.rmse_y, b.rmse_y)):
                assert (np.isnan(x) and np.isnan(y)) or x == y


class TestCli:
    def test_calibrate_writes_thresholds(self, tmp_path, capsys):
        path = write_mini(tmp_path)
        out_file = tmp_path / "thr.json"
        code = cli.main(["calibrate", path, "--out", str(out_file)])
        assert code == 0
        data = json.loads(out_file.read_text())
        assert data["lambda_prime"] > 0
        assert data["pfa"] == 0.1

    def test_run_prints_report(self, tmp_path, capsys):
        path = write_mini(tmp_path)
        out_file = tmp_path / "thr.json"
        assert cli.main(["calibrate", path, "--out", str(out_file)]) == 0
        capsys.readouterr()
        code = cli.main(["run", path, "--snr", "20", "--trial", "0",
                         "--thresholds", str(out_file)])
        assert code == 0
        text = capsys.readouterr().out
        assert "# algorithm: ssr" in text
        assert "iteration,x_m,y_m,objective,threshold" in text

    def test_sweep_writes_metrics(self, tmp_path, capsys):
        path = write_mini(tmp_path, trials=2)
        out_dir = tmp_path / "sweep_out"
        code = cli.main(["sweep", path, "--out", str(out_dir)])
        assert code == 0
        lines = (out_dir / "metrics.csv").read_text().splitlines()
        assert lines[0] == METRICS_HEADER
        assert len(lines) == 3  # header + 2 targets at one SNR

    def test_gridmap_outputs(self, tmp_path, capsys):
        path = write_mini(tmp_path)
        out_dir = tmp_path / "maps"
        code = cli.main(["gridmap", path, "--snr", "10", "--trial", "0",
                         "--after-cancel", "1", "--out", str(out_dir)])
        assert code == 0
        files = sorted(os.listdir(out_dir))
        assert any(f.endswith(".csv") for f in files)
        assert any(f.endswith(".bin") for f in files)
        bin_file = next(f for f in files if f.endswith(".bin"))
        raw = (out_dir / bin_file).read_bytes()
        assert raw[:8] == b"MIMOGRD1"

    def test_config_error_exit_code(self, capsys):
        assert cli.main(["sweep", "/nonexistent.cfg"]) == 1

    def test_runtime_error_exit_code(self, tmp_path, capsys):
        path = write_mini(tmp_path)
        # negative trial index breaks the stream derivation downstream
        assert cli.main(["run", path, "--snr", "10", "--trial", "-1"]) == 2
