import xml.etree.ElementTree as ET

import numpy as np
import pytest

from socest.cell_model import CellParams, CellParamsTable, CellState, synthesize_telemetry
from socest.errors import ConfigError, ValidationError
from socest.estimators import EkfBelief, EstimateTrace, ekf_run
from socest.experiment import (
    DriveSpec,
    EstimatorInit,
    NoiseSpec,
    SweepConfig,
    SweepReport,
    bar_chart_svg,
    build_drive,
    error_metrics,
    mean_pct,
    render_report,
    run_sweep,
    synthetic_telemetry,
    table1_lines,
    temperature_seed,
)


def trace_of(est, truth):
    n = len(truth)
    est = np.asarray(est, float)
    nan = np.full(n, np.nan)
    return EstimateTrace(np.arange(float(n)), est, est, np.asarray(truth, float), nan, nan, nan, nan)


SHORT = dict(duration_s=7200.0, temperatures=(0.0, 25.0))


def test_error_metrics_examples():
    assert error_metrics(trace_of([0.5, 0.6], [0.5, 0.6])) == (0.0, 0.0, 0.0)
    m = error_metrics(trace_of([0.52] * 4, [0.5] * 4))
    assert m.mape_pct == pytest.approx(4.0)
    assert m.rmse_soc == pytest.approx(0.02)
    assert m.max_abs_err == pytest.approx(0.02)
    one = error_metrics(trace_of([0.3], [0.2]))
    assert one.mape_pct == pytest.approx(50.0)


def test_error_metrics_floor_and_missing_truth():
    m = error_metrics(trace_of([0.005], [0.0]))
    assert m.mape_pct == pytest.approx(50.0)
    tr = trace_of([0.5], [0.5])
    no_truth = EstimateTrace(tr.t_s, tr.soc_cc, tr.soc_ekf, None, tr.v_measured, tr.v_predicted,
                             tr.innovation_v, tr.cov_soc)
    with pytest.raises(ValidationError):
        error_metrics(no_truth)


def test_mean_is_order_invariant():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, 10001)
    assert mean_pct(x) == mean_pct(x[::-1]) == mean_pct(rng.permutation(x))


def test_build_drive_net_zero_block():
    drive = build_drive(DriveSpec(), 5.0, 6600.0 * 3, 1.0)
    assert drive.size == 19800
    assert drive.sum() == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ConfigError):
        build_drive(DriveSpec(), 5.0, 10.5, 1.0)


def test_temperature_seed_independent_of_order():
    a = temperature_seed(7, 25.0).generate_state(4)
    b = temperature_seed(7, 25.0).generate_state(4)
    c = temperature_seed(7, 0.0).generate_state(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.array_equal(temperature_seed(7, -0.0).generate_state(4), temperature_seed(7, 0.0).generate_state(4))


def test_synthetic_noise_is_seeded(table, curves):
    cfg = SweepConfig(noise=NoiseSpec(0.01, 0.005), seed=3, **SHORT)
    a = synthetic_telemetry(cfg, 25.0, table, curves)
    b = synthetic_telemetry(cfg, 25.0, table, curves)
    assert a.equals(b)
    clean = synthetic_telemetry(SweepConfig(**SHORT), 25.0, table, curves)
    assert np.std(a.voltage_v - clean.voltage_v) == pytest.approx(0.005, rel=0.05)


def test_noiseless_sweep_is_exact(table, curves):
    report = run_sweep(SweepConfig(**SHORT), table, curves)
    for r in report.rows:
        assert r.avg_err_cc_pct < 0.01 and r.avg_err_ekf_pct < 0.01


def test_offset_sweep_favours_ekf(table, curves):
    cfg = SweepConfig(noise=NoiseSpec(0.01, 0.005), init=EstimatorInit(cc_offset=0.1, ekf_offset=0.1), seed=1, **SHORT)
    report = run_sweep(cfg, table, curves)
    for r in report.rows:
        assert r.avg_err_ekf_pct < r.avg_err_cc_pct


def test_workers_do_not_change_results(table, curves):
    cfg = dict(noise=NoiseSpec(0.01, 0.005), seed=5, **SHORT)
    serial = run_sweep(SweepConfig(**cfg), table, curves)
    parallel = run_sweep(SweepConfig(workers=4, **cfg), table, curves)
    assert serial.rows == parallel.rows


def test_dataset_mode(table, curves, params, curve):
    from socest.cell_model import curve_at, params_at

    s25 = synthesize_telemetry(params_at(table, 25.0), curve_at(curves, 25.0), CellState(1.0),
                               [(2.0, 1.0)] * 600, temp_c=25.0)
    bare = type(s25)(s25.t_s, s25.current_a, s25.voltage_v, s25.temp_c)
    cfg = SweepConfig(mode="dataset", temperatures=(25.0,))
    report = run_sweep(cfg, table, curves, {25.0: bare})
    trace = report.traces[25.0]
    assert np.allclose(trace.soc_true, s25.soc_true, atol=1e-12)
    with pytest.raises(ConfigError):
        run_sweep(SweepConfig(mode="dataset", temperatures=(25.0, 40.0)), table, curves, {25.0: bare})


def test_config_roundtrip_and_errors():
    cfg = SweepConfig(noise=NoiseSpec(0.1, 0.2), init=EstimatorInit(cc_offset=0.1, r=1e-3, joseph=True), seed=9)
    back = SweepConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()
    for bad, path in [
        ({"temperatures": []}, "temperatures"),
        ({"mode": "live"}, "mode"),
        ({"bogus": 1}, "$"),
        ({"noise": {"voltage_sigma_v": -1}}, "noise.voltage_sigma_v"),
        ({"init": {"r": 0}}, "init.measurement_noise"),
        ({"seed": 1.5}, "$.seed"),
        ({"drive": {"block": [[1, 0]]}}, "drive.block[0]"),
    ]:
        with pytest.raises(ConfigError) as exc:
            SweepConfig.from_dict(bad)
        assert exc.value.path == path, bad


def test_table1_layout():
    from socest.experiment import SweepRow

    report = SweepReport((SweepRow(0.0, 55.97851, 52.38849, 1, 2, 0.1, 0.2),))
    assert table1_lines(report) == [
        "Temperature,SOC by CC Method,SOC by EKF Method",
        "0 °C,55.9785%,52.3885%",
    ]


def test_render_report_files(tmp_path, table, curves):
    report = run_sweep(SweepConfig(duration_s=600.0), table, curves)
    paths = render_report(report, tmp_path / "out")
    names = sorted(p.name for p in paths)
    assert names == sorted(["table1.csv", "soc_vs_temp.svg", "err_vs_temp.svg",
                            "trace_0.csv", "trace_10.csv", "trace_25.csv", "trace_40.csv"])
    lines = (tmp_path / "out" / "table1.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 5
    for name in ("soc_vs_temp.svg", "err_vs_temp.svg"):
        root = ET.fromstring((tmp_path / "out" / name).read_text(encoding="utf-8"))
        texts = [t.text for t in root.iter("{http://www.w3.org/2000/svg}text")]
        assert "CC" in texts and "EKF" in texts and "Temperature" in texts


def test_render_empty_traces(tmp_path, table, curves):
    report = run_sweep(SweepConfig(duration_s=600.0), table, curves)
    bare = SweepReport(report.rows)
    paths = render_report(bare, tmp_path)
    assert len(paths) == 3


def test_render_unwritable(tmp_path, table, curves):
    report = run_sweep(SweepConfig(duration_s=600.0, temperatures=(25.0,)), table, curves)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError) as exc:
        render_report(report, blocker / "sub")
    assert str(blocker / "sub") in str(exc.value)


def test_bar_chart_is_valid_svg():
    svg = bar_chart_svg("t", "y", ["a", "b"], {"CC": [1.0, float("nan")], "EKF": [0.5, 2.0]})
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")


def test_sweep_matches_direct_run(table, curves):
    cfg = SweepConfig(noise=NoiseSpec(0.0, 0.005), init=EstimatorInit(ekf_offset=-0.1), seed=2,
                      duration_s=3600.0, temperatures=(10.0,))
    report = run_sweep(cfg, table, curves)
    series = synthetic_telemetry(cfg, 10.0, table, curves)
    direct = ekf_run(EkfBelief(CellState(0.8)), series, table, curves, cc_initial_soc=0.9, default_temp_c=10.0)
    assert np.array_equal(report.traces[10.0].soc_ekf, direct.soc_ekf)


def test_temperature_changes_errors(curves):
    base = dict(capacity_ah=5.0, r1_ohm=0.004, c1_farad=2500.0, r2_ohm=0.006, c2_farad=20000.0)
    table = CellParamsTable((CellParams(0.0, r0_ohm=0.016, **base), CellParams(25.0, r0_ohm=0.008, **base)))
    cfg = SweepConfig(noise=NoiseSpec(0.01, 0.005), init=EstimatorInit(ekf_offset=0.1), seed=4, **SHORT)
    report = run_sweep(cfg, table, curves)
    assert report.row(0.0).avg_err_ekf_pct != report.row(25.0).avg_err_ekf_pct
