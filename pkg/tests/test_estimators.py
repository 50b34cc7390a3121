import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import linear_kf
from socest.cell_model import CellParams, CellState, OcvCurve, ocv_lookup, synthesize_telemetry
from socest.errors import DegenerateUpdateError, ValidationError
from socest.estimators import (
    DEFAULT_P0,
    DEFAULT_Q,
    EkfBelief,
    cc_run,
    cc_step,
    cc_trace,
    ekf_predict,
    ekf_run,
    ekf_update,
)
from socest.telemetry import TelemetrySeries


def series_of(currents, dt=1.0, voltage=None, soc_true=None):
    n = len(currents)
    t = np.arange(n) * dt
    v = np.full(n, 3.7) if voltage is None else voltage
    return TelemetrySeries(t, np.asarray(currents, float), v, np.full(n, 25.0), soc_true)


@pytest.mark.parametrize(
    "soc, i, dt, expected",
    [(1.0, 5.0, 3600.0, 0.0), (0.529, 0.0, 1.0, 0.529), (0.5, -5.0, 1800.0, 1.0), (0.5, -2.5, 1800.0, 0.75), (0.1, 50.0, 3600.0, 0.0)],
)
def test_cc_step(soc, i, dt, expected):
    assert cc_step(soc, i, dt, 5.0) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("args", [(0.5, math.nan, 1, 5), (0.5, 1, 0, 5), (0.5, 1, 1, 0), (math.inf, 1, 1, 5)])
def test_cc_step_rejects(args):
    with pytest.raises(ValidationError):
        cc_step(*args)


def test_cc_run_examples():
    full = cc_run(1.0, series_of([2.5] * 7201), 5.0)
    assert full[0] == 1.0
    assert full[-1] == pytest.approx(0.0, abs=1e-12)
    flat = cc_run(0.42, series_of([0.0] * 50), 5.0)
    assert np.all(flat == 0.42)


def test_cc_keeps_initial_offset():
    rng = np.random.default_rng(11)
    noise = rng.normal(0, 0.5, 1000)
    noise -= noise.mean()
    s = series_of(noise)
    truth = cc_run(0.5, s, 5.0)
    biased = cc_run(0.6, s, 5.0)
    assert abs((biased[-1] - truth[-1]) - 0.1) < 0.02


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-5, 5), st.integers(1, 200)), min_size=1, max_size=20))
def test_cc_matches_analytic_integral(segments):
    currents, t = [], [0.0]
    for i, n in segments:
        for _ in range(n):
            currents.append(i)
            t.append(t[-1] + 0.5)
    currents.append(0.0)
    s = TelemetrySeries(np.array(t), np.array(currents), np.full(len(t), np.nan), np.full(len(t), np.nan))
    got = cc_run(0.5, s, 1000.0)
    charge = math.fsum(i * n * 0.5 for i, n in segments)
    expected = 0.5 - charge / 3.6e6
    assert got[-1] == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_belief_validation():
    with pytest.raises(ValidationError):
        EkfBelief(CellState(0.5), np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValidationError):
        EkfBelief(CellState(0.5), np.array([[1, 0.1, 0], [0, 1, 0], [0, 0, 1.0]]))
    with pytest.raises(ValidationError):
        EkfBelief(CellState(0.5), measurement_noise=0.0)
    b = EkfBelief(CellState(0.5), [1, 2, 3])
    assert np.array_equal(b.cov, np.diag([1.0, 2.0, 3.0]))


def test_predict_noop_limit(params):
    b = EkfBelief(CellState(0.5, 0.01, 0.02), DEFAULT_P0, np.zeros((3, 3)))
    out = ekf_predict(b, params, 0.0, 1e-9)
    assert np.allclose(out.cov, b.cov, atol=1e-8)


def test_predict_covariance_by_hand():
    p = CellParams(25, 5, 0.01, 0.001, 10000.0, 0.01, 10000.0)
    b = EkfBelief(CellState(0.5), DEFAULT_P0, DEFAULT_Q)
    out = ekf_predict(b, p, 0.0, 1.0)
    assert out.cov[1, 1] == pytest.approx(math.exp(-0.2) * 1e-4 + 1e-8, rel=1e-14)
    assert out.cov[0, 0] == pytest.approx(0.01 + 1e-7, rel=1e-14)


def test_predict_soc_after_one_percent(params):
    out = ekf_predict(EkfBelief(CellState(0.5)), params, 5.0, 36.0)
    assert out.mean.soc == pytest.approx(0.49, abs=1e-15)


def test_update_scalar_by_hand(line):
    p = CellParams(25, 5, 0.01, 0.001, 1000.0, 0.01, 10000.0)
    b = EkfBelief(CellState(0.5), np.diag([1.0, 0.0, 0.0]), np.zeros((3, 3)), 1.0)
    # unit-slope curve so C = [1, -1, -1]
    unit = OcvCurve(((0, 3.0), (1, 4.0)))
    res = ekf_update(b, p, unit, 3.6, 0.0)
    assert np.allclose(res.gain, [0.5, 0, 0])
    assert res.belief.cov[0, 0] == pytest.approx(0.5)
    assert res.innovation_v == pytest.approx(0.1)
    assert res.belief.mean.soc == pytest.approx(0.55)


def test_update_zero_innovation_shrinks_cov(params, curve):
    b = EkfBelief(CellState(0.5))
    v = ocv_lookup(curve, 0.5)
    res = ekf_update(b, params, curve, v, 0.0)
    assert res.innovation_v == 0.0
    assert np.array_equal(res.belief.mean.as_array(), b.mean.as_array())
    assert res.belief.cov[0, 0] < b.cov[0, 0]


def test_update_uninformative(params, curve):
    b = EkfBelief(CellState(0.5), measurement_noise=1e12)
    res = ekf_update(b, params, curve, 4.0, 0.0)
    assert np.allclose(res.belief.mean.as_array(), b.mean.as_array(), atol=1e-9)


def test_update_joseph_matches_simple(params, curve):
    b = EkfBelief(CellState(0.5, 0.01, 0.0))
    simple = ekf_update(b, params, curve, 3.7, 1.0)
    joseph = ekf_update(b, params, curve, 3.7, 1.0, joseph=True)
    assert np.allclose(simple.belief.cov, joseph.belief.cov, atol=1e-15)


@settings(max_examples=200)
@given(
    st.floats(0.01, 0.99),
    st.floats(1e-6, 1.0),
    st.floats(1e-8, 1e-2),
    st.floats(1e-8, 1e-2),
    st.floats(1e-6, 1.0),
    st.floats(2.0, 5.0),
)
def test_update_properties(soc, p00, p11, p22, r, v):
    params = CellParams(25, 5, 0.008, 0.004, 2500.0, 0.006, 20000.0)
    curve = OcvCurve(((0, 3.0), (0.1, 3.4), (0.5, 3.7), (1, 4.2)))
    b = EkfBelief(CellState(soc), np.diag([p00, p11, p22]), DEFAULT_Q, r)
    res = ekf_update(b, params, curve, v, 0.0)
    cov = res.belief.cov
    assert np.abs(cov - cov.T).max() <= 1e-12
    assert np.linalg.eigvalsh(cov).min() >= -1e-10
    assert cov[0, 0] <= p00
    if res.innovation_v > 0:
        assert res.belief.mean.soc >= soc
    elif res.innovation_v < 0:
        assert res.belief.mean.soc <= soc


def test_degenerate_update(params, curve):
    b = EkfBelief(CellState(0.5), np.zeros((3, 3)), np.zeros((3, 3)), 1e-300)
    object.__setattr__(b, "measurement_noise", -1.0)
    with pytest.raises(DegenerateUpdateError):
        ekf_update(b, params, curve, 3.7, 0.0)


def test_ekf_run_needs_samples(params, curve):
    with pytest.raises(ValidationError):
        ekf_run(EkfBelief(CellState(0.5)), series_of([0.0]), params, curve)
    empty = TelemetrySeries(np.array([0.0, 1.0]), np.zeros(2), np.full(2, np.nan), np.full(2, np.nan))
    with pytest.raises(ValidationError):
        ekf_run(EkfBelief(CellState(0.5)), empty, params, curve)


def test_ekf_run_reports_degenerate_row(params, curve):
    b = EkfBelief(CellState(0.5), np.zeros((3, 3)), np.zeros((3, 3)), 1e-300)
    object.__setattr__(b, "measurement_noise", -1.0)
    with pytest.raises(DegenerateUpdateError) as exc:
        ekf_run(b, series_of([0.0] * 5), params, curve)
    assert exc.value.row == 0


def _drive(n, seed=0):
    rng = np.random.default_rng(seed)
    levels = rng.uniform(-5, 5, n // 100 + 1)
    return np.repeat(levels, 100)[:n]


def test_ekf_perfect_init_tracks_truth(params, curve):
    currents = _drive(5000)
    s = synthesize_telemetry(params, curve, CellState(0.8), [(i, 1.0) for i in currents])
    trace = ekf_run(EkfBelief(CellState(0.8)), s, params, curve)
    assert np.abs(trace.soc_ekf - s.soc_true).max() < 1e-6
    assert np.abs(trace.soc_cc - s.soc_true).max() < 1e-9


def test_ekf_step_by_step_matches_run(params, curve):
    currents = _drive(300, seed=2)
    s = synthesize_telemetry(params, curve, CellState(0.7), [(i, 1.0) for i in currents])
    rng = np.random.default_rng(5)
    v = s.voltage_v + rng.normal(0, 0.005, len(s))
    v[17] = np.nan
    s = TelemetrySeries(s.t_s, s.current_a, v, s.temp_c, s.soc_true)
    b = EkfBelief(CellState(0.6))
    trace = ekf_run(b, s, params, curve, record_cov=True)
    for k in range(len(s)):
        if k:
            b = ekf_predict(b, params, s.current_a[k - 1], s.t_s[k] - s.t_s[k - 1])
        if not np.isnan(v[k]):
            b = ekf_update(b, params, curve, v[k], s.current_a[k]).belief
        assert abs(b.mean.soc - trace.soc_ekf[k]) < 1e-12
        assert np.abs(b.cov - trace.cov[k]).max() < 1e-15
    assert np.isnan(trace.innovation_v[17])


def test_ekf_matches_linear_kf(params, line):
    currents = _drive(2000, seed=4)
    s = synthesize_telemetry(params, line, CellState(0.6), [(i, 1.0) for i in currents])
    rng = np.random.default_rng(1)
    v = s.voltage_v + rng.normal(0, 0.01, len(s))
    s = TelemetrySeries(s.t_s, s.current_a, v, s.temp_c)
    b = EkfBelief(CellState(0.5, 0.0, 0.0))
    trace = ekf_run(b, s, params, line, record_cov=True)
    xs, ps = linear_kf(
        b.mean.as_array(), b.cov, b.process_noise, b.measurement_noise, s.t_s, s.current_a, v,
        params.r0_ohm, params.r1_ohm, params.tau1, params.r2_ohm, params.tau2, params.capacity_as, 3.0, 1.2,
    )
    assert np.abs(trace.soc_ekf - xs[:, 0]).max() < 1e-9
    assert np.abs(trace.u1_v - xs[:, 1]).max() < 1e-9
    assert np.abs(trace.cov - ps).max() < 1e-9


def test_ekf_is_deterministic(params, curve):
    s = synthesize_telemetry(params, curve, CellState(0.8), [(i, 1.0) for i in _drive(1000)])
    a = ekf_run(EkfBelief(CellState(0.6)), s, params, curve)
    b = ekf_run(EkfBelief(CellState(0.6)), s, params, curve)
    assert a.soc_ekf.tobytes() == b.soc_ekf.tobytes()
    assert a.cov_soc.tobytes() == b.cov_soc.tobytes()


def test_ekf_irregular_sampling(params, curve):
    rng = np.random.default_rng(8)
    dts = rng.uniform(0.2, 3.0, 3000)
    currents = _drive(3000, seed=8)
    s = synthesize_telemetry(params, curve, CellState(0.9), list(zip(currents, dts)))
    trace = ekf_run(EkfBelief(CellState(0.9)), s, params, curve)
    assert np.abs(trace.soc_ekf - s.soc_true).max() < 1e-6


def test_ekf_follows_temperature_column(table, curves):
    from socest.cell_model import curve_at, params_at

    n = 2000
    temps = np.where(np.arange(n) < n // 2, 0.0, 40.0)
    currents = _drive(n, seed=9)
    # build truth piecewise so each half uses its own model
    state = CellState(0.8)
    parts = []
    for lo, hi in ((0, n // 2), (n // 2, n)):
        t = temps[lo]
        seg = synthesize_telemetry(params_at(table, t), curve_at(curves, t), state,
                                   [(i, 1.0) for i in currents[lo:hi]], temp_c=t, t0_s=float(lo))
        parts.append(seg)
        state = CellState(float(seg.soc_true[-1]))
    # second half starts relaxed only if the first ends at rest; compare CC only there
    s = TelemetrySeries(
        np.concatenate([parts[0].t_s[:-1], parts[1].t_s]),
        np.concatenate([parts[0].current_a[:-1], parts[1].current_a]),
        np.concatenate([parts[0].voltage_v[:-1], parts[1].voltage_v]),
        np.concatenate([parts[0].temp_c[:-1], parts[1].temp_c]),
    )
    trace = ekf_run(EkfBelief(CellState(0.8)), s, table, curves)
    assert np.abs(trace.soc_ekf[: n // 2] - parts[0].soc_true[:-1]).max() < 1e-6


def test_cc_trace_columns(params):
    s = series_of([1.0] * 10)
    tr = cc_trace(0.5, s, 5.0)
    assert np.all(np.isnan(tr.soc_ekf))
    assert tr.soc_cc[-1] == pytest.approx(0.5 - 9 / 18000)


def test_capacity_override(params, curve):
    s = series_of([5.0] * 3601, voltage=np.full(3601, 3.7))
    tr = ekf_run(EkfBelief(CellState(1.0)), s, params, curve, capacity_ah=10.0)
    assert tr.soc_cc[-1] == pytest.approx(0.5, abs=1e-12)
