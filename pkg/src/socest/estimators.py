"""Coulomb counting and the extended Kalman filter.

Both estimators follow the telemetry sample-and-hold convention: the current
at sample k flows until sample k+1. The filter state is ``[soc, u1, u2]``
and the only measurement is terminal voltage, so the gain is a 3-vector
and the innovation covariance a scalar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from socest import kernels
from socest.cell_model import (
    CellParams,
    CellParamsTable,
    CellState,
    OcvCurve,
    OcvCurveSet,
    clamp_soc,
    curve_at,
    ocv_lookup,
    ocv_slope,
    params_at,
    state_transition,
)
from socest.errors import DegenerateUpdateError, ValidationError
from socest.telemetry import TelemetrySeries

DEFAULT_Q = np.diag([1e-7, 1e-8, 1e-8])
DEFAULT_R = 1e-4
DEFAULT_P0 = np.diag([0.01, 1e-4, 1e-4])

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10


def _matrix(name: str, value) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float, copy=True)
    except (TypeError, ValueError):
        raise ValidationError("not a numeric matrix", path=name) from None
    if arr.shape == (3,):
        arr = np.diag(arr)
    if arr.shape != (3, 3):
        raise ValidationError(f"expected 3x3, got shape {arr.shape}", path=name)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("non-finite entry", path=name)
    if np.max(np.abs(arr - arr.T)) > SYMMETRY_TOL:
        raise ValidationError("not symmetric", path=name)
    if np.min(np.linalg.eigvalsh(arr)) < -PSD_TOL:
        raise ValidationError("not positive semi-definite", path=name)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class EkfBelief:
    """Filter mean, covariance and the noise model it is tuned with.

    ``cov``, ``process_noise`` also accept a length-3 diagonal.
    """

    mean: CellState
    cov: np.ndarray = field(default_factory=lambda: DEFAULT_P0)
    process_noise: np.ndarray = field(default_factory=lambda: DEFAULT_Q)
    measurement_noise: float = DEFAULT_R

    def __post_init__(self):
        object.__setattr__(self, "cov", _matrix("cov", self.cov))
        object.__setattr__(self, "process_noise", _matrix("process_noise", self.process_noise))
        r = self.measurement_noise
        if not (isinstance(r, (int, float, np.floating)) and math.isfinite(r) and r > 0):
            raise ValidationError(f"must be finite and > 0, got {r!r}", path="measurement_noise")
        object.__setattr__(self, "measurement_noise", float(r))

    def _replace(self, mean: CellState, cov: np.ndarray) -> EkfBelief:
        return EkfBelief(mean, cov, self.process_noise, self.measurement_noise)


def _check(name: str, value) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"non-finite value {value!r}", path=name)
    return value


def cc_step(soc: float, current_a: float, dt_s: float, capacity_ah: float) -> float:
    """One Coulomb-counting interval (discharge-positive current)."""
    soc = _check("soc", soc)
    current_a = _check("current_a", current_a)
    dt_s = _check("dt_s", dt_s)
    capacity_ah = _check("capacity_ah", capacity_ah)
    if dt_s <= 0:
        raise ValidationError("must be > 0", path="dt_s")
    if capacity_ah <= 0:
        raise ValidationError("must be > 0", path="capacity_ah")
    return clamp_soc(soc - current_a * dt_s / (capacity_ah * 3600.0))


def cc_run(initial_soc: float, series: TelemetrySeries, capacity_ah: float) -> np.ndarray:
    """SOC at every sample time by left-rectangle current integration.

    Any error in ``initial_soc`` is carried through unchanged.
    """
    initial_soc = _check("initial_soc", initial_soc)
    capacity_ah = _check("capacity_ah", capacity_ah)
    if capacity_ah <= 0:
        raise ValidationError("must be > 0", path="capacity_ah")
    if len(series) == 0:
        raise ValidationError("series is empty", path="series")
    out = np.empty(len(series))
    kernels.cc_kernel(series.t_s, series.current_a, capacity_ah * 3600.0, clamp_soc(initial_soc), out)
    return out


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def ekf_predict(belief: EkfBelief, params: CellParams, current_a: float, dt_s: float) -> EkfBelief:
    """Propagate mean through the cell dynamics and ``P <- A P A^T + Q``."""
    current_a = _check("current_a", current_a)
    a, b = state_transition(params, dt_s)
    x = a @ belief.mean.as_array() + b * current_a
    p = _symmetrize(a @ belief.cov @ a.T + belief.process_noise)
    return belief._replace(CellState(clamp_soc(x[0]), x[1], x[2]), p)


class UpdateResult(NamedTuple):
    belief: EkfBelief
    innovation_v: float
    gain: np.ndarray


def predicted_voltage(params: CellParams, curve: OcvCurve, state: CellState, current_a: float) -> float:
    return ocv_lookup(curve, state.soc) - state.u1_v - state.u2_v - current_a * params.r0_ohm


def ekf_update(
    belief: EkfBelief,
    params: CellParams,
    curve: OcvCurve,
    v_measured: float,
    current_a: float,
    joseph: bool = False,
) -> UpdateResult:
    """Correct the belief with one terminal-voltage reading.

    Uses ``P <- (I - K C) P`` unless ``joseph`` is set.
    """
    v_measured = _check("v_measured", v_measured)
    current_a = _check("current_a", current_a)
    mean = belief.mean
    c = np.array([ocv_slope(curve, mean.soc), -1.0, -1.0])
    p = belief.cov
    pc = p @ c
    s = float(c @ pc) + belief.measurement_noise
    if not s > 0:
        raise DegenerateUpdateError(f"innovation variance {s!r} <= 0")
    gain = pc / s
    innovation = v_measured - predicted_voltage(params, curve, mean, current_a)
    x = mean.as_array() + gain * innovation
    if joseph:
        m = np.eye(3) - np.outer(gain, c)
        p_new = m @ p @ m.T + belief.measurement_noise * np.outer(gain, gain)
    else:
        p_new = (np.eye(3) - np.outer(gain, c)) @ p
    new = belief._replace(CellState(clamp_soc(x[0]), x[1], x[2]), _symmetrize(p_new))
    return UpdateResult(new, innovation, gain)


@dataclass(frozen=True, eq=False)
class EstimateTrace:
    """Per-sample output of both estimators.

    Columns for an estimator that was not run are NaN. ``u1_v``/``u2_v``
    are the filter's branch-voltage estimates. ``cov`` and ``cov_pred``
    (n x 3 x 3, post-update and post-predict) are only kept on request.
    """

    t_s: np.ndarray
    soc_cc: np.ndarray
    soc_ekf: np.ndarray
    soc_true: np.ndarray | None
    v_measured: np.ndarray
    v_predicted: np.ndarray
    innovation_v: np.ndarray
    cov_soc: np.ndarray
    u1_v: np.ndarray | None = None
    u2_v: np.ndarray | None = None
    cov: np.ndarray | None = None
    cov_pred: np.ndarray | None = None

    def __post_init__(self):
        n = self.t_s.size
        for name in ("soc_cc", "soc_ekf", "v_measured", "v_predicted", "innovation_v", "cov_soc"):
            if getattr(self, name).size != n:
                raise ValidationError(f"length != {n}", path=name)
        if n > 1 and not np.all(np.diff(self.t_s) > 0):
            raise ValidationError("time not strictly increasing", path="t_s")
        for name in ("soc_cc", "soc_ekf", "soc_true"):
            col = getattr(self, name)
            if col is None:
                continue
            ok = np.isnan(col) | ((col >= 0) & (col <= 1))
            if not ok.all():
                raise ValidationError("soc outside [0, 1]", path=name, row=int(np.argmin(ok)) + 1)

    def __len__(self) -> int:
        return self.t_s.size

    def column(self, method: str) -> np.ndarray:
        if method not in ("cc", "ekf"):
            raise ValidationError(f"unknown method {method!r}", path="method")
        return self.soc_cc if method == "cc" else self.soc_ekf


def _sample_temps(series: TelemetrySeries, default_temp_c: float) -> np.ndarray:
    temps = series.temp_c.copy()
    temps[np.isnan(temps)] = default_temp_c
    return temps


def _param_rows(table, temps: np.ndarray, capacity_ah: float | None):
    uniq, idx = np.unique(temps, return_inverse=True)
    plist = []
    for t in uniq:
        p = table if isinstance(table, CellParams) else params_at(table, float(t))
        if capacity_ah is not None:
            p = CellParams(p.temp_c, capacity_ah, p.r0_ohm, p.r1_ohm, p.c1_farad, p.r2_ohm, p.c2_farad)
        plist.append(p)
    ptab = np.array([p.as_row() for p in plist], dtype=float)
    return plist, ptab, idx.astype(np.int64), uniq


def _curve_rows(curves, uniq: np.ndarray, idx: np.ndarray):
    clist = [curve_at(curves, float(t)) for t in uniq]
    width = max(c.socs.size for c in clist)
    c_soc = np.zeros((len(clist), width))
    c_ocv = np.zeros((len(clist), width))
    c_len = np.zeros(len(clist), dtype=np.int64)
    for j, c in enumerate(clist):
        c_soc[j, : c.socs.size] = c.socs
        c_ocv[j, : c.ocvs.size] = c.ocvs
        c_len[j] = c.socs.size
    return c_soc, c_ocv, c_len, idx.copy()


def ekf_run(
    initial: EkfBelief,
    series: TelemetrySeries,
    table: CellParamsTable | CellParams,
    curves: OcvCurveSet | OcvCurve,
    capacity_ah: float | None = None,
    *,
    cc_initial_soc: float | None = None,
    joseph: bool = False,
    default_temp_c: float = 25.0,
    record_cov: bool = False,
) -> EstimateTrace:
    """Run the EKF and Coulomb counting side by side over ``series``.

    ``initial`` is the belief at the first sample, before its voltage is
    used. Parameters and OCV curve follow each sample's temperature
    (``default_temp_c`` where it is missing). ``capacity_ah`` overrides the
    table capacity for both estimators. Coulomb counting starts from
    ``cc_initial_soc``, defaulting to the EKF's initial SOC.
    """
    n = len(series)
    if n < 2:
        raise ValidationError(f"need at least 2 samples, got {n}", path="series")
    if not series.has_voltage:
        raise ValidationError("series carries no voltage readings", path="voltage_v")
    temps = _sample_temps(series, default_temp_c)
    plist, ptab, pidx, uniq = _param_rows(table, temps, capacity_ah)
    c_soc, c_ocv, c_len, cidx = _curve_rows(curves, uniq, pidx)

    x = np.zeros((n, 3))
    vpred = np.empty(n)
    innov = np.empty(n)
    cov00 = np.empty(n)
    p_out = np.empty((n, 9) if record_cov else (0, 9))
    pp_out = np.empty((n, 9) if record_cov else (0, 9))
    status = kernels.ekf_kernel(
        series.t_s, series.current_a, series.voltage_v,
        pidx, ptab, cidx, c_soc, c_ocv, c_len,
        np.ascontiguousarray(initial.mean.as_array()),
        np.ascontiguousarray(initial.cov.reshape(-1)),
        np.ascontiguousarray(initial.process_noise.reshape(-1)),
        initial.measurement_noise, bool(joseph),
        x, vpred, innov, cov00, p_out, pp_out,
    )
    if status >= 0:
        raise DegenerateUpdateError("innovation variance <= 0", row=int(status))

    cc_cap = plist[pidx[0]].capacity_ah
    cc0 = initial.mean.soc if cc_initial_soc is None else cc_initial_soc
    soc_cc = cc_run(cc0, series, cc_cap)
    return EstimateTrace(
        t_s=series.t_s,
        soc_cc=soc_cc,
        soc_ekf=x[:, 0].copy(),
        soc_true=series.soc_true,
        v_measured=series.voltage_v,
        v_predicted=vpred,
        innovation_v=innov,
        cov_soc=cov00,
        u1_v=x[:, 1].copy(),
        u2_v=x[:, 2].copy(),
        cov=p_out.reshape(n, 3, 3) if record_cov else None,
        cov_pred=pp_out.reshape(n, 3, 3) if record_cov else None,
    )


def cc_trace(initial_soc: float, series: TelemetrySeries, capacity_ah: float) -> EstimateTrace:
    """Coulomb counting alone, in trace form (EKF columns NaN)."""
    soc = cc_run(initial_soc, series, capacity_ah)
    nan = np.full(len(series), np.nan)
    return EstimateTrace(
        t_s=series.t_s,
        soc_cc=soc,
        soc_ekf=nan,
        soc_true=series.soc_true,
        v_measured=series.voltage_v,
        v_predicted=nan,
        innovation_v=nan,
        cov_soc=nan,
    )
