"""Second-order RC equivalent-circuit cell.

State is ``[soc, u1, u2]``: state of charge (fraction) and the voltages
across the two RC branches. Current is discharge-positive, so

    d(soc)/dt = -I / q
    du_i/dt   = -u_i / (R_i C_i) + I / C_i
    V         = OCV(soc) - u1 - u2 - I * R0

The RC branches are discretized with a zero-order hold (exact for
piecewise-constant current); SOC is integrated exactly under the same hold.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from socest import kernels
from socest.errors import ValidationError
from socest.telemetry import TelemetrySeries

SECONDS_PER_HOUR = 3600.0


def _finite(name: str, value) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError, OverflowError):
        raise ValidationError(f"not a number: {value!r}", path=name) from None
    if not math.isfinite(value):
        raise ValidationError(f"non-finite value {value!r}", path=name)
    return value


def _positive(name: str, value) -> float:
    value = _finite(name, value)
    if value <= 0:
        raise ValidationError(f"must be > 0, got {value!r}", path=name)
    return value


@dataclass(frozen=True)
class CellParams:
    """ECM parameters at one temperature.

    Branches are swapped at construction if needed so that
    ``tau1 <= tau2`` (branch 1 is the fast one).
    """

    temp_c: float
    capacity_ah: float
    r0_ohm: float
    r1_ohm: float
    c1_farad: float
    r2_ohm: float
    c2_farad: float

    def __post_init__(self):
        object.__setattr__(self, "temp_c", _finite("temp_c", self.temp_c))
        for f in fields(self)[1:]:
            object.__setattr__(self, f.name, _positive(f.name, getattr(self, f.name)))
        for name in ("tau1", "tau2"):
            tau = getattr(self, name)
            if not (math.isfinite(tau) and tau > 0):
                raise ValidationError(f"time constant {tau!r} not finite and positive", path=name)
        if self.r1_ohm * self.c1_farad > self.r2_ohm * self.c2_farad:
            r1, c1 = self.r1_ohm, self.c1_farad
            object.__setattr__(self, "r1_ohm", self.r2_ohm)
            object.__setattr__(self, "c1_farad", self.c2_farad)
            object.__setattr__(self, "r2_ohm", r1)
            object.__setattr__(self, "c2_farad", c1)

    @property
    def tau1(self) -> float:
        return self.r1_ohm * self.c1_farad

    @property
    def tau2(self) -> float:
        return self.r2_ohm * self.c2_farad

    @property
    def capacity_as(self) -> float:
        return self.capacity_ah * SECONDS_PER_HOUR

    def as_row(self) -> tuple[float, ...]:
        """Kernel parameter row: r0, r1, tau1, r2, tau2, capacity in A*s."""
        return (self.r0_ohm, self.r1_ohm, self.tau1, self.r2_ohm, self.tau2, self.capacity_as)


_PARAM_FIELDS = ("capacity_ah", "r0_ohm", "r1_ohm", "c1_farad", "r2_ohm", "c2_farad")


@dataclass(frozen=True)
class CellParamsTable:
    entries: tuple[CellParams, ...]
    cell: str = "cell"

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise ValidationError("at least one entry required", path="entries")
        for i, (a, b) in enumerate(zip(entries, entries[1:])):
            if not b.temp_c > a.temp_c:
                what = "duplicate" if b.temp_c == a.temp_c else "unsorted"
                raise ValidationError(f"{what} temperature {b.temp_c!r}", path=f"entries[{i + 1}].temp_c")
        object.__setattr__(self, "entries", entries)

    @property
    def temperatures(self) -> tuple[float, ...]:
        return tuple(e.temp_c for e in self.entries)


def params_at(table: CellParamsTable, temp_c: float) -> CellParams:
    """Per-field linear interpolation in temperature, clamped at the ends."""
    temp_c = _finite("temp_c", temp_c)
    entries = table.entries
    if temp_c <= entries[0].temp_c:
        return entries[0]
    if temp_c >= entries[-1].temp_c:
        return entries[-1]
    temps = table.temperatures
    hi = bisect.bisect_left(temps, temp_c)
    if temps[hi] == temp_c:
        return entries[hi]
    a, b = entries[hi - 1], entries[hi]
    w = (temp_c - a.temp_c) / (b.temp_c - a.temp_c)
    values = {name: getattr(a, name) + w * (getattr(b, name) - getattr(a, name)) for name in _PARAM_FIELDS}
    return CellParams(temp_c=temp_c, **values)


@dataclass(frozen=True)
class OcvCurve:
    """Strictly increasing piecewise-linear SOC -> OCV table on [0, 1]."""

    breakpoints: tuple[tuple[float, float], ...]
    socs: np.ndarray = field(init=False, repr=False, compare=False)
    ocvs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        points = []
        for i, pt in enumerate(self.breakpoints):
            try:
                soc, ocv = pt
            except (TypeError, ValueError):
                raise ValidationError("breakpoint must be a (soc, ocv) pair", path=f"points[{i}]") from None
            points.append((_finite(f"points[{i}][0]", soc), _finite(f"points[{i}][1]", ocv)))
        if len(points) < 2:
            raise ValidationError("at least 2 breakpoints required", path="points")
        if points[0][0] != 0.0:
            raise ValidationError("first soc must be 0", path="points[0][0]")
        if points[-1][0] != 1.0:
            raise ValidationError("last soc must be 1", path=f"points[{len(points) - 1}][0]")
        for i in range(1, len(points)):
            if not points[i][0] > points[i - 1][0]:
                raise ValidationError("soc not strictly increasing", path=f"points[{i}][0]")
            if not points[i][1] > points[i - 1][1]:
                raise ValidationError("ocv not strictly increasing", path=f"points[{i}][1]")
        object.__setattr__(self, "breakpoints", tuple(points))
        socs = np.array([p[0] for p in points])
        ocvs = np.array([p[1] for p in points])
        socs.setflags(write=False)
        ocvs.setflags(write=False)
        object.__setattr__(self, "socs", socs)
        object.__setattr__(self, "ocvs", ocvs)

    @classmethod
    def from_arrays(cls, socs: Iterable[float], ocvs: Iterable[float]) -> OcvCurve:
        return cls(tuple(zip(socs, ocvs)))


def _segment(curve: OcvCurve, soc: float) -> int:
    socs = curve.breakpoints
    i = bisect.bisect_right(socs, (soc, math.inf)) - 1
    return min(max(i, 0), len(socs) - 2)


def ocv_lookup(curve: OcvCurve, soc: float) -> float:
    """OCV at ``soc``; clamps to the end values outside [0, 1]."""
    soc = _finite("soc", soc)
    pts = curve.breakpoints
    if soc <= 0.0:
        return pts[0][1]
    if soc >= 1.0:
        return pts[-1][1]
    i = _segment(curve, soc)
    (s0, v0), (s1, v1) = pts[i], pts[i + 1]
    return v0 + (soc - s0) * ((v1 - v0) / (s1 - s0))


def ocv_slope(curve: OcvCurve, soc: float) -> float:
    """dOCV/dSOC of the active segment.

    Right-continuous at interior breakpoints, left segment at soc == 1,
    zero outside [0, 1] to match the clamped lookup.
    """
    soc = _finite("soc", soc)
    if soc < 0.0 or soc > 1.0:
        return 0.0
    i = _segment(curve, soc)
    (s0, v0), (s1, v1) = curve.breakpoints[i], curve.breakpoints[i + 1]
    return (v1 - v0) / (s1 - s0)


def ocv_inverse(curve: OcvCurve, ocv_v: float) -> float:
    """SOC whose OCV equals ``ocv_v``, clamped to [0, 1]."""
    ocv_v = _finite("ocv_v", ocv_v)
    pts = curve.breakpoints
    if ocv_v <= pts[0][1]:
        return 0.0
    if ocv_v >= pts[-1][1]:
        return 1.0
    i = bisect.bisect_right([p[1] for p in pts], ocv_v) - 1
    (s0, v0), (s1, v1) = pts[i], pts[i + 1]
    return s0 + (ocv_v - v0) * (s1 - s0) / (v1 - v0)


def ocv_lookup_array(curve: OcvCurve, soc: np.ndarray) -> np.ndarray:
    """Vectorized :func:`ocv_lookup` (same arithmetic, element-wise)."""
    soc = np.asarray(soc, dtype=float)
    s, v = curve.socs, curve.ocvs
    i = np.clip(np.searchsorted(s, soc, side="right") - 1, 0, s.size - 2)
    slope = (v[i + 1] - v[i]) / (s[i + 1] - s[i])
    out = v[i] + (soc - s[i]) * slope
    out = np.where(soc <= 0.0, v[0], out)
    return np.where(soc >= 1.0, v[-1], out)


@dataclass(frozen=True)
class OcvCurveSet:
    """OCV curves indexed by temperature (strictly increasing)."""

    curves: tuple[tuple[float, OcvCurve], ...]

    def __post_init__(self):
        curves = tuple((float(t), c) for t, c in self.curves)
        if not curves:
            raise ValidationError("at least one curve required", path="curves")
        for i in range(1, len(curves)):
            if not curves[i][0] > curves[i - 1][0]:
                raise ValidationError("temperatures not strictly increasing", path=f"curves[{i}].temp_c")
        object.__setattr__(self, "curves", curves)

    @classmethod
    def single(cls, curve: OcvCurve, temp_c: float = 25.0) -> OcvCurveSet:
        return cls(((temp_c, curve),))

    @property
    def temperatures(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.curves)


def curve_at(curves: OcvCurveSet | OcvCurve, temp_c: float) -> OcvCurve:
    """OCV curve for ``temp_c``.

    Between two curves sharing a SOC grid the OCV values are interpolated
    per breakpoint; otherwise the nearest curve is used (lower on ties).
    """
    if isinstance(curves, OcvCurve):
        return curves
    temp_c = _finite("temp_c", temp_c)
    items = curves.curves
    if temp_c <= items[0][0]:
        return items[0][1]
    if temp_c >= items[-1][0]:
        return items[-1][1]
    hi = bisect.bisect_left(curves.temperatures, temp_c)
    (t0, c0), (t1, c1) = items[hi - 1], items[hi]
    if t1 == temp_c:
        return c1
    if np.array_equal(c0.socs, c1.socs):
        w = (temp_c - t0) / (t1 - t0)
        return OcvCurve.from_arrays(c0.socs, c0.ocvs + w * (c1.ocvs - c0.ocvs))
    return c0 if temp_c - t0 <= t1 - temp_c else c1


@dataclass(frozen=True)
class CellState:
    soc: float
    u1_v: float = 0.0
    u2_v: float = 0.0

    def __post_init__(self):
        soc = _finite("soc", self.soc)
        if not 0.0 <= soc <= 1.0:
            raise ValidationError(f"soc {soc!r} outside [0, 1]", path="soc")
        object.__setattr__(self, "soc", soc)
        object.__setattr__(self, "u1_v", _finite("u1_v", self.u1_v))
        object.__setattr__(self, "u2_v", _finite("u2_v", self.u2_v))

    def as_array(self) -> np.ndarray:
        return np.array([self.soc, self.u1_v, self.u2_v])


def clamp_soc(soc: float) -> float:
    return 0.0 if soc < 0.0 else 1.0 if soc > 1.0 else soc


def terminal_voltage(params: CellParams, curve: OcvCurve, state: CellState, current_a: float) -> float:
    return ocv_lookup(curve, state.soc) - state.u1_v - state.u2_v - current_a * params.r0_ohm


def _decay(dt_s: float, tau: float) -> float:
    return math.exp(-dt_s / tau)


def state_transition(params: CellParams, dt_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Discrete ``A`` (3x3) and ``B`` (3,) for ``x' = A x + B I``."""
    dt_s = _positive("dt_s", dt_s)
    e1 = _decay(dt_s, params.tau1)
    e2 = _decay(dt_s, params.tau2)
    a = np.diag([1.0, e1, e2])
    b = np.array([-dt_s / params.capacity_as, params.r1_ohm * (1.0 - e1), params.r2_ohm * (1.0 - e2)])
    return a, b


def step(
    params: CellParams,
    curve: OcvCurve,
    state: CellState,
    current_a: float,
    dt_s: float,
) -> tuple[CellState, float]:
    """Advance one interval of constant current; returns (state, terminal V)."""
    current_a = _finite("current_a", current_a)
    dt_s = _positive("dt_s", dt_s)
    e1 = _decay(dt_s, params.tau1)
    e2 = _decay(dt_s, params.tau2)
    soc = clamp_soc(state.soc + (-dt_s / params.capacity_as) * current_a)
    u1 = e1 * state.u1_v + (params.r1_ohm * (1.0 - e1)) * current_a
    u2 = e2 * state.u2_v + (params.r2_ohm * (1.0 - e2)) * current_a
    new = CellState(soc, u1, u2)
    return new, terminal_voltage(params, curve, new, current_a)


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Forward-simulation output; row 0 is the initial state at t = 0.

    ``terminal_v[k]`` for k >= 1 is read at the end of interval k with its
    current still flowing; ``terminal_v[0]`` is the rest reading.
    """

    t_s: np.ndarray
    current_a: np.ndarray
    soc: np.ndarray
    u1_v: np.ndarray
    u2_v: np.ndarray
    terminal_v: np.ndarray

    def __len__(self) -> int:
        return self.t_s.size

    def state(self, k: int) -> CellState:
        return CellState(float(self.soc[k]), float(self.u1_v[k]), float(self.u2_v[k]))


def _drive_arrays(drive) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(drive, tuple) and len(drive) == 2 and isinstance(drive[0], np.ndarray):
        currents, dts = drive
    else:
        drive = list(drive)
        if drive and np.ndim(drive) != 2:
            raise ValidationError("drive must be (current_a, dt_s) pairs", path="drive")
        arr = np.array(drive, dtype=float).reshape(-1, 2)
        currents, dts = arr[:, 0], arr[:, 1]
    currents = np.ascontiguousarray(currents, dtype=float)
    dts = np.ascontiguousarray(dts, dtype=float)
    if currents.size == 0:
        raise ValidationError("drive must not be empty", path="drive")
    if currents.shape != dts.shape:
        raise ValidationError("current and dt lengths differ", path="drive")
    if not np.all(np.isfinite(currents)):
        raise ValidationError("non-finite current", path="drive")
    bad = ~(np.isfinite(dts) & (dts > 0))
    if bad.any():
        raise ValidationError("dt_s must be finite and > 0", path=f"drive[{int(np.argmax(bad))}]")
    return currents, dts


def simulate(
    params: CellParams,
    curve: OcvCurve,
    initial: CellState,
    drive: Sequence[tuple[float, float]] | tuple[np.ndarray, np.ndarray],
) -> SimulationTrace:
    """Apply :func:`step` over each ``(current_a, dt_s)`` segment."""
    currents, dts = _drive_arrays(drive)
    n = currents.size
    soc = np.empty(n + 1)
    u1 = np.empty(n + 1)
    u2 = np.empty(n + 1)
    volt = np.empty(n + 1)
    r0, r1, tau1, r2, tau2, cap_as = params.as_row()
    kernels.simulate_kernel(
        currents, dts, r0, r1, tau1, r2, tau2, cap_as,
        np.ascontiguousarray(curve.socs), np.ascontiguousarray(curve.ocvs),
        initial.soc, initial.u1_v, initial.u2_v, soc, u1, u2, volt,
    )
    t = np.concatenate(([0.0], np.cumsum(dts)))
    cur = np.concatenate(([0.0], currents))
    return SimulationTrace(t, cur, soc, u1, u2, volt)


def synthesize_telemetry(
    params: CellParams,
    curve: OcvCurve,
    initial: CellState,
    drive,
    temp_c: float | None = None,
    t0_s: float = 0.0,
) -> TelemetrySeries:
    """Noiseless sampled telemetry for a piecewise-constant drive.

    One sample per segment boundary (``len(drive) + 1`` rows). Sample k
    carries the current of segment k (the last sample repeats the final
    segment's current) and the terminal voltage read with it flowing.
    """
    currents, dts = _drive_arrays(drive)
    trace = simulate(params, curve, initial, (currents, dts))
    cur = np.concatenate((currents, currents[-1:]))
    volt = ocv_lookup_array(curve, trace.soc) - trace.u1_v - trace.u2_v - cur * params.r0_ohm
    temp = np.full(cur.size, params.temp_c if temp_c is None else temp_c)
    return TelemetrySeries(
        t_s=t0_s + trace.t_s,
        current_a=cur,
        voltage_v=volt,
        temp_c=temp,
        soc_true=trace.soc,
        source="synthetic",
        capacity_ah=params.capacity_ah,
    )
