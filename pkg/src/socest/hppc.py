"""HPPC pulse profiles and parameter identification from pulse telemetry.

Identification is the usual two-part method: R0 from the instantaneous
voltage step at a current edge, then the two RC branches from a
double-exponential fit to the zero-current relaxation that follows the
pulse. OCV breakpoints come from the last sample of each long rest.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from socest.cell_model import CellParams, OcvCurve
from socest.errors import (
    DegenerateFitError,
    FitFailureError,
    InsufficientDataError,
    InvalidDataError,
    NoStepError,
    NumericalError,
    ValidationError,
)
from socest.estimators import cc_run
from socest.telemetry import TelemetrySeries

log = logging.getLogger(__name__)

LABELS = ("rest", "discharge_pulse", "regen_pulse", "soc_step_discharge")

STAGE_REST_S = 3600.0
PULSE_S = 10.0
RELAX_S = 600.0


@dataclass(frozen=True)
class Segment:
    current_a: float
    duration_s: float
    label: str


@dataclass(frozen=True)
class CurrentProfile:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        segs = tuple(s if isinstance(s, Segment) else Segment(*s) for s in self.segments)
        if not segs:
            raise ValidationError("profile has no segments", path="segments")
        for i, s in enumerate(segs):
            if not (math.isfinite(s.duration_s) and s.duration_s > 0):
                raise ValidationError("duration must be > 0", path=f"segments[{i}].duration_s")
            if not math.isfinite(s.current_a):
                raise ValidationError("non-finite current", path=f"segments[{i}].current_a")
            if s.label not in LABELS:
                raise ValidationError(f"unknown label {s.label!r}", path=f"segments[{i}].label")
            if s.label == "rest" and s.current_a != 0.0:
                raise ValidationError("rest segment must carry zero current", path=f"segments[{i}].current_a")
        object.__setattr__(self, "segments", segs)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def duration_s(self) -> float:
        return math.fsum(s.duration_s for s in self.segments)

    @property
    def net_charge_as(self) -> float:
        """Discharged charge in ampere-seconds (positive = removed)."""
        return math.fsum(s.current_a * s.duration_s for s in self.segments)

    def start_times(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum([s.duration_s for s in self.segments])))

    def to_drive(self, sample_dt_s: float) -> tuple[np.ndarray, np.ndarray]:
        """Piecewise-constant drive resampled to ``sample_dt_s`` steps.

        A segment that is not a whole number of steps ends with one short
        step, so segment edges are preserved.
        """
        if not (math.isfinite(sample_dt_s) and sample_dt_s > 0):
            raise ValidationError("must be > 0", path="sample_dt_s")
        currents, dts = [], []
        for s in self.segments:
            n = round(s.duration_s / sample_dt_s)
            if n >= 1 and abs(n * sample_dt_s - s.duration_s) <= 1e-9 * max(s.duration_s, 1.0):
                steps = [sample_dt_s] * n
            else:
                n = int(s.duration_s // sample_dt_s)
                steps = [sample_dt_s] * n
                rem = s.duration_s - n * sample_dt_s
                if rem > 1e-9 * max(s.duration_s, 1.0) or not steps:
                    steps.append(rem if rem > 0 else s.duration_s)
            currents.extend([s.current_a] * len(steps))
            dts.extend(steps)
        return np.array(currents), np.array(dts)


def generate_profile(
    capacity_ah: float,
    discharge_c_rate: float = 1.0,
    regen_c_rate: float = 0.75,
    soc_step: float = 0.1,
    step_c_rate: float = 1.0,
    final_rest_s: float = STAGE_REST_S,
) -> CurrentProfile:
    """HPPC profile from full charge to empty.

    Each SOC level gets: 1 h rest, discharge pulse (10 s), 10 min rest,
    regen pulse (10 s), 10 min rest, then a 1C-by-default discharge sized so
    the stage removes exactly ``soc_step`` of capacity including the pulses.
    A trailing rest (``final_rest_s``, 0 to omit) records the empty OCV.
    """
    for name, v in (("capacity_ah", capacity_ah), ("discharge_c_rate", discharge_c_rate),
                    ("regen_c_rate", regen_c_rate), ("step_c_rate", step_c_rate)):
        if not (math.isfinite(v) and v > 0):
            raise ValidationError(f"must be > 0, got {v!r}", path=name)
    if not (math.isfinite(soc_step) and 0 < soc_step <= 0.5):
        raise ValidationError(f"must lie in (0, 0.5], got {soc_step!r}", path="soc_step")
    levels = round(1.0 / soc_step)
    if abs(levels * soc_step - 1.0) > 1e-9:
        raise ValidationError(f"{soc_step!r} does not divide 1 evenly", path="soc_step")
    if not (math.isfinite(final_rest_s) and final_rest_s >= 0):
        raise ValidationError("must be >= 0", path="final_rest_s")

    i_dis = capacity_ah * discharge_c_rate
    i_regen = -capacity_ah * regen_c_rate
    i_step = capacity_ah * step_c_rate
    pulse_net = i_dis * PULSE_S + i_regen * PULSE_S
    step_charge = soc_step * capacity_ah * 3600.0 - pulse_net
    if step_charge <= 0:
        raise ValidationError("pulses alone remove more than one SOC step", path="soc_step")

    segs = []
    for _ in range(levels):
        segs += [
            Segment(0.0, STAGE_REST_S, "rest"),
            Segment(i_dis, PULSE_S, "discharge_pulse"),
            Segment(0.0, RELAX_S, "rest"),
            Segment(i_regen, PULSE_S, "regen_pulse"),
            Segment(0.0, RELAX_S, "rest"),
            Segment(i_step, step_charge / i_step, "soc_step_discharge"),
        ]
    if final_rest_s > 0:
        segs.append(Segment(0.0, final_rest_s, "rest"))
    return CurrentProfile(tuple(segs))


def profile_to_series(profile: CurrentProfile, temp_c: float | None = None) -> TelemetrySeries:
    """One row per segment start plus an end row; voltage left empty."""
    t = profile.start_times()
    cur = np.array([s.current_a for s in profile.segments] + [0.0])
    temp = None if temp_c is None else np.full(t.size, float(temp_c))
    return TelemetrySeries(t_s=t, current_a=cur, temp_c=temp, source="hppc-profile")


def profile_labels(profile: CurrentProfile) -> list[str]:
    return [s.label for s in profile.segments] + ["end"]


def profile_from_series(series: TelemetrySeries, labels=None) -> CurrentProfile:
    """Inverse of :func:`profile_to_series`; the last row only marks the end."""
    if len(series) < 2:
        raise ValidationError("profile needs at least 2 rows", path="series")
    segs = []
    for k in range(len(series) - 1):
        cur = float(series.current_a[k])
        dur = float(series.t_s[k + 1] - series.t_s[k])
        if labels is not None and labels[k]:
            label = labels[k]
        elif cur == 0.0:
            label = "rest"
        elif cur < 0:
            label = "regen_pulse"
        else:
            label = "discharge_pulse" if dur <= 30.0 else "soc_step_discharge"
        segs.append(Segment(cur, dur, label))
    return CurrentProfile(tuple(segs))


def identify_r0(pulse_telemetry: TelemetrySeries, threshold_a: float = 0.1) -> float:
    """Ohmic resistance from the first current edge of at least ``threshold_a``.

    Uses the last sample before and the first sample after the edge.
    """
    cur = pulse_telemetry.current_a
    volt = pulse_telemetry.voltage_v
    if cur.size < 2:
        raise NoStepError("need samples on both sides of a current step")
    jumps = np.abs(np.diff(cur)) >= threshold_a
    if not jumps.any():
        raise NoStepError(f"no current step >= {threshold_a} A")
    k = int(np.argmax(jumps))
    dv = volt[k + 1] - volt[k]
    if not math.isfinite(dv):
        raise InvalidDataError("missing voltage at the step edge", row=k + 1)
    return abs(dv) / abs(cur[k + 1] - cur[k])


@dataclass(frozen=True)
class RelaxationFit:
    r1_ohm: float
    c1_farad: float
    r2_ohm: float
    c2_farad: float
    fit_residual_v: float
    tau1_s: float
    tau2_s: float
    a1_v: float
    a2_v: float
    v_inf: float
    iterations: int
    residual_history: tuple[float, ...] = field(repr=False)


def _double_exp(theta, t):
    v_inf, a1, a2, lt1, lt2 = theta
    tau1, tau2 = math.exp(lt1), math.exp(lt2)
    e1 = np.exp(-t / tau1)
    e2 = np.exp(-t / tau2)
    model = v_inf - a1 * e1 - a2 * e2
    jac = np.column_stack((np.ones_like(t), -e1, -e2, -a1 * e1 * (t / tau1), -a2 * e2 * (t / tau2)))
    return model, jac


def _single_exp(theta, t):
    v_inf, a, lt = theta
    tau = math.exp(lt)
    e = np.exp(-t / tau)
    model = v_inf - a * e
    jac = np.column_stack((np.ones_like(t), -e, -a * e * (t / tau)))
    return model, jac


def levenberg_marquardt(func, theta0, t, y, max_iter: int = 200):
    """Minimize ``|func(theta, t)[0] - y|^2`` by damped Gauss-Newton.

    Returns ``(theta, rms_history, iterations, converged)``; the history
    holds the RMS residual after each accepted step (non-increasing).
    """
    theta = np.array(theta0, dtype=float)
    model, jac = func(theta, t)
    r = model - y
    cost = float(r @ r)
    history = [math.sqrt(cost / y.size)]
    lam = 1e-3
    for it in range(1, max_iter + 1):
        g = jac.T @ r
        h = jac.T @ jac
        d = np.diag(h).copy()
        d[d <= 0] = 1e-30
        accepted = False
        while lam <= 1e16:
            try:
                delta = np.linalg.solve(h + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + delta
            with np.errstate(over="ignore", invalid="ignore"):
                t_model, t_jac = func(trial, t)
            t_r = t_model - y
            t_cost = float(t_r @ t_r)
            if math.isfinite(t_cost) and t_cost < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at working precision
            return theta, history, it, True
        small_step = np.max(np.abs(delta)) <= 1e-12 * (np.max(np.abs(theta)) + 1e-12)
        small_gain = cost - t_cost <= 1e-14 * cost
        theta, r, jac, cost = trial, t_r, t_jac, t_cost
        history.append(math.sqrt(cost / y.size))
        lam = max(lam / 10.0, 1e-12)
        if small_step or small_gain or cost == 0.0:
            return theta, history, it, True
    return theta, history, max_iter, False


def _rest_window(series: TelemetrySeries, rest_current_a: float):
    t = series.t_s
    v = series.voltage_v
    if t.size < 20:
        raise InsufficientDataError(f"need >= 20 samples, got {t.size}")
    if t[-1] - t[0] < 60.0:
        raise InsufficientDataError(f"need >= 60 s of rest, got {t[-1] - t[0]:g} s")
    if np.any(np.abs(series.current_a) > rest_current_a):
        raise InvalidDataError("relaxation window carries current")
    if np.any(np.isnan(v)):
        raise InvalidDataError("relaxation window has missing voltage")
    return t - t[0], v


def fit_relaxation(
    relax_telemetry: TelemetrySeries,
    initial_guess: tuple[float, float, float, float] | None = None,
    *,
    pulse_current_a: float | None = None,
    pulse_duration_s: float | None = None,
    noise_v: float = 1e-5,
    max_iter: int = 200,
    rest_current_a: float = 0.05,
) -> RelaxationFit:
    """Fit ``V(t) = V_inf - a1 exp(-t/tau1) - a2 exp(-t/tau2)`` to a rest window.

    ``initial_guess`` is ``(a1, tau1, a2, tau2)``. Branch resistance is
    ``a_i / (I (1 - exp(-T/tau_i)))`` for a pulse of current ``I`` and
    duration ``T``; without ``pulse_duration_s`` the pulse is taken as long
    enough for both branches to saturate (``a_i / I``). Without
    ``pulse_current_a`` the amplitudes are reported with unit current.

    Raises :class:`DegenerateFitError` when one exponential already explains
    the data to within ``noise_v`` RMS (a 1RC cell), and
    :class:`FitFailureError` when no start converges in ``max_iter``.
    """
    t, v = _rest_window(relax_telemetry, rest_current_a)
    window = float(t[-1])
    total = float(v[-1] - v[0])

    single0 = (v[-1], total, math.log(window / 5.0))
    th1, hist1, _, _ = levenberg_marquardt(_single_exp, single0, t, v, max_iter)
    if hist1[-1] <= noise_v:
        raise DegenerateFitError(
            f"single exponential fits to {hist1[-1]:.3g} V RMS (noise {noise_v:g} V); use a 1RC model"
        )

    if initial_guess is None:
        starts = [(total / 2, window / 10, total / 2, window / 2)]
        # fallbacks for windows much longer than the fast time constant
        starts += [(total / 2, window / 60, total / 2, window / 5), (total * 0.8, window / 200, total * 0.2, window / 10)]
    else:
        starts = [tuple(initial_guess)]
    best = None
    for a1, tau1, a2, tau2 in starts:
        theta0 = (float(v[-1]), a1, a2, math.log(tau1), math.log(tau2))
        theta, hist, iters, ok = levenberg_marquardt(_double_exp, theta0, t, v, max_iter)
        if best is None or (ok, -hist[-1]) > (best[3], -best[1][-1]):
            best = (theta, hist, iters, ok)
    theta, hist, iters, ok = best
    if not ok:
        raise FitFailureError(f"no convergence in {max_iter} iterations", hist[-1])

    v_inf, a1, a2 = (float(x) for x in theta[:3])
    tau1, tau2 = math.exp(theta[3]), math.exp(theta[4])
    if tau1 > tau2:
        a1, a2, tau1, tau2 = a2, a1, tau2, tau1
    if tau2 / tau1 < 1.01:
        raise DegenerateFitError(f"time constants coincide ({tau1:.4g} s, {tau2:.4g} s); use a 1RC model")

    cur = 1.0 if pulse_current_a is None else float(pulse_current_a)
    if cur == 0.0:
        raise ValidationError("pulse current must be non-zero", path="pulse_current_a")

    def branch(a, tau):
        gain = 1.0 if pulse_duration_s is None else 1.0 - math.exp(-pulse_duration_s / tau)
        return a / (cur * gain)

    r1, r2 = branch(a1, tau1), branch(a2, tau2)
    if not (r1 > 0 and r2 > 0):
        raise DegenerateFitError(f"non-positive branch resistance ({r1:.3g}, {r2:.3g} ohm)")
    return RelaxationFit(
        r1_ohm=r1,
        c1_farad=tau1 / r1,
        r2_ohm=r2,
        c2_farad=tau2 / r2,
        fit_residual_v=hist[-1],
        tau1_s=tau1,
        tau2_s=tau2,
        a1_v=a1,
        a2_v=a2,
        v_inf=v_inf,
        iterations=iters,
        residual_history=tuple(hist),
    )


@dataclass(frozen=True)
class _Run:
    start: int
    stop: int
    current_a: float
    t_start: float
    t_end: float

    @property
    def duration_s(self) -> float:
        return self.t_end - self.t_start


def _constant_runs(series: TelemetrySeries, edge_threshold_a: float) -> list[_Run]:
    cur = series.current_a
    t = series.t_s
    edges = np.flatnonzero(np.abs(np.diff(cur)) >= edge_threshold_a) + 1
    bounds = [0, *edges.tolist(), cur.size]
    runs = []
    for a, b in zip(bounds, bounds[1:]):
        t_end = t[b] if b < cur.size else t[-1]
        runs.append(_Run(a, b, float(np.mean(cur[a:b])), float(t[a]), float(t_end)))
    return runs


def extract_ocv(
    hppc_run: TelemetrySeries,
    capacity_ah: float,
    *,
    initial_soc: float = 1.0,
    min_rest_s: float = RELAX_S,
    edge_threshold_a: float = 0.1,
    rest_current_a: float = 0.05,
) -> OcvCurve:
    """OCV breakpoints from the final sample of every rest of ``min_rest_s`` or more.

    SOC is Coulomb-counted from ``initial_soc``. Missing ends at SOC 0 and 1
    are added by linear extension.
    """
    if np.all(np.isnan(hppc_run.voltage_v)):
        raise InsufficientDataError("run carries no voltage readings")
    soc = cc_run(initial_soc, hppc_run, capacity_ah)
    points = []
    for run in _constant_runs(hppc_run, edge_threshold_a):
        if abs(run.current_a) <= rest_current_a and run.duration_s >= min_rest_s - 1e-6:
            k = run.stop - 1
            if not math.isnan(hppc_run.voltage_v[k]):
                points.append((float(soc[k]), float(hppc_run.voltage_v[k])))
    if len(points) < 2:
        raise InsufficientDataError(f"need >= 2 rest windows of >= {min_rest_s:g} s, found {len(points)}")

    points.sort()
    merged = []
    for s, v in points:
        if merged and s - merged[-1][0] <= 1e-9:
            merged[-1] = (merged[-1][0], 0.5 * (merged[-1][1] + v))
        else:
            merged.append((s, v))
    if len(merged) < 2:
        raise InsufficientDataError("rest windows do not span distinct SOC levels")
    for i in range(1, len(merged)):
        if not merged[i][1] > merged[i - 1][1]:
            raise InvalidDataError(
                f"rest voltage {merged[i][1]:.6g} V at soc {merged[i][0]:.4g} does not exceed "
                f"{merged[i - 1][1]:.6g} V at soc {merged[i - 1][0]:.4g}"
            )

    def extend(end, others, target):
        far = [p for p in others if abs(p[0] - end[0]) >= 0.05]
        ref = far[0] if far else others[0]
        slope = (end[1] - ref[1]) / (end[0] - ref[0])
        return (target, end[1] + slope * (target - end[0]))

    if merged[0][0] <= 1e-6:
        merged[0] = (0.0, merged[0][1])
    else:
        merged.insert(0, extend(merged[0], merged[1:], 0.0))
    if merged[-1][0] >= 1.0 - 1e-6:
        merged[-1] = (1.0, merged[-1][1])
    else:
        merged.append(extend(merged[-1], merged[-2::-1], 1.0))
    try:
        return OcvCurve(tuple(merged))
    except ValidationError as exc:
        raise InvalidDataError(f"extracted curve invalid: {exc}") from None


@dataclass(frozen=True)
class PulseFeature:
    soc_level: float
    r0_ohm: float
    r1_ohm: float
    c1_farad: float
    r2_ohm: float
    c2_farad: float
    ocv_v: float
    fit_residual_v: float

    def __post_init__(self):
        for name in ("r0_ohm", "r1_ohm", "c1_farad", "r2_ohm", "c2_farad"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"must be > 0, got {v!r}", path=name)
        if not self.fit_residual_v >= 0:
            raise ValidationError("must be >= 0", path="fit_residual_v")


def identify_pulses(
    hppc_run: TelemetrySeries,
    capacity_ah: float,
    *,
    initial_soc: float = 1.0,
    edge_threshold_a: float = 0.1,
    rest_current_a: float = 0.05,
    max_pulse_s: float = 30.0,
    min_relax_s: float = 60.0,
    noise_v: float = 1e-5,
) -> tuple[list[PulseFeature], list[tuple[float, str]]]:
    """Identify R0 and both RC branches at every discharge pulse.

    A discharge pulse is a positive-current run no longer than
    ``max_pulse_s`` with a rest before it and a rest of at least
    ``min_relax_s`` after it. Returns the features and, for pulses whose
    fit failed, ``(soc_level, reason)``.
    """
    soc = cc_run(initial_soc, hppc_run, capacity_ah)
    runs = _constant_runs(hppc_run, edge_threshold_a)
    features, skipped = [], []
    for prev, pulse, nxt in zip(runs, runs[1:], runs[2:]):
        if not (pulse.current_a > rest_current_a and pulse.duration_s <= max_pulse_s):
            continue
        if abs(prev.current_a) > rest_current_a or abs(nxt.current_a) > rest_current_a:
            continue
        if nxt.duration_s < min_relax_s:
            continue
        level = float(soc[pulse.start])
        try:
            r0 = identify_r0(hppc_run.window(pulse.start - 1, pulse.start + 1), edge_threshold_a)
            fit = fit_relaxation(
                hppc_run.window(nxt.start, nxt.stop),
                pulse_current_a=pulse.current_a,
                pulse_duration_s=pulse.duration_s,
                noise_v=noise_v,
                rest_current_a=rest_current_a,
            )
            features.append(
                PulseFeature(
                    soc_level=level,
                    r0_ohm=r0,
                    r1_ohm=fit.r1_ohm,
                    c1_farad=fit.c1_farad,
                    r2_ohm=fit.r2_ohm,
                    c2_farad=fit.c2_farad,
                    ocv_v=float(hppc_run.voltage_v[pulse.start - 1]),
                    fit_residual_v=fit.fit_residual_v,
                )
            )
        except (NumericalError, ValidationError) as exc:
            log.warning("pulse at soc %.3f skipped: %s", level, exc)
            skipped.append((level, str(exc)))
    return features, skipped


def assemble_params(
    features: list[PulseFeature],
    temp_c: float,
    capacity_ah: float,
    soc_range: tuple[float, float] = (0.2, 0.8),
) -> CellParams:
    """Median of each parameter over pulses with SOC inside ``soc_range``."""
    lo, hi = soc_range
    chosen = [f for f in features if lo - 1e-9 <= f.soc_level <= hi + 1e-9] or list(features)
    if not chosen:
        raise InsufficientDataError("no identified pulses")

    def med(name):
        return float(np.median([getattr(f, name) for f in chosen]))

    return CellParams(
        temp_c=temp_c,
        capacity_ah=capacity_ah,
        r0_ohm=med("r0_ohm"),
        r1_ohm=med("r1_ohm"),
        c1_farad=med("c1_farad"),
        r2_ohm=med("r2_ohm"),
        c2_farad=med("c2_farad"),
    )


@dataclass(frozen=True)
class HppcFit:
    params: CellParams
    ocv: OcvCurve
    features: tuple[PulseFeature, ...]
    skipped: tuple[tuple[float, str], ...]


def fit_hppc(
    hppc_run: TelemetrySeries,
    capacity_ah: float,
    temp_c: float | None = None,
    *,
    soc_range: tuple[float, float] = (0.2, 0.8),
    **options,
) -> HppcFit:
    """Full identification of one temperature's HPPC run."""
    if temp_c is None:
        temps = hppc_run.temp_c[~np.isnan(hppc_run.temp_c)]
        temp_c = float(np.median(temps)) if temps.size else 25.0
    ocv_opts = {k: options[k] for k in ("initial_soc", "edge_threshold_a", "rest_current_a") if k in options}
    features, skipped = identify_pulses(hppc_run, capacity_ah, **options)
    if not features and skipped:
        raise NumericalError(f"no pulse could be identified; first failure: {skipped[0][1]}")
    params = assemble_params(features, temp_c, capacity_ah, soc_range)
    curve = extract_ocv(hppc_run, capacity_ah, **ocv_opts)
    return HppcFit(params, curve, tuple(features), tuple(skipped))
