"""Multi-temperature comparison of Coulomb counting and the EKF.

A sweep runs both estimators once per temperature, either on synthetic
telemetry (simulator truth plus seeded Gaussian sensor noise) or on
user-supplied telemetry, and reduces each run to average SOC and average
error. ``render_report`` writes the comparison table, two SVG bar charts
and the per-temperature traces.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from socest.cell_model import (
    CellParamsTable,
    CellState,
    OcvCurveSet,
    clamp_soc,
    curve_at,
    params_at,
    synthesize_telemetry,
)
from socest.data_io import save_trace
from socest.errors import ConfigError, ValidationError
from socest.estimators import DEFAULT_P0, DEFAULT_Q, DEFAULT_R, EkfBelief, EstimateTrace, cc_run, ekf_run
from socest.telemetry import TelemetrySeries

THIRTY_HOURS_S = 30 * 3600.0
MAPE_FLOOR = 0.01


def _require(cond: bool, message: str, path: str) -> None:
    if not cond:
        raise ConfigError(message, path=path)


def _num(value, path: str) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), "expected a number", path)
    try:
        value = float(value)
    except OverflowError:
        raise ConfigError("number out of range", path=path) from None
    _require(math.isfinite(value), "non-finite number", path)
    return value


def _from_dict(cls, data, path: str, convert=None):
    _require(isinstance(data, dict), "expected an object", path)
    known = {f.name for f in fields(cls)}
    for key in data:
        _require(key in known, f"unknown key {key!r}", path)
    kwargs = {}
    for key, value in data.items():
        conv = (convert or {}).get(key)
        kwargs[key] = conv(value, f"{path}.{key}") if conv else value
    return cls(**kwargs)


def _matrix_value(value, path: str):
    ok = isinstance(value, list) and all(
        isinstance(v, (int, float)) and not isinstance(v, bool)
        or isinstance(v, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
        for v in value
    )
    _require(ok, "expected a length-3 diagonal or a 3x3 matrix", path)
    return np.array(value, dtype=float)


@dataclass(frozen=True)
class DriveSpec:
    """Repeating block of ``(c_rate, duration_s)`` segments.

    Positive C-rate discharges. ``depletion_c_rate`` adds a constant
    discharge on top so the block can drift the SOC downward.
    """

    block: tuple[tuple[float, float], ...] = ((0.5, 3600.0), (0.0, 600.0), (-1.0, 1800.0), (0.0, 600.0))
    initial_soc: float = 0.9
    depletion_c_rate: float = 0.0

    def __post_init__(self):
        block = tuple((float(c), float(d)) for c, d in self.block)
        _require(len(block) > 0, "block must not be empty", "drive.block")
        for i, (c, d) in enumerate(block):
            _require(math.isfinite(c), "non-finite C-rate", f"drive.block[{i}]")
            _require(math.isfinite(d) and d > 0, "duration must be > 0", f"drive.block[{i}]")
        _require(0.0 <= self.initial_soc <= 1.0, "must lie in [0, 1]", "drive.initial_soc")
        _require(math.isfinite(self.depletion_c_rate), "non-finite", "drive.depletion_c_rate")
        object.__setattr__(self, "block", block)

    @classmethod
    def from_dict(cls, data, path="drive"):
        def block(value, p):
            _require(isinstance(value, list), "expected a list of [c_rate, duration_s]", p)
            out = []
            for i, seg in enumerate(value):
                _require(isinstance(seg, list) and len(seg) == 2, "expected [c_rate, duration_s]", f"{p}[{i}]")
                out.append((_num(seg[0], f"{p}[{i}][0]"), _num(seg[1], f"{p}[{i}][1]")))
            return tuple(out)

        return _from_dict(cls, data, path, {"block": block, "initial_soc": _num, "depletion_c_rate": _num})


@dataclass(frozen=True)
class NoiseSpec:
    current_sigma_a: float = 0.0
    voltage_sigma_v: float = 0.0

    def __post_init__(self):
        for name in ("current_sigma_a", "voltage_sigma_v"):
            v = getattr(self, name)
            _require(math.isfinite(v) and v >= 0, "must be >= 0", f"noise.{name}")

    @classmethod
    def from_dict(cls, data, path="noise"):
        return _from_dict(cls, data, path, {"current_sigma_a": _num, "voltage_sigma_v": _num})


@dataclass(frozen=True, eq=False)
class EstimatorInit:
    """Initial SOC offsets (added to the true/reference initial SOC) and filter tuning."""

    cc_offset: float = 0.0
    ekf_offset: float = 0.0
    q: np.ndarray = field(default_factory=lambda: DEFAULT_Q)
    r: float = DEFAULT_R
    p0: np.ndarray = field(default_factory=lambda: DEFAULT_P0)
    joseph: bool = False

    def __post_init__(self):
        try:
            EkfBelief(CellState(0.5), self.p0, self.q, self.r)
        except ValidationError as exc:
            raise ConfigError(exc.detail, path=f"init.{exc.path}") from None
        for name in ("cc_offset", "ekf_offset"):
            v = getattr(self, name)
            _require(math.isfinite(v) and -1 <= v <= 1, "must lie in [-1, 1]", f"init.{name}")

    @classmethod
    def from_dict(cls, data, path="init"):
        def flag(value, p):
            _require(isinstance(value, bool), "expected true/false", p)
            return value

        return _from_dict(
            cls, data, path,
            {"cc_offset": _num, "ekf_offset": _num, "r": _num, "q": _matrix_value, "p0": _matrix_value, "joseph": flag},
        )

    def belief(self, soc: float) -> EkfBelief:
        return EkfBelief(CellState(clamp_soc(soc + self.ekf_offset)), self.p0, self.q, self.r)

    def to_dict(self) -> dict:
        return {
            "cc_offset": self.cc_offset,
            "ekf_offset": self.ekf_offset,
            "q": self.q.tolist(),
            "r": self.r,
            "p0": self.p0.tolist(),
            "joseph": self.joseph,
        }


@dataclass(frozen=True, eq=False)
class SweepConfig:
    temperatures: tuple[float, ...] = (0.0, 10.0, 25.0, 40.0)
    mode: str = "synthetic"
    duration_s: float = THIRTY_HOURS_S
    dt_s: float = 1.0
    drive: DriveSpec = field(default_factory=DriveSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    init: EstimatorInit = field(default_factory=EstimatorInit)
    seed: int = 0
    workers: int = 1
    dataset_initial_soc: float = 1.0

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temperatures)
        _require(len(temps) > 0, "at least one temperature required", "temperatures")
        _require(all(math.isfinite(t) for t in temps), "non-finite temperature", "temperatures")
        _require(len(set(temps)) == len(temps), "duplicate temperature", "temperatures")
        _require(self.mode in ("synthetic", "dataset"), f"unknown mode {self.mode!r}", "mode")
        _require(math.isfinite(self.duration_s) and self.duration_s > 0, "must be > 0", "duration_s")
        _require(math.isfinite(self.dt_s) and self.dt_s > 0, "must be > 0", "dt_s")
        _require(isinstance(self.seed, int) and 0 <= self.seed < 2**64, "must be a u64", "seed")
        _require(isinstance(self.workers, int) and self.workers >= 1, "must be >= 1", "workers")
        _require(0.0 <= self.dataset_initial_soc <= 1.0, "must lie in [0, 1]", "dataset_initial_soc")
        object.__setattr__(self, "temperatures", temps)

    @classmethod
    def from_dict(cls, data) -> SweepConfig:
        def temps(value, p):
            _require(isinstance(value, list), "expected a list", p)
            return tuple(_num(v, f"{p}[{i}]") for i, v in enumerate(value))

        def integer(value, p):
            _require(isinstance(value, int) and not isinstance(value, bool), "expected an integer", p)
            return value

        def string(value, p):
            _require(isinstance(value, str), "expected a string", p)
            return value

        _require(isinstance(data, dict), "expected an object", "$")
        data = {k: v for k, v in data.items() if k not in ("params", "ocv")}
        return _from_dict(
            cls, data, "$",
            {
                "temperatures": temps,
                "mode": string,
                "duration_s": _num,
                "dt_s": _num,
                "drive": lambda v, p: DriveSpec.from_dict(v, p),
                "noise": lambda v, p: NoiseSpec.from_dict(v, p),
                "init": lambda v, p: EstimatorInit.from_dict(v, p),
                "seed": integer,
                "workers": integer,
                "dataset_initial_soc": _num,
            },
        )

    def to_dict(self) -> dict:
        return {
            "temperatures": list(self.temperatures),
            "mode": self.mode,
            "duration_s": self.duration_s,
            "dt_s": self.dt_s,
            "drive": {**asdict(self.drive), "block": [list(b) for b in self.drive.block]},
            "noise": asdict(self.noise),
            "init": self.init.to_dict(),
            "seed": self.seed,
            "workers": self.workers,
            "dataset_initial_soc": self.dataset_initial_soc,
        }


def build_drive(spec: DriveSpec, capacity_ah: float, duration_s: float, dt_s: float) -> np.ndarray:
    """Per-step discharge-positive current for ``duration_s`` at ``dt_s`` steps."""
    n = round(duration_s / dt_s)
    _require(n >= 1 and abs(n * dt_s - duration_s) <= 1e-9 * duration_s, "duration_s must be a multiple of dt_s", "duration_s")
    parts = []
    for i, (c_rate, dur) in enumerate(spec.block):
        k = round(dur / dt_s)
        _require(k >= 1 and abs(k * dt_s - dur) <= 1e-9 * dur, "segment duration must be a multiple of dt_s", f"drive.block[{i}]")
        parts.append(np.full(k, c_rate * capacity_ah))
    block = np.concatenate(parts)
    reps = -(-n // block.size)
    return np.tile(block, reps)[:n] + spec.depletion_c_rate * capacity_ah


def temperature_seed(seed: int, temp_c: float) -> np.random.SeedSequence:
    """RNG seed for one temperature's run; independent of run order."""
    bits = struct.unpack("<Q", struct.pack("<d", float(temp_c) + 0.0))[0]
    return np.random.SeedSequence([seed, bits])


def synthetic_telemetry(config: SweepConfig, temp_c: float, table: CellParamsTable, curves) -> TelemetrySeries:
    """Simulator truth at ``temp_c`` with the configured sensor noise applied."""
    params = params_at(table, temp_c)
    curve = curve_at(curves, temp_c)
    currents = build_drive(config.drive, params.capacity_ah, config.duration_s, config.dt_s)
    dts = np.full(currents.size, config.dt_s)
    truth = synthesize_telemetry(params, curve, CellState(config.drive.initial_soc), (currents, dts), temp_c=temp_c)
    rng = np.random.default_rng(temperature_seed(config.seed, temp_c))
    v_noise = rng.normal(0.0, config.noise.voltage_sigma_v, len(truth))
    i_noise = rng.normal(0.0, config.noise.current_sigma_a, len(truth))
    return TelemetrySeries(
        t_s=truth.t_s,
        current_a=truth.current_a + i_noise,
        voltage_v=truth.voltage_v + v_noise,
        temp_c=truth.temp_c,
        soc_true=truth.soc_true,
        source=f"synthetic@{temp_c:g}C",
        capacity_ah=params.capacity_ah,
    )


class ErrorMetrics(NamedTuple):
    mape_pct: float
    rmse_soc: float
    max_abs_err: float


def error_metrics(trace: EstimateTrace, method: str = "ekf") -> ErrorMetrics:
    """Mean absolute percentage error (truth floored at 0.01), RMSE and max error."""
    if trace.soc_true is None:
        raise ValidationError("trace has no truth column", path="soc_true")
    est = trace.column(method)
    if len(trace) == 0 or np.any(np.isnan(est)):
        raise ValidationError(f"no {method} estimate in trace", path=f"soc_{method}")
    err = np.abs(est - trace.soc_true)
    n = err.size
    mape = math.fsum((err / np.maximum(trace.soc_true, MAPE_FLOOR)).tolist()) / n * 100.0
    rmse = math.sqrt(math.fsum((err * err).tolist()) / n)
    return ErrorMetrics(mape, rmse, float(err.max()))


def mean_pct(values: np.ndarray) -> float:
    """Arithmetic mean in percent; exact summation so row order never matters."""
    return math.fsum(np.asarray(values).tolist()) / len(values) * 100.0


@dataclass(frozen=True)
class SweepRow:
    temp_c: float
    avg_soc_cc_pct: float
    avg_soc_ekf_pct: float
    avg_err_cc_pct: float
    avg_err_ekf_pct: float
    rmse_cc: float
    rmse_ekf: float


@dataclass(frozen=True, eq=False)
class SweepReport:
    rows: tuple[SweepRow, ...]
    traces: dict[float, EstimateTrace] = field(default_factory=dict)

    def row(self, temp_c: float) -> SweepRow:
        for r in self.rows:
            if r.temp_c == temp_c:
                return r
        raise KeyError(temp_c)


def summarize(temp_c: float, trace: EstimateTrace) -> SweepRow:
    cc = error_metrics(trace, "cc")
    ekf = error_metrics(trace, "ekf")
    return SweepRow(
        temp_c=temp_c,
        avg_soc_cc_pct=mean_pct(trace.soc_cc),
        avg_soc_ekf_pct=mean_pct(trace.soc_ekf),
        avg_err_cc_pct=cc.mape_pct,
        avg_err_ekf_pct=ekf.mape_pct,
        rmse_cc=cc.rmse_soc,
        rmse_ekf=ekf.rmse_soc,
    )


def run_temperature(
    config: SweepConfig,
    temp_c: float,
    table: CellParamsTable,
    curves,
    dataset: TelemetrySeries | None = None,
) -> tuple[SweepRow, EstimateTrace]:
    if config.mode == "synthetic":
        series = synthetic_telemetry(config, temp_c, table, curves)
        start = float(series.soc_true[0])
    else:
        if dataset is None:
            raise ConfigError(f"no dataset for {temp_c:g} C", path="datasets")
        start = config.dataset_initial_soc
        series = dataset
        if series.soc_true is None:
            # reference: Coulomb counting from a known full-charge start
            capacity = series.capacity_ah or params_at(table, temp_c).capacity_ah
            ref = cc_run(start, series, capacity)
            series = TelemetrySeries(
                series.t_s, series.current_a, series.voltage_v, series.temp_c, ref,
                series.source, series.cell_id, series.capacity_ah,
            )
    init = config.init
    trace = ekf_run(
        init.belief(start),
        series,
        table,
        curves,
        cc_initial_soc=clamp_soc(start + init.cc_offset),
        joseph=init.joseph,
        default_temp_c=temp_c,
    )
    return summarize(temp_c, trace), trace


def run_sweep(
    config: SweepConfig,
    table: CellParamsTable,
    curves: OcvCurveSet,
    datasets: dict[float, TelemetrySeries] | None = None,
) -> SweepReport:
    """One estimation run per configured temperature, reduced to a report."""
    if config.mode == "dataset":
        datasets = datasets or {}
        missing = [t for t in config.temperatures if t not in datasets]
        if missing:
            raise ConfigError(f"no dataset for temperature(s) {', '.join(f'{t:g}' for t in missing)}", path="datasets")

    def one(temp):
        return run_temperature(config, temp, table, curves, (datasets or {}).get(temp))

    if config.workers > 1 and len(config.temperatures) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, config.temperatures))
    else:
        results = [one(t) for t in config.temperatures]
    rows = tuple(r for r, _ in results)
    traces = {t: tr for t, (_, tr) in zip(config.temperatures, results)}
    return SweepReport(rows, traces)


TABLE1_HEADER = ("Temperature", "SOC by CC Method", "SOC by EKF Method")


def format_temp(temp_c: float) -> str:
    return f"{temp_c:g}"


def table1_lines(report: SweepReport) -> list[str]:
    lines = [",".join(TABLE1_HEADER)]
    for r in report.rows:
        lines.append(f"{format_temp(r.temp_c)} °C,{r.avg_soc_cc_pct:.4f}%,{r.avg_soc_ekf_pct:.4f}%")
    return lines


_COLORS = {"CC": "#1f77b4", "EKF": "#ff7f0e"}


def _nice_ceiling(x: float) -> float:
    if not x > 0 or not math.isfinite(x):
        return 1.0
    exp = 10.0 ** math.floor(math.log10(x))
    for m in (1.0, 2.0, 2.5, 5.0, 10.0):
        if m * exp >= x:
            return m * exp
    return 10.0 * exp


def bar_chart_svg(title: str, y_label: str, categories: list[str], series: dict[str, list[float]],
                  y_max: float | None = None, decimals: int = 2) -> str:
    """Static grouped bar chart with axes, tick labels and a legend."""
    width, height = 640, 400
    left, right, top, bottom = 70, 130, 50, 60
    plot_w, plot_h = width - left - right, height - top - bottom
    values = [v for vals in series.values() for v in vals if math.isfinite(v)]
    top_val = y_max if y_max is not None else _nice_ceiling(max(values, default=0.0) * 1.1)
    n_cat = max(len(categories), 1)
    group_w = plot_w / n_cat
    bar_w = group_w * 0.8 / max(len(series), 1)

    def y(v):
        return top + plot_h - plot_h * min(max(v, 0.0), top_val) / top_val

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="25" text-anchor="middle" font-size="15">{title}</text>',
    ]
    for i in range(6):
        v = top_val * i / 5
        yy = y(v)
        out.append(f'<line x1="{left}" y1="{yy:.2f}" x2="{left + plot_w}" y2="{yy:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{yy + 4:.2f}" text-anchor="end">{v:.{decimals}f}</text>')
    for ci, cat in enumerate(categories):
        x0 = left + ci * group_w + group_w * 0.1
        for si, (name, vals) in enumerate(series.items()):
            v = vals[ci]
            if not math.isfinite(v):
                continue
            x = x0 + si * bar_w
            out.append(
                f'<rect x="{x:.2f}" y="{y(v):.2f}" width="{bar_w:.2f}" height="{top + plot_h - y(v):.2f}" '
                f'fill="{_COLORS.get(name, "#888888")}"><title>{name} {cat}: {v:.4f}</title></rect>'
            )
            out.append(f'<text x="{x + bar_w / 2:.2f}" y="{y(v) - 4:.2f}" text-anchor="middle" font-size="10">{v:.{decimals}f}</text>')
        out.append(f'<text x="{left + (ci + 0.5) * group_w:.2f}" y="{top + plot_h + 20}" text-anchor="middle">{cat}</text>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>')
    out.append(f'<text x="{left + plot_w / 2:.1f}" y="{height - 15}" text-anchor="middle">Temperature</text>')
    out.append(
        f'<text x="18" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {top + plot_h / 2:.1f})">{y_label}</text>'
    )
    lx = left + plot_w + 20
    for si, name in enumerate(series):
        ly = top + 10 + si * 22
        out.append(f'<rect x="{lx}" y="{ly}" width="14" height="14" fill="{_COLORS.get(name, "#888888")}"/>')
        out.append(f'<text x="{lx + 20}" y="{ly + 12}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_report(report: SweepReport, out_dir) -> list[Path]:
    """Write table1.csv, soc_vs_temp.svg, err_vs_temp.svg and trace_<T>.csv files."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory: {exc.strerror}", str(out)) from None
    cats = [f"{format_temp(r.temp_c)} °C" for r in report.rows]
    written = []

    def write(name, text):
        path = out / name
        path.write_text(text, encoding="utf-8", newline="")
        written.append(path)

    write("table1.csv", "\n".join(table1_lines(report)) + "\n")
    write(
        "soc_vs_temp.svg",
        bar_chart_svg(
            "% SOC at Different Temperatures", "Average SOC (%)", cats,
            {"CC": [r.avg_soc_cc_pct for r in report.rows], "EKF": [r.avg_soc_ekf_pct for r in report.rows]},
            y_max=100.0,
        ),
    )
    write(
        "err_vs_temp.svg",
        bar_chart_svg(
            "% Error in Estimated SOC at Different Temperatures", "Average error (%)", cats,
            {"CC": [r.avg_err_cc_pct for r in report.rows], "EKF": [r.avg_err_ekf_pct for r in report.rows]},
            decimals=3,
        ),
    )
    for temp, trace in report.traces.items():
        path = out / f"trace_{format_temp(temp)}.csv"
        save_trace(trace, path)
        written.append(path)
    return written
