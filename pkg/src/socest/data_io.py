"""File formats: telemetry/trace CSV, parameter and OCV JSON, JSON config.

Every ``parse_*`` function is total: for any input it returns a valid value
or raises a :class:`~socest.errors.ValidationError` subclass. ``load_*``
wrappers add file reading; OS failures surface as ``OSError``.

Telemetry CSV header: ``t_s,current_a,voltage_v,temp_c`` (``temp_c`` and
cell values for voltage/temperature may be empty). An optional
``soc_true`` column carries a reference SOC. Files are UTF-8, ``\\n`` or
``\\r\\n`` on read, ``\\n`` on write.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from socest.cell_model import CellParams, CellParamsTable, OcvCurve, OcvCurveSet
from socest.errors import ParseError, ValidationError
from socest.estimators import EstimateTrace
from socest.hppc import CurrentProfile, profile_from_series, profile_labels, profile_to_series
from socest.telemetry import TelemetrySeries

TELEMETRY_COLUMNS = ("t_s", "current_a", "voltage_v", "temp_c")
TRACE_COLUMNS = (
    "t_s", "soc_cc", "soc_ekf", "soc_true", "v_measured", "v_predicted", "innovation_v", "cov_soc",
)

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


def _text(data: bytes | str) -> str:
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 at byte {exc.start}") from None


def format_float(x: float) -> str:
    """Shortest round-tripping decimal; NaN becomes an empty cell."""
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def _cell(raw: str, column: str, row: int, allow_empty: bool) -> float:
    raw = raw.strip()
    if raw == "":
        if allow_empty:
            return math.nan
        raise ParseError("empty value", path=column, row=row)
    if not _NUMBER.fullmatch(raw):
        raise ParseError(f"not a number: {raw[:40]!r}", path=column, row=row)
    value = float(raw)
    if not math.isfinite(value):
        raise ParseError(f"out of range: {raw[:40]!r}", path=column, row=row)
    return value


@dataclass(frozen=True)
class ColumnMapping:
    """Adapter for third-party CSV exports.

    Maps the canonical column names to the file's header names and states
    the file's current sign convention (``charge_positive`` files are
    negated on load).
    """

    t_s: str = "t_s"
    current_a: str = "current_a"
    voltage_v: str = "voltage_v"
    temp_c: str = "temp_c"
    soc_true: str = "soc_true"
    sign: str = "discharge_positive"

    def __post_init__(self):
        if self.sign not in ("discharge_positive", "charge_positive"):
            raise ValidationError(f"unknown sign convention {self.sign!r}", path="sign")

    @classmethod
    def from_dict(cls, data) -> ColumnMapping:
        if not isinstance(data, dict):
            raise ValidationError("mapping must be a JSON object", path="mapping")
        known = {f for f in cls.__dataclass_fields__}
        for key, value in data.items():
            if key not in known:
                raise ValidationError(f"unknown key {key!r}", path="mapping")
            if not isinstance(value, str):
                raise ValidationError("must be a string", path=f"mapping.{key}")
        return cls(**data)


def parse_telemetry(data: bytes | str, mapping: ColumnMapping | None = None, source: str = "") -> TelemetrySeries:
    mapping = mapping or ColumnMapping()
    text = _text(data)
    try:
        rows = list(csv.reader(io.StringIO(text, newline="")))
    except csv.Error as exc:
        raise ParseError(f"malformed CSV: {exc}") from None
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header")
    index = {name: i for i, name in enumerate(header)}
    for col in ("t_s", "current_a", "voltage_v"):
        if getattr(mapping, col) not in index:
            raise ParseError(f"missing column {getattr(mapping, col)!r}", path="header")
    cols = {c: index.get(getattr(mapping, c)) for c in ("t_s", "current_a", "voltage_v", "temp_c", "soc_true")}
    data_rows = rows[1:]
    if not data_rows:
        raise ParseError("no data rows")
    out = {c: np.empty(len(data_rows)) for c, i in cols.items() if i is not None}
    for r, row in enumerate(data_rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=r)
        for c, i in cols.items():
            if i is None:
                continue
            out[c][r - 1] = _cell(row[i], c, r, allow_empty=c in ("voltage_v", "temp_c"))
    current = out["current_a"]
    if mapping.sign == "charge_positive":
        current = np.where(current == 0.0, 0.0, -current)
    return TelemetrySeries(
        t_s=out["t_s"],
        current_a=current,
        voltage_v=out["voltage_v"],
        temp_c=out.get("temp_c"),
        soc_true=out.get("soc_true"),
        source=source,
    )


def load_telemetry(path, mapping: ColumnMapping | None = None) -> TelemetrySeries:
    path = Path(path)
    return parse_telemetry(path.read_bytes(), mapping, source=path.name)


def load_mapping(path) -> ColumnMapping:
    return ColumnMapping.from_dict(parse_json(Path(path).read_bytes()))


def _write_csv(path, header, columns) -> None:
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(v if isinstance(v, str) else format_float(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")


def save_telemetry(series: TelemetrySeries, path, extra: dict[str, np.ndarray] | None = None) -> None:
    header = list(TELEMETRY_COLUMNS)
    columns = [series.t_s, series.current_a, series.voltage_v, series.temp_c]
    if series.soc_true is not None:
        header.append("soc_true")
        columns.append(series.soc_true)
    for name, col in (extra or {}).items():
        header.append(name)
        columns.append(col)
    _write_csv(path, header, columns)


def save_trace(trace: EstimateTrace, path) -> None:
    truth = trace.soc_true if trace.soc_true is not None else np.full(len(trace), np.nan)
    columns = [trace.t_s, trace.soc_cc, trace.soc_ekf, truth, trace.v_measured,
               trace.v_predicted, trace.innovation_v, trace.cov_soc]
    _write_csv(path, TRACE_COLUMNS, columns)


def save_profile(profile: CurrentProfile, path, temp_c: float | None = None) -> None:
    series = profile_to_series(profile, temp_c)
    header = [*TELEMETRY_COLUMNS, "label"]
    columns = [series.t_s, series.current_a, series.voltage_v, series.temp_c, profile_labels(profile)]
    _write_csv(path, header, columns)


def load_profile(path) -> CurrentProfile:
    raw = Path(path).read_bytes()
    series = parse_telemetry(raw)
    labels = None
    rows = [r for r in csv.reader(io.StringIO(_text(raw), newline="")) if r]
    if rows and "label" in [h.strip() for h in rows[0]]:
        li = [h.strip() for h in rows[0]].index("label")
        labels = [r[li].strip() for r in rows[1:]]
    return profile_from_series(series, labels)


def _reject_constant(name):
    raise ParseError(f"non-finite JSON constant {name}")


def parse_json(data: bytes | str):
    text = _text(data)
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except RecursionError:
        raise ParseError("JSON nested too deeply") from None


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"expected a number, got {type(value).__name__}", path=path)
    try:
        value = float(value)
    except OverflowError:
        raise ValidationError("number out of range", path=path) from None
    if not math.isfinite(value):
        raise ValidationError("non-finite number", path=path)
    return value


def _object(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ValidationError(f"expected an object, got {type(value).__name__}", path=path)
    return value


def _list(value, path: str) -> list:
    if not isinstance(value, list):
        raise ValidationError(f"expected an array, got {type(value).__name__}", path=path)
    return value


def _required(obj: dict, key: str, path: str):
    if key not in obj:
        raise ValidationError("missing", path=f"{path}.{key}" if path else key)
    return obj[key]


def _rewrap(exc: ValidationError, prefix: str) -> ValidationError:
    inner = exc.path
    path = prefix if inner is None else f"{prefix}.{inner}" if not str(inner).startswith("[") else prefix + str(inner)
    return type(exc)(exc.detail, path=path)


_ENTRY_FIELDS = ("temp_c", "r0_ohm", "r1_ohm", "c1_farad", "r2_ohm", "c2_farad")


def params_from_dict(doc) -> CellParamsTable:
    doc = _object(doc, "$")
    cell = _required(doc, "cell", "")
    if not isinstance(cell, str):
        raise ValidationError("expected a string", path="cell")
    capacity = _number(_required(doc, "capacity_ah", ""), "capacity_ah")
    if capacity <= 0:
        raise ValidationError("must be > 0", path="capacity_ah")
    entries_raw = _list(_required(doc, "entries", ""), "entries")
    entries = []
    for i, raw in enumerate(entries_raw):
        where = f"entries[{i}]"
        raw = _object(raw, where)
        values = {name: _number(_required(raw, name, where), f"{where}.{name}") for name in _ENTRY_FIELDS}
        cap = _number(raw["capacity_ah"], f"{where}.capacity_ah") if "capacity_ah" in raw else capacity
        try:
            entries.append(CellParams(capacity_ah=cap, **values))
        except ValidationError as exc:
            raise _rewrap(exc, where) from None
    return CellParamsTable(tuple(entries), cell=cell)


def params_to_dict(table: CellParamsTable) -> dict:
    capacity = table.entries[0].capacity_ah
    entries = []
    for e in table.entries:
        row = {name: getattr(e, name) for name in _ENTRY_FIELDS}
        if e.capacity_ah != capacity:
            row["capacity_ah"] = e.capacity_ah
        entries.append(row)
    return {"cell": table.cell, "capacity_ah": capacity, "entries": entries}


def parse_params(data: bytes | str) -> CellParamsTable:
    return params_from_dict(parse_json(data))


def load_params(path) -> CellParamsTable:
    return parse_params(Path(path).read_bytes())


def _dump(doc, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8", newline="")


def save_params(table: CellParamsTable, path) -> None:
    _dump(params_to_dict(table), path)


def ocv_from_dict(doc) -> OcvCurveSet:
    doc = _object(doc, "$")
    raw_curves = _list(_required(doc, "curves", ""), "curves")
    curves = []
    for i, raw in enumerate(raw_curves):
        where = f"curves[{i}]"
        raw = _object(raw, where)
        temp = _number(_required(raw, "temp_c", where), f"{where}.temp_c")
        pts = _list(_required(raw, "points", where), f"{where}.points")
        points = []
        for j, pt in enumerate(pts):
            pt = _list(pt, f"{where}.points[{j}]")
            if len(pt) != 2:
                raise ValidationError("expected [soc, ocv_v]", path=f"{where}.points[{j}]")
            points.append((_number(pt[0], f"{where}.points[{j}][0]"), _number(pt[1], f"{where}.points[{j}][1]")))
        try:
            curves.append((temp, OcvCurve(tuple(points))))
        except ValidationError as exc:
            raise _rewrap(exc, where) from None
    try:
        return OcvCurveSet(tuple(curves))
    except ValidationError as exc:
        raise ValidationError(exc.detail, path=exc.path) from None


def ocv_to_dict(curves: OcvCurveSet | OcvCurve, temp_c: float = 25.0) -> dict:
    if isinstance(curves, OcvCurve):
        curves = OcvCurveSet.single(curves, temp_c)
    return {
        "curves": [
            {"temp_c": t, "points": [[s, v] for s, v in c.breakpoints]} for t, c in curves.curves
        ]
    }


def parse_ocv(data: bytes | str) -> OcvCurveSet:
    return ocv_from_dict(parse_json(data))


def load_ocv(path) -> OcvCurveSet:
    return parse_ocv(Path(path).read_bytes())


def save_ocv(curves: OcvCurveSet | OcvCurve, path, temp_c: float = 25.0) -> None:
    _dump(ocv_to_dict(curves, temp_c), path)


def load_config(path) -> dict:
    """JSON config document; must be an object."""
    doc = parse_json(Path(path).read_bytes())
    return _object(doc, "$")
