"""Timestamped current/voltage/temperature samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from socest.errors import ValidationError


def _column(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TelemetrySeries:
    """Sampled cell telemetry.

    Current is discharge-positive and held constant from one sample to the
    next (sample-and-hold), so ``current_a[k]`` flows over
    ``[t_s[k], t_s[k+1])`` and ``voltage_v[k]`` is read with it flowing.
    Missing voltage or temperature readings are NaN. ``soc_true`` is an
    optional reference SOC column (fraction).

    Row numbers in validation errors are 1-based data rows.
    """

    t_s: np.ndarray
    current_a: np.ndarray
    voltage_v: np.ndarray | None = None
    temp_c: np.ndarray | None = None
    soc_true: np.ndarray | None = None
    source: str = ""
    cell_id: str = ""
    capacity_ah: float | None = None
    _n: int = field(init=False, repr=False, default=0)

    def __post_init__(self):
        t = _column(self.t_s, "t_s")
        n = t.size
        cur = _column(self.current_a, "current_a")
        volt = _column(np.full(n, np.nan) if self.voltage_v is None else self.voltage_v, "voltage_v")
        temp = _column(np.full(n, np.nan) if self.temp_c is None else self.temp_c, "temp_c")
        truth = None if self.soc_true is None else _column(self.soc_true, "soc_true")
        for name, arr in (("current_a", cur), ("voltage_v", volt), ("temp_c", temp), ("soc_true", truth)):
            if arr is not None and arr.size != n:
                raise ValidationError(f"length {arr.size} != {n}", path=name)

        bad = ~np.isfinite(t)
        if bad.any():
            raise ValidationError("non-finite time", path="t_s", row=int(np.argmax(bad)) + 1)
        back = np.diff(t) <= 0
        if back.any():
            raise ValidationError("time not strictly increasing", path="t_s", row=int(np.argmax(back)) + 2)
        bad = ~np.isfinite(cur)
        if bad.any():
            raise ValidationError("non-finite current", path="current_a", row=int(np.argmax(bad)) + 1)
        present = ~np.isnan(volt)
        bad = present & ~(np.isfinite(volt) & (volt > 0))
        if bad.any():
            raise ValidationError("voltage must be finite and > 0", path="voltage_v", row=int(np.argmax(bad)) + 1)
        bad = ~np.isnan(temp) & ~np.isfinite(temp)
        if bad.any():
            raise ValidationError("non-finite temperature", path="temp_c", row=int(np.argmax(bad)) + 1)
        if truth is not None:
            bad = ~(np.isfinite(truth) & (truth >= 0) & (truth <= 1))
            if bad.any():
                raise ValidationError("soc_true must lie in [0, 1]", path="soc_true", row=int(np.argmax(bad)) + 1)
        if self.capacity_ah is not None and not (np.isfinite(self.capacity_ah) and self.capacity_ah > 0):
            raise ValidationError("capacity must be finite and > 0", path="capacity_ah")

        object.__setattr__(self, "t_s", t)
        object.__setattr__(self, "current_a", cur)
        object.__setattr__(self, "voltage_v", volt)
        object.__setattr__(self, "temp_c", temp)
        object.__setattr__(self, "soc_true", truth)
        object.__setattr__(self, "_n", n)

    def __len__(self) -> int:
        return self._n

    @property
    def has_voltage(self) -> bool:
        return bool(np.any(~np.isnan(self.voltage_v)))

    def window(self, start: int, stop: int) -> TelemetrySeries:
        """Rows ``start:stop`` as a new series (times kept absolute)."""
        sl = slice(start, stop)
        return TelemetrySeries(
            t_s=self.t_s[sl],
            current_a=self.current_a[sl],
            voltage_v=self.voltage_v[sl],
            temp_c=self.temp_c[sl],
            soc_true=None if self.soc_true is None else self.soc_true[sl],
            source=self.source,
            cell_id=self.cell_id,
            capacity_ah=self.capacity_ah,
        )

    def equals(self, other: TelemetrySeries) -> bool:
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.array_equal(a, b, equal_nan=True))

        return (
            same(self.t_s, other.t_s)
            and same(self.current_a, other.current_a)
            and same(self.voltage_v, other.voltage_v)
            and same(self.temp_c, other.temp_c)
            and same(self.soc_true, other.soc_true)
        )
