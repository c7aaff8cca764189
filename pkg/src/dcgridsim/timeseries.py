"""Uniformly sampled scalar signals and their CSV representation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np


class SeriesError(ValueError):
    """Raised for malformed, misaligned or gappy series."""


@dataclass(frozen=True)
class TimeSeries:
    """A signal sampled every ``step`` seconds starting at ``start``.

    Sample ``i`` holds the value over ``[start + i*step, start + (i+1)*step)``.
    """

    start: datetime
    step: float
    values: np.ndarray

    def __post_init__(self):
        if self.step <= 0:
            raise SeriesError("step must be positive")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def duration(self) -> float:
        return len(self.values) * self.step

    @property
    def end(self) -> datetime:
        return self.start + timedelta(seconds=self.duration)

    def offset(self, t: datetime) -> float:
        """Seconds from the series start to ``t``."""
        return (t - self.start).total_seconds()

    def covers(self, t0: datetime, t1: datetime) -> bool:
        return self.start <= t0 and t1 <= self.end

    def value_at(self, t: datetime) -> float:
        i = int(math.floor(self.offset(t) / self.step + 1e-9))
        if i < 0 or i >= len(self.values):
            raise SeriesError(f"{t.isoformat()} outside series span")
        return float(self.values[i])

    def window(self, t0: datetime, seconds: float) -> TimeSeries:
        """Samples covering ``[t0, t0 + seconds)``; ``t0`` must sit on the grid."""
        k = self.offset(t0) / self.step
        i0 = int(round(k))
        if abs(k - i0) > 1e-6:
            raise SeriesError("window start is not aligned with the sample grid")
        n = int(round(seconds / self.step))
        if i0 < 0 or i0 + n > len(self.values):
            raise SeriesError(f"window [{t0.isoformat()}, +{seconds:g}s) outside series span")
        return TimeSeries(t0, self.step, self.values[i0:i0 + n].copy())

    def resample(self, step: float) -> TimeSeries:
        """Resample onto a new grid.

        Coarser grids take the block mean (step must be a multiple); finer
        grids use last-value hold.
        """
        if math.isclose(step, self.step):
            return self
        if step > self.step:
            ratio = step / self.step
            r = int(round(ratio))
            if abs(ratio - r) > 1e-9 or len(self.values) % r:
                raise SeriesError(f"cannot average {self.step:g}s samples into {step:g}s blocks")
            return TimeSeries(self.start, step, self.values.reshape(-1, r).mean(axis=1))
        n = int(round(self.duration / step))
        idx = np.floor(np.arange(n) * step / self.step + 1e-9).astype(int)
        return TimeSeries(self.start, step, self.values[np.minimum(idx, len(self.values) - 1)])

    def hold_values(self, t0: datetime, step: float, n: int) -> np.ndarray:
        """``n`` last-value-hold samples on a grid of ``step`` seconds from ``t0``."""
        offs = self.offset(t0) + np.arange(n) * step
        idx = np.floor(offs / self.step + 1e-9).astype(int)
        if idx[0] < 0 or idx[-1] >= len(self.values):
            raise SeriesError(f"{t0.isoformat()} + {n}x{step:g}s outside series span")
        return self.values[idx]

    def block_means(self, t0: datetime, step: float, n: int) -> np.ndarray:
        """Means over ``n`` consecutive blocks of ``step`` seconds from ``t0``."""
        if step <= self.step:
            return self.hold_values(t0, step, n)
        return self.window(t0, step * n).resample(step).values

    @classmethod
    def from_csv(cls, path: str | Path) -> TimeSeries:
        """Read a ``timestamp,value`` file and validate uniform spacing."""
        path = Path(path)
        times: list[datetime] = []
        vals: list[float] = []
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["timestamp", "value"]:
                raise SeriesError(f"{path}: expected header 'timestamp,value'")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise SeriesError(f"{path}:{lineno}: expected two columns")
                try:
                    times.append(datetime.fromisoformat(row[0].strip()))
                    vals.append(float(row[1]))
                except ValueError as exc:
                    raise SeriesError(f"{path}:{lineno}: {exc}") from None
        if len(times) < 2:
            raise SeriesError(f"{path}: need at least two samples")
        steps = np.diff([(t - times[0]).total_seconds() for t in times])
        step = float(steps[0])
        if step <= 0 or np.any(np.abs(steps - step) > 1e-6):
            raise SeriesError(f"{path}: samples are not uniformly spaced")
        values = np.asarray(vals)
        if not np.all(np.isfinite(values)):
            raise SeriesError(f"{path}: non-finite values")
        return cls(times[0], step, values)

    def to_csv(self, path: str | Path, digits: int = 6) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "value"])
            for i, v in enumerate(self.values):
                t = self.start + timedelta(seconds=i * self.step)
                w.writerow([t.isoformat(), f"{v:.{digits}g}"])
