"""Synthetic two-day input traces: workload, prices, wet-bulb and a RegD-like signal.

Run ``python3 -m dcgridsim.synthetic OUT_DIR`` to write the CSV set used by
the example configuration.
"""

from __future__ import annotations

import argparse
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .engine import InputData
from .timeseries import TimeSeries

DEFAULT_START = datetime(2024, 7, 1)


SERIES = ("workload", "p_em", "p_rm", "wetbulb", "regd", "regd_history")


def workload_trace(start: datetime, hours: int, rng: np.random.Generator, low: float = 300e3,
                   high: float = 770e3, peak_hour: float = 18.0, crest: float = 1.0,
                   step: float = 300.0) -> TimeSeries:
    """Diurnal request rate peaking at ``peak_hour``, with AR(1) noise.

    ``crest`` below one flattens the top of the daily cycle.
    """
    n = int(hours * 3600 / step)
    h = start.hour + np.arange(n) * step / 3600
    shape = (0.5 * (1 + np.cos(2 * np.pi * (h - peak_hour) / 24))) ** crest
    noise = np.zeros(n)
    for i in range(1, n):
        noise[i] = 0.9 * noise[i - 1] + rng.normal(0, 0.004)
    return TimeSeries(start, step, (low + (high - low) * shape) * (1 + noise))


def energy_price(start: datetime, hours: int) -> TimeSeries:
    """Hourly energy price: cheap overnight, moderate by day, expensive in the evening."""
    h = (start.hour + np.arange(hours)) % 24
    price = np.where(h < 7, 0.021, 0.030 + 0.002 * np.sin(np.pi * (h - 7) / 10))
    price = np.where((h >= 17) & (h < 23), 0.043, price)
    price = np.where(h == 23, 0.024, price)
    return TimeSeries(start, 3600.0, price)


def regulation_price(start: datetime, hours: int, rng: np.random.Generator) -> TimeSeries:
    h = (start.hour + np.arange(hours)) % 24
    base = 0.026 + 0.006 * np.sin(2 * np.pi * (h - 10) / 24)
    return TimeSeries(start, 3600.0, np.round(base + rng.normal(0, 0.002, hours), 5))


def wetbulb_trace(start: datetime, hours: int) -> TimeSeries:
    h = start.hour + np.arange(hours)
    return TimeSeries(start, 3600.0, 22 - 4 * np.cos(2 * np.pi * (h - 4) / 24))


def regd_proxy(start: datetime, hours: float, rng: np.random.Generator, step: float = 4.0,
               dwell: float = 300.0, tau: float = 20.0, block: float = 900.0) -> TimeSeries:
    """Energy-neutral regulation proxy.

    A random +/-1 telegraph with mean dwell ``dwell`` is smoothed by a first
    order filter; each ``block`` is then shifted to zero mean and scaled back
    into [-1, 1] where needed.
    """
    n = int(round(hours * 3600 / step))
    flips = rng.random(n) < step / dwell
    period = np.cumsum(flips)
    sign = np.where(period % 2 == 0, 1.0, -1.0) * rng.choice([-1.0, 1.0])
    # amplitude is constant within each dwell period
    raw = sign * rng.uniform(0.5, 1.0, period[-1] + 1)[period]
    a = np.exp(-step / tau)
    out = np.empty(n)
    x = 0.0
    for i in range(n):
        x = a * x + (1 - a) * raw[i]
        out[i] = x
    m = int(round(block / step))
    for b in range(0, n, m):
        seg = out[b:b + m]
        seg -= seg.mean()
        peak = np.abs(seg).max()
        if peak > 1:
            seg /= peak
    return TimeSeries(start, step, np.clip(out, -1, 1))


def generate(start: datetime = DEFAULT_START, hours: int = 72, sim_hours: int = 48, seed: int = 7) -> InputData:
    """All input series; prices and workload cover ``hours`` so forecasts can look past the run."""
    rng = np.random.default_rng(seed)
    workload = workload_trace(start, hours, rng)
    p_rm = regulation_price(start, hours, rng)
    regd = regd_proxy(start, sim_hours, rng)
    history = regd_proxy(start - timedelta(days=1), 24, rng)
    return InputData(workload, energy_price(start, hours), p_rm, wetbulb_trace(start, hours), regd, history)


def write(out_dir: str | Path, inputs: InputData) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in SERIES:
        paths[name] = out / f"{name}.csv"
        getattr(inputs, name).to_csv(paths[name])
    return paths


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="python3 -m dcgridsim.synthetic", description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--start", type=datetime.fromisoformat, default=DEFAULT_START)
    args = ap.parse_args(argv)
    for name, path in write(args.out_dir, generate(args.start, seed=args.seed)).items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
