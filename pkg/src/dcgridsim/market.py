"""Market data, regulation performance scoring and the cost ledger."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timeseries import SeriesError, TimeSeries

SCORE_STEP = 10.0  # s
MAX_DELAY = 300.0  # s
DEMAND_INTERVAL = 1800.0  # s


@dataclass(frozen=True)
class MarketData:
    p_em: TimeSeries  # $/kWh
    p_rm: TimeSeries  # $/(kW h)
    p_dm: float  # $/kW
    reg_signal: TimeSeries  # normalised, [-1, 1]

    def __post_init__(self):
        if np.any(self.p_em.values < 0) or np.any(self.p_rm.values < 0) or self.p_dm < 0:
            raise SeriesError("prices must be non-negative")
        if np.any(np.abs(self.reg_signal.values) > 1 + 1e-9):
            raise SeriesError("regulation signal must lie in [-1, 1]")

    def check_covers(self, t0, t1) -> None:
        for name in ("p_em", "p_rm", "reg_signal"):
            if not getattr(self, name).covers(t0, t1):
                raise SeriesError(f"{name} does not cover {t0.isoformat()} .. {t1.isoformat()}")


@dataclass(frozen=True)
class ScoreBreakdown:
    s_acc: float
    s_del: float
    s_pre: float
    delta_star: float

    @property
    def s(self) -> float:
        return (self.s_acc + self.s_del + self.s_pre) / 3


def _precision(reg: np.ndarray, res: np.ndarray) -> float:
    # The hourly mean of an energy-neutral signal is close to zero, so the
    # mean absolute signal is used as the normaliser.  For one-signed signals
    # the two coincide.
    scale = float(np.mean(np.abs(reg)))
    err = float(np.mean(np.abs(res - reg)))
    if scale == 0:
        return 1.0 if err == 0 else 0.0
    return min(max(1 - err / scale, 0.0), 1.0)


def score_samples(reg: np.ndarray, res: np.ndarray, step: float = SCORE_STEP,
                  max_delay: float = MAX_DELAY) -> ScoreBreakdown:
    """Score equally spaced regulation and response samples."""
    reg = np.asarray(reg, dtype=float)
    res = np.asarray(res, dtype=float)
    if reg.shape != res.shape or reg.ndim != 1:
        raise ValueError("reg and res must be 1-D and of equal length")
    n_shift = int(round(max_delay / step))
    n = reg.size
    if n <= n_shift + 1:
        raise ValueError("series too short for the delay search")
    s_pre = _precision(reg, res)
    if np.std(reg) == 0 or np.std(res) == 0:
        return ScoreBreakdown(0.0, 1.0, s_pre, 0.0)
    corr = np.zeros(n_shift + 1)
    for k in range(n_shift + 1):
        a = reg[: n - k]
        b = res[k:]
        da = a - a.mean()
        db = b - b.mean()
        den = np.sqrt(np.dot(da, da) * np.dot(db, db))
        corr[k] = np.dot(da, db) / den if den > 0 else 0.0
    k_star = int(np.argmax(corr))
    delta = k_star * step
    return ScoreBreakdown(float(corr[k_star]), abs((max_delay - delta) / max_delay), s_pre, delta)


def performance_score(reg: TimeSeries, res: TimeSeries) -> ScoreBreakdown:
    """Composite accuracy/delay/precision score of a response to a regulation signal.

    Both series are put on a 10 s grid by last-value hold.
    """
    if reg.start != res.start or abs(reg.duration - res.duration) > 1e-6:
        raise SeriesError("reg and res must cover the same span")
    n = int(round(reg.duration / SCORE_STEP))
    return score_samples(reg.hold_values(reg.start, SCORE_STEP, n), res.hold_values(res.start, SCORE_STEP, n))


def _aligned_means(price: TimeSeries, power: TimeSeries) -> tuple[np.ndarray, np.ndarray]:
    k = price.offset(power.start) / price.step
    if abs(k - round(k)) > 1e-6:
        raise SeriesError("power series does not start on a price interval boundary")
    m = power.duration / price.step
    if abs(m - round(m)) > 1e-6 or round(m) < 1:
        raise SeriesError("power series does not span whole price intervals")
    i0, m = int(round(k)), int(round(m))
    if i0 < 0 or i0 + m > len(price):
        raise SeriesError("price series does not cover the power series")
    return price.values[i0:i0 + m], power.block_means(power.start, price.step, m)


def energy_cost(p_em: TimeSeries, P_dc: TimeSeries) -> float:
    """Energy cost in $ for power in kW priced in $/kWh."""
    prices, means = _aligned_means(p_em, P_dc)
    return float(np.sum(prices * means) * p_em.step / 3600)


def demand_intervals(P_dc: TimeSeries, interval: float = DEMAND_INTERVAL) -> np.ndarray:
    """Average power over each complete 30-minute interval."""
    n = int(P_dc.duration // interval + 1e-9)
    if n < 1:
        raise SeriesError("power series shorter than one demand interval")
    return P_dc.block_means(P_dc.start, interval, n)


def demand_penalty(P_dc: TimeSeries, P_dm_lim: float, p_dm: float) -> float:
    return max(float(np.max(demand_intervals(P_dc))) - P_dm_lim, 0.0) * p_dm


def regulation_revenue(p_rm: TimeSeries, C_reg: TimeSeries) -> float:
    if np.any(C_reg.values < 0):
        raise ValueError("regulation capacity must be non-negative")
    prices, caps = _aligned_means(p_rm, C_reg)
    return float(np.sum(prices * caps) * p_rm.step / 3600)


@dataclass(frozen=True)
class CostReport:
    energy_mwh: float
    energy_cost: float
    peak_demand_kw: float
    demand_cost: float
    fr_revenue: float

    @property
    def total(self) -> float:
        return self.energy_cost + self.demand_cost - self.fr_revenue

    @classmethod
    def from_power(cls, P_dc: TimeSeries, market: MarketData, C_reg: TimeSeries | None = None) -> CostReport:
        """Bill a realised power trace; demand is the peak 30-min average times the demand price."""
        peak = float(np.max(demand_intervals(P_dc)))
        revenue = regulation_revenue(market.p_rm, C_reg) if C_reg is not None else 0.0
        return cls(float(np.sum(P_dc.values) * P_dc.step / 3.6e6), energy_cost(market.p_em, P_dc),
                   peak, peak * market.p_dm, revenue)
