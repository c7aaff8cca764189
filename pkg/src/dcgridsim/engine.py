"""Two-day co-simulation of the plant under the three operating scenarios."""

from __future__ import annotations

import copy
import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .market import CostReport, MarketData, ScoreBreakdown, demand_intervals, performance_score
from .plant import Mode, Plant, PlantError, PlantParams, PlantState
from .scheduling import (Forecasts, HorizonModel, OptProblemConfig, Schedule, baseline_rollout_schedule,
                         stage1_baseline_schedule, stage2_reserve_schedule, storage_priority_schedule)
from .timeseries import SeriesError, TimeSeries
from .tracking import PidState, TrackingInputs, tracking_step

log = logging.getLogger(__name__)

SCENARIOS = ("BL", "BL_MM", "OPBL_MM")
DEFAULT_LIMITS = {"BL": 2148.0, "BL_MM": 2148.0, "OPBL_MM": 1990.0}
LOG_COLUMNS = ("t", "r", "P_ref", "P_dc", "f_agg", "u_c_set", "u_s_set", "mode", "SoC", "T_room")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class InputData:
    workload: TimeSeries  # requests/s
    p_em: TimeSeries  # $/kWh
    p_rm: TimeSeries  # $/(kW h)
    wetbulb: TimeSeries | None  # degC
    regd: TimeSeries  # [-1, 1]
    regd_history: TimeSeries | None  # the day before ``regd``
    p_dm: float = 7.48  # $/kW

    def market(self) -> MarketData:
        return MarketData(self.p_em, self.p_rm, self.p_dm, self.regd)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    start: datetime
    end: datetime
    dt_inner: float = 4.0
    dt_schedule: float = 3600.0
    P_dm_lim: float | None = None  # scenario default when unset
    onpeak: tuple[int, int] = (11, 19)
    seed: int = 0
    initial_soc: float = 0.3
    initial_T_room: float = 25.0
    plant: PlantParams = field(default_factory=PlantParams)
    opt: OptProblemConfig = field(default_factory=OptProblemConfig)
    pid: PidState = field(default_factory=PidState)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        span = (self.end - self.start).total_seconds()
        if span <= 0 or span % self.dt_schedule:
            raise ValueError("span must be a positive multiple of the scheduling step")
        if self.dt_schedule % self.dt_inner:
            raise ValueError("scheduling step must be a multiple of the inner step")
        if self.dt_schedule != self.opt.control_step:
            raise ValueError("scheduling step must equal the optimizer control step")
        if not 0 <= self.onpeak[0] < self.onpeak[1] <= 24:
            raise ValueError("on-peak window must satisfy 0 <= start < end <= 24")

    @property
    def demand_limit(self) -> float:
        return DEFAULT_LIMITS[self.scenario] if self.P_dm_lim is None else self.P_dm_lim

    @property
    def hours(self) -> int:
        return int((self.end - self.start).total_seconds() // self.dt_schedule)

    @property
    def ticks_per_hour(self) -> int:
        return int(round(self.dt_schedule / self.dt_inner))


@dataclass
class HourRecord:
    start: datetime
    P_bas: float  # hourly mean of the executed baseline profile, kW
    C_reg: float
    u_c_set_bas: float
    schedule: Schedule


@dataclass
class RunResult:
    scenario: str
    log: dict[str, np.ndarray]
    hours: list[HourRecord]
    scores: dict[int, ScoreBreakdown]
    cost: CostReport
    P_dc: TimeSeries
    C_reg: TimeSeries
    demand: np.ndarray  # 30-min averages, kW

    @property
    def average_score(self) -> float:
        return float(np.mean([s.s for s in self.scores.values()])) if self.scores else float("nan")


def check_inputs(cfg: ScenarioConfig, data: InputData) -> None:
    """Raise before simulating if any series misses part of the span it is needed for."""
    ahead = cfg.end + timedelta(hours=cfg.opt.horizon_h)
    needs = {"workload": (data.workload, ahead), "p_em": (data.p_em, ahead), "p_rm": (data.p_rm, ahead),
             "regd": (data.regd, cfg.end)}
    if data.wetbulb is not None:
        needs["wetbulb"] = (data.wetbulb, ahead)
    for name, (series, t1) in needs.items():
        if not series.covers(cfg.start, t1):
            raise SeriesError(f"{name} must cover {cfg.start.isoformat()} .. {t1.isoformat()}, "
                              f"has {series.start.isoformat()} .. {series.end.isoformat()}")


class Simulation:
    """Stepwise scenario run; ``snapshot``/``restore`` allow exact continuation."""

    def __init__(self, cfg: ScenarioConfig, data: InputData):
        check_inputs(cfg, data)
        self.cfg = cfg
        self.data = data
        self.plant = Plant(cfg.plant)
        self.opt = OptProblemConfig(**{**cfg.opt.__dict__, "P_dm_lim": cfg.demand_limit, "p_dm": data.p_dm,
                                       "seed": cfg.seed})
        self.forecasts = Forecasts.perfect(data.p_em, data.p_rm, data.workload, data.wetbulb, data.regd,
                                           data.regd_history)
        if not self.forecasts.reg_hist.covers(cfg.start, cfg.end + timedelta(hours=self.opt.horizon_h)):
            raise SeriesError("regulation history does not cover the first prediction horizon")
        agg = cfg.plant.aggregator
        lam0 = data.workload.value_at(cfg.start)
        q0 = min(lam0 * (agg.b0 + agg.b1 + agg.b2) / 1000, cfg.plant.u_c_max)
        self.state: PlantState = self.plant.initial_state(cfg.initial_soc, cfg.initial_T_room, Mode.M4, q0)
        self.pid = cfg.pid
        self.hour = 0
        self.prev: dict[str, np.ndarray | None] = {"s1": None, "s2": None}
        self.records: list[HourRecord] = []
        n = cfg.hours * cfg.ticks_per_hour
        self.log = {c: np.zeros(n) for c in LOG_COLUMNS}
        self.P_bas_ticks = np.zeros(n)

    def snapshot(self) -> dict:
        return copy.deepcopy({k: getattr(self, k) for k in ("state", "pid", "hour", "prev", "records", "log",
                                                            "P_bas_ticks")})

    def restore(self, snap: dict) -> None:
        for k, v in copy.deepcopy(snap).items():
            setattr(self, k, v)

    @property
    def done(self) -> bool:
        return self.hour >= self.cfg.hours

    def _schedule(self, t: datetime) -> tuple[Schedule, float, float, np.ndarray]:
        cfg, opt = self.cfg, self.opt
        model = HorizonModel(self.plant, self.state, t, self.forecasts, opt)
        if cfg.scenario in ("BL", "BL_MM"):
            u_sp = storage_priority_schedule(self.forecasts, cfg.onpeak, self.plant, self.state, t, opt, model)
            base = baseline_rollout_schedule(model, u_sp)
            if cfg.scenario == "BL":
                return base, 0.0, float(u_sp[0]), base.P_profile
            sched = stage2_reserve_schedule(base.P_bas, self.forecasts, opt, self.plant, self.state, t,
                                            init=u_sp, previous=self.prev["s2"], model=model)
        else:
            s1 = stage1_baseline_schedule(self.forecasts, opt, self.plant, self.state, t,
                                          previous=self.prev["s1"], model=model)
            self.prev["s1"] = s1.u_c_set_traj
            sched = stage2_reserve_schedule(s1.P_bas, self.forecasts, opt, self.plant, self.state, t,
                                            init=s1.u_c_set_traj, previous=self.prev["s2"], model=model)
        self.prev["s2"] = sched.u_c_set_traj
        # servers track the baseline the plant will follow at zero signal
        return sched, float(sched.C_reg[0]), float(sched.u_c_set_bas[0]), sched.P_profile

    def run_hour(self) -> None:
        if self.done:
            raise SimulationError("simulation already finished")
        cfg, data, params = self.cfg, self.data, self.cfg.plant
        t = cfg.start + timedelta(seconds=self.hour * cfg.dt_schedule)
        sched, C_reg, u_bas, profile = self._schedule(t)
        plan = sched.plans[0]
        m = int(round(cfg.opt.rollout_step / cfg.dt_inner))
        hour_profile = profile[: int(round(cfg.dt_schedule / cfg.opt.rollout_step))]
        q_profile = sched.q_profile
        q_stage = float(np.mean(q_profile[: len(hour_profile)]))
        self.records.append(HourRecord(t, float(np.mean(hour_profile)), C_reg, u_bas, sched))
        self.pid = self.pid.preset(plan.f_bas, plan.f_min, params.aggregator.f_max)
        fr = cfg.scenario != "BL"
        state = self.state
        i0 = self.hour * cfg.ticks_per_hour
        dt = cfg.dt_inner
        for i in range(cfg.ticks_per_hour):
            tick = t + timedelta(seconds=i * dt)
            r = data.regd.value_at(tick) if fr else 0.0
            lam = data.workload.value_at(tick)
            wb = data.wetbulb.value_at(tick) if data.wetbulb is not None else None
            P_bas = float(hour_profile[i // m])
            inputs = TrackingInputs(P_bas, C_reg, u_bas, r, lam, plan.lam, float(q_profile[i // m]), q_stage)
            meas = state.p_dc if state.p_dc > 0 else P_bas
            cmd, pid, P_ref = tracking_step(inputs, self.pid, plan, meas, params, dt)
            if fr:
                self.pid = pid
            else:
                cmd = type(cmd)(cmd.u_c_set, cmd.u_s_set, cmd.n_act, plan.f_bas, cmd.stage_u_c, cmd.stage_u_s)
            try:
                state, P = self.plant.step(state, cmd, lam, wb, dt)
            except PlantError as exc:
                raise SimulationError(f"{tick.isoformat()}: {exc}") from exc
            row = i0 + i
            for name, value in zip(LOG_COLUMNS, ((tick - cfg.start).total_seconds(), r, P_ref, P, cmd.f_agg,
                                                 cmd.u_c_set, cmd.u_s_set, int(state.mode.mode), state.soc,
                                                 state.room.T_room)):
                self.log[name][row] = value
            self.P_bas_ticks[row] = P_bas
        self.state = state
        self.hour += 1

    def run(self) -> RunResult:
        while not self.done:
            self.run_hour()
        return self.result()

    def result(self) -> RunResult:
        cfg = self.cfg
        P_dc = TimeSeries(cfg.start, cfg.dt_inner, self.log["P_dc"].copy())
        C_reg = TimeSeries(cfg.start, cfg.dt_schedule, np.array([h.C_reg for h in self.records]))
        scores = {}
        n = cfg.ticks_per_hour
        for j, rec in enumerate(self.records):
            if rec.C_reg <= 0:
                continue
            sl = slice(j * n, (j + 1) * n)
            reg = TimeSeries(rec.start, cfg.dt_inner, self.log["r"][sl])
            res = TimeSeries(rec.start, cfg.dt_inner, (self.log["P_dc"][sl] - self.P_bas_ticks[sl]) / rec.C_reg)
            scores[j] = performance_score(reg, res)
        cost = CostReport.from_power(P_dc, self.data.market(), C_reg)
        return RunResult(cfg.scenario, {k: v.copy() for k, v in self.log.items()}, list(self.records), scores,
                         cost, P_dc, C_reg, demand_intervals(P_dc))


def simulate(cfg: ScenarioConfig, data: InputData) -> RunResult:
    return Simulation(cfg, data).run()


def run_scenario(cfg: ScenarioConfig, data: InputData) -> RunResult:
    log.info("running %s from %s to %s", cfg.scenario, cfg.start.isoformat(), cfg.end.isoformat())
    return simulate(cfg, data)


def max_workers(n_jobs: int) -> int:
    raw = os.environ.get("DCGRIDSIM_THREADS")
    cap = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise ValueError(f"DCGRIDSIM_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(cap, n_jobs))


def run_scenarios(cfgs: list[ScenarioConfig], data: InputData) -> dict[str, RunResult]:
    """Run scenarios independently, in worker processes when more than one worker is allowed."""
    workers = max_workers(len(cfgs))
    if workers == 1:
        return {c.scenario: run_scenario(c, data) for c in cfgs}
    with ProcessPoolExecutor(workers) as pool:
        futures = {c.scenario: pool.submit(run_scenario, c, data) for c in cfgs}
        return {k: f.result() for k, f in futures.items()}


# --- outputs -----------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def write_log(result: RunResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        cols = [result.log[c] for c in LOG_COLUMNS]
        for row in zip(*cols):
            w.writerow([_fmt(v) if c not in ("mode",) else str(int(v)) for c, v in zip(LOG_COLUMNS, row)])


def write_schedule(result: RunResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "P_bas_kW", "C_reg_kW", "u_c_set_bas_kW"])
        for j, h in enumerate(result.hours):
            w.writerow([j, _fmt(h.P_bas), _fmt(h.C_reg), _fmt(h.u_c_set_bas)])


def write_scores(result: RunResult, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "s", "s_acc", "s_del", "s_pre", "delay_s"])
        for j, s in sorted(result.scores.items()):
            w.writerow([j, _fmt(s.s), _fmt(s.s_acc), _fmt(s.s_del), _fmt(s.s_pre), _fmt(s.delta_star)])


COST_FIELDS = ("energy_mwh", "energy_cost", "peak_demand_kw", "demand_cost", "fr_revenue", "total")


def write_cost(result: RunResult, path: str | Path) -> None:
    c = result.cost
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", *COST_FIELDS])
        w.writerow([result.scenario, *(_fmt(getattr(c, f)) for f in COST_FIELDS)])


def read_cost(path: str | Path) -> tuple[str, CostReport]:
    with Path(path).open(newline="") as fh:
        row = list(csv.DictReader(fh))[0]
    return row["scenario"], CostReport(*(float(row[f]) for f in COST_FIELDS[:-1]))


def write_run(result: RunResult, out_dir: str | Path) -> Path:
    """Write log, schedule, scores and cost; a run is complete once ``cost.csv`` exists."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_log(result, out / "log.csv")
    write_schedule(result, out / "schedule.csv")
    write_scores(result, out / "scores.csv")
    write_cost(result, out / "cost.csv")
    return out


@dataclass(frozen=True)
class Report:
    columns: list[str]
    rows: list[tuple[str, list[float]]]

    def text(self) -> str:
        width = max(12, *(len(c) + 2 for c in self.columns))
        head = f"{'':<22}" + "".join(f"{c:>{width}}" for c in self.columns)
        lines = [head]
        for label, values in self.rows:
            lines.append(f"{label:<22}" + "".join(f"{v:>{width}.1f}" for v in values))
        return "\n".join(lines)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["item", *self.columns])
            for label, values in self.rows:
                w.writerow([label, *(_fmt(v) for v in values)])


def report(costs: dict[str, CostReport]) -> Report:
    """Cost comparison table; FR revenue appears as a negative cost and savings are relative to BL."""
    if not costs:
        raise ValueError("at least one result is required")
    names = [s for s in SCENARIOS if s in costs] + [s for s in costs if s not in SCENARIOS]
    ref = costs["BL"].total if "BL" in costs else None
    rows = [
        ("Energy (MWh)", [costs[n].energy_mwh for n in names]),
        ("Energy cost ($)", [costs[n].energy_cost for n in names]),
        ("Peak demand (kW)", [costs[n].peak_demand_kw for n in names]),
        ("Demand cost ($)", [costs[n].demand_cost for n in names]),
        ("FR cost ($)", [-costs[n].fr_revenue + 0.0 for n in names]),  # + 0.0 avoids printing -0.0
        ("Total cost ($)", [costs[n].total for n in names]),
    ]
    if ref:
        rows.append(("Savings vs BL (%)", [100 * (ref - costs[n].total) / ref for n in names]))
    return Report(names, rows)
