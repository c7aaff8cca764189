"""Hourly scheduling: baseline purchase, regulation reserve and the storage-priority rule.

All three share a predictive rollout of the plant at five-minute resolution
over a twelve-hour horizon, and the MPC stages share a derivative-free
coordinate search over one chiller setpoint per hour.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Callable, Sequence

import numpy as np

from .plant import (AggregatorParams, ControlCommand, Mode, OperatingMode, Plant, PlantState, aggregator_power,
                    auxiliary_power, staging_predicate)
from .timeseries import TimeSeries
from .tracking import QoSInfeasibleError, ServerPlan, chiller_regulation_range, min_frequency, plan_servers

log = logging.getLogger(__name__)

HOUR = 3600.0


# --- regulation capacity -----------------------------------------------------


def fr_capacity_servers(lambda_pred: float, n_act: int, f_bas: float, params: AggregatorParams,
                        f_min: float | None = None) -> float:
    """Symmetric regulation capacity of the server aggregator in kW."""
    if n_act < 1 or lambda_pred <= 0:
        return 0.0
    if f_min is None:
        try:
            f_min = min_frequency(lambda_pred, n_act, params)
        except QoSInfeasibleError as exc:
            log.warning("no server regulation capacity: %s", exc)
            return 0.0
    p_min = aggregator_power(lambda_pred, f_min, n_act, params)
    p_max = aggregator_power(lambda_pred, params.f_max, n_act, params)
    p_bas = aggregator_power(lambda_pred, f_bas, n_act, params)
    return min(max(p_max - p_bas, 0.0), max(p_bas - p_min, 0.0)) / 1000.0


def fr_capacity_chiller(u_c_set_bas: float, u_c_min: float, u_c_max: float, cop: float) -> float:
    """Electric regulation capacity (kW) from swinging the chiller around its base setpoint."""
    if not u_c_min - 1e-9 <= u_c_set_bas <= u_c_max + 1e-9:
        raise ValueError(f"base setpoint {u_c_set_bas:g} outside [{u_c_min:g}, {u_c_max:g}]")
    return max(chiller_regulation_range(u_c_set_bas, u_c_min, u_c_max), 0.0) / cop


def fr_capacity_total(servers_kw: float, chiller_kw: float) -> float:
    if servers_kw < 0 or chiller_kw < 0:
        raise ValueError("capacities must be non-negative")
    return servers_kw + chiller_kw


# --- derivative-free search --------------------------------------------------


@dataclass
class TrajectoryResult:
    x: np.ndarray
    fun: float
    converged: bool
    nfev: int


def solve_trajectory(objective: Callable[[np.ndarray], float], lower: Sequence[float], upper: Sequence[float],
                     init: Sequence[float] | Sequence[Sequence[float]], seed: int = 0, max_evals: int = 2000,
                     tol: float = 1e-3, initial_step: float = 0.25) -> TrajectoryResult:
    """Minimise over a box by pattern search with a shrinking step.

    ``init`` is one start point or several; bound midpoints are always added
    as a further start.  Each start is searched coarsely and the best one is
    refined until the step falls below ``tol`` times the box width.  The
    coordinate order comes from ``seed`` so results are reproducible.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("inconsistent bounds")
    starts = np.atleast_2d(np.asarray(init, dtype=float))
    starts = np.vstack([starts, 0.5 * (lo + hi)])
    width = np.where(hi > lo, hi - lo, 0.0)
    rng = np.random.default_rng(seed)
    nfev = 0

    def f(x: np.ndarray) -> float:
        nonlocal nfev
        nfev += 1
        return float(objective(x))

    # coordinate directions first; transfers between neighbouring steps (+e_i - e_i+1) are polled
    # only when no single coordinate improves, to follow valleys such as storage arbitrage
    unit = np.eye(lo.size) * width
    transfers = [unit[i] - unit[i + 1] for i in range(lo.size - 1)]

    def poll(x: np.ndarray, fx: float, dirs: list[np.ndarray], step: float, budget: int):
        improved = False
        for i in rng.permutation(len(dirs)):
            d = dirs[i]
            if not d.any():
                continue
            for sign in (1.0, -1.0):
                moved = False
                while nfev < budget:
                    cand = np.clip(x + sign * step * d, lo, hi)
                    if np.array_equal(cand, x):
                        break
                    fc = f(cand)
                    if fc < fx:
                        x, fx, moved, improved = cand, fc, True, True
                    else:
                        break
                if moved:
                    break
        return x, fx, improved

    def search(x: np.ndarray, fx: float, step: float, stop: float, budget: int) -> tuple[np.ndarray, float, float]:
        while step >= stop and nfev < budget:
            x, fx, improved = poll(x, fx, list(unit), step, budget)
            if not improved and transfers:
                x, fx, improved = poll(x, fx, transfers, step, budget)
            if not improved:
                step *= 0.5
        return x, fx, step

    coarse = max(tol, 1.0 / 64)
    per_start = max_evals // (2 * len(starts))
    best: tuple[np.ndarray, float, float] | None = None
    seen: list[np.ndarray] = []
    for s in starts:
        x0 = np.clip(s, lo, hi)
        if any(np.array_equal(x0, p) for p in seen):
            continue
        seen.append(x0)
        budget = nfev + per_start
        cand = search(x0, f(x0), initial_step, coarse, budget)
        if best is None or cand[1] < best[1]:
            best = cand
    x, fx, step = search(best[0], best[1], min(best[2], coarse), tol, max_evals)
    return TrajectoryResult(x, fx, step < tol, nfev)


# --- forecasts and configuration ---------------------------------------------


@dataclass(frozen=True)
class Forecasts:
    """Predicted inputs.  With perfect prediction these are the actual series."""

    p_em: TimeSeries
    p_rm: TimeSeries
    lam: TimeSeries
    wetbulb: TimeSeries | None
    reg_hist: TimeSeries  # regulation signal used as its own prediction, already aligned

    @classmethod
    def perfect(cls, p_em, p_rm, lam, wetbulb, reg_signal: TimeSeries, reg_history: TimeSeries | None,
                lag: float = 24 * HOUR) -> Forecasts:
        """Actual prices and workload; the regulation prediction is the trace one day earlier."""
        if reg_history is None:
            return cls(p_em, p_rm, lam, wetbulb, reg_signal)
        if abs(reg_history.step - reg_signal.step) > 1e-9 or reg_history.end != reg_signal.start:
            raise ValueError("regulation history must immediately precede the signal at the same step")
        joined = np.concatenate([reg_history.values, reg_signal.values])
        return cls(p_em, p_rm, lam, wetbulb,
                   TimeSeries(reg_history.start + timedelta(seconds=lag), reg_signal.step, joined))


@dataclass(frozen=True)
class OptProblemConfig:
    horizon_h: int = 12
    control_step: float = HOUR
    rollout_step: float = 300.0
    P_dm_lim: float = 1990.0
    p_dm: float = 7.48
    soc_min: float = 0.05
    soc_max: float = 0.95
    penalty_weight: float = 1000.0
    max_evals: int = 600
    tol: float = 1e-3
    reduced_order: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.horizon_h < 1:
            raise ValueError("horizon must be at least one step")
        if self.penalty_weight <= 0:
            raise ValueError("penalty weight must be positive")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValueError("SoC bounds must satisfy 0 <= min < max <= 1")
        if HOUR % self.rollout_step:
            raise ValueError("rollout step must divide an hour")


@dataclass
class Schedule:
    """Hourly trajectories over a horizon; element 0 is executed."""

    start: datetime
    u_c_set_traj: np.ndarray
    P_bas: np.ndarray  # hourly mean of the predicted baseline power, kW
    C_reg: np.ndarray
    u_c_set_bas: np.ndarray
    P_profile: np.ndarray  # predicted baseline power at rollout resolution, kW
    objective: float = 0.0
    violation: float = 0.0
    converged: bool = True
    plans: list[ServerPlan] = field(default_factory=list)
    q_profile: np.ndarray | None = None

    @property
    def hours(self) -> int:
        return len(self.u_c_set_traj)


# --- predictive rollout ------------------------------------------------------


@dataclass
class Rollout:
    P: np.ndarray
    soc: np.ndarray
    T_room: np.ndarray
    violation: float  # penalty-weighted units, before the weight


class HorizonModel:
    """Plant predictions over one horizon from a given state.

    Rollouts cache the state at every hour boundary keyed by the decisions
    taken so far, so perturbing a late hour only re-simulates from there.
    The default kernel is a scalar transcription of ``Plant.step`` with an
    ideal tank loop; ``exact=True`` calls ``Plant.step`` itself.
    """

    def __init__(self, plant: Plant, state: PlantState, t0: datetime, forecasts: Forecasts,
                 cfg: OptProblemConfig, hours: int | None = None, exact: bool = False):
        self.plant = plant
        self.params = plant.params
        self.state = state
        self.t0 = t0
        self.cfg = cfg
        self.exact = exact
        self.hours = cfg.horizon_h if hours is None else hours
        dt = cfg.rollout_step
        self.m = int(round(HOUR / dt))
        n = self.hours * self.m
        agg = self.params.aggregator
        self.lam = forecasts.lam.block_means(t0, dt, n)
        self.plans: list[ServerPlan] = []
        for j in range(self.hours):
            seg = forecasts.lam.window(t0 + timedelta(hours=j), HOUR).values \
                if forecasts.lam.step <= HOUR else self.lam[j * self.m:(j + 1) * self.m]
            self.plans.append(plan_servers(float(np.mean(seg)), float(np.max(seg)), agg))
        self.p_agg = np.array([self.plans[k // self.m].power(self.lam[k], self.plans[k // self.m].f_bas, agg)
                               for k in range(n)])
        self.q = self.p_agg  # all server power becomes room heat
        self.q_hour = self.q.reshape(self.hours, self.m).mean(axis=1)
        self.C_agg = np.array([fr_capacity_servers(p.lam, p.n_act, p.f_bas, agg, p.f_min) for p in self.plans])
        self.p_em = forecasts.p_em.block_means(t0, HOUR, self.hours)
        self.p_rm = forecasts.p_rm.block_means(t0, HOUR, self.hours)
        wb = forecasts.wetbulb.block_means(t0, dt, n) if forecasts.wetbulb is not None else None
        self.wetbulb = wb
        self.cop = np.array([self.params.cop_at(None if wb is None else wb[k]) for k in range(n)])
        self.r = forecasts.reg_hist.block_means(t0, dt, n)
        self._cache: dict[tuple, tuple] = {}
        self._root = self._pack(state)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Chiller setpoint box per hour after substituting the storage-rate limits."""
        p = self.params
        lo = np.maximum(p.u_c_min, self.q_hour + p.u_s_min)
        hi = np.minimum(p.u_c_max, self.q_hour + p.u_s_max)
        return lo, np.maximum(hi, lo)

    # state packing: (temps, chiller output, room temperature, mode, candidate, elapsed)

    def _pack(self, s: PlantState):
        if self.exact:
            return s
        return ([float(x) for x in s.tank.temps], s.chiller.capacity_delivered, s.room.T_room,
                s.mode.mode, s.mode.candidate_mode, s.mode.candidate_elapsed)

    def unpack(self, ls) -> PlantState:
        if isinstance(ls, PlantState):
            return ls
        s = self.state
        temps, cap, T, mode, cand, elapsed = ls
        return replace(s, tank=replace(s.tank, temps=np.array(temps)),
                       chiller=replace(s.chiller, capacity_delivered=cap), room=replace(s.room, T_room=T),
                       mode=OperatingMode(mode, cand, elapsed, s.mode.delay))

    def _setpoints(self, j: int, u: float, fr: bool):
        p = self.params
        du = chiller_regulation_range(u, p.u_c_min, p.u_c_max) if fr and u >= p.u_c_min else 0.0
        stage_u_s = min(max(u - self.q_hour[j], p.u_s_min), p.u_s_max)
        for i in range(self.m):
            k = j * self.m + i
            r = self.r[k] if fr else 0.0
            u_c = min(max(u + r * du, p.u_c_min), p.u_c_max) if u > 0 else 0.0
            u_s = min(max(u_c - self.q[k], p.u_s_min), p.u_s_max)
            yield i, k, r, u_c, u_s, stage_u_s

    def _hour(self, ls, j: int, u: float, fr: bool):
        if self.cfg.reduced_order:
            ls, P, soc, T = self._reduced_hour(ls, j, u, fr)
        elif self.exact:
            ls, P, soc, T = self._exact_hour(ls, j, u, fr)
        else:
            ls, P, soc, T = self._lean_hour(ls, j, u, fr)
        if fr:
            P += self.r[j * self.m:(j + 1) * self.m] * self.C_agg[j]
        return ls, P, soc, T

    def _exact_hour(self, state: PlantState, j: int, u: float, fr: bool):
        plan = self.plans[j]
        P, soc, T = np.empty(self.m), np.empty(self.m), np.empty(self.m)
        for i, k, _, u_c, u_s, stage_u_s in self._setpoints(j, u, fr):
            wb = None if self.wetbulb is None else self.wetbulb[k]
            cmd = ControlCommand(u_c, u_s, plan.n_act, plan.f_bas, u, stage_u_s)
            state, P[i] = self.plant.step(state, cmd, self.lam[k], wb, self.cfg.rollout_step, ideal_tank=True)
            soc[i] = state.soc
            T[i] = state.room.T_room
        return state, P, soc, T

    def _lean_hour(self, ls, j: int, u: float, fr: bool):
        p = self.params
        aux = p.aux
        lim = p.limits
        dt = self.cfg.rollout_step
        tank = self.state.tank
        mpv, cp = tank.mass_per_volume, tank.cp
        T_st0, T_sb0 = tank.T_st0, tank.T_sb0
        nv = len(ls[0])
        span = T_st0 - T_sb0
        delay = self.state.mode.delay
        tau = self.state.chiller.tau
        decay = math.exp(-dt / tau)
        lag = tau / dt * (1 - decay)
        C_room = self.state.room.capacitance
        temps, cap, T_room, mode, cand, elapsed = ls
        temps = list(temps)
        P, soc, T = np.empty(self.m), np.empty(self.m), np.empty(self.m)
        for i, k, _, u_c, u_s_set, stage_u_s in self._setpoints(j, u, fr):
            q_it = self.q[k]
            target_mode = staging_predicate(u, stage_u_s, lim)
            if target_mode is None or target_mode == mode:
                cand, elapsed = None, 0.0
            else:
                elapsed = elapsed + dt if target_mode == cand else dt
                if elapsed >= delay - 1e-9:
                    mode, cand, elapsed = target_mode, None, 0.0
                else:
                    cand = target_mode
            cop = self.cop[k]
            set_c = u_c if mode.chiller_on else 0.0
            set_c = 0.0 if set_c <= 0 else min(max(set_c, p.u_c_min), p.u_c_max)
            end = set_c + (cap - set_c) * decay
            q_ch = set_c + (cap - set_c) * lag
            cap = min(max(end, 0.0), p.chiller_nominal)
            if mode.storage_on:
                target = min(max(u_s_set - p.room_trim * (T_room - p.room_setpoint), p.u_s_min), p.u_s_max)
            else:
                target = 0.0
            before = sum(temps)
            if target != 0:
                if target > 0:
                    dT = max(temps[0] - T_sb0, 0.5)
                else:
                    dT = max(T_st0 - temps[-1], 0.5)
                flow = min(max(target / (cp * dT), -p.transfer_flow), p.transfer_flow)
                if flow != 0:
                    inlet = T_sb0 if flow > 0 else T_st0
                    n = max(1, math.ceil(abs(flow) * dt / mpv - 1e-12))
                    c = min(abs(flow) * dt / n / mpv, 1.0)
                    for _ in range(n):
                        if flow > 0:
                            temps = [temps[v] + c * ((temps[v + 1] if v + 1 < nv else inlet) - temps[v])
                                     for v in range(nv)]
                        else:
                            temps = [temps[v] + c * ((temps[v - 1] if v > 0 else inlet) - temps[v])
                                     for v in range(nv)]
            u_s = mpv * cp * (before - sum(temps)) / dt
            demand = max(q_it + C_room * (T_room - p.room_setpoint) / p.room_time_constant, 0.0)
            production = min(q_ch, max(demand + u_s, 0.0))
            p_ch = production / cop
            T_room += dt * (q_it - max(production - u_s, 0.0)) / C_room
            p_aux = aux.secondary_pump + aux.supply_fan * min(max(q_it / aux.nominal_load, 0.0), 1.0) ** 3
            if mode.chiller_on:
                p_aux += aux.primary_pump + aux.condenser_pump + aux.tower_fan
            if mode.storage_on:
                p_aux += aux.transfer_pump
            P[i] = self.p_agg[k] + p_ch + p_aux
            soc[i] = min(max((T_st0 - sum(temps) / nv) / span, 0.0), 1.0)
            T[i] = T_room
        return (temps, cap, T_room, mode, cand, elapsed), P, soc, T

    def _reduced_hour(self, ls, j: int, u: float, fr: bool):
        # SoC integrator: chiller and tank follow their setpoints exactly
        p = self.params
        dt = self.cfg.rollout_step
        tank = self.state.tank
        span = tank.T_st0 - tank.T_sb0
        temps, cap, T_room, mode, cand, elapsed = ls if not isinstance(ls, PlantState) else self._pack_lean(ls)
        soc = (tank.T_st0 - sum(temps) / len(temps)) / span
        P, socs, T = np.empty(self.m), np.empty(self.m), np.empty(self.m)
        for i, k, _, u_c, u_s, _ in self._setpoints(j, u, fr):
            if u_s > 0:
                u_s = min(u_s, (1 - soc) * p.storage_capacity / dt)
            else:
                u_s = max(u_s, -soc * p.storage_capacity / dt)
            soc += u_s * dt / p.storage_capacity
            mode = Mode.M2 if u_c == 0 else Mode.M1 if u_s > 0 else Mode.M3 if u_s < 0 else Mode.M4
            P[i] = self.p_agg[k] + u_c / self.cop[k] + auxiliary_power(mode, self.q[k], p.aux)
            T_room += dt * (self.q[k] - max(u_c - u_s, 0.0)) / self.state.room.capacitance
            socs[i] = soc
            T[i] = T_room
        temps = [tank.T_st0 - soc * span] * len(temps)
        return (temps, u_c, T_room, mode, None, 0.0), P, socs, T

    def _pack_lean(self, s: PlantState):
        return ([float(x) for x in s.tank.temps], s.chiller.capacity_delivered, s.room.T_room,
                s.mode.mode, s.mode.candidate_mode, s.mode.candidate_elapsed)

    def rollout(self, u: Sequence[float], fr: bool = False) -> Rollout:
        u = [float(v) for v in u]
        if len(u) != self.hours:
            raise ValueError("one setpoint per horizon hour expected")
        ls = self._root
        start = 0
        for j in range(self.hours, 0, -1):
            hit = self._cache.get((fr, *u[:j]))
            if hit is not None:
                start, ls = j, hit[0]
                break
        segs = [self._cache[(fr, *u[:j + 1])][1:] for j in range(start)]
        if len(self._cache) > 20000:
            self._cache.clear()
        for j in range(start, self.hours):
            ls, P, soc, T = self._hour(ls, j, u[j], fr)
            self._cache[(fr, *u[:j + 1])] = (ls, P, soc, T)
            segs.append((P, soc, T))
        P = np.concatenate([s[0] for s in segs])
        soc = np.concatenate([s[1] for s in segs])
        T = np.concatenate([s[2] for s in segs])
        c = self.cfg
        room = self.state.room
        v = np.maximum(c.soc_min - soc, 0) + np.maximum(soc - c.soc_max, 0)
        w = np.maximum(room.T_min - T, 0) + np.maximum(T - room.T_max, 0)
        # demand excess in percent of the limit, so 1 unit is about 20 kW at 1990 kW
        d = 100 * np.maximum(self.demand(P) - c.P_dm_lim, 0) / c.P_dm_lim
        violation = float(np.sum(v + v**2) + np.sum(w + w**2) + np.sum(d + d**2))
        return Rollout(P, soc, T, violation)

    def advance(self, ls, j: int, u: float, fr: bool = False):
        """Roll one hour from a packed state; returns the packed end state and the SoC trace."""
        ls, _, soc, _ = self._hour(ls, j, u, fr)
        return ls, soc

    # cost terms

    def energy_cost(self, P: np.ndarray) -> float:
        hourly = P.reshape(self.hours, self.m).mean(axis=1)
        return float(np.dot(self.p_em, hourly))

    def demand(self, P: np.ndarray) -> np.ndarray:
        per = int(round(1800 / self.cfg.rollout_step))
        return P.reshape(-1, per).mean(axis=1)

    def demand_penalty(self, P: np.ndarray) -> float:
        return max(float(self.demand(P).max()) - self.cfg.P_dm_lim, 0.0) * self.cfg.p_dm

    def chiller_capacity(self, u: Sequence[float]) -> np.ndarray:
        p = self.params
        return np.array([fr_capacity_chiller(v, p.u_c_min, p.u_c_max, p.cop) if v >= p.u_c_min else 0.0 for v in u])

    def regulation_capacity(self, u: Sequence[float]) -> np.ndarray:
        return self.C_agg + self.chiller_capacity(u)

    def hourly(self, P: np.ndarray) -> np.ndarray:
        return P.reshape(self.hours, self.m).mean(axis=1)


# --- rule-based baseline -----------------------------------------------------


def _in_window(hour: int, window: tuple[int, int]) -> bool:
    return window[0] <= hour < window[1]


def onpeak_load(forecasts: Forecasts, plant: Plant, t_start: datetime, window: tuple[int, int]) -> float:
    """Predicted cooling energy (kJ) of the next on-peak period starting at or after ``t_start``."""
    agg = plant.params.aggregator
    day = t_start.replace(hour=0, minute=0, second=0, microsecond=0)
    begin = day + timedelta(hours=window[0])
    if t_start >= day + timedelta(hours=window[1]):
        begin += timedelta(days=1)
    begin = max(begin, t_start)
    end = begin.replace(hour=0) + timedelta(hours=window[1])
    total = 0.0
    t = begin
    while t < end:
        if not forecasts.lam.covers(t, t + timedelta(hours=1)):
            break
        seg = forecasts.lam.window(t, HOUR).values if forecasts.lam.step <= HOUR else \
            np.array([forecasts.lam.value_at(t)])
        plan = plan_servers(float(np.mean(seg)), float(np.max(seg)), agg)
        total += float(np.mean([plan.power(v, plan.f_bas, agg) for v in seg])) * HOUR
        t += timedelta(hours=1)
    return total


def storage_priority_schedule(forecasts: Forecasts, onpeak: tuple[int, int], plant: Plant, state: PlantState,
                              t0: datetime, cfg: OptProblemConfig, model: HorizonModel | None = None) -> np.ndarray:
    """Chiller setpoints of the storage-priority rule over the horizon.

    Off-peak the chiller runs flat out until the tank is full or holds the
    next on-peak load; on-peak it runs at the constant capacity that just
    empties the tank when the on-peak window closes.
    """
    p = plant.params
    model = model or HorizonModel(plant, state, t0, forecasts, cfg)
    u = np.zeros(model.hours)
    ls = model._root
    soc = model.state.soc
    j = 0
    while j < model.hours:
        hour = (t0 + timedelta(hours=j)).hour
        if _in_window(hour, onpeak):
            n_on = 1
            while j + n_on < model.hours and _in_window((t0 + timedelta(hours=j + n_on)).hour, onpeak):
                n_on += 1
            value = _onpeak_setpoint(model, ls, j, n_on, cfg)
            u[j:j + n_on] = value
            for i in range(n_on):
                ls, trace = model.advance(ls, j + i, value)
            soc = trace[-1]
            j += n_on
            continue
        q = model.q_hour[j]
        need = onpeak_load(forecasts, plant, t0 + timedelta(hours=j), onpeak)
        target = min(cfg.soc_max, cfg.soc_min + need / p.storage_capacity)
        deficit = (target - soc) * p.storage_capacity
        if deficit <= 0:
            u[j] = min(max(q, p.u_c_min), p.u_c_max)
        else:
            rate = min(deficit / HOUR, p.u_s_max, p.u_c_max - q)
            u[j] = min(max(q + max(rate, 0.0), p.u_c_min), p.u_c_max)
        ls, trace = model.advance(ls, j, u[j])
        soc = trace[-1]
        j += 1
    return u


def _onpeak_setpoint(model: HorizonModel, ls, j: int, n: int, cfg: OptProblemConfig) -> float:
    """Lowest constant chiller setpoint that leaves SoC_min at the window end with the room in band."""
    p = model.params
    T_max = model.state.room.T_max

    def feasible(value: float) -> bool:
        s = ls
        for i in range(n):
            s, _, soc, T = model._hour(s, j + i, value, False)
            if T.max() > T_max:
                return False
        return soc[-1] >= cfg.soc_min

    q = model.q_hour[j:j + n]
    if not feasible(p.u_c_max):
        # the tank cannot carry the on-peak period: chiller first, storage tops up
        log.info("on-peak load exceeds storage plus chiller; falling back to chiller priority")
        return p.u_c_max
    if float(np.max(q)) <= -p.u_s_min and feasible(0.0):
        return 0.0
    lo, hi = max(float(np.max(q)) + p.u_s_min, p.u_c_min), p.u_c_max
    if feasible(lo):
        return lo
    while hi - lo > 1.0:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


# --- MPC stages --------------------------------------------------------------


def _finish(model: HorizonModel, u: np.ndarray, result: TrajectoryResult | None, c_reg: np.ndarray) -> Schedule:
    base = model.rollout(u, fr=False)
    return Schedule(model.t0, u.copy(), model.hourly(base.P), c_reg, u.copy(), base.P,
                    objective=result.fun if result else 0.0, violation=base.violation,
                    converged=result.converged if result else True, plans=model.plans, q_profile=model.q)


def baseline_rollout_schedule(model: HorizonModel, u: np.ndarray) -> Schedule:
    """Wrap a fixed setpoint trajectory (e.g. the storage-priority rule) as a schedule."""
    return _finish(model, np.asarray(u, dtype=float), None, np.zeros(model.hours))


def _shifted(prev: np.ndarray | None, lo: np.ndarray, hi: np.ndarray) -> np.ndarray | None:
    if prev is None or len(prev) == 0:
        return None
    x = np.append(np.asarray(prev, dtype=float)[1:], prev[-1])[: len(lo)]
    if len(x) < len(lo):
        x = np.append(x, [x[-1]] * (len(lo) - len(x)))
    return np.clip(x, lo, hi)


def stage1_baseline_schedule(forecasts: Forecasts, cfg: OptProblemConfig, plant: Plant, state: PlantState,
                             t0: datetime, previous: np.ndarray | None = None,
                             model: HorizonModel | None = None) -> Schedule:
    """Cheapest chiller trajectory for energy plus demand penalty over the horizon."""
    model = model or HorizonModel(plant, state, t0, forecasts, cfg)
    lo, hi = model.bounds()
    w = cfg.penalty_weight

    def objective(u: np.ndarray) -> float:
        ro = model.rollout(u)
        return model.energy_cost(ro.P) + model.demand_penalty(ro.P) + w * ro.violation

    starts = [np.clip(model.q_hour, lo, hi)]
    warm = _shifted(previous, lo, hi)
    if warm is not None:
        starts.insert(0, warm)
    res = solve_trajectory(objective, lo, hi, starts, seed=cfg.seed, max_evals=cfg.max_evals, tol=cfg.tol)
    sched = _finish(model, res.x, res, np.zeros(model.hours))
    if not res.converged:
        log.info("stage 1 search stopped at its evaluation budget (f=%.2f)", res.fun)
    return sched


def stage2_reserve_schedule(P_bas: np.ndarray, forecasts: Forecasts, cfg: OptProblemConfig, plant: Plant,
                            state: PlantState, t0: datetime, init: np.ndarray | None = None,
                            previous: np.ndarray | None = None, model: HorizonModel | None = None) -> Schedule:
    """Base chiller setpoints and regulation bids maximising net market benefit.

    The rollout swings the chiller with the predicted regulation signal and
    adds the matching server excursion, so the 30-min demand seen by the
    search includes the regulation energy.  ``P_bas`` is carried through
    unchanged as the purchased baseline.
    """
    model = model or HorizonModel(plant, state, t0, forecasts, cfg)
    lo, hi = model.bounds()
    w = cfg.penalty_weight

    def objective(u: np.ndarray) -> float:
        ro = model.rollout(u, fr=True)
        revenue = float(np.dot(model.p_rm, model.regulation_capacity(u)))
        return model.energy_cost(ro.P) + model.demand_penalty(ro.P) - revenue + w * ro.violation

    starts = []
    for s in (init, _shifted(previous, lo, hi)):
        if s is not None:
            starts.append(np.clip(np.asarray(s, dtype=float), lo, hi))
    if not starts:
        starts.append(np.clip(model.q_hour, lo, hi))
    res = solve_trajectory(objective, lo, hi, starts, seed=cfg.seed, max_evals=cfg.max_evals, tol=cfg.tol)
    sched = _finish(model, res.x, res, model.regulation_capacity(res.x))
    sched.P_bas = np.asarray(P_bas, dtype=float)[: model.hours].copy()
    if not res.converged:
        log.info("stage 2 search stopped at its evaluation budget (f=%.2f)", res.fun)
    return sched


def schedule_rows(s: Schedule) -> list[tuple[int, float, float, float]]:
    return [(j, float(s.P_bas[j]), float(s.C_reg[j]), float(s.u_c_set_bas[j])) for j in range(s.hours)]
