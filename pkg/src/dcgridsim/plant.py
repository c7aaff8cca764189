"""Physical models of the data center plant.

Server aggregator power and GI/G/m response time, a stratified chilled-water
tank discretised into equal-mass volumes, a first-order chiller, a lumped room,
and the four-mode staging state machine.  :class:`Plant` composes them into a
single fixed-step update.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)


class PlantError(ValueError):
    """Invalid input to a plant model."""


class InstabilityError(PlantError):
    """Server utilisation at or above one; the queue has no steady state."""


class TankStabilityError(PlantError):
    """Time step too long for the explicit advection scheme."""


# --- server aggregator -------------------------------------------------------


@dataclass(frozen=True)
class AggregatorParams:
    b0: float = 0.016
    b1: float = 1.60
    b2: float = 0.14
    c0: float = 0.01
    c1: float = 120.92
    k: float = 300.0  # requests/s per server at f = 1
    C_A: float = 1.0
    C_B: float = 1.0
    N0: int = 16000
    gamma: float = 1.5
    beta: float = 1.1
    t_r_u: float = 0.006  # s
    f_max: float = 1.0

    def __post_init__(self):
        if self.b1 <= 0 or self.b2 <= 0 or self.c1 <= 0:
            raise PlantError("b1, b2 and c1 must be positive")
        if self.gamma <= 1:
            raise PlantError("gamma must exceed 1")
        if self.beta < 1:
            raise PlantError("beta must be at least 1")
        if self.k <= 0 or self.t_r_u <= 0:
            raise PlantError("k and t_r_u must be positive")
        if self.N0 < 1 or not 0 < self.f_max <= 1:
            raise PlantError("N0 must be >= 1 and f_max in (0, 1]")


def aggregator_power(lam: float, f_agg: float, n_act: float, params: AggregatorParams) -> float:
    """Aggregated server power in W."""
    if lam < 0 or n_act < 0:
        raise PlantError("workload and active server count must be non-negative")
    if n_act > params.N0:
        raise PlantError(f"{n_act} active servers exceeds the installed {params.N0}")
    if not 0 <= f_agg <= 1:
        raise PlantError("aggregated frequency must lie in [0, 1]")
    return lam * (params.b0 + params.b1 * f_agg + params.b2 * f_agg**2) + params.c0 + params.c1 * n_act


class QueueMetrics(NamedTuple):
    mu: float
    rho: float
    pr: float
    t_s: float
    t_w: float
    t_r: float


def queued_probability(rho: float, n_act: float) -> float:
    """Approximate probability that an arriving job waits.

    The two branches do not meet at rho = 0.7; the jump is kept as is.
    """
    if rho >= 0.7:
        return (rho**n_act + rho) / 2
    return rho ** ((n_act + 1) / 2)


def response_time(lam: float, f_agg: float, n_act: float, params: AggregatorParams) -> QueueMetrics:
    if n_act < 1:
        raise PlantError("at least one active server is required")
    if f_agg <= 0:
        raise PlantError("aggregated frequency must be positive")
    if lam < 0:
        raise PlantError("workload must be non-negative")
    mu = params.k * f_agg
    rho = lam / (n_act * mu)
    if rho >= 1:
        raise InstabilityError(f"utilisation {rho:.4f} >= 1: service capability below workload")
    pr = queued_probability(rho, n_act)
    t_s = 1 / mu
    t_w = (params.C_A**2 + params.C_B**2) / (2 * n_act) * pr / (mu * (1 - rho))
    return QueueMetrics(mu, rho, pr, t_s, t_w, t_s + t_w)


def response_time_of_utilisation(rho: float, lam: float, n_act: float, params: AggregatorParams) -> float:
    """Response time written as a function of utilisation at fixed workload."""
    if not 0 < rho < 1:
        raise PlantError("utilisation must lie in (0, 1)")
    if lam <= 0:
        raise PlantError("workload must be positive")
    pr = queued_probability(rho, n_act)
    return rho / lam * (n_act + (params.C_A**2 + params.C_B**2) / (2 * (1 - rho)) * pr)


def cooling_load(p_agg_w: float) -> float:
    """Room heat gain in kW: all server power ends up as heat."""
    return p_agg_w / 1000.0


# --- stratified tank ---------------------------------------------------------


@dataclass(frozen=True)
class TankState:
    temps: np.ndarray  # degC, index 0 = top
    mass_per_volume: float  # kg
    cp: float = 4.186  # kJ/(kg K)
    T_st0: float = 12.0
    T_sb0: float = 5.0

    def __post_init__(self):
        temps = np.array(self.temps, dtype=float)
        temps.setflags(write=False)
        object.__setattr__(self, "temps", temps)
        if temps.size < 2:
            raise PlantError("tank needs at least two volumes")
        if self.T_st0 <= self.T_sb0:
            raise PlantError("nominal top temperature must exceed bottom temperature")
        if not np.all(np.isfinite(temps)):
            raise PlantError("tank temperatures must be finite")

    @property
    def n_volumes(self) -> int:
        return self.temps.size

    @property
    def total_mass(self) -> float:
        return self.mass_per_volume * self.n_volumes

    @classmethod
    def sized(cls, capacity_kj: float, soc: float, n_volumes: int = 10, cp: float = 4.186,
              T_st0: float = 12.0, T_sb0: float = 5.0) -> TankState:
        """A tank holding ``capacity_kj`` between the nominal temperatures, stratified at ``soc``."""
        mass = capacity_kj / (cp * (T_st0 - T_sb0)) / n_volumes
        cold = soc * n_volumes
        temps = np.full(n_volumes, T_st0)
        for i in range(n_volumes):
            # fraction of volume i (counted from the bottom) that is cold
            frac = min(max(cold - i, 0.0), 1.0)
            temps[n_volumes - 1 - i] = T_st0 - frac * (T_st0 - T_sb0)
        return cls(temps, mass, cp, T_st0, T_sb0)


def stored_cooling(state: TankState) -> float:
    """Cooling energy (kJ) stored relative to a tank full of return water."""
    return state.mass_per_volume * state.cp * float(np.sum(state.T_st0 - state.temps))


def tank_capacity(state: TankState) -> float:
    return state.total_mass * state.cp * (state.T_st0 - state.T_sb0)


def tank_charge_rate(mdot_sb: float, T_st: float, T_sb: float, cp: float = 4.186) -> float:
    """Charging rate u_s in kW; positive while charging."""
    return mdot_sb * cp * (T_st - T_sb)


def tank_ports(state: TankState, mdot_sb: float, T_inlet: float) -> tuple[float, float]:
    """(top, bottom) port temperatures for a given flow direction."""
    if mdot_sb > 0:
        return float(state.temps[0]), T_inlet
    if mdot_sb < 0:
        return T_inlet, float(state.temps[-1])
    return float(state.temps[0]), float(state.temps[-1])


def _advect(temps: np.ndarray, courant: float, T_inlet: float, upward: bool) -> np.ndarray:
    # Explicit upwind plug flow; exact transport when courant == 1.
    if upward:
        upstream = np.append(temps[1:], T_inlet)
    else:
        upstream = np.insert(temps[:-1], 0, T_inlet)
    return temps + courant * (upstream - temps)


def tank_step(state: TankState, mdot_sb: float, T_inlet: float, dt: float) -> TankState:
    """Advance the tank by ``dt`` seconds of flow ``mdot_sb`` (kg/s, + charging).

    Charging pushes ``T_inlet`` water in at the bottom and out at the top;
    discharging does the reverse.  The shell is adiabatic and there is no
    conduction between volumes.
    """
    if dt <= 0:
        raise PlantError("dt must be positive")
    if mdot_sb == 0:
        return state
    courant = abs(mdot_sb) * dt / state.mass_per_volume
    if courant > 1 + 1e-12:
        raise TankStabilityError(
            f"|mdot|*dt = {abs(mdot_sb) * dt:.1f} kg exceeds one volume ({state.mass_per_volume:.1f} kg); "
            "split the step into sub-steps")
    return replace(state, temps=_advect(state.temps, min(courant, 1.0), T_inlet, mdot_sb > 0))


def tank_advance(state: TankState, mdot_sb: float, T_inlet: float, dt: float) -> TankState:
    """:func:`tank_step` with automatic sub-stepping."""
    if mdot_sb == 0:
        return state
    n = max(1, math.ceil(abs(mdot_sb) * dt / state.mass_per_volume - 1e-12))
    for _ in range(n):
        state = tank_step(state, mdot_sb, T_inlet, dt / n)
    return state


def tank_soc(state: TankState) -> float:
    span = state.T_st0 - state.T_sb0
    if span == 0:
        raise PlantError("nominal tank temperatures coincide")
    soc = (state.T_st0 - float(np.mean(state.temps))) / span
    return min(max(soc, 0.0), 1.0)


# --- chiller -----------------------------------------------------------------


@dataclass(frozen=True)
class ChillerState:
    capacity_delivered: float  # kW thermal
    capacity_nominal: float = 1982.0
    cop: float = 5.8
    tau: float = 300.0  # s
    u_c_min: float = 99.1
    u_c_max: float = 1982.0

    def __post_init__(self):
        if not 0 <= self.capacity_delivered <= self.capacity_nominal + 1e-9:
            raise PlantError("delivered capacity outside [0, nominal]")
        if not self.u_c_min < self.u_c_max <= self.capacity_nominal + 1e-9:
            raise PlantError("chiller setpoint bounds inconsistent")
        if self.cop <= 0 or self.tau <= 0:
            raise PlantError("COP and time constant must be positive")


def clamp_chiller_setpoint(state: ChillerState, u_c_set: float) -> float:
    if u_c_set <= 0:
        return 0.0
    return min(max(u_c_set, state.u_c_min), state.u_c_max)


def first_order_response(x0: float, target: float, dt: float, tau: float) -> tuple[float, float]:
    """End value and step mean of a first-order lag driven by a held target."""
    decay = math.exp(-dt / tau)
    end = target + (x0 - target) * decay
    mean = target + (x0 - target) * tau / dt * (1 - decay)
    return end, mean


def derated_cop(cop: float, wetbulb: float | None, per_kelvin: float, design_wetbulb: float) -> float:
    if wetbulb is None or per_kelvin <= 0:
        return cop
    return cop * max(1 - per_kelvin * max(wetbulb - design_wetbulb, 0.0), 0.1)


def chiller_step(state: ChillerState, u_c_set: float, dt: float,
                 cop: float | None = None) -> tuple[ChillerState, float]:
    """Move delivered capacity toward the setpoint; returns the step-mean electric power (kW)."""
    target = clamp_chiller_setpoint(state, u_c_set)
    end, mean = first_order_response(state.capacity_delivered, target, dt, state.tau)
    return replace(state, capacity_delivered=min(max(end, 0.0), state.capacity_nominal)), mean / (cop or state.cop)


# --- operating modes ---------------------------------------------------------


class Mode(enum.IntEnum):
    M1 = 1  # charge storage while meeting load
    M2 = 2  # storage only
    M3 = 3  # storage and chiller
    M4 = 4  # chiller only

    @property
    def chiller_on(self) -> bool:
        return self is not Mode.M2

    @property
    def storage_on(self) -> bool:
        return self is not Mode.M4


@dataclass(frozen=True)
class StagingLimits:
    u_c_min: float
    u_c_max: float
    u_s_min: float  # most negative (discharge) rate, kW
    u_s_max: float


def staging_predicate(u_c: float, u_s: float, lim: StagingLimits) -> Mode | None:
    """The mode whose staging condition the setpoint pair satisfies, if any."""
    chiller_in_range = lim.u_c_min <= u_c <= lim.u_c_max
    if chiller_in_range and 0 < u_s <= lim.u_s_max:
        return Mode.M1
    if 0 <= u_c < lim.u_c_min and lim.u_s_min <= u_s < 0:
        return Mode.M2
    if chiller_in_range and lim.u_s_min <= u_s < 0:
        return Mode.M3
    if chiller_in_range and u_s == 0:
        return Mode.M4
    return None


@dataclass(frozen=True)
class OperatingMode:
    mode: Mode = Mode.M4
    candidate_mode: Mode | None = None
    candidate_elapsed: float = 0.0
    delay: float = 300.0


def mode_transition(state: OperatingMode, u_c_set: float, u_s_set: float, dt: float,
                    limits: StagingLimits) -> OperatingMode:
    """Stage to a new mode once its condition has held for the full delay."""
    if dt <= 0:
        raise PlantError("dt must be positive")
    target = staging_predicate(u_c_set, u_s_set, limits)
    if target is None:
        log.warning("setpoints u_c=%.1f u_s=%.1f match no staging condition; staying in %s",
                    u_c_set, u_s_set, state.mode.name)
        return replace(state, candidate_mode=None, candidate_elapsed=0.0)
    if target == state.mode:
        if state.candidate_mode is None:
            return state
        return replace(state, candidate_mode=None, candidate_elapsed=0.0)
    elapsed = state.candidate_elapsed + dt if target == state.candidate_mode else dt
    if elapsed >= state.delay - 1e-9:
        return OperatingMode(target, None, 0.0, state.delay)
    return replace(state, candidate_mode=target, candidate_elapsed=elapsed)


# --- room --------------------------------------------------------------------


@dataclass(frozen=True)
class RoomState:
    T_room: float = 25.0
    capacitance: float = 198200.0  # kJ/K
    T_min: float = 22.0
    T_max: float = 28.0

    def __post_init__(self):
        if self.capacitance <= 0:
            raise PlantError("room capacitance must be positive")


# --- composition -------------------------------------------------------------


@dataclass(frozen=True)
class AuxParams:
    primary_pump: float = 7.0
    secondary_pump: float = 22.5
    condenser_pump: float = 30.0
    transfer_pump: float = 4.0
    tower_fan: float = 86.0
    supply_fan: float = 210.0
    nominal_load: float = 1982.0  # kW, supply fan design point


def auxiliary_power(mode: Mode, q_it: float, aux: AuxParams) -> float:
    """Pump, tower and fan power (kW) for the equipment a mode runs."""
    p = aux.secondary_pump + aux.supply_fan * min(max(q_it / aux.nominal_load, 0.0), 1.0) ** 3
    if mode.chiller_on:
        p += aux.primary_pump + aux.condenser_pump + aux.tower_fan
    if mode.storage_on:
        p += aux.transfer_pump
    return p


@dataclass(frozen=True)
class PlantParams:
    aggregator: AggregatorParams = field(default_factory=AggregatorParams)
    aux: AuxParams = field(default_factory=AuxParams)
    chiller_nominal: float = 1982.0
    cop: float = 5.8
    chiller_tau: float = 300.0
    u_c_min_fraction: float = 0.05
    cop_derate: bool = False
    cop_derate_per_k: float = 0.015
    design_wetbulb: float = 24.0
    storage_hours: float = 4.0
    n_volumes: int = 10
    cp: float = 4.186
    T_st0: float = 12.0
    T_sb0: float = 5.0
    transfer_flow: float = 52.6  # kg/s
    tank_kp: float = 0.01  # (kg/s)/kW
    tank_ki: float = 0.001  # (kg/s)/(kW s)
    room_setpoint: float = 25.0
    room_band: float = 3.0
    room_time_constant: float = 300.0  # s
    room_trim: float = 400.0  # kW/K
    mode_delay: float = 300.0

    @property
    def u_c_min(self) -> float:
        return self.u_c_min_fraction * self.chiller_nominal

    @property
    def u_c_max(self) -> float:
        return self.chiller_nominal

    @property
    def u_s_max(self) -> float:
        return self.transfer_flow * self.cp * (self.T_st0 - self.T_sb0)

    @property
    def u_s_min(self) -> float:
        return -self.u_s_max

    @property
    def storage_capacity(self) -> float:
        """Tank capacity in kJ: nominal chiller output over the storage hours."""
        return self.chiller_nominal * self.storage_hours * 3600

    @property
    def room_capacitance(self) -> float:
        # nominal load moves the room across its half-band in one time constant
        return self.aux.nominal_load * self.room_time_constant / self.room_band

    @property
    def limits(self) -> StagingLimits:
        return StagingLimits(self.u_c_min, self.u_c_max, self.u_s_min, self.u_s_max)

    def cop_at(self, wetbulb: float | None) -> float:
        if not self.cop_derate:
            return self.cop
        return derated_cop(self.cop, wetbulb, self.cop_derate_per_k, self.design_wetbulb)


@dataclass(frozen=True)
class PlantState:
    tank: TankState
    chiller: ChillerState
    room: RoomState
    mode: OperatingMode
    n_act: int = 0
    f_agg: float = 1.0
    tank_flow: float = 0.0  # kg/s
    tank_integral: float = 0.0  # kW s
    u_s: float = 0.0  # kW, last measured charging rate
    p_agg: float = 0.0  # kW
    p_chiller: float = 0.0
    p_aux: float = 0.0
    p_dc: float = 0.0

    @property
    def soc(self) -> float:
        return tank_soc(self.tank)


@dataclass(frozen=True)
class ControlCommand:
    u_c_set: float
    u_s_set: float
    n_act: int
    f_agg: float
    # scheduled setpoints used for mode staging; defaults to the live ones
    stage_u_c: float | None = None
    stage_u_s: float | None = None


class Plant:
    """The data center plant: servers, room, chiller, tank and auxiliaries."""

    def __init__(self, params: PlantParams | None = None):
        self.params = params or PlantParams()

    def initial_state(self, soc: float = 0.5, T_room: float | None = None, mode: Mode = Mode.M4,
                      chiller_output: float = 0.0) -> PlantState:
        p = self.params
        tank = TankState.sized(p.storage_capacity, soc, p.n_volumes, p.cp, p.T_st0, p.T_sb0)
        chiller = ChillerState(chiller_output, p.chiller_nominal, p.cop, p.chiller_tau, p.u_c_min, p.u_c_max)
        room = RoomState(p.room_setpoint if T_room is None else T_room, p.room_capacitance,
                         p.room_setpoint - p.room_band, p.room_setpoint + p.room_band)
        return PlantState(tank, chiller, room, OperatingMode(mode, delay=p.mode_delay))

    def staging_setpoints(self, cmd: ControlCommand) -> tuple[float, float]:
        u_c = cmd.u_c_set if cmd.stage_u_c is None else cmd.stage_u_c
        u_s = cmd.u_s_set if cmd.stage_u_s is None else cmd.stage_u_s
        return u_c, min(max(u_s, self.params.u_s_min), self.params.u_s_max)

    def charging_target(self, mode: Mode, u_s_set: float, T_room: float) -> float:
        """Charging-rate reference after the local room-temperature trim."""
        p = self.params
        if not mode.storage_on:
            return 0.0
        target = u_s_set - p.room_trim * (T_room - p.room_setpoint)
        return min(max(target, p.u_s_min), p.u_s_max)

    def feedforward_flow(self, tank: TankState, target: float) -> float:
        p = self.params
        if target == 0:
            return 0.0
        inlet = p.T_sb0 if target > 0 else p.T_st0
        T_st, T_sb = tank_ports(tank, math.copysign(1.0, target), inlet)
        dT = max(T_st - T_sb, 0.5)
        return min(max(target / (p.cp * dT), -p.transfer_flow), p.transfer_flow)

    def delivered_cooling(self, q_ch: float, u_s: float, q_it: float, room: RoomState) -> tuple[float, float]:
        """(cooling delivered to the room, chiller production) in kW."""
        p = self.params
        demand = max(q_it + room.capacitance * (room.T_room - p.room_setpoint) / p.room_time_constant, 0.0)
        production = min(q_ch, max(demand + u_s, 0.0))
        return max(production - u_s, 0.0), production

    def step(self, state: PlantState, cmd: ControlCommand, lam: float, wetbulb: float | None,
             dt: float, ideal_tank: bool = False) -> tuple[PlantState, float]:
        """Advance ``dt`` seconds; returns the new state and total power P_dc in kW.

        ``ideal_tank`` replaces the PI flow loop by its settled response, which
        is what the predictive rollouts use at coarse steps.
        """
        if not ideal_tank and not 0 < dt <= 60:
            raise PlantError("plant step must lie in (0, 60] s")
        p = self.params
        p_agg = aggregator_power(lam, cmd.f_agg, cmd.n_act, p.aggregator) / 1000.0
        q_it = p_agg

        stage_u_c, stage_u_s = self.staging_setpoints(cmd)
        mode = mode_transition(state.mode, stage_u_c, stage_u_s, dt, p.limits)
        m = mode.mode

        cop = p.cop_at(wetbulb)
        u_c = cmd.u_c_set if m.chiller_on else 0.0
        chiller, p_ch = chiller_step(state.chiller, u_c, dt, cop)
        q_ch = p_ch * cop

        target = self.charging_target(m, cmd.u_s_set, state.room.T_room)
        integral = state.tank_integral
        if ideal_tank or target == 0:
            flow = self.feedforward_flow(state.tank, target)
            integral = 0.0
        else:
            err = target - state.u_s
            raw = self.feedforward_flow(state.tank, target) + p.tank_kp * err + p.tank_ki * (integral + err * dt)
            flow = min(max(raw, -p.transfer_flow), p.transfer_flow)
            if flow == raw or (raw > flow) != (err > 0):
                integral += err * dt
        inlet = p.T_sb0 if flow > 0 else p.T_st0
        before = stored_cooling(state.tank)
        tank = tank_advance(state.tank, flow, inlet, dt)
        u_s = (stored_cooling(tank) - before) / dt

        # the air side draws only what returns the room to setpoint; the chiller unloads to match
        q_delivered, production = self.delivered_cooling(q_ch, u_s, q_it, state.room)
        p_ch = production / cop
        room = replace(state.room, T_room=state.room.T_room + dt * (q_it - q_delivered) / state.room.capacitance)

        p_aux = auxiliary_power(m, q_it, p.aux)
        p_dc = p_agg + p_ch + p_aux
        new = PlantState(tank, chiller, room, mode, cmd.n_act, cmd.f_agg, flow, integral, u_s,
                         p_agg, p_ch, p_aux, p_dc)
        return new, p_dc
