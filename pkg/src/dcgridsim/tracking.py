"""Real-time regulation tracking: server power management and cooling power management.

Servers close the loop on measured facility power through a PID on the
aggregated frequency; the chiller and tank follow the regulation signal open
loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .plant import AggregatorParams, ControlCommand, PlantError, PlantParams, aggregator_power
from .plant import response_time_of_utilisation


class QoSInfeasibleError(PlantError):
    """No aggregated frequency up to f_max meets the response-time cap."""


def active_servers(lambda_pred: float, beta: float, gamma: float, k: float, N0: int) -> int:
    """Servers to keep on for the coming hour."""
    if k <= 0:
        raise PlantError("service rate k must be positive")
    if lambda_pred < 0:
        raise PlantError("workload must be non-negative")
    x = beta * gamma * lambda_pred / k
    # guard against 14850.000000000002 style round-off before the ceiling
    n = math.ceil(x - 1e-12 * max(1.0, x))
    n = min(max(n, 0), N0)
    if lambda_pred > 0 and n * k <= lambda_pred:
        raise PlantError(f"{n} servers cannot serve {lambda_pred:g} requests/s")
    return n


def min_frequency(lam: float, n_act: int, params: AggregatorParams, t_r_u: float | None = None,
                  eps: float = 1e-9) -> float:
    """Lowest aggregated frequency that keeps mean response time within ``t_r_u``.

    Bisection on utilisation, where response time is increasing.
    """
    t_r_u = params.t_r_u if t_r_u is None else t_r_u
    if n_act < 1:
        raise PlantError("at least one active server is required")
    if lam <= 0:
        # no queueing: only the service time matters
        f = 1.0 / (params.k * t_r_u)
        if f > params.f_max:
            raise QoSInfeasibleError("service time alone exceeds the response-time cap")
        return f
    rho_lo = lam / (params.k * n_act * params.f_max)
    if rho_lo >= 1:
        raise QoSInfeasibleError("workload exceeds capacity at maximum frequency")
    if response_time_of_utilisation(rho_lo, lam, n_act, params) > t_r_u:
        raise QoSInfeasibleError("response-time cap unattainable at maximum frequency")
    rho_hi = 1 - eps
    if response_time_of_utilisation(rho_hi, lam, n_act, params) <= t_r_u:
        rho = rho_hi
    else:
        lo, hi = rho_lo, rho_hi  # t_r(lo) <= cap < t_r(hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            t = response_time_of_utilisation(mid, lam, n_act, params)
            if t <= t_r_u:
                lo = mid
                if t_r_u - t <= 1e-9 * t_r_u:
                    break
            else:
                hi = mid
            if hi - lo <= 1e-15:
                break
        rho = lo
    return min(lam / (params.k * n_act * rho), params.f_max)


def base_frequency(lam: float, n_act: int, f_min: float, params: AggregatorParams) -> float:
    """Frequency putting server power midway between its floor and ceiling."""
    lo = params.b1 * f_min + params.b2 * f_min**2
    hi = params.b1 * params.f_max + params.b2 * params.f_max**2
    mid = 0.5 * (lo + hi)
    return (-params.b1 + math.sqrt(params.b1**2 + 4 * params.b2 * mid)) / (2 * params.b2)


@dataclass(frozen=True)
class ServerPlan:
    """Hourly server quantities: active count, frequency band and base frequency."""

    n_act: int
    f_min: float
    f_bas: float
    lam: float  # mean predicted workload, requests/s

    def power(self, lam: float, f: float, params: AggregatorParams) -> float:
        return aggregator_power(lam, f, self.n_act, params) / 1000.0


def plan_servers(lam_mean: float, lam_peak: float, params: AggregatorParams) -> ServerPlan:
    """Size the aggregator for an hour; the QoS floor uses the hour's peak workload."""
    n_act = active_servers(lam_mean, params.beta, params.gamma, params.k, params.N0)
    if n_act == 0:
        return ServerPlan(0, params.f_max, params.f_max, 0.0)
    f_min = min_frequency(lam_peak, n_act, params)
    return ServerPlan(n_act, f_min, base_frequency(lam_mean, n_act, f_min, params), lam_mean)


def reference_power(P_bas: float, r: float, C_reg: float) -> float:
    if C_reg < 0:
        raise ValueError("regulation capacity must be non-negative")
    return P_bas + r * C_reg


@dataclass(frozen=True)
class PidState:
    Kp: float = 2e-4  # 1/kW
    Ki: float = 1e-4  # 1/(kW s)
    Kd: float = 0.0  # s/kW
    integral: float = 0.0  # kW s
    prev_error: float | None = None
    f_min: float = 0.0
    f_max: float = 1.0

    def preset(self, f: float, f_min: float | None = None, f_max: float | None = None) -> PidState:
        """Re-initialise so that zero error holds the output at ``f``."""
        lo = self.f_min if f_min is None else f_min
        hi = self.f_max if f_max is None else f_max
        integral = f / self.Ki if self.Ki else 0.0
        return replace(self, integral=integral, prev_error=None, f_min=lo, f_max=hi)


def pid_step(P_ref: float, P_dc_meas: float, state: PidState, dt: float) -> tuple[float, PidState]:
    """One PID update of the aggregated frequency with conditional integration."""
    e = P_ref - P_dc_meas
    de = 0.0 if state.prev_error is None else (e - state.prev_error) / dt
    trial = state.integral + e * dt
    raw = state.Kp * e + state.Ki * trial + state.Kd * de
    f = min(max(raw, state.f_min), state.f_max)
    # integrate unless saturated and the error pushes further into the limit
    if raw == f or (raw > state.f_max and e < 0) or (raw < state.f_min and e > 0):
        integral = trial
    else:
        integral = state.integral
    return f, replace(state, integral=integral, prev_error=e)


def chiller_regulation_range(u_c_set_bas: float, u_c_min: float, u_c_max: float) -> float:
    return min(u_c_max - u_c_set_bas, u_c_set_bas - u_c_min)


def cooling_fr_setpoints(u_c_set_bas: float, r: float, u_c_min: float, u_c_max: float, q_pred: float,
                         u_s_min: float, u_s_max: float) -> tuple[float, float]:
    """Chiller and storage setpoints following the regulation signal open loop.

    The storage takes whatever the chiller makes beyond the predicted load, so
    a chiller setpoint below the load discharges the tank.

    A base setpoint of zero means the chiller is scheduled off; it then takes
    no part in regulation.
    """
    if u_c_set_bas == 0:
        return 0.0, min(max(-q_pred, u_s_min), u_s_max)
    if not u_c_min - 1e-9 <= u_c_set_bas <= u_c_max + 1e-9:
        raise ValueError("base chiller setpoint outside its bounds")
    u_c = u_c_set_bas + r * chiller_regulation_range(u_c_set_bas, u_c_min, u_c_max)
    u_c = min(max(u_c, u_c_min), u_c_max)
    return u_c, min(max(u_c - q_pred, u_s_min), u_s_max)


@dataclass(frozen=True)
class TrackingInputs:
    P_bas: float  # kW, baseline at this tick
    C_reg: float  # kW
    u_c_set_bas: float  # kW
    r: float
    lam: float  # actual workload, requests/s
    lam_pred: float  # hourly mean prediction
    q_pred: float  # kW, predicted cooling load at this tick
    q_stage: float | None = None  # hourly predicted load used for staging

    def __post_init__(self):
        if abs(self.r) > 1 + 1e-9:
            raise ValueError("regulation signal must lie in [-1, 1]")


def tracking_step(inputs: TrackingInputs, pid: PidState, plan: ServerPlan, P_dc_meas: float,
                  params: PlantParams, dt: float = 4.0) -> tuple[ControlCommand, PidState, float]:
    """One tick of the real-time controller; returns the command, PID state and P_ref."""
    P_ref = reference_power(inputs.P_bas, inputs.r, inputs.C_reg)
    if plan.n_act == 0:
        f_agg = params.aggregator.f_max
    else:
        f_agg, pid = pid_step(P_ref, P_dc_meas, pid, dt)
    u_c, u_s = cooling_fr_setpoints(inputs.u_c_set_bas, inputs.r, params.u_c_min, params.u_c_max,
                                    inputs.q_pred, params.u_s_min, params.u_s_max)
    q_stage = inputs.q_pred if inputs.q_stage is None else inputs.q_stage
    cmd = ControlCommand(u_c, u_s, plan.n_act, f_agg, inputs.u_c_set_bas, inputs.u_c_set_bas - q_stage)
    return cmd, pid, P_ref
