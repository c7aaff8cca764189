
import pytest
from hypothesis import given, strategies as st

from dcgridsim.plant import AggregatorParams, PlantError, PlantParams, response_time
from dcgridsim.tracking import (PidState, QoSInfeasibleError, TrackingInputs, active_servers, cooling_fr_setpoints,
                                min_frequency, pid_step, plan_servers, reference_power,
                                tracking_step)
from oracles import server_power_w

AGG = AggregatorParams()
PARAMS = PlantParams()


def test_active_servers_rounds_up():
    assert active_servers(300e3, 1.1, 1.5, 300, 16000) == 1650
    assert active_servers(300e3 + 1, 1.1, 1.5, 300, 16000) == 1651
    assert active_servers(0, 1.1, 1.5, 300, 16000) == 0


def test_active_servers_capped_raises_when_overloaded():
    with pytest.raises(PlantError):
        active_servers(5e6, 1.1, 1.5, 300, 16000)


@given(st.floats(1e4, 7e5), st.floats(1.0, 1.4))
def test_min_frequency_meets_the_cap(lam, slack):
    n = active_servers(lam, 1.1, 1.5, 300, 16000)
    f = min_frequency(lam, n, AGG)
    assert 0 < f <= 1
    assert response_time(lam, f, n, AGG).t_r <= AGG.t_r_u * (1 + 1e-9)
    # any slower frequency breaks the cap unless the floor is the stability limit
    g = f * (1 - 1e-4)
    if lam / (AGG.k * n * g) < 1:
        assert response_time(lam, g, n, AGG).t_r > AGG.t_r_u * (1 - 1e-6)


def test_min_frequency_infeasible():
    with pytest.raises(QoSInfeasibleError):
        min_frequency(1e5, 300, AGG)
    with pytest.raises(QoSInfeasibleError):
        min_frequency(1e5, 1000, AGG, t_r_u=0.001)


@given(st.floats(1e4, 7e5))
def test_base_frequency_splits_power_band(lam):
    plan = plan_servers(lam, lam, AGG)
    lo = server_power_w(lam, plan.f_min, plan.n_act)
    hi = server_power_w(lam, 1.0, plan.n_act)
    mid = server_power_w(lam, plan.f_bas, plan.n_act)
    assert mid - lo == pytest.approx(hi - mid, rel=1e-9)
    assert plan.f_min <= plan.f_bas <= 1


def test_plan_without_workload_turns_servers_off():
    plan = plan_servers(0.0, 0.0, AGG)
    assert plan.n_act == 0


def test_reference_power():
    assert reference_power(1500, -0.5, 200) == 1400
    with pytest.raises(ValueError):
        reference_power(1500, 0.5, -1)


def test_pid_preset_holds_output_at_zero_error():
    pid = PidState().preset(0.7, 0.3, 1.0)
    f, pid2 = pid_step(1000.0, 1000.0, pid, 4.0)
    assert f == pytest.approx(0.7)
    assert pid2.integral == pytest.approx(pid.integral)


def test_pid_anti_windup():
    pid = PidState().preset(1.0, 0.3, 1.0)
    for _ in range(100):
        f, pid = pid_step(5000.0, 1000.0, pid, 4.0)  # demands more than f_max can give
    assert f == 1.0
    assert pid.integral == pytest.approx(1.0 / pid.Ki)
    f, _ = pid_step(900.0, 1000.0, pid, 4.0)
    assert f < 1.0  # responds at once when the error reverses


def test_pid_step_moves_toward_reference():
    pid = PidState().preset(0.6, 0.3, 1.0)
    up, _ = pid_step(1100.0, 1000.0, pid, 4.0)
    down, _ = pid_step(900.0, 1000.0, pid, 4.0)
    assert down < 0.6 < up


@given(st.floats(99.1, 1982), st.floats(-1, 1), st.floats(0, 1900))
def test_cooling_setpoints(base, r, q):
    u_c, u_s = cooling_fr_setpoints(base, r, PARAMS.u_c_min, PARAMS.u_c_max, q, PARAMS.u_s_min, PARAMS.u_s_max)
    rng = min(PARAMS.u_c_max - base, base - PARAMS.u_c_min)
    assert u_c == pytest.approx(base + r * rng)
    assert PARAMS.u_c_min - 1e-9 <= u_c <= PARAMS.u_c_max + 1e-9
    assert u_s == pytest.approx(min(max(u_c - q, PARAMS.u_s_min), PARAMS.u_s_max))


def test_cooling_setpoints_chiller_off():
    u_c, u_s = cooling_fr_setpoints(0.0, 0.8, 99.1, 1982, 700, -1500, 1500)
    assert (u_c, u_s) == (0.0, -700)


def test_tracking_step_composes_pid_and_cooling():
    plan = plan_servers(400e3, 420e3, AGG)
    pid = PidState().preset(plan.f_bas, plan.f_min, 1.0)
    inp = TrackingInputs(1500.0, 200.0, 1000.0, 0.5, 400e3, 400e3, 800.0)
    cmd, pid2, P_ref = tracking_step(inp, pid, plan, 1500.0, PARAMS)
    assert P_ref == 1600.0
    assert cmd.f_agg > plan.f_bas
    assert cmd.n_act == plan.n_act
    assert cmd.stage_u_c == 1000.0 and cmd.stage_u_s == pytest.approx(200.0)
    with pytest.raises(ValueError):
        TrackingInputs(1500.0, 200.0, 1000.0, 1.5, 0, 0, 0)
