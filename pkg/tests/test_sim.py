import math
from dataclasses import replace

import numpy as np
import pytest

from crossform import network as net
from crossform.properties import single_inverter_world
from crossform.scenario import build_world, load_scenario
from crossform.sim import ConfigurationError, SimConfig, simulate
from crossform.sweep import resolve_scenario

W0 = 100 * math.pi


def bundled(name, **kw):
    return build_world(load_scenario(resolve_scenario(name)), **kw)


def test_equilibrium_holds_for_one_second():
    world = single_inverter_world("implicit", p_star=0.2, t_end=1.0)
    res = simulate(world)
    assert res.status == "ok"
    for field in ("i_maxphase", "p", "q", "theta_rel", "v_lambda_mag"):
        s = res.series(field)
        assert np.max(np.abs(s - s[0])) < 1e-8, field
    assert np.max(np.abs(res.series("omega") - W0)) < 1e-8
    assert res.series("p")[0] == pytest.approx(0.2, abs=1e-10)


def test_zero_power_on_nominal_grid_is_trivial():
    world = single_inverter_world("implicit", p_star=0.0, t_end=0.01)
    res = simulate(world)
    assert res.series("i_maxphase")[0] < 1e-10
    assert abs(res.series("theta_rel")[0]) < 1e-10


def test_infeasible_setpoint_is_a_clean_error():
    with pytest.raises(ConfigurationError, match="equilibrium"):
        single_inverter_world("implicit", p_star=10.0)


def test_richardson_order():
    def state_at(dt):
        world = single_inverter_world("implicit", p_star=0.2, dt=dt, t_end=0.02)
        world.x[0][8] += 0.3  # current kick, unsaturated response
        simulate(world, record=False)
        x = world.x[0]
        return np.array([x[0], x[1] / W0, x[8].real, x[8].imag])

    a, b, c = state_at(1e-4), state_at(5e-5), state_at(2.5e-5)
    ratio = np.linalg.norm(a - b) / np.linalg.norm(b - c)
    # 17.5 at twice these steps, 17.1 here: converging on 2^4
    assert 15 < ratio < 18


def test_case1_enters_cross_forming_and_limits_quickly():
    res = simulate(bundled("case1_implicit", t_end=3.05))
    assert res.status == "ok"
    entry = next(t for t, kind, detail in res.events if kind == "mode" and "enters" in detail)
    assert 3.0 < entry <= 3.002
    t = res.series("t")
    i = res.series("i_maxphase")
    reach = t[(t >= 3.0) & (i >= 1.1 - 1e-3)][0]
    assert reach - 3.0 <= 0.03
    assert np.max(i[(t > 3.03) & (t < 3.05)]) < 1.1 + 1e-3


def test_determinism():
    a = simulate(bundled("case1_implicit", t_end=3.1))
    b = simulate(bundled("case1_implicit", t_end=3.1))
    assert a.rows == b.rows and a.events == b.events


def test_case4a_currents_stay_limited():
    res = simulate(bundled("case4a"))
    assert res.status == "ok"
    world = res.world
    (t_on, t_clear), = [(f.t_on, f.t_clear) for f in world.faults]
    for n in range(len(world.models)):
        t = res.series("t", n)
        i = res.series("i_maxphase", n)
        steady = (t > t_on + 0.1) & (t < t_clear)
        assert steady.any() and np.max(i[steady]) <= 1.1 + 5e-3


def test_divergence_guard_stops_the_run():
    world = single_inverter_world("implicit", p_star=0.2, t_end=0.2)
    world.config = replace(world.config, divergence_limit=1.0)
    world.x[0][8] = 5.0 + 0j
    res = simulate(world)
    assert res.status == "diverged" and res.message
    assert all(np.isfinite(r.i_maxphase) for r in res.rows)


@pytest.mark.parametrize("bad", [dict(dt=0), dict(t_end=-1), dict(tau_c=0), dict(decimation=0)])
def test_sim_config_validated(bad):
    with pytest.raises(ConfigurationError):
        SimConfig(**bad)


def test_overlapping_faults_rejected():
    faults = [net.FaultEvent("three_phase", 1.0, 2.0, r_f=0.01), net.FaultEvent("slg", 1.5, 2.5, r_f=0.01)]
    with pytest.raises(ConfigurationError):
        single_inverter_world("implicit", faults=faults)
