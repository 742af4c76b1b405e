"""Symmetrical fault on a VSM inverter: explicit versus implicit cross-forming.

Prints the fault-on current, reactive power and post-fault recovery for
each regulator. Takes about 10 s.
"""
import numpy as np

from crossform.scenario import build_world, load_scenario
from crossform.sim import simulate
from crossform.sweep import resolve_scenario

for name in ("case1_explicit", "case1_implicit"):
    res = simulate(build_world(load_scenario(resolve_scenario(name))))
    t = res.series("t")
    i, q = res.series("i_maxphase"), res.series("q")
    fault = (t >= 3.25) & (t < 3.3)
    pre = next(r for r in reversed(res.rows) if r.t < 3.0)
    end = res.rows[-1]
    print(f"{name}: {res.status}, {res.runtime:.1f} s")
    print(f"  fault-on current  {i[fault].min():.5f} .. {i[fault].max():.5f} pu")
    print(f"  fault-on q        {q[fault].mean():.4f} pu")
    print(f"  |v+| drift at end {abs(end.v_pos - pre.v_pos):.2e} pu")
    for ev in res.events:
        print("  event", *ev)
