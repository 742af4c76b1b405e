"""Settled or not: four current-limiting strategies under a permanent fault.

Each strategy runs with the faulted active-power setpoint at 0.35 and 0.10
pu. Pass --jobs N to spread the eight runs over N processes.
"""
import argparse

from crossform.sweep import sweep

ap = argparse.ArgumentParser()
ap.add_argument("--jobs", type=int, default=1)
args = ap.parse_args()

strategies = ["cross_forming", "virtual_admittance", "adaptive_vi", "current_forming"]
rows = sweep([f"case2_{s}" for s in strategies], {"events[0].p_star_fault": [0.35, 0.10]}, jobs=args.jobs)

print(f"{'strategy':<28}{'p*_fault':>9}  verdict     final angle [rad]")
for r in rows:
    print(f"{r['scenario']:<28}{r['events[0].p_star_fault']:>9}  {r['verdict']:<11} {r['final_angle']:.3f}")
