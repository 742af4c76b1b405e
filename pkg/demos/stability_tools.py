"""Analytical tools: power-angle curve, equal-area clearing, dVOC condition."""
import math

from crossform import stability
from crossform.forming import DvocParams

curve = stability.power_angle_curve(1.0, 0.3, 0.2, 0.13)
print(f"saturated power-angle curve: p_max = {curve.p_max:.4f} pu")
for d in (0.0, math.pi / 4, math.pi / 2):
    print(f"  p({d:.3f}) = {curve.p(d):.4f}")

pre, fault, post = (stability.PowerAngleCurve(p) for p in (1.8, 0.4, 1.4))
d0 = stability.equilibria(pre, 0.5).stable
ea = stability.equal_area(pre, fault, post, 0.5, d0)
cct = stability.critical_clearing_time(pre, fault, post, 0.5, 5.0, 100 * math.pi)
print(f"equal area: critical angle {ea.critical_angle:.4f} rad, critical clearing time {cct:.4f} s")

prm = DvocParams(eta=20, alpha=1, p_star=0.2)
for e in stability.dvoc_equilibria(prm, 0.01 + 0.33j, 0.3 + 0j, 1.1):
    print(f"dVOC equilibrium |v_hat| {abs(e.v_hat):.4f} angle {math.degrees(math.atan2(e.v_hat.imag, e.v_hat.real)):7.2f} deg"
          f" saturated={e.saturated} stable={e.stable}")
