"""Repair a violating rotation on Brockett's integrator and plot h along both paths."""
import sys
from pathlib import Path

import numpy as np

from rotnft.cli import svg_polyline
from rotnft.nft import construct_nft
from rotnft.scenarios import brockett_flat
from rotnft.simulate import ControlFunction, integrate, violation

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

sc = brockett_flat()
omega, T = 4 * np.pi, 0.5
u = ControlFunction.single(lambda t: np.stack([np.cos(omega * t), np.sin(omega * t)], axis=-1), T, 2 * np.pi / omega)
ref = integrate(sc.system, u, np.zeros(3), step=1e-3)
v = violation(ref, sc.constraint)
print(f"reference: d = {v.d:.5f}, first violation at t = {v.tau1:.4f}")

res = construct_nft(sc.system, sc.constraint, sc.singular, ref)
sel = res.selection
print(f"drop case {sel.case.value}, omega sign {sel.sign_omega:+d}, delay tau(d) = {res.tau_d:.4f}")
print(f"margin -max h after tau1 = {res.margin:.3e}, sup |y - x| = {res.estimates.sup_distance:.4f}")
print(f"K = sup |y - x| / sqrt(d) = {res.estimates.K:.3f}")

svg_polyline(out / "repair.svg", [(ref.t, ref.h_values(sc.constraint), "reference"),
                                  (res.y.t, res.y.h_values(sc.constraint), "repaired")],
             "h along the reference and the repaired path", "t", "h")
print(f"wrote {out / 'repair.svg'}")
