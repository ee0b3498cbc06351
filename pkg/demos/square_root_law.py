"""Distance to the repaired trajectory against the violation: slope close to 1/2 in log-log."""
import numpy as np

from rotnft.nft import sweep_nft
from rotnft.scenarios import brockett_flat
from rotnft.simulate import ControlFunction, integrate

sc = brockett_flat()
omega, T = 4 * np.pi, 0.5
peak = (omega * T - np.sin(omega * T)) / omega ** 2  # x3(T) under the unit rotation


def reference(d):
    s = np.sqrt(d / peak)
    u = ControlFunction.single(lambda t: s * np.stack([np.cos(omega * t), np.sin(omega * t)], axis=-1), T,
                               2 * np.pi / omega)
    return integrate(sc.system, u, np.zeros(3), step=1e-3)


ds = np.logspace(-6, -2, 7)
rep = sweep_nft(sc.system, sc.constraint, sc.singular, [reference(d) for d in ds])
print(f"{'d':>10} {'sup|y-x|':>10} {'tau(d)':>10} {'ratio':>8}")
for d, s, t in zip(rep.d, rep.sup_distance, rep.tau_d):
    print(f"{d:10.2e} {s:10.3e} {t:10.3e} {s / np.sqrt(d):8.3f}")
print(f"fitted exponent {rep.slope:.3f}")
