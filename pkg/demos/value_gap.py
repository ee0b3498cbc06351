"""Grid value function of the one-dimensional counterexample: a jump at the origin."""
import numpy as np

from rotnft.hjb import GridSpec, distance_lagrangian, value_iteration
from rotnft.scenarios import counterexample

sc = counterexample()
L = distance_lagrangian([1.0, 0.0])
for n in (21, 51, 101):
    V = value_iteration(sc.system, sc.constraint, L, GridSpec.box(sc.box, n), dt=0.05, tol=1e-3)
    h = 2 / (n - 1)
    left = np.array([-(np.ceil(np.sqrt(h) / h) + 1) * h, h])  # just above the axis, left branch
    v0, v1 = V(np.array([[0.0, 0.0], left]))
    print(f"{n:4d}^2 nodes: V(0,0) = {v0:.4f}, V({left[0]:.3f}, {left[1]:.3f}) = {v1:.4f}, gap {v1 - v0:.3f}")
print(f"continuous-time value at the origin: 1/e = {np.exp(-1):.4f}")
