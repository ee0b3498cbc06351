"""Built-in example systems: Brockett's integrator and its variants, a system
violating the collar condition, and the classical one-dimensional counterexample.

Each scenario carries exact singular-set data and the audit outcome that the
analysis of the example predicts (``expected``).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .geometry import ConfigurationError, Constraint, ControlAffineSystem, SingularSetModel


@dataclass
class Scenario:
    name: str
    system: ControlAffineSystem
    constraint: Constraint
    singular: SingularSetModel
    params: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)
    description: str = ""

    @property
    def box(self):
        return self.system.box


def _stack(*cols):
    shape = np.broadcast_shapes(*(np.shape(c) for c in cols))
    out = np.empty(shape + (len(cols),))
    for i, c in enumerate(cols):
        out[..., i] = c
    return out


def _const_jac(rows, x):
    J = np.asarray(rows, dtype=float)
    return np.broadcast_to(J, np.shape(x)[:-1] + J.shape).copy()


def _box3(half=1.0):
    return (np.array([-half, -half, -half]), np.array([half, half, half]))


# --- fields -------------------------------------------------------------------


def brockett_fields(g1=1.0, g2=1.0):
    """``f1 = (g1, 0, -x2)``, ``f2 = (0, g2, x1)``."""
    def f1(x):
        x = np.asarray(x, dtype=float)
        return _stack(g1 + 0 * x[..., 0], 0 * x[..., 0], -x[..., 1])

    def f2(x):
        x = np.asarray(x, dtype=float)
        return _stack(0 * x[..., 0], g2 + 0 * x[..., 0], x[..., 0])

    def Df1(x):
        return _const_jac([[0, 0, 0], [0, 0, 0], [0, -1, 0]], x)

    def Df2(x):
        return _const_jac([[0, 0, 0], [0, 0, 0], [1, 0, 0]], x)

    return f1, f2, Df1, Df2


def flat_constraint(box):
    def h(x):
        return np.asarray(x, dtype=float)[..., 2]

    def grad(x):
        x = np.asarray(x, dtype=float)
        return _stack(0 * x[..., 0], 0 * x[..., 0], 1 + 0 * x[..., 0])

    def hess(x):
        return np.zeros(np.shape(x)[:-1] + (3, 3))

    return Constraint(h, grad, hess, lip_h=1.0, box=box, name="x3<=0")


def power_constraint(p, lam=1.0, c1=1.0, c2=1.0, box=None):
    """``h = lam (c1 x1^2 + c2 x2^2)^p + x3``."""
    if p < 1:
        raise ConfigurationError("power constraint needs p >= 1")
    c = np.array([c1, c2])

    def h(x):
        x = np.asarray(x, dtype=float)
        rho = c1 * x[..., 0] ** 2 + c2 * x[..., 1] ** 2
        return lam * rho ** p + x[..., 2]

    def grad(x):
        x = np.asarray(x, dtype=float)
        rho = c1 * x[..., 0] ** 2 + c2 * x[..., 1] ** 2
        k = 2 * p * lam * rho ** (p - 1)
        return _stack(k * c1 * x[..., 0], k * c2 * x[..., 1], 1 + 0 * rho)

    def hess(x):
        x = np.asarray(x, dtype=float)
        rho = c1 * x[..., 0] ** 2 + c2 * x[..., 1] ** 2
        out = np.zeros(x.shape[:-1] + (3, 3))
        base = 2 * p * lam * rho ** (p - 1)
        safe = np.where(rho > 0, rho, 1.0)
        curv = np.where(rho > 0, 4 * p * (p - 1) * lam * safe ** (p - 2), 0.0)
        xy = x[..., :2] * c
        for i in range(2):
            for j in range(2):
                out[..., i, j] = curv * xy[..., i] * xy[..., j] + (base * c[i] if i == j else 0.0)
        return out

    return Constraint(h, grad, hess, box=box, name=f"power(p={p},lam={lam})")


# --- singular sets ------------------------------------------------------------


def axis_singular_set(sys, constraint, zlo):
    """The non-positive half of the x3-axis, ``{(0, 0, z): z <= 0}``."""
    def distance(x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2 + np.maximum(x[..., 2], 0.0) ** 2)

    def project(x):
        x = np.asarray(x, dtype=float)
        return np.array([0.0, 0.0, min(x[2], 0.0)])

    def sample(n, rng):
        z = np.sort(rng.uniform(zlo, 0.0, size=n))
        z[-1] = 0.0
        return np.stack([0 * z, 0 * z, z], axis=-1)

    return SingularSetModel(sys, constraint, distance, project, sample, description="x3-axis, x3 <= 0")


def quartic_singular_set(sys, constraint, zlo):
    """The curve ``{(-z^4, z^4, z): z <= 0}``."""
    def point(z):
        return np.array([-z ** 4, z ** 4, z])

    def nearest_z(x):
        obj = lambda z: np.sum((point(z) - x) ** 2)
        grid = np.linspace(zlo - 1.0, 0.0, 401)
        k = int(np.argmin([obj(z) for z in grid]))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        res = minimize_scalar(obj, bounds=(a, b), method="bounded", options={"xatol": 1e-13})
        z = res.x if obj(res.x) <= obj(grid[k]) else grid[k]
        # the squared objective only pins z to sqrt(eps); polish on its derivative
        for _ in range(4):
            r = point(z) - x
            dp = np.array([-4 * z ** 3, 4 * z ** 3, 1.0])
            ddp = np.array([-12 * z ** 2, 12 * z ** 2, 0.0])
            step = (r @ dp) / (dp @ dp + r @ ddp)
            z = min(z - step, 0.0)
        return z

    def project(x):
        return point(nearest_z(np.asarray(x, dtype=float)))

    def distance(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 3)
        d = np.array([np.linalg.norm(project(p) - p) for p in flat])
        return d.reshape(x.shape[:-1])

    def sample(n, rng):
        z = np.sort(rng.uniform(zlo, 0.0, size=n))
        z[-1] = 0.0
        return np.stack([-z ** 4, z ** 4, z], axis=-1)

    return SingularSetModel(sys, constraint, distance, project, sample, description="(-z^4, z^4, z), z <= 0")


# --- scenarios ----------------------------------------------------------------


def brockett_flat(half=1.0):
    box = _box3(half)
    f1, f2, Df1, Df2 = brockett_fields()
    sys = ControlAffineSystem(3, f1, f2, Df1, Df2, lip_f=1.0, bound_f=2.0 * np.sqrt(1 + half ** 2), box=box,
                              name="brockett")
    con = flat_constraint(box)
    return Scenario("brockett_flat", sys, con, axis_singular_set(sys, con, -half), {},
                    dict(H3=True, IPC=False, H4=True, H5=True, H6=True),
                    "Brockett integrator with the flat constraint x3 <= 0")


def brockett_power(p=2.0, lam=1.0, half=1.0):
    box = _box3(half)
    f1, f2, Df1, Df2 = brockett_fields()
    sys = ControlAffineSystem(3, f1, f2, Df1, Df2, lip_f=1.0, bound_f=2.0 * np.sqrt(1 + half ** 2), box=box,
                              name="brockett")
    con = power_constraint(p, lam, box=box)
    regular = p >= 1.5
    return Scenario("brockett_power", sys, con, axis_singular_set(sys, con, -half), dict(p=p, lam=lam),
                    dict(H3=regular, IPC=False, H4=True, H5=True, H6=True),
                    "Brockett integrator with h = lam (x1^2 + x2^2)^p + x3")


def brockett_general(g1=1.0, g2=0.5, c1=1.0, c2=1.0, p=2.0, lam=1.0, half=1.0):
    box = _box3(half)
    f1, f2, Df1, Df2 = brockett_fields(g1, g2)
    k0 = abs(g1) + abs(g2) + 2 * half
    sys = ControlAffineSystem(3, f1, f2, Df1, Df2, lip_f=1.0, bound_f=k0, box=box, name="brockett_general")
    con = power_constraint(p, lam, c1, c2, box=box)
    return Scenario("brockett_general", sys, con, axis_singular_set(sys, con, -half),
                    dict(g1=g1, g2=g2, c1=c1, c2=c2, p=p, lam=lam),
                    dict(H3=p >= 1.5, IPC=False, H4=g1 != -g2, H5=True, H6=True),
                    "generalised Brockett fields (g1, 0, -x2), (0, g2, x1) with a weighted power constraint")


def brockett_nonlinear(half=1.0):
    box = _box3(half)

    def f1(x):
        x = np.asarray(x, dtype=float)
        return _stack(1 + 0 * x[..., 0], 0 * x[..., 0], -x[..., 1] + x[..., 2] ** 4)

    def f2(x):
        x = np.asarray(x, dtype=float)
        return _stack(0 * x[..., 0], 1 + 0 * x[..., 0], x[..., 0] + x[..., 2] ** 4)

    def Df1(x):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 2, 1] = -1.0
        J[..., 2, 2] = 4 * x[..., 2] ** 3
        return J

    def Df2(x):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 2, 0] = 1.0
        J[..., 2, 2] = 4 * x[..., 2] ** 3
        return J

    sys = ControlAffineSystem(3, f1, f2, Df1, Df2, lip_f=1.0 + 4 * half ** 3,
                              bound_f=2.0 * np.sqrt(1 + (2 * half) ** 2), box=box, name="brockett_nonlinear")
    con = flat_constraint(box)
    return Scenario("brockett_nonlinear", sys, con, quartic_singular_set(sys, con, -half), {},
                    dict(H3=True, IPC=False, H4=True, H5=True, H6=True),
                    "Brockett fields with x3^4 perturbations and the flat constraint")


def h6_violator(half=1.0):
    box = _box3(half)

    def f1(x):
        x = np.asarray(x, dtype=float)
        return _stack(1 + 0 * x[..., 0], 0 * x[..., 0], -x[..., 1])

    def f2(x):
        x = np.asarray(x, dtype=float)
        return _stack(0 * x[..., 0], 1 + 0 * x[..., 0], x[..., 0] ** 2)

    def Df1(x):
        return _const_jac([[0, 0, 0], [0, 0, 0], [0, -1, 0]], x)

    def Df2(x):
        x = np.asarray(x, dtype=float)
        J = np.zeros(x.shape[:-1] + (3, 3))
        J[..., 2, 0] = 2 * x[..., 0]
        return J

    sys = ControlAffineSystem(3, f1, f2, Df1, Df2, lip_f=1.0 + 2 * half, bound_f=2.0 + 2 * half ** 2, box=box,
                              name="h6_violator")
    con = flat_constraint(box)
    return Scenario("h6_violator", sys, con, axis_singular_set(sys, con, -half), {},
                    dict(H3=True, IPC=False, H4=True, H5=True, H6=False),
                    "f2 = (0, 1, x1^2): bracket transversal but the collar ratio degenerates")


def counterexample(half=1.0):
    box = (np.array([-half, -half]), np.array([half, half]))

    def f1(x):
        x = np.asarray(x, dtype=float)
        return _stack(1 + 0 * x[..., 0], 0 * x[..., 0])

    def f2(x):
        x = np.asarray(x, dtype=float)
        return _stack(0 * x[..., 0], 0 * x[..., 0])

    def Dzero(x):
        return np.zeros(np.shape(x)[:-1] + (2, 2))

    sys = ControlAffineSystem(2, f1, f2, Dzero, Dzero, lip_f=0.0, bound_f=1.0, box=box, name="counterexample")

    def h(x):
        x = np.asarray(x, dtype=float)
        return x[..., 1] - x[..., 0] ** 2

    def grad(x):
        x = np.asarray(x, dtype=float)
        return _stack(-2 * x[..., 0], 1 + 0 * x[..., 0])

    def hess(x):
        return _const_jac([[-2, 0], [0, 0]], x)

    con = Constraint(h, grad, hess, lip_h=1 + 2 * half, box=box, name="x2<=x1^2")

    def distance(x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(x[..., 0] ** 2 + np.maximum(x[..., 1], 0.0) ** 2)

    def project(x):
        return np.array([0.0, min(float(x[1]), 0.0)])

    def sample(n, rng):
        z = np.sort(rng.uniform(-half, 0.0, size=n))
        z[-1] = 0.0
        return np.stack([0 * z, z], axis=-1)

    sing = SingularSetModel(sys, con, distance, project, sample, description="x1 = 0, x2 <= 0")
    return Scenario("counterexample", sys, con, sing, {},
                    dict(H3=True, IPC=False, H4=False, H5=True, H6=True),
                    "x' = (u, 0), |u| <= 1, with C = {x2 <= x1^2}")


REGISTRY = {
    "brockett_flat": brockett_flat,
    "brockett_power": brockett_power,
    "brockett_general": brockett_general,
    "brockett_nonlinear": brockett_nonlinear,
    "h6_violator": h6_violator,
    "counterexample": counterexample,
}


def registry():
    """Names of the built-in scenarios mapped to their builders."""
    return dict(REGISTRY)


def get_scenario(name, **params):
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r}; available: {', '.join(sorted(REGISTRY))}") from None
    return builder(**params)
