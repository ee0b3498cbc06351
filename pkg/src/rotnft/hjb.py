"""Grid value function of the constrained discounted problem
``V(x) = inf int_0^inf e^{-t} L(x(t), u(t)) dt`` over trajectories staying in ``C``.

The scheme is semi-Lagrangian: ``V <- min_u {(1 - e^{-dt}) L(x, u) + e^{-dt} V(y)}``
where ``y`` is one RK4 step of length ``dt`` from ``x`` under the constant control ``u``.
The weight ``1 - e^{-dt}`` is the exact discounted cost of one step with ``L`` frozen,
so a constant cost gives a constant field and ``|V| <= sup |L|`` holds on the grid.
``V(y)`` is multilinear interpolation that only uses feasible nodes. Nodes from which
no control lands on usable data are flagged and removed until the remaining set is
viable for the scheme.
"""
from dataclasses import dataclass, field
from itertools import product

import numpy as np


@dataclass
class Lagrangian:
    """Running cost ``fun(x, u)`` (vectorised over leading axes) with ``|L| <= bound``
    and Lipschitz constant ``lip_x`` in ``x``."""
    fun: object
    bound: float
    lip_x: float = 0.0
    name: str = ""

    def __call__(self, x, u):
        x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
        return np.broadcast_to(self.fun(x, u), np.broadcast_shapes(x.shape[:-1], u.shape[:-1])).astype(float)

    def check(self, x, u, rng=None, pairs=256):
        """Sampled bound and Lipschitz ratio; returns ``(max |L|, max ratio)``."""
        vals = self(x, u)
        rng = np.random.default_rng(0) if rng is None else rng
        i, j = rng.integers(0, len(x), size=(2, pairs))
        keep = np.any(x[i] != x[j], axis=-1)
        i, j = i[keep], j[keep]
        dist = np.linalg.norm(x[i] - x[j], axis=-1)
        ratio = np.abs(self(x[i], u[i]) - self(x[j], u[i])) / dist
        return float(np.max(np.abs(vals))), float(ratio.max(initial=0.0))


def constant_lagrangian(c=1.0):
    return Lagrangian(lambda x, u: np.full(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]), float(c)),
                      abs(c), 0.0, f"L = {c}")


def distance_lagrangian(target, cap=1.0):
    """``min(cap, |x - target|)``."""
    target = np.asarray(target, dtype=float)
    return Lagrangian(lambda x, u: np.minimum(cap, np.linalg.norm(x - target, axis=-1)), cap, 1.0,
                      f"L = min({cap}, |x - {target.tolist()}|)")


def control_mesh(directions=32, radii=4):
    """``directions x radii`` points on circles of radius ``k / radii`` plus the origin."""
    a = 2 * np.pi * np.arange(directions) / directions
    ring = np.stack([np.cos(a), np.sin(a)], axis=-1)
    rs = np.arange(1, radii + 1) / radii
    return np.concatenate([np.zeros((1, 2)), (rs[:, None, None] * ring[None]).reshape(-1, 2)])


@dataclass
class GridSpec:
    lo: np.ndarray
    hi: np.ndarray
    n: tuple

    @classmethod
    def box(cls, box, n):
        lo, hi = (np.asarray(b, dtype=float) for b in box)
        n = (n,) * len(lo) if np.isscalar(n) else tuple(n)
        return cls(lo, hi, n)

    @property
    def axes(self):
        return [np.linspace(a, b, k) for a, b, k in zip(self.lo, self.hi, self.n)]

    @property
    def spacing(self):
        return (self.hi - self.lo) / (np.asarray(self.n) - 1)

    def nodes(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, len(self.n))


class _Interpolator:
    """Multilinear interpolation on a uniform grid that refuses masked data."""

    def __init__(self, grid):
        self.grid = grid
        self.n = np.asarray(grid.n)
        self.h = grid.spacing
        self.strides = np.array([int(np.prod(self.n[k + 1:])) for k in range(len(self.n))])
        self.corners = np.array(list(product((0, 1), repeat=len(self.n))))

    def locate(self, x):
        """Base flat index, fractional offsets and an inside-box flag for each point."""
        s = (np.asarray(x, dtype=float) - self.grid.lo) / self.h
        near = np.round(s)
        s = np.where(np.abs(s - near) <= 1e-9, near, s)  # points on a node use that node alone
        inside = np.all((s >= -1e-12) & (s <= self.n - 1 + 1e-12), axis=-1)
        base = np.clip(np.floor(s), 0, self.n - 2).astype(np.int64)
        frac = np.clip(s - base, 0.0, 1.0)
        return base @ self.strides, frac, inside

    def weights(self, frac):
        w = np.ones(frac.shape[:-1] + (len(self.corners),))
        for c, bits in enumerate(self.corners):
            for k, b in enumerate(bits):
                w[..., c] *= frac[..., k] if b else 1.0 - frac[..., k]
        return w

    def offsets(self):
        return self.corners @ self.strides

    def usable(self, base, frac, inside, mask, wtol=1e-12):
        """True where every corner carrying weight is an unmasked node."""
        w = self.weights(frac)
        ok = inside.copy()
        for c, off in enumerate(self.offsets()):
            ok &= (w[..., c] <= wtol) | mask[base + off]
        return ok

    def __call__(self, values, base, frac, wtol=1e-12):
        w = self.weights(frac)
        out = np.zeros(base.shape)
        for c, off in enumerate(self.offsets()):
            v = values[base + off]
            out += np.where(w[..., c] > wtol, w[..., c] * v, 0.0)
        return out


@dataclass
class ValueField:
    grid: GridSpec
    values: np.ndarray
    mask: np.ndarray
    dt: float
    controls: np.ndarray
    residual: float
    sweeps: int
    history: list
    flagged: int
    contraction_slack: float
    system: object = None
    constraint: object = None
    lagrangian: object = None
    notes: list = field(default_factory=list)

    @property
    def nodes(self):
        return self.grid.nodes()

    def as_grid(self):
        """Values shaped like the grid, NaN at masked nodes."""
        return np.where(self.mask, self.values, np.nan).reshape(self.grid.n)

    def __call__(self, x):
        """Interpolated values; NaN where the interpolation touches masked nodes."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ip = _Interpolator(self.grid)
        base, frac, inside = ip.locate(x)
        ok = ip.usable(base, frac, inside, self.mask)
        out = np.full(len(x), np.nan)
        if ok.any():
            out[ok] = ip(np.where(self.mask, self.values, 0.0), base[ok], frac[ok])
        return out

    def gradient(self, x):
        """Gradient of the multilinear interpolant at interior points of usable cells
        (NaN elsewhere)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ip = _Interpolator(self.grid)
        base, frac, inside = ip.locate(x)
        # every corner of the cell is needed for a derivative
        ok = inside & np.all((frac > 0) & (frac < 1), axis=-1)
        for off in ip.offsets():
            ok &= self.mask[base + off]
        g = np.full(x.shape, np.nan)
        if not ok.any():
            return g
        vals = np.stack([self.values[base[ok] + off] for off in ip.offsets()], axis=-1)
        fr = frac[ok]
        for k in range(x.shape[1]):
            dw = np.ones(vals.shape)
            for c, bits in enumerate(ip.corners):
                for j, b in enumerate(bits):
                    if j == k:
                        dw[:, c] *= (1.0 if b else -1.0) / ip.h[k]
                    else:
                        dw[:, c] *= fr[:, j] if b else 1.0 - fr[:, j]
            g[ok, k] = np.sum(dw * vals, axis=-1)
        return g


def _rk4_move(sys, x, u, dt):
    k1 = sys.velocity(x, u)
    k2 = sys.velocity(x + 0.5 * dt * k1, u)
    k3 = sys.velocity(x + 0.5 * dt * k2, u)
    k4 = sys.velocity(x + dt * k3, u)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def value_iteration(sys, constraint, L, grid, dt=0.05, controls=None, tol=1e-6, max_sweeps=5000, init=None,
                    cache_limit=2e7):
    """Fixed point of the discounted semi-Lagrangian scheme on the feasible nodes.

    ``tol`` bounds the distance to the fixed point: iteration stops once
    ``e^{-dt} / (1 - e^{-dt}) * ||V_{k+1} - V_k||`` is below it. ``init`` defaults to
    ``min_u L(x, u)``. Transition data are cached when the control count times the
    node count stays below ``cache_limit``.
    """
    controls = control_mesh() if controls is None else np.asarray(controls, dtype=float)
    X = grid.nodes()
    N, M = len(X), len(controls)
    ip = _Interpolator(grid)
    mask = np.asarray(constraint.value(X) <= 0)
    n_infeasible = int((~mask).sum())
    gamma = np.exp(-dt)

    def transition(j):
        y = _rk4_move(sys, X, np.broadcast_to(controls[j], (N, 2)), dt)
        base, frac, inside = ip.locate(y)
        inside &= np.asarray(constraint.value(y) <= 0)
        return base, frac, inside

    cache = M * N <= cache_limit
    trans = [transition(j) for j in range(M)] if cache else None
    costs = np.stack([(1 - gamma) * L(X, np.broadcast_to(controls[j], (N, 2))) for j in range(M)]) if cache else None

    def get(j):
        return trans[j] if cache else transition(j)

    def cost(j):
        return costs[j] if cache else (1 - gamma) * L(X, np.broadcast_to(controls[j], (N, 2)))

    # prune nodes with no usable control until the feasible set is viable for the scheme
    flagged = 0
    while True:
        any_ok = np.zeros(N, dtype=bool)
        for j in range(M):
            base, frac, inside = get(j)
            any_ok |= ip.usable(base, frac, inside, mask)
        dead = mask & ~any_ok
        if not dead.any():
            break
        flagged += int(dead.sum())
        mask &= ~dead
    usable = [ip.usable(*get(j), mask) & mask for j in range(M)] if cache else None

    if init is None:
        V = np.min(np.stack([L(X, np.broadcast_to(u, (N, 2))) for u in controls]), axis=0)
    else:
        V = np.broadcast_to(np.asarray(init, dtype=float), (N,)).copy()
    V = np.where(mask, V, 0.0)
    history, slack = [], 0.0
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        best = np.full(N, np.inf)
        for j in range(M):
            base, frac, inside = get(j)
            ok = usable[j] if cache else ip.usable(base, frac, inside, mask) & mask
            cand = cost(j) + gamma * ip(V, base, frac)
            best = np.where(ok & (cand < best), cand, best)
        new = np.where(mask, best, 0.0)
        res = float(np.max(np.abs(new - V)[mask])) if mask.any() else 0.0
        if history:
            slack = max(slack, res - gamma * history[-1])
        history.append(res)
        V = new
        if res * gamma / (1 - gamma) <= tol:
            break
    notes = [f"{n_infeasible} grid nodes outside C", f"{flagged} feasible nodes flagged without a usable control"]
    return ValueField(grid, V, mask, dt, controls, history[-1] if history else 0.0, sweeps, history, flagged,
                      max(slack, 0.0), sys, constraint, L, notes)


# --- probes -------------------------------------------------------------------


@dataclass
class ModulusReport:
    edges: np.ndarray
    modulus: np.ndarray
    counts: np.ndarray
    skipped: int
    worst_pair: tuple = None

    def at(self, r):
        """Modulus of the bucket containing ``r``."""
        k = int(np.clip(np.searchsorted(self.edges, r, side="left") - 1, 0, len(self.modulus) - 1))
        return float(self.modulus[k])


def continuity_probe(V, pairs, edges=None):
    """Empirical modulus ``max |V(a) - V(b)|`` per bucket of ``|a - b|``.

    Pairs touching masked data are skipped and counted.
    """
    pairs = np.asarray(pairs, dtype=float)
    a, b = pairs[:, 0], pairs[:, 1]
    va, vb = V(a), V(b)
    ok = np.isfinite(va) & np.isfinite(vb)
    dist = np.linalg.norm(a - b, axis=-1)
    if edges is None:
        top = float(dist[ok].max()) if ok.any() else 1.0
        edges = np.linspace(0.0, top * (1 + 1e-9) + 1e-300, 9)
    edges = np.asarray(edges, dtype=float)
    diff = np.abs(va - vb)
    k = np.clip(np.searchsorted(edges, dist, side="right") - 1, 0, len(edges) - 2)
    modulus = np.zeros(len(edges) - 1)
    counts = np.zeros(len(edges) - 1, dtype=int)
    for i in range(len(edges) - 1):
        sel = ok & (k == i)
        counts[i] = int(sel.sum())
        if counts[i]:
            modulus[i] = float(diff[sel].max())
    worst = None
    if ok.any():
        w = int(np.argmax(np.where(ok, diff, -1.0)))
        worst = (a[w].tolist(), b[w].tolist(), float(diff[w]))
    return ModulusReport(edges, modulus, counts, int((~ok).sum()), worst)


def boundary_pairs(V, radius, band=None, rng=None, n=4000):
    """Random node pairs within ``radius`` of each other near ``h = 0`` (both in ``C``)."""
    rng = np.random.default_rng(0) if rng is None else rng
    X = V.nodes[V.mask]
    hv = V.constraint.value(X)
    band = 2 * radius if band is None else band
    near = X[hv >= -band]
    if len(near) < 2:
        return np.zeros((0, 2, X.shape[1]))
    i = rng.integers(0, len(near), size=n)
    step = rng.normal(size=(n, X.shape[1]))
    step *= (radius * rng.uniform(0, 1, size=n) / np.linalg.norm(step, axis=-1))[:, None]
    b = near[i] + step
    keep = V.constraint.value(b) <= 0
    return np.stack([near[i][keep], b[keep]], axis=1)


def modulus_trend(values):
    """True when the sequence strictly decreases (a vanishing modulus under refinement)."""
    values = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(values) < 0))


def hamiltonian(sys, L, x, p, controls=None):
    """``sup_u {-(f1 u1 + f2 u2) . p + L(x, u)}`` over the control mesh (batched in ``x``)."""
    controls = control_mesh() if controls is None else np.asarray(controls, dtype=float)
    x, p = np.asarray(x, dtype=float), np.asarray(p, dtype=float)
    f1, f2 = sys.fields(x)
    a, b = np.sum(f1 * p, axis=-1), np.sum(f2 * p, axis=-1)
    best = np.full(np.shape(a), -np.inf)
    for u in controls:
        best = np.maximum(best, -(a * u[0] + b * u[1]) + L(x, np.broadcast_to(u, np.shape(x)[:-1] + (2,))))
    return best


@dataclass
class ResidualReport:
    residuals: np.ndarray
    points: np.ndarray
    skipped: int

    @property
    def median(self):
        return float(np.median(np.abs(self.residuals))) if self.residuals.size else np.nan

    @property
    def max(self):
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else np.nan


def hjb_residual(V, samples):
    """``V(x) - min_u {L(x, u) + DV(x) . f(x, u)}`` at interior sample points.

    With the sup-form Hamiltonian ``H(x, p) = sup_u {-f . p + L}`` this equals
    ``V + H(x, DV) - 2 L`` whenever ``L`` does not depend on ``u``, which is 0 for
    the constant field of a constant cost. Samples outside fully feasible cells
    are skipped.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    grad = V.gradient(samples)
    ok = np.all(np.isfinite(grad), axis=-1)
    x, p = samples[ok], grad[ok]
    v = V(x)
    f1, f2 = V.system.fields(x)
    a, b = np.sum(f1 * p, axis=-1), np.sum(f2 * p, axis=-1)
    best = np.full(len(x), np.inf)
    for u in V.controls:
        best = np.minimum(best, V.lagrangian(x, np.broadcast_to(u, (len(x), 2))) + a * u[0] + b * u[1])
    return ResidualReport(v - best, x, int((~ok).sum()))
