"""Control-affine systems, constraints and second-order boundary geometry.

All field callables are vectorised: they take points of shape ``(..., n)`` and
return ``(..., n)`` (fields), ``(..., n, n)`` (Jacobians), ``(...)`` (constraint
values) and so on. Jacobians use the convention ``Df[i, j] = d f_i / d x_j``.

When a system or a constraint lacks an analytic derivative, a central
finite-difference fallback is used and the result is flagged, because the error
constants of the displacement and descent estimates depend on derivative accuracy.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .quadform import FormClass, SymForm2, classify

logger = logging.getLogger(__name__)

FD_STEP = 1e-6


class EvaluationError(RuntimeError):
    """A field or derivative provider failed at a point."""

    def __init__(self, message, point=None):
        super().__init__(message if point is None else f"{message} at x={np.asarray(point).tolist()}")
        self.point = point


class ConfigurationError(ValueError):
    """A required provider or setting is missing or inconsistent."""


def fd_jacobian(fun, x, step=FD_STEP):
    """Central finite-difference Jacobian of ``fun`` at a batch of points.

    ``fun`` maps ``(..., n)`` to ``(..., m)`` (or ``(...)`` for scalars); the result
    has shape ``(..., m, n)`` (resp. ``(..., n)``).
    """
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.shape[-1]):
        h = step * np.maximum(1.0, np.abs(x[..., j]))
        xp, xm = x.copy(), x.copy()
        xp[..., j] += h
        xm[..., j] -= h
        d = np.asarray(fun(xp), dtype=float) - np.asarray(fun(xm), dtype=float)
        width = xp[..., j] - xm[..., j]
        cols.append(d / width.reshape(width.shape + (1,) * (d.ndim - width.ndim)))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class ControlAffineSystem:
    """Pair of vector fields ``f1, f2`` driving ``x' = u1 f1(x) + u2 f2(x)``, ``|u| <= 1``.

    Parameters
    ----------
    dim : int
        State dimension.
    f1, f2 : callable
        Vectorised fields.
    Df1, Df2 : callable, optional
        Analytic Jacobians. Missing ones fall back to finite differences.
    lip_f : float
        Common Lipschitz constant of the fields on the working box.
    bound_f : float
        Bound ``k0`` on ``|f1| + |f2|`` over the working box.
    box : tuple of arrays
        ``(lower, upper)`` corners of the working box.
    """

    dim: int
    f1: Callable
    f2: Callable
    Df1: Optional[Callable] = None
    Df2: Optional[Callable] = None
    lip_f: float = float("nan")
    bound_f: float = float("nan")
    box: tuple = None
    name: str = "system"

    @property
    def analytic_derivatives(self):
        return self.Df1 is not None and self.Df2 is not None

    def fields(self, x):
        x = np.asarray(x, dtype=float)
        try:
            return np.asarray(self.f1(x), dtype=float), np.asarray(self.f2(x), dtype=float)
        except Exception as exc:  # provider bug, attach the point
            raise EvaluationError(f"field evaluation failed: {exc}", x) from exc

    def jacobians(self, x):
        x = np.asarray(x, dtype=float)
        try:
            J1 = self.Df1(x) if self.Df1 is not None else fd_jacobian(self.f1, x)
            J2 = self.Df2(x) if self.Df2 is not None else fd_jacobian(self.f2, x)
        except Exception as exc:
            raise EvaluationError(f"derivative evaluation failed: {exc}", x) from exc
        return np.asarray(J1, dtype=float), np.asarray(J2, dtype=float)

    def velocity(self, x, u):
        """``u1 f1(x) + u2 f2(x)``; ``u`` broadcasts against the batch shape of ``x``."""
        a, b = self.fields(x)
        u = np.asarray(u, dtype=float)
        return u[..., 0:1] * a + u[..., 1:2] * b

    def in_box(self, x):
        if self.box is None:
            return np.ones(np.shape(x)[:-1], dtype=bool)
        lo, hi = (np.asarray(c, dtype=float) for c in self.box)
        x = np.asarray(x)
        return np.all((x >= lo) & (x <= hi), axis=-1)


@dataclass(frozen=True)
class Constraint:
    """State constraint ``C = {h <= 0}`` with derivatives of ``h``."""

    h: Callable
    grad_h: Optional[Callable] = None
    hess_h: Optional[Callable] = None
    lip_h: float = float("nan")
    box: tuple = None
    name: str = "constraint"

    def value(self, x):
        return np.asarray(self.h(np.asarray(x, dtype=float)), dtype=float)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.grad_h is not None:
            return np.asarray(self.grad_h(x), dtype=float)
        return fd_jacobian(self.h, x)

    def hessian(self, x):
        if self.hess_h is None:
            raise ConfigurationError("second derivatives of h are required (hess_h missing)")
        return np.asarray(self.hess_h(np.asarray(x, dtype=float)), dtype=float)


def lie_bracket(sys, x):
    """``[f1, f2](x) = Df2(x) f1(x) - Df1(x) f2(x)`` (batched)."""
    a, b = sys.fields(x)
    J1, J2 = sys.jacobians(x)
    return np.einsum("...ij,...j->...i", J2, a) - np.einsum("...ij,...j->...i", J1, b)


def field_bracket(g1, Dg1, g2, Dg2, x):
    """Bracket of two arbitrary fields given with their Jacobians."""
    return np.einsum("...ij,...j->...i", Dg2(x), g1(x)) - np.einsum("...ij,...j->...i", Dg1(x), g2(x))


@dataclass(frozen=True)
class LambdaMatrices:
    lam: np.ndarray
    sym: np.ndarray
    antisym: np.ndarray
    point: np.ndarray
    finite_difference: bool = False

    @property
    def form(self):
        return SymForm2.from_matrix(self.sym)


def lambda_matrices(sys, constraint, x):
    """Second-order matrix ``Lam[l, m] = f_l . D2h f_m + grad h . Df_l f_m`` at one point,
    with its symmetric and antisymmetric parts."""
    x = np.asarray(x, dtype=float)
    H = constraint.hessian(x)
    g = constraint.gradient(x)
    fs = sys.fields(x)
    Js = sys.jacobians(x)
    lam = np.empty(x.shape[:-1] + (2, 2))
    for l in range(2):
        for m in range(2):
            curv = np.einsum("...i,...ij,...j->...", fs[l], H, fs[m])
            drift = np.einsum("...i,...ij,...j->...", g, Js[l], fs[m])
            lam[..., l, m] = curv + drift
    sym = 0.5 * (lam + np.swapaxes(lam, -1, -2))
    antisym = lam - sym
    return LambdaMatrices(lam, sym, antisym, x, finite_difference=not sys.analytic_derivatives)


def boundary_residual(sys, constraint, x):
    """``(grad h . f1, grad h . f2)(x)``: the first-order inward-pointing data."""
    g = constraint.gradient(x)
    a, b = sys.fields(x)
    return np.stack([np.sum(g * a, axis=-1), np.sum(g * b, axis=-1)], axis=-1)


def residual_jacobian(sys, constraint, x):
    """Jacobian ``(2, n)`` of the boundary residual at one point."""
    g = constraint.gradient(x)
    H = constraint.hessian(x)
    fs = sys.fields(x)
    Js = sys.jacobians(x)
    rows = [fs[l] @ H + g @ Js[l] for l in range(2)]
    return np.stack(rows, axis=0)


def bracket_transversality(sys, constraint, x):
    """``grad h(x) . [f1, f2](x)``."""
    return np.sum(constraint.gradient(x) * lie_bracket(sys, x), axis=-1)


# --- coordinate changes -------------------------------------------------------


@dataclass(frozen=True)
class Diffeomorphism:
    """Smooth invertible change of coordinates ``xt = forward(x)``."""

    forward: Callable
    jacobian: Callable
    inverse: Optional[Callable] = None
    name: str = "diffeo"

    def invert(self, xt, x_guess, tol=1e-14, max_iter=50):
        if self.inverse is not None:
            return np.asarray(self.inverse(xt), dtype=float)
        x = np.array(x_guess, dtype=float)
        for _ in range(max_iter):
            r = self.forward(x) - xt
            if np.max(np.abs(r)) <= tol * max(1.0, np.max(np.abs(xt))):
                break
            x = x - np.linalg.solve(self.jacobian(x), r)
        return x


def identity_diffeo(n):
    return Diffeomorphism(lambda x: np.array(x, dtype=float), lambda x: np.eye(n), lambda y: np.array(y, dtype=float),
                          name="identity")


def transformed_data(sys, constraint, diffeo, anchor):
    """Push the fields forward and pull ``h`` back through ``diffeo``.

    Returns a system and a constraint in the new chart whose derivatives are
    central finite differences of the transported maps (flagged as such).
    ``anchor`` seeds the Newton inverse when no closed-form inverse is given.
    """
    def back(xt):
        xt = np.asarray(xt, dtype=float)
        if xt.ndim == 1:
            return diffeo.invert(xt, anchor)
        flat = xt.reshape(-1, xt.shape[-1])
        out = np.stack([diffeo.invert(p, anchor) for p in flat])
        return out.reshape(xt.shape)

    def push(fi):
        def ft(xt):
            x = back(xt)
            J = _batched(diffeo.jacobian, x)
            return np.einsum("...ij,...j->...i", J, fi(x))
        return ft

    def grad_t(xt):
        x = back(xt)
        J = _batched(diffeo.jacobian, x)
        return np.linalg.solve(np.swapaxes(J, -1, -2), constraint.gradient(x)[..., None])[..., 0]

    f1t, f2t = push(sys.f1), push(sys.f2)
    sys_t = ControlAffineSystem(sys.dim, f1t, f2t, None, None, name=f"{sys.name}~")
    con_t = Constraint(lambda xt: constraint.value(back(xt)), grad_t, lambda xt: fd_jacobian(grad_t, xt),
                       name=f"{constraint.name}~")
    return sys_t, con_t


def _batched(fun, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.asarray(fun(x), dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    out = np.stack([np.asarray(fun(p), dtype=float) for p in flat])
    return out.reshape(x.shape[:-1] + out.shape[1:])


@dataclass
class InvarianceReport:
    max_discrepancy: float
    discrepancies: np.ndarray
    skipped: list = field(default_factory=list)
    n_points: int = 0
    finite_difference: bool = True


def invariance_audit(sys, constraint, diffeo, points, singular_tol=1e-12):
    """Compare ``S(x)`` with ``S~(x~(x))`` computed from transported data.

    Samples where the diffeomorphism Jacobian is singular are skipped and listed.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    disc = np.full(len(points), np.nan)
    skipped = []
    for i, x in enumerate(points):
        J = np.asarray(diffeo.jacobian(x), dtype=float)
        if abs(np.linalg.det(J)) <= singular_tol * max(1.0, np.max(np.abs(J))) ** J.shape[0]:
            skipped.append(i)
            continue
        S = lambda_matrices(sys, constraint, x).sym
        sys_t, con_t = transformed_data(sys, constraint, diffeo, anchor=x)
        xt = np.asarray(diffeo.forward(x), dtype=float)
        St = lambda_matrices(sys_t, con_t, xt).sym
        disc[i] = np.max(np.abs(S - St))
    good = disc[~np.isnan(disc)]
    return InvarianceReport(float(good.max()) if good.size else float("nan"), disc, skipped, len(points))


# --- singular set -------------------------------------------------------------


class SingularSetModel:
    """The set where both ``grad h . f1`` and ``grad h . f2`` vanish, inside ``C``.

    Parameters
    ----------
    sys, constraint
        Problem data.
    distance : callable, optional
        Exact distance to the set (vectorised).
    project : callable, optional
        Exact nearest point on the set (single point).
    sample : callable, optional
        ``sample(n, rng) -> (n, dim)`` points spread over the set inside the box.
    tol : float
        ``|residual| <= tol`` counts as singular.
    """

    def __init__(self, sys, constraint, distance=None, project=None, sample=None, tol=None,
                 resolution=None, description=""):
        self.sys = sys
        self.constraint = constraint
        self._distance = distance
        self._project = project
        self._sample = sample
        self.tol = 1e-9 * max(1.0, _field_scale(sys)) if tol is None else tol
        self.exact = distance is not None
        self.resolution = 0.0 if self.exact else resolution
        self.description = description
        self._cloud = None

    def residual(self, x):
        return boundary_residual(self.sys, self.constraint, x)

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        if self._distance is not None:
            return np.asarray(self._distance(x), dtype=float)
        cloud = self.cloud()
        if cloud.size == 0:
            return np.full(x.shape[:-1], np.inf)
        diff = x[..., None, :] - cloud
        return np.sqrt(np.min(np.sum(diff * diff, axis=-1), axis=-1))

    def project(self, x):
        x = np.asarray(x, dtype=float)
        if self._project is not None:
            return np.asarray(self._project(x), dtype=float)
        cloud = self.cloud()
        if cloud.size == 0:
            raise ConfigurationError("singular set not detected in box")
        start = cloud[np.argmin(np.sum((cloud - x) ** 2, axis=-1))]
        y = _gauss_newton_to_singular(self.sys, self.constraint, start, self.tol)
        return y if y is not None else start

    def sample(self, n, rng):
        if self._sample is not None:
            return np.asarray(self._sample(n, rng), dtype=float)
        cloud = self.cloud()
        if cloud.size == 0:
            return cloud.reshape(0, self.sys.dim)
        idx = rng.choice(len(cloud), size=min(n, len(cloud)), replace=False)
        return cloud[np.sort(idx)]

    def cloud(self, per_axis=12, seed=0):
        """Projected-grid estimate: grid seeds pushed onto the set by Gauss-Newton.

        The achieved resolution (max gap between neighbouring cloud points) is
        stored in ``self.resolution``.
        """
        if self._cloud is not None:
            return self._cloud
        box = self.sys.box or self.constraint.box
        if box is None:
            raise ConfigurationError("a working box is required to estimate the singular set")
        lo, hi = (np.asarray(c, dtype=float) for c in box)
        axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
        seeds = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
        pts = []
        for s in seeds:
            y = _gauss_newton_to_singular(self.sys, self.constraint, s, self.tol)
            if y is None or not np.all((y >= lo) & (y <= hi)) or self.constraint.value(y) > self.tol:
                continue
            pts.append(y)
        cloud = np.unique(np.round(np.array(pts), 12), axis=0) if pts else np.zeros((0, len(lo)))
        if len(cloud) > 1:
            d = np.sqrt(np.sum((cloud[:, None] - cloud[None]) ** 2, axis=-1))
            np.fill_diagonal(d, np.inf)
            self.resolution = float(np.max(np.min(d, axis=1)))
        self._cloud = cloud
        return cloud


def _field_scale(sys):
    if sys.box is None:
        return 1.0
    lo, hi = (np.asarray(c, dtype=float) for c in sys.box)
    corners = np.stack([lo, hi, 0.5 * (lo + hi)])
    a, b = sys.fields(corners)
    return float(np.max(np.abs(a)) + np.max(np.abs(b)))


def _gauss_newton_to_singular(sys, constraint, x0, tol, max_iter=60):
    x = np.array(x0, dtype=float)
    for _ in range(max_iter):
        r = boundary_residual(sys, constraint, x)
        if np.linalg.norm(r) <= tol:
            return x
        J = residual_jacobian(sys, constraint, x)
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        x = x - step
        if not np.all(np.isfinite(x)):
            return None
    return x if np.linalg.norm(boundary_residual(sys, constraint, x)) <= tol else None


# --- assumption audit ---------------------------------------------------------


@dataclass
class AuditSamples:
    singular: np.ndarray
    collar_base: np.ndarray
    collar_dirs: np.ndarray
    collar_radii: np.ndarray
    boundary: np.ndarray

    @property
    def collar(self):
        pts = (self.collar_base[:, None, None, :]
               + self.collar_radii[None, None, :, None] * self.collar_dirs[None, :, None, :])
        return pts


def sample_audit_points(sys, constraint, singular, n_singular=64, delta=0.5, n_dirs=16, n_radii=13,
                        n_boundary=256, seed=0):
    """Monte-Carlo plus grid sample plan for the assumption audit.

    Collar points are laid on rays ``s + r v`` from base points ``s`` of the
    singular set, with directions ``v`` made of the coordinate axes (both signs)
    plus random unit vectors and radii log-spaced in ``[1e-4 delta, delta]``.
    """
    rng = np.random.default_rng(seed)
    n = sys.dim
    S = singular.sample(n_singular, rng)
    base = S[: min(len(S), 8)]
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    rand = rng.normal(size=(max(n_dirs - 2 * n, 0), n))
    rand /= np.linalg.norm(rand, axis=1, keepdims=True)
    dirs = np.concatenate([axes, rand])
    radii = delta * np.logspace(-4, 0, n_radii)
    boundary = _boundary_points(sys, constraint, n_boundary, rng)
    return AuditSamples(S, base, dirs, radii, boundary)


def _boundary_points(sys, constraint, n, rng, iters=30):
    box = sys.box or constraint.box
    if box is None:
        return np.zeros((0, sys.dim))
    lo, hi = (np.asarray(c, dtype=float) for c in box)
    x = lo + (hi - lo) * rng.random((n, len(lo)))
    for _ in range(iters):
        hv = constraint.value(x)
        g = constraint.gradient(x)
        gg = np.sum(g * g, axis=-1)
        ok = gg > 0
        x[ok] -= (hv[ok] / gg[ok])[:, None] * g[ok]
    keep = np.abs(constraint.value(x)) <= 1e-9 * max(1.0, float(np.max(np.abs(constraint.value(lo[None])))))
    keep &= np.all((x >= lo) & (x <= hi), axis=-1)
    return x[keep]


@dataclass
class AssumptionReport:
    regime: str
    alpha: float
    alpha_witness: Optional[np.ndarray]
    h5_classes: list
    h5_points: np.ndarray
    forms: list
    d0: float
    d0_witness: Optional[np.ndarray]
    d0_by_radius: np.ndarray
    radii: np.ndarray
    min_grad_norm: float
    passes: dict
    counts: dict
    notes: list = field(default_factory=list)
    finite_difference: bool = False

    @property
    def all_pass(self):
        return all(self.passes.values())


def hessian_lipschitz_slope(constraint, base, dirs, radii):
    """Log-log slope of ``max |D2h(x + r v) - D2h(x)| / r`` against ``r``.

    A Lipschitz Hessian gives a slope near 0 (or identically vanishing quotients,
    reported as 0); a Hessian that is only Hoelder of order ``a`` gives ``a - 1``.
    """
    if len(base) == 0:
        return 0.0
    H0 = constraint.hessian(base)[:, None, None]
    pts = base[:, None, None, :] + radii[None, None, :, None] * dirs[None, :, None, :]
    dH = np.linalg.norm(constraint.hessian(pts) - H0, axis=(-2, -1))
    q = np.max(dH, axis=(0, 1)) / radii
    if np.all(q <= 1e-12):
        return 0.0
    ok = q > 0
    return float(np.polyfit(np.log(radii[ok]), np.log(q[ok]), 1)[0])


def audit_assumptions(sys, constraint, singular, samples=None, alpha_tol=1e-9, h6_decay_slope=0.5,
                      hessian_slope_floor=-0.1, **sample_kw):
    """Sampled audit of the boundary regularity, bracket, form and collar assumptions.

    Returns
    -------
    AssumptionReport
        ``passes`` has keys ``H3``, ``IPC``, ``H4``, ``H5``, ``H6``. When no
        singular sample is found the regime is ``"IPC"`` and ``H4``-``H6`` hold
        vacuously.
    """
    if samples is None:
        samples = sample_audit_points(sys, constraint, singular, **sample_kw)
    notes = []
    passes = {}
    counts = {"singular": len(samples.singular), "boundary": len(samples.boundary)}

    grad_norm = np.linalg.norm(constraint.gradient(samples.boundary), axis=-1) if len(samples.boundary) else np.array([])
    min_grad = float(grad_norm.min()) if grad_norm.size else float("nan")
    hess_slope = hessian_lipschitz_slope(constraint, samples.collar_base, samples.collar_dirs, samples.collar_radii)
    passes["H3"] = bool((grad_norm.size == 0 or min_grad > 1e-9) and hess_slope > hessian_slope_floor)
    if hess_slope <= hessian_slope_floor:
        notes.append(f"Hessian of h is not Lipschitz near the singular set (difference-quotient slope {hess_slope:.2f})")

    S = samples.singular
    if len(S):
        S = S[np.linalg.norm(singular.residual(S), axis=-1) <= singular.tol]
    counts["singular_verified"] = len(S)

    if len(S) == 0:
        notes.append("singular set not detected in box")
        passes.update(IPC=True, H4=True, H5=True, H6=True)
        return AssumptionReport("IPC", float("nan"), None, [], np.zeros((0, sys.dim)), [], float("nan"), None,
                                np.array([]), np.array([]), min_grad, passes, counts, notes,
                                not sys.analytic_derivatives)

    on_boundary = np.abs(constraint.value(S)) <= singular.tol
    passes["IPC"] = not bool(np.any(on_boundary))
    if not passes["IPC"]:
        notes.append(f"first-order inward pointing fails at {int(on_boundary.sum())} boundary points of the singular set")

    trans = np.abs(bracket_transversality(sys, constraint, S))
    i = int(np.argmin(trans))
    alpha = float(trans[i])
    passes["H4"] = alpha > alpha_tol

    lams = [lambda_matrices(sys, constraint, x) for x in S]
    forms = [lm.form for lm in lams]
    classes = [classify(q) for q in forms]
    passes["H5"] = all(c.non_positive for c in classes)
    if any(c is FormClass.NEGATIVE_DEFINITE for c in classes):
        notes.append("negative definite forms found on the singular set (accepted)")
    if len(set(classes)) > 1:
        notes.append("mixed form classes along the singular set")

    # the collar is taken inside C, where trajectories of interest live
    pts = samples.collar
    res = np.linalg.norm(singular.residual(pts), axis=-1)
    dist = singular.distance(pts)
    inside = constraint.value(pts) <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((dist > singular.tol) & inside, res / dist, np.inf)
    by_radius = np.min(ratio, axis=(0, 1))
    flat = np.argmin(ratio)
    d0 = float(ratio.reshape(-1)[flat])
    witness = pts.reshape(-1, sys.dim)[flat]
    finite = np.isfinite(by_radius) & (by_radius > 0)
    if finite.sum() >= 2:
        slope = np.polyfit(np.log(samples.collar_radii[finite]), np.log(by_radius[finite]), 1)[0]
    else:
        slope = np.inf
    passes["H6"] = bool(d0 > alpha_tol and slope < h6_decay_slope)
    if not passes["H6"]:
        notes.append(f"collar ratio decays with radius (log-log slope {slope:.2f})")
    counts["collar"] = int(np.isfinite(ratio).sum())

    return AssumptionReport("singular", alpha, S[i], classes, S, forms, d0, witness, by_radius,
                            samples.collar_radii, min_grad, passes, counts, notes, not sys.analytic_derivatives)
