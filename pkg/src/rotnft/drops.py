"""Drop curves, their generators, and the swept Area and Excess functionals.

A drop is a periodic, arc-length plane curve ``R`` starting at the origin whose
image stays in an angular sector ``(phi - beta, phi + beta)`` and whose swept area
grows strictly. Its derivative ``r`` is the drop generator used as a control.

Two families are provided with closed forms: a circle-like drop (``beta = pi/2``)
and a pointed drop built from a circular arc and its mirror image.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.optimize import brentq

from .quadform import wrap_half_turn


class DropKind(Enum):
    POINTED = "pointed"
    CIRCLE_LIKE = "circle_like"


class DropDomainError(ValueError):
    """Invalid drop parameters."""


class QuadratureError(RuntimeError):
    """Quadrature did not reach its tolerance; ``trace`` holds (panels, value, error)."""

    def __init__(self, message, trace):
        super().__init__(f"{message}; refinement trace: {trace}")
        self.trace = trace


@dataclass(frozen=True)
class PlaneCurve:
    """A plane curve given by callables ``R`` and ``r = dR/dt``, vectorized in ``t``.

    ``breakpoints`` are times where ``r`` may be non-smooth; they repeat with
    ``period`` when one is given.
    """
    R: object
    r: object
    breakpoints: tuple = ()
    period: float = None


@dataclass(frozen=True)
class DropCurve:
    R: object
    r: object
    period: float
    phase: float
    beta: float
    lip: float
    kind: DropKind
    area_closed: object = None
    breakpoints: tuple = (0.0,)
    params: dict = field(default_factory=dict)

    def area_to(self, t):
        """Closed-form ``Area(R)`` on ``[0, t]`` (``None`` if unavailable)."""
        if self.area_closed is None:
            return None
        return self.area_closed(t)


# --- closed forms -------------------------------------------------------------


def _rotation(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def _rotate(vectors, phi):
    return vectors @ _rotation(phi).T


def _x_minus_sin(x):
    """``x - sin(x)`` without cancellation near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    x2 = x * x
    series = x * x2 * (1 / 6 - x2 * (1 / 120 - x2 / 5040))
    return np.where(small, series, x - np.sin(x))


def _periodic_area(one_period, period):
    """Extend an area function on ``[0, period]`` to all of R by whole-period steps."""
    full = float(one_period(np.float64(period)))

    def area(t):
        t = np.asarray(t, dtype=float)
        k = np.floor(t / period)
        return k * full + one_period(t - k * period)

    return area


def make_circle_drop(tau0, phi=0.0):
    """Circle-like drop of period ``tau0`` turned by ``phi``.

    ``r(t)`` is the rotation by ``phi`` of ``(cos(2 pi t/tau0 - pi/2), sin(2 pi t/tau0 - pi/2))``.
    """
    if not tau0 > 0:
        raise DropDomainError(f"period must be positive, got {tau0}")
    tau0, phi = float(tau0), float(phi)
    omega = 2 * np.pi / tau0
    radius = tau0 / (2 * np.pi)

    def r(t):
        a = omega * np.asarray(t, dtype=float) - 0.5 * np.pi + phi
        return np.stack([np.cos(a), np.sin(a)], axis=-1)

    def R(t):
        a = omega * np.asarray(t, dtype=float)
        local = radius * np.stack([1 - np.cos(a), -np.sin(a)], axis=-1)
        return _rotate(local, phi)

    def area_one(t):
        return tau0 ** 2 * _x_minus_sin(omega * t) / (8 * np.pi ** 2)

    return DropCurve(R, r, tau0, phi, 0.5 * np.pi, omega, DropKind.CIRCLE_LIKE,
                     _periodic_area(area_one, tau0), (0.0,), {"tau0": tau0})


def make_pointed_drop(tau0, phi=0.0, beta=np.pi / 4):
    """Pointed drop of half-amplitude ``beta``: an arc of radius ``P/(2 pi)`` swept
    through angle ``2 beta``, followed by its mirror image in the sector axis
    travelled backwards. ``P = pi tau0/(2 beta)`` makes the period ``tau0``.
    """
    if not 0 < beta < 0.5 * np.pi:
        raise DropDomainError(f"pointed drop needs beta in (0, pi/2), got {beta}")
    if not tau0 > 0:
        raise DropDomainError(f"period must be positive, got {tau0}")
    tau0, phi, beta = float(tau0), float(phi), float(beta)
    P = np.pi * tau0 / (2 * beta)
    half = 0.5 * tau0  # the arc lasts P beta / pi
    omega = 2 * np.pi / P
    radius = P / (2 * np.pi)

    def arc_R(s):
        a = omega * s - beta
        return radius * np.stack([np.sin(a) + np.sin(beta), np.cos(beta) - np.cos(a)], axis=-1)

    def arc_r(s):
        a = omega * s - beta
        return np.stack([np.cos(a), np.sin(a)], axis=-1)

    def mirrored(t, fun, second_half_signs):
        t = np.mod(np.asarray(t, dtype=float), tau0)
        first = (t < half)[..., None]
        s = np.where(first[..., 0], t, tau0 - t)
        return fun(s) * np.where(first, 1.0, second_half_signs)

    def R(t):
        return _rotate(mirrored(t, arc_R, np.array([1.0, -1.0])), phi)

    def r(t):
        return _rotate(mirrored(t, arc_r, np.array([-1.0, 1.0])), phi)

    def arc_area(s):
        return P ** 2 * _x_minus_sin(omega * s) / (8 * np.pi ** 2)

    arc_total = float(arc_area(np.float64(half)))

    def area_one(t):
        return np.where(t <= half, arc_area(t), 2 * arc_total - arc_area(tau0 - t))

    return DropCurve(R, r, tau0, phi, beta, omega, DropKind.POINTED,
                     _periodic_area(area_one, tau0), (0.0, half),
                     {"tau0": tau0, "P": P, "junction": half})


# --- quadrature ---------------------------------------------------------------


def _split_points(curve, t1, t2, with_component_zeros=False, scan=256):
    """Sorted times in ``[t1, t2]`` at which ``curve`` is cut into smooth pieces."""
    cuts = [t1, t2]
    period = getattr(curve, "period", None)
    for b in getattr(curve, "breakpoints", ()):
        if period:
            k = np.arange(np.ceil((t1 - b) / period), np.floor((t2 - b) / period) + 1)
            cuts.extend(b + k * period)
        elif t1 < b < t2:
            cuts.append(b)
    cuts = np.unique(np.clip(cuts, t1, t2))
    if with_component_zeros:
        cuts = np.unique(np.concatenate([cuts, _component_zeros(curve, cuts, scan)]))
    # drop slivers produced by round-off at coincident cuts
    keep = np.concatenate([[True], np.diff(cuts) > 1e-14 * max(1.0, abs(t2))])
    return cuts[keep]


def _component_zeros(curve, cuts, scan):
    """Sign changes of each component of ``r`` inside the smooth pieces."""
    zeros = []
    period = getattr(curve, "period", None)
    for a, b in zip(cuts[:-1], cuts[1:]):
        n = scan if not period else max(scan, int(np.ceil(scan * (b - a) / period)))
        t = np.linspace(a, b, n + 1)
        inner = 0.5 * (t[:-1] + t[1:])
        grid = np.concatenate([[a + 1e-13 * (b - a)], inner, [b - 1e-13 * (b - a)]])
        vals = curve.r(grid)
        for comp in range(2):
            v = vals[:, comp]
            for i in np.nonzero(v[:-1] * v[1:] < 0)[0]:
                zeros.append(brentq(lambda s: curve.r(np.array([s]))[0, comp], grid[i], grid[i + 1],
                                    xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return np.asarray(zeros)


def _evaluate_one_sided(fun, a, b, t):
    """Evaluate ``fun`` on ``[a, b]`` using one-sided limits at the ends."""
    nudge = 1e-13 * max(1.0, abs(a), abs(b))
    s = np.clip(t, a + nudge, b - nudge) if b - a > 4 * nudge else t
    return fun(s)


def _simpson(values, h):
    return h / 3 * (values[..., 0] + values[..., -1]
                    + 4 * values[..., 1:-1:2].sum(axis=-1) + 2 * values[..., 2:-1:2].sum(axis=-1))


def _refine(estimate, atol, rtol, start=16, max_panels=2 ** 16):
    """Double the panel count until successive estimates agree; Richardson-correct the result.

    ``estimate(m)`` may return a scalar or an array; the error is the worst entry.
    """
    trace = []
    m = start
    prev = np.asarray(estimate(m))
    trace.append((m, prev, np.inf))
    while m < max_panels:
        m *= 2
        cur = np.asarray(estimate(m))
        err = float(np.max(np.abs(cur - prev))) / 15.0
        trace.append((m, cur, err))
        if err <= atol + rtol * float(np.max(np.abs(cur))):
            best = cur + (cur - prev) / 15.0
            return (float(best) if best.ndim == 0 else best), err, trace
        prev = cur
    raise QuadratureError("composite Simpson did not converge", [(m_, np.max(v), e) for m_, v, e in trace])


def _check_interval(t1, t2):
    if not t1 <= t2:
        raise ValueError(f"interval needs t1 <= t2, got [{t1}, {t2}]")


def _area_integrand(curve, a, b, t):
    R = _evaluate_one_sided(curve.R, a, b, t)
    r = _evaluate_one_sided(curve.r, a, b, t)
    return 0.5 * (r[..., 1] * R[..., 0] - r[..., 0] * R[..., 1])


def area(curve, t1, t2, closed_form=True, atol=1e-14, rtol=1e-12, return_error=False):
    """Signed area swept by ``curve`` on ``[t1, t2]``.

    Uses the closed form when the curve has one and ``closed_form`` is true,
    otherwise composite Simpson on each smooth piece with Richardson error control.

    Raises
    ------
    QuadratureError
        If the estimated error stays above tolerance.
    """
    _check_interval(t1, t2)
    if t1 == t2:
        return (0.0, 0.0) if return_error else 0.0
    if closed_form and getattr(curve, "area_closed", None) is not None:
        value = float(curve.area_closed(np.float64(t2)) - curve.area_closed(np.float64(t1)))
        return (value, 0.0) if return_error else value
    cuts = _split_points(curve, t1, t2)

    def estimate(m):
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            t = np.linspace(a, b, m + 1)
            total += _simpson(_area_integrand(curve, a, b, t), (b - a) / m)
        return total

    value, err, _ = _refine(estimate, atol, rtol)
    return (value, err) if return_error else value


def _speed_l1(curve, a, b, t):
    r = _evaluate_one_sided(curve.r, a, b, t)
    return np.abs(r[..., 0]) + np.abs(r[..., 1])


def _cumulative_functionals(curve, cuts, m):
    """Cumulative Area and Excess from ``cuts[0] = 0`` on ``m`` panels per piece.

    The four excess terms factor as ``int G(s) n(s) ds`` with
    ``n = |r1| + |r2|`` and ``G(s) = int_0^s |xi| n(xi) dxi``.
    Returns per-piece node arrays and cumulative values at those nodes.
    """
    times, areas, excesses = [], [], []
    area_acc = inner_acc = exc_acc = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        t = np.linspace(a, b, m + 1)
        n = _speed_l1(curve, a, b, t)
        inner = inner_acc + cumulative_simpson(np.abs(t) * n, x=t, initial=0.0)
        exc = exc_acc + cumulative_simpson(inner * n, x=t, initial=0.0)
        ar = area_acc + cumulative_simpson(_area_integrand(curve, a, b, t), x=t, initial=0.0)
        times.append(t)
        areas.append(ar)
        excesses.append(exc)
        area_acc, inner_acc, exc_acc = ar[-1], inner[-1], exc[-1]
    return times, areas, excesses


def excess(curve, t1, t2, atol=1e-14, rtol=1e-10, return_error=False):
    """Excess swept by ``curve`` on ``[t1, t2]`` (``0 <= t1 <= t2``).

    The inner integral is anchored at time 0, so the value depends on where the
    interval sits and not only on the geometric arc.
    """
    _check_interval(t1, t2)
    if t1 < 0:
        raise ValueError("excess is anchored at time 0; need t1 >= 0")
    if t1 == t2:
        return (0.0, 0.0) if return_error else 0.0
    cuts = np.unique(np.concatenate([_split_points(curve, 0.0, t2, with_component_zeros=True), [t1]]))
    start = int(np.searchsorted(cuts, t1))

    def estimate(m):
        inner_acc = 0.0
        total = 0.0
        for i, (a, b) in enumerate(zip(cuts[:-1], cuts[1:])):
            t = np.linspace(a, b, m + 1)
            n = _speed_l1(curve, a, b, t)
            inner = inner_acc + cumulative_simpson(np.abs(t) * n, x=t, initial=0.0)
            if i >= start:
                total += _simpson(inner * n, (b - a) / m)
            inner_acc = inner[-1]
        return total

    value, err, _ = _refine(estimate, atol, rtol)
    return (value, err) if return_error else value


# --- certificates -------------------------------------------------------------


@dataclass
class DropCertificate:
    passed: bool
    clauses: dict
    failed: list
    c_r: float
    limit_ratio: float
    area_monotone: bool
    cubic_area_constant: float
    cubic_horizon: float
    times: np.ndarray
    area_samples: np.ndarray
    excess_samples: np.ndarray
    notes: list

    def recheck(self, c_r=None, floor=1e-4):
        """Re-verify ``Exc <= C_R Area`` and monotonicity from the stored samples."""
        c_r = self.c_r if c_r is None else c_r
        period = self.cubic_horizon
        mask = self.times >= floor * period
        ok_ratio = np.all(self.excess_samples[mask] <= c_r * np.abs(self.area_samples[mask]) * (1 + 1e-12))
        return bool(ok_ratio and np.all(np.diff(self.area_samples) > 0))


def validate_drop(curve, samples_per_period=4096, c_r_bound=None, ratio_floor=1e-4, tol=1e-9):
    """Check the five drop clauses on samples over one period and compute ``C_R``.

    Clauses: (1) unit speed, (2) start point and initial direction, (3) closure,
    periodicity and Lipschitz generator, (4) strictly increasing area with
    ``Exc <= C_R Area`` for ``sigma >= ratio_floor * period`` (and ``C_R <= c_r_bound``
    when a bound is given), (5) image inside the sector. Never raises on a bad
    curve; failures are listed in the certificate.
    """
    if samples_per_period < 1000:
        raise ValueError("validation needs at least 1000 samples per period")
    tau0, phi, beta = curve.period, curve.phase, curve.beta
    clauses, notes = {}, []
    times = area_s = exc_s = np.empty(0)
    c_r = limit = cubic = np.nan
    monotone = False

    try:
        t = np.linspace(0.0, tau0, samples_per_period + 1)
        mid = 0.5 * (t[:-1] + t[1:])
        speed = np.linalg.norm(curve.r(mid), axis=-1)
        clauses[1] = bool(np.all(np.abs(speed - 1.0) <= tol))
        if not clauses[1]:
            notes.append(f"clause 1: max | |r| - 1 | = {np.max(np.abs(speed - 1.0)):.3e}")

        R0 = curve.R(np.array([0.0]))[0]
        r0 = curve.r(np.array([0.0]))[0]
        expected = np.array([np.cos(phi - beta), np.sin(phi - beta)])
        clauses[2] = bool(np.linalg.norm(R0) <= tol and np.linalg.norm(r0 - expected) <= tol)
        if not clauses[2]:
            notes.append(f"clause 2: R(0)={R0}, r(0)={r0}, expected r(0)={expected}")

        closure = _integral_of_generator(curve, tau0)
        shift = np.max(np.linalg.norm(curve.R(mid + tau0) - curve.R(mid), axis=-1))
        cuts = _split_points(curve, 0.0, tau0)
        slopes = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            s = np.linspace(a, b, max(64, int(samples_per_period * (b - a) / tau0)) + 1)
            rv = _evaluate_one_sided(curve.r, a, b, s)
            slopes.append(np.max(np.linalg.norm(np.diff(rv, axis=0), axis=-1) / np.diff(s)))
        lip_seen = max(slopes)
        clauses[3] = bool(np.linalg.norm(closure) <= tol * max(1.0, tau0) and shift <= tol * max(1.0, tau0)
                          and lip_seen <= curve.lip * (1 + 1e-6))
        if not clauses[3]:
            notes.append(f"clause 3: int r = {closure}, periodicity defect {shift:.3e}, "
                         f"observed Lipschitz {lip_seen:.6g} vs declared {curve.lip:.6g}")

        cuts_z = _split_points(curve, 0.0, tau0, with_component_zeros=True)
        per_piece = max(2, int(np.ceil(samples_per_period / (len(cuts_z) - 1))))
        per_piece += per_piece % 2
        tt, aa, ee = _cumulative_functionals(curve, cuts_z, per_piece)
        times = np.concatenate([tt[0]] + [x[1:] for x in tt[1:]])
        area_s = np.concatenate([aa[0]] + [x[1:] for x in aa[1:]])
        exc_s = np.concatenate([ee[0]] + [x[1:] for x in ee[1:]])
        monotone = bool(np.all(np.diff(area_s) > 0))
        mask = times >= ratio_floor * tau0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = exc_s[mask] / np.abs(area_s[mask])
        c_r = float(np.max(ratios)) if np.all(area_s[mask] != 0) else np.inf
        sigma = ratio_floor * tau0
        small_area = abs(area(curve, 0.0, sigma))
        limit = excess(curve, 0.0, sigma) / small_area if small_area > 0 else np.inf
        pos = times > 0
        cubic = float(np.min(area_s[pos] / times[pos] ** 3))
        clauses[4] = bool(monotone and np.isfinite(c_r) and (c_r_bound is None or c_r <= c_r_bound))
        if not clauses[4]:
            notes.append(f"clause 4: area monotone={monotone}, C_R={c_r:.6g}, bound={c_r_bound}")

        inner = curve.R(mid[1:-1])
        arg = np.arctan2(inner[:, 1], inner[:, 0])
        offset = (arg - phi + np.pi) % (2 * np.pi) - np.pi
        clauses[5] = bool(np.all(np.abs(offset) < beta) and np.all(np.linalg.norm(inner, axis=-1) > 0))
        if not clauses[5]:
            notes.append(f"clause 5: max |Arg(R) - phi| = {np.max(np.abs(offset)):.6g} vs beta = {beta:.6g}")
    except Exception as exc:  # certificates report, they do not raise
        notes.append(f"evaluation failed: {exc!r}")

    for k in range(1, 6):
        clauses.setdefault(k, False)
    failed = [k for k in range(1, 6) if not clauses[k]]
    return DropCertificate(not failed, clauses, failed, c_r, limit, monotone, cubic, tau0,
                           times, area_s, exc_s, notes)


def _integral_of_generator(curve, t2):
    cuts = _split_points(curve, 0.0, t2)
    total = np.zeros(2)
    for a, b in zip(cuts[:-1], cuts[1:]):
        for comp in range(2):
            def estimate(m, a=a, b=b, comp=comp):
                t = np.linspace(a, b, m + 1)
                return _simpson(_evaluate_one_sided(curve.r, a, b, t)[..., comp], (b - a) / m)
            total[comp] += _refine(estimate, 1e-15, 1e-13)[0]
    return total


def is_adapted(curve, geom):
    """True when the drop sits in the negative sector of a form with geometry ``geom``."""
    return bool(abs(wrap_half_turn(curve.phase - geom.phi)) <= 1e-12 and curve.beta <= geom.beta + 1e-12)
