"""Fixed-step integration of control-affine systems, constraint violation, and the
bracket-displacement and descent checks for rotational controls."""
import csv
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConfigurationError, bracket_transversality, lie_bracket
from .rotation import make_rotational


# --- controls -----------------------------------------------------------------


@dataclass(frozen=True)
class ControlSegment:
    """``fun`` maps absolute times to controls on ``[start, end)``; ``period`` is the
    fastest oscillation period inside the segment (``None`` if it does not oscillate);
    ``corners`` are times where the control jumps and the grid must have a node."""
    start: float
    end: float
    fun: object
    period: float = None
    label: str = ""
    corners: tuple = ()


class ControlFunction:
    """Piecewise control on ``[0, T]`` with values in the closed unit disc."""

    def __init__(self, segments, check_samples=257):
        segments = sorted(segments, key=lambda s: s.start)
        if not segments:
            raise ConfigurationError("control needs at least one segment")
        if segments[0].start != 0.0:
            raise ConfigurationError("control segments must start at t = 0")
        for a, b in zip(segments[:-1], segments[1:]):
            if a.end != b.start:
                raise ConfigurationError(f"segments [{a.start}, {a.end}] and [{b.start}, {b.end}] do not tile")
        for s in segments:
            if not s.end > s.start:
                raise ConfigurationError(f"empty segment [{s.start}, {s.end}]")
        self.segments = tuple(segments)
        self.starts = np.array([s.start for s in segments])
        if check_samples:
            for s in segments:
                t = np.linspace(s.start, s.end, check_samples)[:-1]
                norm = np.linalg.norm(s.fun(t), axis=-1)
                if np.any(norm > 1 + 1e-12):
                    raise ConfigurationError(f"control leaves the unit disc on segment '{s.label}' "
                                             f"(max |u| = {norm.max():.6g})")

    @property
    def horizon(self):
        return self.segments[-1].end

    @property
    def breakpoints(self):
        return np.array([s.start for s in self.segments] + [self.horizon])

    @property
    def corners(self):
        c = [np.asarray(s.corners, dtype=float) for s in self.segments]
        return np.concatenate(c) if c else np.empty(0)

    def segment_index(self, t):
        idx = np.searchsorted(self.starts, np.asarray(t, dtype=float), side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def evaluate(self, t, ref=None):
        """Controls at ``t``; the segment is chosen by ``ref`` (defaults to ``t``)."""
        t = np.asarray(t, dtype=float)
        idx = self.segment_index(t if ref is None else ref)
        out = np.empty(t.shape + (2,))
        for i in np.unique(idx):
            mask = idx == i
            out[mask] = self.segments[i].fun(t[mask])
        return out

    def __call__(self, t):
        return self.evaluate(t)

    @classmethod
    def single(cls, fun, horizon, period=None, label=""):
        return cls([ControlSegment(0.0, float(horizon), fun, period, label)])

    @classmethod
    def constant(cls, value, horizon, label="constant"):
        value = np.asarray(value, dtype=float)
        return cls.single(lambda t: np.broadcast_to(value, np.shape(t) + (2,)).copy(), horizon, None, label)

    @classmethod
    def rotational(cls, rot, horizon, label="rotational"):
        return cls([rotational_segment(rot, 0.0, float(horizon), label)])


def rotational_segment(rot, start, end, label="rotational"):
    """Segment applying ``rot`` with its own clock starting at ``start``."""
    return ControlSegment(start, end, lambda t: rot(np.asarray(t) - start), rot.period, label,
                          tuple(rot.corner_times(start, end, start)))


# --- integration --------------------------------------------------------------


@dataclass
class Process:
    t: np.ndarray
    x: np.ndarray
    control: ControlFunction
    system: object
    step: float
    min_steps_per_period: int
    method: str = "rk4"
    error_estimate: float = None

    @property
    def horizon(self):
        return self.t[-1]

    @property
    def u(self):
        return self.control(self.t)

    def h_values(self, constraint):
        return constraint.value(self.x)

    def state_at(self, t):
        """State at ``t`` by one RK4 step from the preceding grid node."""
        t = float(t)
        i = int(np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 2))
        if t == self.t[i]:
            return self.x[i].copy()
        ref = 0.5 * (self.t[i] + self.t[i + 1])
        return _rk4_step(self.system, self.control, self.x[i], self.t[i], t - self.t[i], ref)

    def write_csv(self, path, constraint=None):
        n = self.x.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + ["u1", "u2"] + (["h"] if constraint else [])
        u = self.u
        hv = self.h_values(constraint) if constraint else None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, ti in enumerate(self.t):
                row = [repr(float(ti))] + [repr(float(v)) for v in self.x[i]] + [repr(float(v)) for v in u[i]]
                if constraint:
                    row.append(repr(float(hv[i])))
                w.writerow(row)


def _rk4_step(sys, control, x, t, h, ref):
    nudge = 1e-12 * h
    times = np.array([t + nudge, t + 0.5 * h, t + h - nudge])
    u0, um, u1 = control.evaluate(times, np.full(3, ref))
    k1 = sys.velocity(x, u0)
    k2 = sys.velocity(x + 0.5 * h * k1, um)
    k3 = sys.velocity(x + 0.5 * h * k2, um)
    k4 = sys.velocity(x + h * k3, u1)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _segment_steps(control, step, steps_per_period):
    """Step used inside each segment: ``step``, refined to resolve rotations when asked."""
    out = []
    for s in control.segments:
        h = step
        if steps_per_period and s.period is not None:
            h = min(h, s.period / steps_per_period)
        out.append(h)
    return out


def time_grid(control, step, start=0.0, end=None, extra_times=None, steps_per_period=None):
    """Grid through every segment boundary and control corner with spacing at most
    the segment step."""
    end = control.horizon if end is None else end
    seg_steps = _segment_steps(control, step, steps_per_period)
    cuts = np.concatenate([control.breakpoints, control.corners])
    cuts = np.unique(np.concatenate([[start, end], cuts[(cuts > start) & (cuts < end)]]))
    cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-12 * max(1.0, abs(end))])]
    cuts[-1] = end
    pieces = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        h = seg_steps[int(control.segment_index(0.5 * (a + b)))]
        pieces.append(np.linspace(a, b, max(1, int(np.ceil((b - a) / h - 1e-9))) + 1)[:-1])
    grid = np.concatenate(pieces + [[end]])
    if extra_times is not None:
        extra = np.asarray(extra_times, dtype=float)
        grid = np.unique(np.concatenate([grid, extra[(extra > start) & (extra < end)]]))
    return grid


def check_resolution(control, step, min_steps_per_period=50, steps_per_period=None):
    for s, h in zip(control.segments, _segment_steps(control, step, steps_per_period)):
        if s.period is not None and s.period / h < min_steps_per_period * (1 - 1e-9):
            raise ConfigurationError(
                f"under-resolved rotation: segment '{s.label}' has period {s.period:.3g} but step {h:.3g} "
                f"gives {s.period / h:.1f} < {min_steps_per_period} steps per period")


def integrate(sys, control, x0, horizon=None, step=1e-3, min_steps_per_period=50, error_estimate=False,
              extra_times=None, start=0.0, steps_per_period=None):
    """Classical fixed-step RK4 from ``(start, x0)`` on a grid aligned with the control
    segments and corners.

    ``steps_per_period`` refines the step inside oscillating segments only; without
    it the global ``step`` must already resolve every rotation.

    Raises
    ------
    ConfigurationError
        If a rotational segment has fewer than ``min_steps_per_period`` steps per period.
    """
    horizon = control.horizon if horizon is None else float(horizon)
    if horizon > control.horizon * (1 + 1e-12):
        raise ConfigurationError(f"control defined on [0, {control.horizon}] but horizon is {horizon}")
    check_resolution(control, step, min_steps_per_period, steps_per_period)
    t = time_grid(control, step, start, horizon, extra_times, steps_per_period)
    x = _march(sys, control, np.asarray(x0, dtype=float), t)
    err = None
    if error_estimate:
        fine = np.empty(2 * len(t) - 1)
        fine[0::2] = t
        fine[1::2] = 0.5 * (t[:-1] + t[1:])
        xf = _march(sys, control, np.asarray(x0, dtype=float), fine)[0::2]
        err = float(np.max(np.abs(xf - x))) / 15.0
    return Process(t, x, control, sys, step, min_steps_per_period, "rk4", err)


def _march(sys, control, x0, t):
    h = np.diff(t)
    ref = 0.5 * (t[:-1] + t[1:])
    # stages at the step ends take one-sided limits, so a jump on a node is not seen twice
    nudge = 1e-12 * h
    u0 = control.evaluate(t[:-1] + nudge, ref)
    um = control.evaluate(ref, ref)
    u1 = control.evaluate(t[1:] - nudge, ref)
    x = np.empty((len(t), len(x0)))
    x[0] = x0
    vel = sys.velocity
    for i in range(len(h)):
        xi, hi = x[i], h[i]
        k1 = vel(xi, u0[i])
        k2 = vel(xi + 0.5 * hi * k1, um[i])
        k3 = vel(xi + 0.5 * hi * k2, um[i])
        k4 = vel(xi + hi * k3, u1[i])
        x[i + 1] = xi + hi / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


# --- violation ----------------------------------------------------------------


@dataclass
class ViolationReport:
    d: float
    tau1: float
    feasible: bool
    argmax: float


def violation(proc, constraint, rel_tol=1e-10):
    """Maximal violation ``d`` and first violation time ``tau1`` (``T`` when feasible).

    ``tau1`` is refined by bisection on ``h`` between the bracketing grid nodes and
    returned as the last bracketing time with ``h <= 0``, within ``rel_tol * T`` of the
    infimum.
    """
    hv = proc.h_values(constraint)
    T = float(proc.t[-1])
    k = int(np.argmax(hv))
    d = max(float(hv[k]), 0.0)
    if d == 0.0:
        return ViolationReport(0.0, T, True, float(proc.t[k]))
    first = int(np.argmax(hv > 0))
    if first == 0:
        return ViolationReport(d, float(proc.t[0]), False, float(proc.t[k]))
    lo, hi = float(proc.t[first - 1]), float(proc.t[first])
    tol = rel_tol * T
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if constraint.value(proc.state_at(mid)) > 0:
            hi = mid
        else:
            lo = mid
    # the left end keeps h <= 0, so a splice there starts inside C
    return ViolationReport(d, lo, False, float(proc.t[k]))


# --- displacement and descent -------------------------------------------------


def drop_cubic_constant(drop, samples=4096):
    """Largest ``C`` with ``Area(R)|_0^s >= C s^3`` on the sampled ``(0, tau0]``."""
    s = np.linspace(0.0, drop.period, samples + 1)[1:]
    return float(np.min(drop.area_closed(s) / s ** 3))


@dataclass
class DisplacementReport:
    taus: np.ndarray
    omegas: np.ndarray
    displacement: np.ndarray
    predicted: np.ndarray
    residual: np.ndarray
    exponent: float
    B: float
    notes: list = field(default_factory=list)


def bracket_displacement_check(sys, drop, x0, taus, k=1, sign=1, steps_per_period=400):
    """Compare ``y(tau) - x0`` with ``sgn(omega) tau^2 A(tau0)/(k tau0^2) [f1, f2](x0)``.

    ``|omega| = k tau0 / tau``. Fits the exponent of the residual over ``taus`` and
    reports ``B = max |E| / (|r|_inf^2 tau^3)`` (``|r| = 1`` for drops).
    """
    x0 = np.asarray(x0, dtype=float)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    sign = 1.0 if sign > 0 else -1.0
    bracket = lie_bracket(sys, x0)
    full_area = float(drop.area_closed(np.float64(drop.period)))
    omegas = sign * k * drop.period / taus
    disp, pred = [], []
    for tau, omega in zip(taus, omegas):
        rot = make_rotational(drop, omega)
        ctrl = ControlFunction.rotational(rot, tau)
        step = rot.period / steps_per_period
        proc = integrate(sys, ctrl, x0, step=step)
        disp.append(proc.x[-1] - x0)
        pred.append(sign * tau ** 2 * full_area / (k * drop.period ** 2) * bracket)
    disp, pred = np.array(disp), np.array(pred)
    res = np.linalg.norm(disp - pred, axis=-1)
    notes = []
    scale = np.linalg.norm(disp, axis=-1)
    usable = res > 1e-10 * np.maximum(scale, 1e-300)  # below this the integrator floor dominates
    if usable.sum() >= 2:
        exponent = float(np.polyfit(np.log(taus[usable]), np.log(res[usable]), 1)[0])
    else:
        exponent = np.nan
        notes.append("residual at round-off level; no exponent fitted")
    B = float(np.max(res / taus ** 3))
    return DisplacementReport(taus, omegas, disp, pred, res, exponent, B, notes)


@dataclass
class DescentReport:
    t: np.ndarray
    dh: np.ndarray
    holds: bool
    c: float
    c_reference: float
    alpha: float
    cubic_constant: float
    slope: float
    tau: float
    omega: float
    counterexample: dict = None


def descent_check(sys, constraint, drop, x0, omega, tau=None, steps_per_period=400, log_samples=80,
                  smallest=1e-12, fit_window=(1e-3, 1e-1)):
    """Integrate ``u = r(omega t)`` from ``x0`` on ``(0, tau]`` and test
    ``h(y(t)) - h(x0) <= -c t^3 / tau`` for a measured ``c > 0``.

    ``tau`` defaults to ``tau0 / |omega|``. The grid adds log-spaced times down to
    ``smallest * tau`` so violations of higher order near ``t = 0`` are seen.
    The reference constant is ``tau0 C alpha`` with ``C`` the drop's cubic area
    constant and ``alpha = |grad h . [f1, f2](x0)|``.
    """
    x0 = np.asarray(x0, dtype=float)
    rot = make_rotational(drop, omega)
    tau = rot.period if tau is None else float(tau)
    ctrl = ControlFunction.rotational(rot, tau)
    extra = np.logspace(np.log10(smallest * tau), 0.0 + np.log10(tau), log_samples)
    proc = integrate(sys, ctrl, x0, step=rot.period / steps_per_period, extra_times=extra)
    t = proc.t[1:]
    dh = constraint.value(proc.x[1:]) - float(constraint.value(x0))
    holds = bool(np.all(dh < 0))
    c = float(np.min(-dh * tau / t ** 3))
    alpha = float(abs(bracket_transversality(sys, constraint, x0)))
    C = drop_cubic_constant(drop)
    window = (t >= fit_window[0] * tau) & (t <= fit_window[1] * tau) & (dh < 0)
    slope = float(np.polyfit(np.log(t[window]), np.log(-dh[window]), 1)[0]) if window.sum() >= 2 else np.nan
    counter = None
    if not holds:
        bad = np.nonzero(dh >= 0)[0]
        counter = {"first_time": float(t[bad[0]]), "dh_at_first": float(dh[bad[0]]),
                   "worst_time": float(t[bad[np.argmax(dh[bad])]]), "worst_dh": float(dh[bad].max()),
                   "violating_samples": int(bad.size), "omega": float(omega), "x0": x0.tolist()}
    return DescentReport(t, dh, holds, c, drop.period * C * alpha, alpha, C, slope, tau, float(omega), counter)
