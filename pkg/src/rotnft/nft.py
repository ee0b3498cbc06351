"""Neighboring feasible trajectories.

Given a reference process that leaves ``C = {h <= 0}``, the construction keeps the
reference up to the first exit time ``tau1``, inserts a fast rotational leg of
duration ``tau(d)`` that pushes the state inside along the bracket direction, and
then replays the reference control with delay ``tau(d)``. Far from the singular set
the rotational leg is replaced by a constant inward control.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .drops import make_circle_drop, make_pointed_drop, validate_drop
from .geometry import ConfigurationError, boundary_residual, bracket_transversality, lambda_matrices
from .quadform import FormClass, classify, geometry, wrap_turn
from .rotation import make_rotational
from .simulate import (
    ControlFunction,
    ControlSegment,
    Process,
    descent_check,
    drop_cubic_constant,
    integrate,
    rotational_segment,
    violation,
)


class SelectionCase(Enum):
    H5I = "H5i"
    H5II_A = "H5ii_A"
    H5II_B = "H5ii_B"
    FAR = "FarFromS"


class AssumptionViolation(ValueError):
    """The second-order form is positive somewhere near the point; carries the form."""

    def __init__(self, message, point, form):
        super().__init__(f"{message} (form {form})")
        self.point = point
        self.form = form


class NFTFailure(RuntimeError):
    """No certified construction within budget; ``certificate`` explains why."""

    def __init__(self, message, certificate):
        super().__init__(f"construction failed: {message}")
        self.certificate = certificate


@dataclass
class DropSelection:
    drop: object
    sign_omega: int
    k_x: float
    case: SelectionCase
    psi_x: float
    anchor: np.ndarray
    distance: float
    residual: np.ndarray
    transversality: float
    form_geometry: object = None
    inward: np.ndarray = None


def _sign_from(trans):
    return -1 if trans > 0 else 1


def select_drop_params(sys, constraint, singular, x, eps, tau0=2 * np.pi, tie_tol=1e-9):
    """Drop, rotation sign and first-order coefficient ``k_x`` for a start at ``x``.

    Far from the singular set (distance ``>= eps``) no drop is needed and the inward
    direction ``-g / max(|g|, 1)`` with ``g = (grad h . f1, grad h . f2)(x)`` is returned.
    Near it the form is classified at the projection of ``x``: semidefinite or
    definite forms take a circle drop starting along ``-g``; indefinite forms take a
    pointed drop on the negative sector of the form at ``x`` (or its antipode) whose
    first direction of travel ``e`` has ``g . e < 0``. When both sectors leave
    ``g . e`` at zero the half-amplitude is halved. ``k_x = -g . e / |g|``.
    """
    x = np.asarray(x, dtype=float)
    g = boundary_residual(sys, constraint, x)
    gn = float(np.linalg.norm(g))
    psi = float(np.arctan2(g[1], g[0]))
    dist = float(singular.distance(x))
    if dist >= eps:
        trans = float(bracket_transversality(sys, constraint, x))
        return DropSelection(None, _sign_from(trans), 1.0, SelectionCase.FAR, psi, x, dist, g, trans,
                             inward=-g / max(gn, 1.0))

    anchor = x if dist == 0.0 else np.asarray(singular.project(x), dtype=float)
    trans = float(bracket_transversality(sys, constraint, anchor))
    sign = _sign_from(trans)
    form0 = lambda_matrices(sys, constraint, anchor).form
    cls0 = classify(form0)
    if not cls0.non_positive:
        raise AssumptionViolation("assumption (H5) violated at x", x, form0)
    small = gn <= tie_tol * max(1.0, float(np.linalg.norm(constraint.gradient(x))))

    if cls0 is not FormClass.INDEFINITE:
        # circle drop with r(0) = -g/|g|; r(0) = (cos(phi - pi/2), sin(phi - pi/2)) and r is smooth at 0
        phi = 0.0 if small else psi + 1.5 * np.pi
        drop = make_circle_drop(tau0, float(wrap_turn(phi)))
        k_x = 1.0 if small else float(-g @ initial_direction(drop, sign) / gn)
        return DropSelection(drop, sign, k_x, SelectionCase.H5I, psi, anchor, dist, g, trans,
                             form_geometry=geometry(form0) if form0.scale > 0 else None)

    form = lambda_matrices(sys, constraint, x).form
    if classify(form) is not FormClass.INDEFINITE:
        form = form0
    geom = geometry(form)
    phi_s, beta_s = geom.phi, geom.beta
    # the negative sector and its antipode are both admissible; keep the one whose
    # first direction of travel points inside
    case, beta = SelectionCase.H5II_A, beta_s
    drops = [make_pointed_drop(tau0, float(wrap_turn(p)), beta) for p in (phi_s, phi_s + np.pi)]
    tests = [float(g @ initial_direction(d, sign)) for d in drops]
    if not small and abs(tests[0]) <= tie_tol * gn:
        case, beta = SelectionCase.H5II_B, 0.5 * beta_s
        drops = [make_pointed_drop(tau0, float(wrap_turn(p)), beta) for p in (phi_s, phi_s + np.pi)]
        tests = [float(g @ initial_direction(d, sign)) for d in drops]
    drop = drops[int(np.argmin(tests))]
    k_x = 1.0 if small else -min(tests) / gn
    return DropSelection(drop, sign, k_x, case, psi, anchor, dist, g, trans, form_geometry=geom)


def initial_direction(drop, sign):
    """First control value of ``r(omega t)``: ``r(0+)`` for ``omega > 0`` and the end
    value ``r(tau0-)`` for ``omega < 0``, where the drop is travelled backwards."""
    return drop.r(np.array([sign * 1e-12 * drop.period]))[0]


# --- construction -------------------------------------------------------------


@dataclass
class NFTConfig:
    """Tuning of the construction.

    ``eps`` is the radius of the neighbourhood of the singular set handled by
    rotations; ``gamma`` scales the measured descent constant in the seed
    ``tau(d) = min(sqrt(2 d / (gamma alpha)), 1)``; ``budget`` caps the number of
    integrated candidates per leg; ``omega_doublings`` is how many frequencies are
    tried per duration. ``leg_fractions`` are the fractions of a drop period covered
    by one leg: whole periods return the first integrals to zero, shorter legs keep
    the first-order term inward when the exit point is off the singular set.
    """
    tau0: float = 2 * np.pi
    eps: float = 0.5
    gamma: float = 1.0
    budget: int = 20
    omega_doublings: int = 2
    leg_fractions: tuple = (1.0, 0.5)
    steps_per_period: int = 100
    step: float = None
    max_legs: int = 8
    d_max: float = 1.0
    alpha_tol: float = 1e-9
    tie_tol: float = 1e-9


@dataclass
class Attempt:
    tau: float
    omega: float
    max_h: float
    leg_max_h: float
    first_violation: float
    certified: bool


@dataclass
class Leg:
    tau1: float
    d: float
    tau_d: float
    omega: float
    selection: DropSelection
    alpha_hat: float
    omega_floor: float
    attempts: list


@dataclass
class EstimateCertificate:
    sup_distance: float
    control_l1: float
    derivative_l1: float
    delayed_control_modulus: float
    delayed_derivative_modulus: float
    d: float
    tau_d: float
    K: float
    K_prime: float
    K_tau: float


@dataclass
class NFTResult:
    y: Process
    w: ControlFunction
    reference: Process
    tau_d: float
    tau1: float
    d: float
    success: bool
    margin: float
    legs: list = field(default_factory=list)
    estimates: EstimateCertificate = None

    @property
    def selection(self):
        return self.legs[0].selection if self.legs else None

    def recheck(self, constraint):
        """Recompute the feasibility margin from the stored process."""
        return _margin(self.y, constraint, self.tau1)


def _clip_segments(control, a, b, shift=0.0):
    """Segments of ``control`` on ``[a, b]`` moved later by ``shift``."""
    out = []
    for s in control.segments:
        lo, hi = max(s.start, a), min(s.end, b)
        if hi <= lo:
            continue
        fun = s.fun if shift == 0.0 else (lambda t, f=s.fun: f(np.asarray(t) - shift))
        corners = tuple(c + shift for c in s.corners if lo < c < hi)
        out.append(ControlSegment(lo + shift, hi + shift, fun, s.period, s.label, corners))
    return out


def _constant_segment(value, a, b, label):
    value = np.asarray(value, dtype=float)
    return ControlSegment(a, b, lambda t: np.broadcast_to(value, np.shape(t) + (2,)).copy(), None, label)


def spliced_control(reference_control, tau1, tau_d, leg_segment_fn):
    """``w`` equal to the reference on ``[0, tau1)``, the leg on ``[tau1, tau1 + tau_d]``
    and the reference delayed by ``tau_d`` afterwards (truncated at the horizon)."""
    T = reference_control.horizon
    end = min(tau1 + tau_d, T)
    segs = _clip_segments(reference_control, 0.0, tau1)
    segs.append(leg_segment_fn(tau1, end))
    if end < T:
        segs += _clip_segments(reference_control, tau1, T - tau_d, shift=tau_d)
    return ControlFunction(segs)


def _splice(reference, sys, w, tau1, step, steps_per_period):
    """Copy reference nodes up to ``tau1`` and integrate the rest under ``w``."""
    j = int(np.searchsorted(reference.t, tau1, side="right") - 1)
    tail = integrate(sys, w, reference.x[j], step=step, start=float(reference.t[j]),
                     min_steps_per_period=reference.min_steps_per_period, steps_per_period=steps_per_period)
    t = np.concatenate([reference.t[:j + 1], tail.t[1:]])
    x = np.concatenate([reference.x[:j + 1], tail.x[1:]])
    return Process(t, x, w, sys, step, reference.min_steps_per_period, "rk4")


def _samples_after(proc, constraint, tau1):
    """``h`` at the nodes after ``tau1`` and at the midpoints between them."""
    i = int(np.searchsorted(proc.t, tau1, side="right"))
    t_nodes = proc.t[i:]
    h_nodes = constraint.value(proc.x[i:])
    left = proc.t[max(i - 1, 0):-1]
    mids = 0.5 * (left + proc.t[max(i - 1, 0) + 1:])
    mids = mids[mids > tau1]
    h_mids = np.array([float(constraint.value(proc.state_at(m))) for m in mids])
    t = np.concatenate([t_nodes, mids])
    h = np.concatenate([h_nodes, h_mids])
    order = np.argsort(t)
    return t[order], h[order]


def _margin(proc, constraint, tau1):
    t, h = _samples_after(proc, constraint, tau1)
    return -float(h.max()) if h.size else np.inf


def _descent_constant(sys, constraint, sel, x1, omega_probe, cfg):
    """Measured ``alpha`` for the seed of ``tau(d)``; the analytic value when the
    measurement does not certify descent."""
    C = drop_cubic_constant(sel.drop)
    analytic = 0.5 * C * cfg.tau0 * abs(sel.transversality)
    rep = descent_check(sys, constraint, sel.drop, x1, omega_probe, steps_per_period=200, log_samples=40)
    return (rep.c if rep.holds and rep.c > 0 else analytic), analytic


def _candidates(sign, floor, tau, cfg):
    """``(leg length, omega)`` pairs with ``|omega| >= floor``.

    Whole-period legs of length ``tau`` run ``k`` drop periods, ``k`` doubling from
    the smallest admissible integer. A partial leg covers the fraction ``q`` of one
    period and is shortened to ``q tau0 / floor`` when ``tau`` is too long for that.
    """
    out = []
    for q in cfg.leg_fractions:
        if q >= 1:
            base = q * cfg.tau0 / tau
            k0 = max(1, int(np.ceil(floor / base - 1e-12)))
            out += [(tau, sign * k0 * 2 ** j * base) for j in range(cfg.omega_doublings + 1)]
        else:
            length = min(tau, q * cfg.tau0 / floor)
            out.append((length, sign * q * cfg.tau0 / length))
    return out


def _failure_certificate(reason, leg_info, attempts, extra=None):
    best = min(attempts, key=lambda a: a.max_h) if attempts else None
    cert = {"reason": reason, "best_attempt": best, "attempts": attempts}
    cert.update(leg_info)
    if extra:
        cert.update(extra)
    return cert


def _one_leg(sys, constraint, singular, reference, cfg, step):
    """Search one insertion after the first exit of ``reference``.

    Returns ``(y, w, leg, certified)``; uncertified results are the best candidate
    whose own first exit comes after its leg, usable for a further leg.
    """
    rep = violation(reference, constraint)
    tau1, d = rep.tau1, rep.d
    T = reference.horizon
    x1 = reference.state_at(tau1)
    sel = select_drop_params(sys, constraint, singular, x1, cfg.eps, cfg.tau0, cfg.tie_tol)
    info = {"tau1": tau1, "d": d, "x1": x1.tolist(), "case": sel.case.value,
            "distance_to_singular_set": sel.distance, "transversality": sel.transversality,
            "residual": sel.residual.tolist()}

    if sel.case is SelectionCase.FAR:
        gn = float(np.linalg.norm(sel.residual))
        alpha_hat = gn * gn / max(gn, 1.0)
        omega_floor = np.nan
        if alpha_hat <= cfg.alpha_tol:
            raise NFTFailure("boundary residual vanishes away from the singular set", _failure_certificate(
                "first-order inward direction unavailable", info, []))
    else:
        if abs(sel.transversality) <= cfg.alpha_tol:
            raise NFTFailure("grad h . [f1, f2] vanishes at the exit point", _failure_certificate(
                "no bracket transversality: rotations cannot push inside at second order", info, [],
                {"obstruction": "H4"}))
        c_r = validate_drop(sel.drop).c_r
        omega_floor = 2 * sel.drop.lip * c_r / abs(sel.transversality)
        alpha_hat, _ = _descent_constant(sys, constraint, sel, x1, sel.sign_omega * max(omega_floor, cfg.tau0), cfg)

    tau = min(np.sqrt(2 * d / (cfg.gamma * alpha_hat)), 1.0)
    attempts = []
    best = None
    done = False
    while len(attempts) < cfg.budget and not done:
        truncated = tau1 + tau >= T
        if sel.case is SelectionCase.FAR:
            cands = [(tau, np.nan)]
        else:
            cands = _candidates(sel.sign_omega, omega_floor, tau, cfg)
        for length, omega in cands:
            if len(attempts) >= cfg.budget:
                break
            if sel.case is SelectionCase.FAR:
                leg_fn = lambda a, b: _constant_segment(sel.inward, a, b, "inward")
            else:
                rot = make_rotational(sel.drop, omega)
                leg_fn = lambda a, b, rot=rot: rotational_segment(rot, a, b, "rotational leg")
            w = spliced_control(reference.control, tau1, length, leg_fn)
            y = _splice(reference, sys, w, tau1, step, cfg.steps_per_period)
            t, h = _samples_after(y, constraint, tau1)
            span = min(length, T - tau1)
            leg_end = tau1 + span
            on_leg = t <= leg_end
            bad = np.nonzero(h >= 0)[0]
            first = float(t[bad[0]]) if bad.size else np.inf
            att = Attempt(length, float(omega), float(h.max()), float(h[on_leg].max()) if on_leg.any() else -np.inf,
                          first, bad.size == 0)
            attempts.append(att)
            if att.certified:
                leg = Leg(tau1, d, span, float(omega), sel, alpha_hat, omega_floor, attempts)
                return y, w, leg, True
            if first > leg_end and (best is None or first > best[3].first_violation):
                best = (y, w, Leg(tau1, d, span, float(omega), sel, alpha_hat, omega_floor, attempts), att)
        done = truncated
        tau *= 2.0
    if best is not None:
        return best[0], best[1], best[2], False
    raise NFTFailure(f"no certified leg in {len(attempts)} candidates",
                     _failure_certificate("every candidate leaves C during its own leg", info, attempts))


def construct_nft(sys, constraint, singular, reference, config=None):
    """Feasible process near ``reference`` (a Process), with certified ``h < 0`` after
    the first exit time.

    Raises
    ------
    ConfigurationError
        If the reference starts outside ``C`` or violates by more than ``config.d_max``.
    NFTFailure
        If no candidate is certified within the budget; the exception carries the
        certificate of the best attempt and the local obstruction data.
    """
    cfg = config or NFTConfig()
    h0 = float(constraint.value(reference.x[0]))
    if h0 > 0:
        raise ConfigurationError(f"reference starts outside C (h = {h0:.3g})")
    rep = violation(reference, constraint)
    if rep.feasible:
        res = NFTResult(reference, reference.control, reference, 0.0, rep.tau1, 0.0, True, _margin(reference, constraint, 0.0))
        res.estimates = verify_estimates(res, reference)
        return res
    if rep.d > cfg.d_max:
        raise ConfigurationError(f"violation d = {rep.d:.3g} exceeds the threshold {cfg.d_max}")
    step = cfg.step or reference.step
    current, legs = reference, []
    for _ in range(cfg.max_legs):
        y, w, leg, certified = _one_leg(sys, constraint, singular, current, cfg, step)
        legs.append(leg)
        if certified:
            res = NFTResult(y, w, reference, sum(l.tau_d for l in legs), rep.tau1, rep.d, True,
                            _margin(y, constraint, rep.tau1), legs)
            res.estimates = verify_estimates(res, reference)
            return res
        current = y
    attempts = [a for l in legs for a in l.attempts]
    raise NFTFailure(f"still infeasible after {cfg.max_legs} legs", _failure_certificate(
        "repeated legs did not remove the violation", {"tau1": rep.tau1, "d": rep.d}, attempts))


# --- estimates ----------------------------------------------------------------


def _states_on(proc, t):
    idx = np.searchsorted(proc.t, t)
    out = np.empty((len(t), proc.x.shape[1]))
    for n, (i, ti) in enumerate(zip(idx, t)):
        if i < len(proc.t) and proc.t[i] == ti:
            out[n] = proc.x[i]
        else:
            out[n] = proc.state_at(ti)
    return out


def _midpoint_l1(values, h):
    return float(np.sum(np.linalg.norm(values, axis=-1) * h))


def verify_estimates(result, reference):
    """Distances between the constructed process and the reference.

    Sup-norm on the union of both grids; L1 gaps of controls and velocities by the
    midpoint rule on that grid (all control breakpoints are nodes of it). The delayed
    moduli compare the reference control and velocity with their ``tau_d`` shifts on
    ``(tau1 + tau_d, T]``. ``K = sup / sqrt(d)``, ``K_prime = derivative gap / sqrt(d)``
    and ``K_tau = tau_d / sqrt(d)`` (all 0 when ``d = 0``).
    """
    y, sys = result.y, reference.system
    t = np.union1d(y.t, reference.t)
    sup = float(np.max(np.linalg.norm(_states_on(y, t) - _states_on(reference, t), axis=-1)))
    h = np.diff(t)
    m = 0.5 * (t[:-1] + t[1:])
    w_m, u_m = y.control.evaluate(m), reference.control.evaluate(m)
    ym, xm = _states_on(y, m), _states_on(reference, m)
    control_l1 = _midpoint_l1(w_m - u_m, h)
    derivative_l1 = _midpoint_l1(sys.velocity(ym, w_m) - sys.velocity(xm, u_m), h)

    tau_d = result.tau_d
    a = result.tau1 + tau_d
    mod_u = mod_v = 0.0
    if tau_d > 0 and a < reference.horizon:
        keep = m > a
        shifted = m[keep] - tau_d
        u_s = reference.control.evaluate(shifted)
        x_s = _states_on(reference, shifted)
        mod_u = _midpoint_l1(u_s - u_m[keep], h[keep])
        mod_v = _midpoint_l1(sys.velocity(x_s, u_s) - sys.velocity(xm[keep], u_m[keep]), h[keep])
    root = np.sqrt(result.d)
    ratio = (lambda v: v / root) if root > 0 else (lambda v: 0.0)
    return EstimateCertificate(sup, control_l1, derivative_l1, mod_u, mod_v, result.d, tau_d,
                               ratio(sup), ratio(derivative_l1), ratio(tau_d))


@dataclass
class SweepReport:
    d: np.ndarray
    sup_distance: np.ndarray
    tau_d: np.ndarray
    derivative_l1: np.ndarray
    slope: float
    K: float
    K_prime: float
    results: list


def fit_exponent(d, values):
    """Least-squares slope of ``log values`` against ``log d`` over ``d > 0``."""
    d, values = np.asarray(d, dtype=float), np.asarray(values, dtype=float)
    keep = (d > 0) & (values > 0)
    if keep.sum() < 2:
        return np.nan
    return float(np.polyfit(np.log(d[keep]), np.log(values[keep]), 1)[0])


def sweep_nft(sys, constraint, singular, references, config=None):
    """Construct and measure over a family of references; fits the distance exponent."""
    results = [construct_nft(sys, constraint, singular, ref, config) for ref in references]
    d = np.array([r.d for r in results])
    sup = np.array([r.estimates.sup_distance for r in results])
    tau = np.array([r.tau_d for r in results])
    der = np.array([r.estimates.derivative_l1 for r in results])
    pos = d > 0
    K = float(np.max(sup[pos] / np.sqrt(d[pos]))) if pos.any() else 0.0
    Kp = float(np.max(der[pos] / np.sqrt(d[pos]))) if pos.any() else 0.0
    return SweepReport(d, sup, tau, der, fit_exponent(d, sup), K, Kp, results)
