import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from rotnft.drops import make_circle_drop, make_pointed_drop
from rotnft.geometry import ConfigurationError, Constraint, ControlAffineSystem
from rotnft.rotation import make_rotational
from rotnft.scenarios import brockett_flat, brockett_nonlinear, brockett_power
from rotnft.simulate import (
    ControlFunction,
    ControlSegment,
    bracket_displacement_check,
    descent_check,
    integrate,
    rotational_segment,
    violation,
)


def uniform_rotation(omega, horizon):
    return ControlFunction.single(lambda t: np.stack([np.cos(omega * t), np.sin(omega * t)], axis=-1),
                                  horizon, 2 * np.pi / abs(omega))


def brockett_exact(omega, t):
    return np.stack([np.sin(omega * t) / omega, (1 - np.cos(omega * t)) / omega,
                     (omega * t - np.sin(omega * t)) / omega ** 2], axis=-1)


@pytest.mark.parametrize("omega", [2 * np.pi, -2 * np.pi])
def test_brockett_closed_form(omega):
    proc = integrate(brockett_flat().system, uniform_rotation(omega, 1.0), np.zeros(3), step=1e-3)
    assert np.max(np.abs(proc.x - brockett_exact(omega, proc.t))) <= 1e-8


def test_zero_control_keeps_state():
    x0 = np.array([0.3, -0.1, 0.2])
    proc = integrate(brockett_nonlinear().system, ControlFunction.constant([0.0, 0.0], 0.5), x0, step=0.01)
    assert np.array_equal(proc.x, np.tile(x0, (len(proc.t), 1)))


def test_integration_order_is_four():
    omega = 4 * np.pi
    sys = brockett_flat().system
    steps = np.array([1 / 200, 1 / 400, 1 / 800, 1 / 1600])
    errs = []
    for h in steps:
        proc = integrate(sys, uniform_rotation(omega, 0.5), np.zeros(3), step=h)
        errs.append(np.max(np.abs(proc.x - brockett_exact(omega, proc.t))))
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert 3.7 <= slope <= 4.3
    assert 12 <= errs[0] / errs[1] <= 20


def test_step_halving_error_estimate():
    omega = 4 * np.pi
    proc = integrate(brockett_flat().system, uniform_rotation(omega, 0.5), np.zeros(3), step=1 / 200,
                     error_estimate=True)
    true = np.max(np.abs(proc.x - brockett_exact(omega, proc.t)))
    assert 0.3 * true <= proc.error_estimate * 15 <= 3 * true


def test_under_resolved_rotation():
    with pytest.raises(ConfigurationError, match="under-resolved rotation"):
        integrate(brockett_flat().system, uniform_rotation(2 * np.pi * 100, 1.0), np.zeros(3), step=1e-3)


def test_control_validation():
    with pytest.raises(ConfigurationError, match="unit disc"):
        ControlFunction.constant([1.0, 1.0], 1.0)
    seg = lambda a, b: ControlSegment(a, b, lambda t: np.zeros(np.shape(t) + (2,)))
    with pytest.raises(ConfigurationError, match="tile"):
        ControlFunction([seg(0.0, 0.4), seg(0.5, 1.0)])
    with pytest.raises(ConfigurationError):
        ControlFunction([seg(0.1, 1.0)])
    with pytest.raises(ConfigurationError):
        integrate(brockett_flat().system, ControlFunction([seg(0.0, 1.0)]), np.zeros(3), horizon=2.0)


def test_segments_switch_exactly_at_boundaries():
    rot = make_rotational(make_circle_drop(0.1), 1.0)
    ctrl = ControlFunction([ControlSegment(0.0, 0.3, lambda t: np.tile([1.0, 0.0], (np.size(t), 1)).reshape(np.shape(t) + (2,))),
                            rotational_segment(rot, 0.3, 0.5),
                            ControlSegment(0.5, 1.0, lambda t: np.tile([0.0, -1.0], (np.size(t), 1)).reshape(np.shape(t) + (2,)))])
    assert np.allclose(ctrl(np.array([0.2999999])), [[1.0, 0.0]])
    assert np.allclose(ctrl(np.array([0.3])), rot(np.array([0.0])))
    assert np.allclose(ctrl(np.array([0.5])), [[0.0, -1.0]])
    proc = integrate(brockett_flat().system, ctrl, np.zeros(3), step=1e-3)
    assert 0.3 in proc.t and 0.5 in proc.t


def test_violation_positive_rotation_from_origin():
    sc = brockett_flat()
    omega = 2 * np.pi
    proc = integrate(sc.system, uniform_rotation(omega, 1.0), np.zeros(3), step=1e-3)
    rep = violation(proc, sc.constraint)
    assert not rep.feasible
    assert rep.tau1 <= 1e-10 * 1.0
    assert rep.d == pytest.approx(brockett_exact(omega, 1.0)[2], rel=1e-9)


def test_violation_negative_rotation_is_feasible():
    sc = brockett_flat()
    proc = integrate(sc.system, uniform_rotation(-2 * np.pi, 1.0), np.zeros(3), step=1e-3)
    rep = violation(proc, sc.constraint)
    assert rep.feasible and rep.d == 0.0 and rep.tau1 == 1.0


def test_violation_refines_crossing_time():
    sc = brockett_flat()
    omega, level = 2 * np.pi, 0.05
    h = Constraint(lambda x: np.asarray(x)[..., 2] - level, lambda x: np.array([0, 0, 1.0]), None)
    proc = integrate(sc.system, uniform_rotation(omega, 1.0), np.zeros(3), step=1e-2)
    rep = violation(proc, h)
    exact = brentq(lambda t: brockett_exact(omega, t)[2] - level, 0.01, 1.0, xtol=1e-15)
    assert abs(rep.tau1 - exact) <= 1e-8  # bisection 1e-10 T plus the integration error


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(0.1, 1.0))
def test_violation_monotone_in_horizon(T1, T2):
    sc = brockett_power(2.0)
    ctrl = uniform_rotation(7.0, 1.0)
    lo, hi = sorted((T1, T2))
    d = [violation(integrate(sc.system, ctrl, np.array([0.1, 0.0, -0.01]), horizon=T, step=1e-3), sc.constraint).d
         for T in (lo, hi)]
    # each horizon gets its own uniform grid, so the sampled maxima differ by O(step^2)
    assert d[0] <= d[1] + 1e-7


def test_displacement_on_brockett_matches_bracket_sign():
    drop = make_circle_drop(1.0)
    for sign in (1, -1):
        rep = bracket_displacement_check(brockett_flat().system, drop, np.zeros(3), [0.1, 0.05], sign=sign)
        area = drop.area_closed(1.0)
        assert np.allclose(rep.displacement[:, 2], sign * 2 * rep.taus ** 2 * area, rtol=1e-9)
        assert np.allclose(rep.displacement[:, :2], 0.0, atol=1e-14)
        assert np.max(rep.residual) <= 1e-12


def test_displacement_residual_is_cubic():
    rep = bracket_displacement_check(brockett_nonlinear().system, make_pointed_drop(1.0, 0.3, np.pi / 4),
                                     np.array([0.3, -0.2, 0.5]), np.logspace(-3, -1, 5), k=1)
    assert rep.exponent >= 2.8
    assert np.all(rep.residual <= rep.B * rep.taus ** 3 * (1 + 1e-12))


def test_commuting_fields_return_to_start():
    const = lambda v: (lambda x: np.broadcast_to(np.asarray(v, float), np.shape(x)).copy())
    zero_jac = lambda x: np.zeros(np.shape(x) + (3,))
    sys = ControlAffineSystem(3, const([1.0, 0, 0]), const([0, 1.0, 0]), zero_jac, zero_jac)
    rep = bracket_displacement_check(sys, make_pointed_drop(1.0, 0.0, np.pi / 3), np.array([0.2, 0.1, 0.0]),
                                     [0.2, 0.1], k=2)
    assert np.max(np.abs(rep.displacement)) <= 1e-12


def test_descent_on_flat_brockett():
    sc = brockett_flat()
    rep = descent_check(sc.system, sc.constraint, make_circle_drop(0.5), np.zeros(3), -40.0)
    assert rep.holds and rep.c > 0
    assert 0.5 <= rep.c / rep.c_reference <= 2.0
    assert 2.7 <= rep.slope <= 3.3


def test_descent_with_adapted_pointed_drop():
    sc = brockett_flat()
    rep = descent_check(sc.system, sc.constraint, make_pointed_drop(0.5, 0.0, np.pi / 4), np.zeros(3), -40.0)
    assert rep.holds and 2.7 <= rep.slope <= 3.3


def unit_rotation_drop():
    # the circle drop with tau0 = 2 pi and phase pi/2 is (cos s, sin s)
    return make_circle_drop(2 * np.pi, np.pi / 2)


@pytest.mark.parametrize("omega", [-10.0, -1e2, -1e3])
def test_descent_fails_below_three_halves(omega):
    sc = brockett_power(1.4, 1.0)
    rep = descent_check(sc.system, sc.constraint, unit_rotation_drop(), np.zeros(3), omega)
    assert not rep.holds
    assert rep.counterexample["worst_dh"] > 0
    assert rep.counterexample["first_time"] <= (6 / abs(omega)) ** 5


def test_descent_holds_at_three_halves_fast_enough():
    sc = brockett_power(1.5, 1.0)
    rep = descent_check(sc.system, sc.constraint, unit_rotation_drop(), np.zeros(3), -7.0)
    assert rep.holds
    assert rep.tau >= 1e-2


def test_process_csv(tmp_path):
    sc = brockett_flat()
    proc = integrate(sc.system, uniform_rotation(2 * np.pi, 0.1), np.zeros(3), step=1e-2)
    path = tmp_path / "p.csv"
    proc.write_csv(path, sc.constraint)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x1", "x2", "x3", "u1", "u2", "h"]
    assert len(rows) == len(proc.t) + 1
    assert float(rows[-1][3]) == proc.x[-1, 2]
