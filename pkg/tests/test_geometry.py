import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rotnft.geometry import (
    ConfigurationError,
    Constraint,
    ControlAffineSystem,
    Diffeomorphism,
    EvaluationError,
    SingularSetModel,
    audit_assumptions,
    boundary_residual,
    bracket_transversality,
    identity_diffeo,
    invariance_audit,
    lambda_matrices,
    lie_bracket,
)
from rotnft.quadform import FormClass, classify
from rotnft.scenarios import (
    REGISTRY,
    brockett_flat,
    brockett_general,
    brockett_nonlinear,
    brockett_power,
    flat_constraint,
)


def quadratic_shear():
    return Diffeomorphism(
        lambda x: np.array([x[0], x[1], x[2] + x[0] * x[1]]),
        lambda x: np.array([[1.0, 0, 0], [0, 1.0, 0], [x[1], x[0], 1.0]]),
        lambda y: np.array([y[0], y[1], y[2] - y[0] * y[1]]),
    )


def oracle_jacobian(fun, x, h=1e-5):
    """Independent central-difference Jacobian (single point, fixed step)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=1)


def test_brockett_bracket_is_constant():
    sys = brockett_flat().system
    x = np.random.default_rng(1).uniform(-1, 1, size=(100, 3))
    assert np.array_equal(lie_bracket(sys, x), np.tile([0.0, 0.0, 2.0], (100, 1)))


def test_equal_fields_have_zero_bracket():
    base = brockett_flat().system
    sys = ControlAffineSystem(3, base.f1, base.f1, base.Df1, base.Df1)
    assert np.array_equal(lie_bracket(sys, np.array([0.3, -0.2, 0.7])), np.zeros(3))


def test_nonlinear_bracket_matches_finite_difference_oracle():
    sys = brockett_nonlinear().system
    x = np.array([1.0, 1.0, 1.0])
    J1 = oracle_jacobian(sys.f1, x)
    J2 = oracle_jacobian(sys.f2, x)
    expected = J2 @ sys.f1(x) - J1 @ sys.f2(x)
    assert np.max(np.abs(lie_bracket(sys, x) - expected)) <= 1e-6


def test_nonlinear_transversality_closed_form():
    sc = brockett_nonlinear()
    x = np.random.default_rng(2).uniform(-1, 1, size=(40, 3))
    value = bracket_transversality(sc.system, sc.constraint, x)
    expected = 2 * (1 - 2 * x[:, 2] ** 3 * (x[:, 0] + x[:, 1]))
    assert np.allclose(value, expected, atol=1e-12)


def test_nonlinear_symmetric_part_closed_form():
    sc = brockett_nonlinear()
    x1, x2, x3 = 0.3, -0.4, 0.8
    S = lambda_matrices(sc.system, sc.constraint, np.array([x1, x2, x3])).sym
    off = 2 * x3 ** 3 * (x1 - x2 + 2 * x3 ** 4)
    expected = np.array([[4 * x3 ** 3 * (x3 ** 4 - x2), off], [off, 4 * x3 ** 3 * (x3 ** 4 + x1)]])
    assert np.allclose(S, expected, atol=1e-12)


def test_analytic_jacobians_match_finite_differences():
    for name in ("brockett_nonlinear", "h6_violator"):
        sys = REGISTRY[name]().system
        x = np.array([0.4, -0.3, 0.6])
        for f, Df in ((sys.f1, sys.Df1), (sys.f2, sys.Df2)):
            assert np.max(np.abs(Df(x) - oracle_jacobian(f, x))) <= 1e-8


def test_finite_difference_fallback_is_flagged():
    base = brockett_nonlinear().system
    sys = ControlAffineSystem(3, base.f1, base.f2)
    x = np.array([0.2, 0.1, -0.5])
    assert np.allclose(lie_bracket(sys, x), lie_bracket(base, x), atol=1e-8)
    lm = lambda_matrices(sys, flat_constraint(None), x)
    assert lm.finite_difference


def test_provider_failure_reports_point():
    def broken(x):
        raise FloatingPointError("boom")

    sys = ControlAffineSystem(3, broken, broken)
    with pytest.raises(EvaluationError, match="x="):
        lie_bracket(sys, np.zeros(3))


def test_missing_hessian_is_configuration_error():
    sc = brockett_flat()
    con = Constraint(sc.constraint.h, sc.constraint.grad_h, None)
    with pytest.raises(ConfigurationError):
        lambda_matrices(sc.system, con, np.zeros(3))


def test_lambda_split_and_brockett_values():
    sc = brockett_flat()
    x = np.random.default_rng(3).uniform(-1, 1, size=(30, 3))
    lm = lambda_matrices(sc.system, sc.constraint, x)
    assert np.array_equal(lm.sym + lm.antisym, lm.lam)
    assert np.array_equal(lm.sym, np.zeros_like(lm.sym))
    half_trans = 0.5 * bracket_transversality(sc.system, sc.constraint, x)
    assert np.allclose(lm.antisym[:, 1, 0], half_trans, atol=1e-10)


def test_zero_fields_give_zero_lambda():
    zero = lambda x: np.zeros(np.shape(x))
    zjac = lambda x: np.zeros(np.shape(x) + (3,))
    sys = ControlAffineSystem(3, zero, zero, zjac, zjac)
    assert np.array_equal(lambda_matrices(sys, brockett_flat().constraint, np.ones(3)).lam, np.zeros((2, 2)))


@pytest.mark.parametrize("g1,g2", [(1.0, 0.5), (2.0, -0.5), (0.3, 1.7)])
def test_generalized_brockett_determinant_on_singular_set(g1, g2):
    sc = brockett_general(g1=g1, g2=g2, c1=1.3, c2=0.6, p=2.0)
    for z in (-0.8, -0.2, 0.0):
        S = lambda_matrices(sc.system, sc.constraint, np.array([0.0, 0.0, z])).form
        assert S.det == pytest.approx(-0.25 * (g1 - g2) ** 2, abs=1e-14)
        assert classify(S) is FormClass.INDEFINITE


def test_antisym_entry_matches_half_transversality_everywhere():
    for name in ("brockett_nonlinear", "h6_violator", "brockett_general"):
        sc = REGISTRY[name]()
        x = np.random.default_rng(4).uniform(-1, 1, size=(25, sc.system.dim))
        lm = lambda_matrices(sc.system, sc.constraint, x)
        trans = bracket_transversality(sc.system, sc.constraint, x)
        assert np.max(np.abs(lm.antisym[:, 1, 0] - 0.5 * trans)) <= 1e-10


points3 = arrays(np.float64, (3,), elements=st.floats(-2, 2))


@settings(max_examples=100, deadline=None)
@given(points3)
def test_bracket_antisymmetry(x):
    sys = brockett_nonlinear().system
    swapped = ControlAffineSystem(3, sys.f2, sys.f1, sys.Df2, sys.Df1)
    assert np.array_equal(lie_bracket(sys, x), -lie_bracket(swapped, x))


def test_invariance_identity_is_exact():
    sc = brockett_power(2.0)
    pts = np.random.default_rng(5).uniform(-1, 1, size=(20, 3))
    rep = invariance_audit(sc.system, sc.constraint, identity_diffeo(3), pts)
    assert rep.max_discrepancy <= 1e-9  # finite-difference floor of the transported chart


@pytest.mark.parametrize("name", ["brockett_flat", "brockett_power", "brockett_nonlinear"])
def test_invariance_quadratic_shear(name):
    sc = REGISTRY[name]()
    pts = np.random.default_rng(6).uniform(-1, 1, size=(40, 3))
    rep = invariance_audit(sc.system, sc.constraint, quadratic_shear(), pts)
    assert rep.max_discrepancy <= 1e-6
    assert not rep.skipped


def test_invariance_linear_scaling():
    sc = brockett_flat()
    lin = Diffeomorphism(lambda x: 2 * np.asarray(x), lambda x: 2 * np.eye(3), lambda y: np.asarray(y) / 2)
    pts = np.random.default_rng(7).uniform(-1, 1, size=(40, 3))
    assert invariance_audit(sc.system, sc.constraint, lin, pts).max_discrepancy <= 1e-10


def test_invariance_newton_inverse_and_small_perturbations():
    sc = brockett_nonlinear()
    pts = np.random.default_rng(8).uniform(-0.8, 0.8, size=(10, 3))
    for eps in (1e-1, 1e-2, 1e-3):
        d = Diffeomorphism(
            lambda x, e=eps: np.array([x[0] + e * x[2] ** 2, x[1], x[2] + e * np.sin(x[0])]),
            lambda x, e=eps: np.array([[1, 0, 2 * e * x[2]], [0, 1, 0], [e * np.cos(x[0]), 0, 1]]),
        )
        rep = invariance_audit(sc.system, sc.constraint, d, pts)
        assert rep.max_discrepancy <= max(eps ** 2, 1e-6)


def test_invariance_skips_singular_jacobian():
    sc = brockett_flat()
    fold = Diffeomorphism(lambda x: np.array([x[0] ** 3, x[1], x[2]]),
                          lambda x: np.diag([3 * x[0] ** 2, 1.0, 1.0]))
    rep = invariance_audit(sc.system, sc.constraint, fold, np.array([[0.0, 0.2, -0.1], [0.5, 0.1, 0.0]]))
    assert rep.skipped == [0]
    assert np.isnan(rep.discrepancies[0])


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_audit_matches_expected_flags(name):
    sc = REGISTRY[name]()
    rep = audit_assumptions(sc.system, sc.constraint, sc.singular)
    for key, value in sc.expected.items():
        assert rep.passes[key] == value, (key, rep.notes)


def test_audit_brockett_constants():
    sc = brockett_flat()
    rep = audit_assumptions(sc.system, sc.constraint, sc.singular)
    assert rep.alpha == pytest.approx(2.0)
    assert rep.d0 == pytest.approx(1.0, rel=1e-9)
    assert all(c is FormClass.NEGATIVE_SEMIDEFINITE for c in rep.h5_classes)


def test_audit_h4_flips_at_opposite_gains():
    for g2, expect in ((-1.0, False), (-0.999, True), (-1.001, True)):
        sc = brockett_general(g1=1.0, g2=g2)
        rep = audit_assumptions(sc.system, sc.constraint, sc.singular)
        assert rep.passes["H4"] is expect


def test_audit_reports_ipc_regime_when_no_singular_set():
    sc = brockett_flat()
    sys = sc.system
    f1 = lambda x: sys.f1(x) + np.array([0.0, 0.0, -3.0])
    tilted = ControlAffineSystem(3, f1, sys.f2, sys.Df1, sys.Df2, box=sys.box)
    sing = SingularSetModel(tilted, sc.constraint)
    rep = audit_assumptions(tilted, sc.constraint, sing)
    assert rep.regime == "IPC"
    assert "singular set not detected in box" in rep.notes


def test_projected_estimate_finds_axis():
    sc = brockett_flat()
    sing = SingularSetModel(sc.system, sc.constraint)
    cloud = sing.cloud()
    assert len(cloud) > 3
    assert np.allclose(cloud[:, :2], 0.0, atol=1e-9)
    x = np.array([[0.3, -0.4, -0.5], [0.1, 0.1, -0.95]])
    exact = sc.singular.distance(x)
    assert np.all(np.abs(sing.distance(x) - exact) <= sing.resolution + 1e-12)


def test_singular_residual_zero_iff_distance_zero():
    sc = brockett_nonlinear()
    rng = np.random.default_rng(9)
    on = sc.singular.sample(20, rng)
    assert np.allclose(sc.singular.distance(on), 0.0, atol=1e-9)
    assert np.all(np.linalg.norm(boundary_residual(sc.system, sc.constraint, on), axis=-1) <= sc.singular.tol)
    off = on + rng.normal(scale=0.05, size=on.shape) * np.array([1, 1, 0])
    assert np.all(sc.singular.distance(off) > 0)
    assert np.all(np.linalg.norm(boundary_residual(sc.system, sc.constraint, off), axis=-1) > sc.singular.tol)
