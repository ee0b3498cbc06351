"""Classification and sector geometry of 2x2 symmetric quadratic forms.

A form ``Q(U) = q11 U1^2 + 2 q12 U1 U2 + q22 U2^2`` is *non-positive* when it is
indefinite, negative semidefinite or negative definite. For such forms the
principal direction ``phi`` is the direction of the eigenvector attached to the
smaller eigenvalue, and the half-amplitude ``beta`` is the angular half-width of
the cone where ``Q < 0``.
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np


class FormClass(Enum):
    INDEFINITE = "indefinite"
    NEGATIVE_SEMIDEFINITE = "negative_semidefinite"
    NEGATIVE_DEFINITE = "negative_definite"
    NOT_NON_POSITIVE = "not_non_positive"

    @property
    def non_positive(self):
        return self is not FormClass.NOT_NON_POSITIVE


class FormDomainError(ValueError):
    """Raised when sector geometry is requested for a form that has none."""


@dataclass(frozen=True)
class SymForm2:
    q11: float
    q12: float
    q22: float

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2):
            raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
        return cls(float(m[0, 0]), float(0.5 * (m[0, 1] + m[1, 0])), float(m[1, 1]))

    @property
    def matrix(self):
        return np.array([[self.q11, self.q12], [self.q12, self.q22]])

    @property
    def det(self):
        return self.q11 * self.q22 - self.q12 ** 2

    @property
    def scale(self):
        return max(abs(self.q11), abs(self.q12), abs(self.q22))

    def tol(self):
        return 1e-12 * max(self.scale, 1.0)

    def det_tol(self):
        # the determinant is quadratic in the entries
        return self.tol() * max(self.scale, 1.0)

    def evaluate(self, U):
        """Evaluate the form on one vector or on an ``(..., 2)`` stack of vectors."""
        U = np.asarray(U, dtype=float)
        u1, u2 = U[..., 0], U[..., 1]
        return self.q11 * u1 * u1 + 2.0 * self.q12 * u1 * u2 + self.q22 * u2 * u2

    def rotated(self, theta):
        """Form of ``U -> Q(R(-theta) U)``, i.e. the form turned by ``theta``."""
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        return SymForm2.from_matrix(rot @ self.matrix @ rot.T)

    def scaled(self, c):
        return SymForm2(c * self.q11, c * self.q12, c * self.q22)

    def eigenvalues(self):
        """Return ``(smaller, larger)`` eigenvalues from the closed form."""
        half_trace = 0.5 * (self.q11 + self.q22)
        radius = np.hypot(0.5 * (self.q11 - self.q22), self.q12)
        return half_trace - radius, half_trace + radius


@dataclass(frozen=True)
class FormGeometry:
    phi: float
    beta: float
    cls: FormClass
    degenerate: bool = False


def _as_form(Q):
    if isinstance(Q, SymForm2):
        return Q
    return SymForm2.from_matrix(Q)


def classify(Q):
    """Classify a symmetric 2x2 form.

    Parameters
    ----------
    Q : SymForm2 or array_like, shape (2, 2)

    Returns
    -------
    FormClass
    """
    Q = _as_form(Q)
    tol, dtol = Q.tol(), Q.det_tol()
    delta = Q.det
    if delta < -dtol:
        return FormClass.INDEFINITE
    if delta > dtol:
        return FormClass.NEGATIVE_DEFINITE if Q.q11 < -tol else FormClass.NOT_NON_POSITIVE
    if Q.q11 <= tol and Q.q22 <= tol:
        return FormClass.NEGATIVE_SEMIDEFINITE
    return FormClass.NOT_NON_POSITIVE


def is_degenerate(Q, band=1e3):
    """True when the determinant sits within ``band`` tolerances of zero while the
    form is not exactly semidefinite, i.e. the class is numerically fragile."""
    Q = _as_form(Q)
    dtol = Q.det_tol()
    return abs(Q.det) <= band * dtol and Q.det != 0.0


def wrap_half_turn(theta):
    """Map an angle to ``[-pi/2, pi/2)`` (directions, not orientations)."""
    return (np.asarray(theta) + 0.5 * np.pi) % np.pi - 0.5 * np.pi


def wrap_turn(theta):
    """Map an angle to ``[-pi, pi)``."""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


def principal_direction(Q):
    """Angle in ``[-pi/2, pi/2)`` of the eigenvector of the smaller eigenvalue."""
    Q = _as_form(Q)
    # eigenvector of the larger eigenvalue sits at half the angle of (q11 - q22, 2 q12)
    major = 0.5 * np.arctan2(2.0 * Q.q12, Q.q11 - Q.q22)
    return float(wrap_half_turn(major + 0.5 * np.pi))


def geometry(Q):
    """Principal direction and half-amplitude of a non-positive form.

    For indefinite forms ``beta`` solves ``Q(cos(phi +- beta), sin(phi +- beta)) = 0``;
    for negative semidefinite and negative definite forms ``beta = pi/2``.

    Raises
    ------
    FormDomainError
        If the form vanishes or is not non-positive.
    """
    Q = _as_form(Q)
    cls = classify(Q)
    if Q.scale == 0.0:
        raise FormDomainError("geometry undefined for vanishing form")
    if not cls.non_positive:
        raise FormDomainError(f"form {Q} is not non-positive ({cls.value})")
    phi = principal_direction(Q)
    if cls is FormClass.INDEFINITE:
        lo, hi = Q.eigenvalues()
        beta = float(np.arctan(np.sqrt(-lo / hi)))
    else:
        beta = 0.5 * np.pi
    return FormGeometry(phi=phi, beta=beta, cls=cls, degenerate=is_degenerate(Q))


def in_negative_sector(geom, U):
    """True where ``Arg(U)`` or ``Arg(-U)`` lies strictly inside ``(phi - beta, phi + beta)``."""
    U = np.asarray(U, dtype=float)
    theta = np.arctan2(U[..., 1], U[..., 0])
    offset = wrap_half_turn(theta - geom.phi)
    return np.abs(offset) < geom.beta
