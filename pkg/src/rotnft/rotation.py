"""Rotational controls ``u(t) = r(omega t)`` and their iterated integrals.

With ``U^l(t) = int_0^t u^l`` and ``U^{lm}(t) = int_0^t u^l(s) U^m(s) ds`` the
symmetric part of the second integrals collapses to ``U^l U^m / 2`` and the
antisymmetric part ``U_A^{21}`` equals the area swept by ``R`` on ``[0, omega t]``
divided by ``omega^2``. Whole periods therefore cancel every first integral and
every symmetric second integral while the area keeps accumulating.
"""
from dataclasses import dataclass

import numpy as np

from .drops import DropCurve, _refine, _simpson


class RotationDomainError(ValueError):
    """Invalid angular velocity."""


@dataclass(frozen=True)
class RotationalControl:
    base: DropCurve
    omega: float

    @property
    def period(self):
        return self.base.period / abs(self.omega)

    def __call__(self, t):
        return self.base.r(self.omega * np.asarray(t, dtype=float))

    def corner_times(self, start, end, clock_start=0.0):
        """Times in ``[start, end]`` where ``r(omega (t - clock_start))`` sits on a drop breakpoint."""
        tau0 = self.base.period
        lo, hi = sorted((self.omega * (start - clock_start), self.omega * (end - clock_start)))
        out = []
        for b in self.base.breakpoints:
            k = np.arange(np.ceil((lo - b) / tau0), np.floor((hi - b) / tau0) + 1)
            out.append(clock_start + (b + k * tau0) / self.omega)
        return np.sort(np.concatenate(out)) if out else np.empty(0)

    def first_integrals(self, t):
        """``U(t) = R(omega t) / omega`` (the primitive starts at the origin)."""
        return self.base.R(self.omega * np.asarray(t, dtype=float)) / self.omega


def make_rotational(base, omega):
    """Rotational control of ``base`` with signed angular velocity ``omega``."""
    if omega == 0 or not np.isfinite(omega):
        raise RotationDomainError(f"angular velocity must be finite and nonzero, got {omega}")
    return RotationalControl(base, float(omega))


@dataclass
class IteratedIntegrals:
    """First and second iterated integrals on ``t``.

    ``Ulm[i, l, m]`` is ``U^{lm}(t_i) = int_0^{t_i} u^l U^m`` with zero-based indices.
    """
    t: np.ndarray
    U: np.ndarray
    Ulm: np.ndarray
    error: float

    @property
    def US(self):
        return 0.5 * (self.Ulm + np.swapaxes(self.Ulm, -1, -2))

    @property
    def UA(self):
        return 0.5 * (self.Ulm - np.swapaxes(self.Ulm, -1, -2))

    @property
    def UA21(self):
        return self.UA[:, 1, 0]


class _DropMoments:
    """``J^{lm}(theta) = int_0^theta r^l R^m`` for a drop, exact in whole periods."""

    def __init__(self, drop, rtol=1e-12):
        self.drop = drop
        self.atol, self.rtol = rtol * drop.period ** 2, rtol
        tau0 = drop.period
        self.cuts = np.unique(np.concatenate([np.mod(drop.breakpoints, tau0), [0.0, tau0]]))
        pieces = [self._piece(a, np.array([b])) for a, b in zip(self.cuts[:-1], self.cuts[1:])]
        self.piece_totals = np.array([p[0][0] for p in pieces])
        self.error = sum(p[1] for p in pieces)
        self.full = self.piece_totals.sum(axis=0)

    def _piece(self, a, ends):
        """Integrals over ``[a, ends_i]`` inside one smooth piece, for a batch of ends."""
        ends = np.asarray(ends, dtype=float)
        nudge = 1e-13 * max(1.0, abs(a), float(np.max(np.abs(ends))))

        def estimate(m):
            frac = np.linspace(0.0, 1.0, m + 1)
            t = a + (ends[:, None] - a) * frac
            # one-sided limits at the piece ends, where r may jump
            t = np.clip(t, a + nudge, np.maximum(ends[:, None] - nudge, a + nudge))
            r, R = self.drop.r(t), self.drop.R(t)
            vals = r[..., :, None] * R[..., None, :]
            return _simpson(np.moveaxis(vals, 1, -1), ((ends - a) / m)[:, None, None])

        best, err, _ = _refine(estimate, self.atol, self.rtol)
        return best, err

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        tau0 = self.drop.period
        k = np.floor(theta / tau0)
        rem = theta - k * tau0
        out = k[:, None, None] * self.full[None]
        err = self.error * (np.abs(k).max(initial=0.0) + 1)
        for i, (a, b) in enumerate(zip(self.cuts[:-1], self.cuts[1:])):
            done = rem >= b
            out[done] += self.piece_totals[i]
            inside = (rem > a) & (rem < b)
            if np.any(inside):
                vals, e = self._piece(a, rem[inside])
                out[inside] += vals
                err += e
        return out, err


def iterated_integrals(u, t_grid):
    """First and second iterated integrals of ``u`` on ``t_grid``.

    Whole periods are accumulated from a one-period table, the remainder by
    composite Simpson inside the smooth pieces of the drop, so the cost does not
    grow with the number of periods.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1:
        raise ValueError("t_grid must be one-dimensional")
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be sorted")
    omega = u.omega
    moments = _DropMoments(u.base)
    J, err = moments(omega * t)
    Ulm = J / omega ** 2
    return IteratedIntegrals(t, u.first_integrals(t), Ulm, err / omega ** 2)
