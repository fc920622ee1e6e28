"""Generalized BDF coefficient sets.

All histories are ordered newest-first: ``history[0]`` is the most recent
level, ``history[i]`` lies ``i`` steps behind it.

For a tableau of order ``k`` and shift ``beta``:

* ``A(u^{n+1}) = alpha*u^{n+1} + sum_i abar[i]*u^{n-i}`` approximates
  ``dt * u'(t^{n+beta})``;
* ``B(u^{n+1}) = sum_i b[i]*u^{n+1-i}`` approximates ``u(t^{n+beta})``
  from levels ending at ``n+1``;
* ``C(u^n) = sum_i c[i]*u^{n-i}`` extrapolates ``u(t^{n+beta})`` from
  levels ending at ``n``;
* ``B = tau*C + D`` with ``d = b - tau*c`` (same level indexing).

``beta = 1`` recovers the classical BDFk formulas.
"""

from dataclasses import dataclass
import warnings

import numpy as np

from .errors import HistoryLengthError, InvalidBetaError, UnsupportedOrderError

SUPPORTED_ORDERS = (2, 3, 4)


@dataclass(frozen=True)
class GbdfTableau:
    k: int
    beta: float
    alpha: float
    abar: tuple
    b: tuple
    c: tuple
    tau: float
    d: tuple

    @property
    def target_offset(self):
        """Offset of the target time from the newest level of ``B``."""
        return self.beta - 1.0


def _coefficients(k, beta):
    be = float(beta)
    if k == 2:
        alpha = (2 * be + 1) / 2
        abar = (-2 * be, (2 * be - 1) / 2)
        b = (be, -(be - 1))
        c = (be + 1, -be)
        tau = (be - 1) / be
    elif k == 3:
        b2 = be * be
        alpha = (3 * b2 + 6 * be + 2) / 6
        abar = (-(9 * b2 + 12 * be - 3) / 6,
                (9 * b2 + 6 * be - 6) / 6,
                -(3 * b2 - 1) / 6)
        b = ((b2 + be) / 2, -(b2 - 1), (b2 - be) / 2)
        c = ((b2 + 3 * be + 2) / 2, -(b2 + 2 * be), (b2 + be) / 2)
        tau = (be - 1) / (be + 1)
    else:
        b2, b3 = be * be, be ** 3
        alpha = (2 * b3 + 9 * b2 + 11 * be + 3) / 12
        abar = ((-8 * b3 - 30 * b2 - 20 * be + 10) / 12,
                (12 * b3 + 36 * b2 + 6 * be - 18) / 12,
                (-8 * b3 - 18 * b2 + 4 * be + 6) / 12,
                (2 * b3 + 3 * b2 - be - 1) / 12)
        b = ((b3 + 3 * b2 + 2 * be) / 6,
             (-b3 - 2 * b2 + be + 2) / 2,
             (b3 + b2 - 2 * be) / 2,
             (-b3 + be) / 6)
        c = ((b3 + 6 * b2 + 11 * be + 6) / 6,
             (-b3 - 5 * b2 - 6 * be) / 2,
             (b3 + 4 * b2 + 3 * be) / 2,
             (-b3 - 3 * b2 - 2 * be) / 6)
        tau = (be - 1) / (be + 3)
    return alpha, abar, b, c, tau


def make_tableau(k, beta):
    """Build the coefficient set for order ``k`` and shift ``beta``.

    Parameters
    ----------
    k : int
        Order, one of 2, 3, 4.
    beta : float
        Shift parameter, must exceed 1. Values below 2 are accepted with a
        warning since the error estimates are only established for
        ``beta >= 2``.
    """
    if k not in SUPPORTED_ORDERS:
        raise UnsupportedOrderError(f"order k={k!r} not in {SUPPORTED_ORDERS}")
    beta = float(beta)
    if not np.isfinite(beta) or beta < 1.0:
        raise InvalidBetaError(f"beta must be > 1, got {beta}")
    # beta == 1 is the classical BDF limit; allowed so the limit is checkable
    if 1.0 < beta < 2.0:
        warnings.warn(f"beta={beta} < 2: error estimates assume beta >= 2",
                      stacklevel=2)
    alpha, abar, b, c, tau = _coefficients(k, beta)
    d = tuple(bi - tau * ci for bi, ci in zip(b, c))
    return GbdfTableau(k=k, beta=beta, alpha=alpha, abar=abar, b=b, c=c,
                       tau=tau, d=d)


def euler_tableau():
    """First-order (implicit/lagged Euler) set used only to bootstrap startup levels."""
    return GbdfTableau(k=1, beta=1.0, alpha=1.0, abar=(-1.0,), b=(1.0,),
                       c=(1.0,), tau=0.0, d=(1.0,))


def _combine(coeffs, states):
    if len(states) != len(coeffs):
        raise HistoryLengthError(
            f"expected {len(coeffs)} levels, got {len(states)}")
    out = coeffs[0] * np.asarray(states[0], dtype=float)
    for ci, s in zip(coeffs[1:], states[1:]):
        out = out + ci * np.asarray(s, dtype=float)
    return out


def eval_A(t, newest, history):
    """``alpha*newest + sum abar_i*history_i`` (history: k levels, newest-first)."""
    return t.alpha * np.asarray(newest, dtype=float) + _combine(t.abar, history)


def eval_Abar(t, history):
    return _combine(t.abar, history)


def eval_B(t, states):
    return _combine(t.b, states)


def eval_C(t, states):
    return _combine(t.c, states)


def eval_D(t, states):
    return _combine(t.d, states)
