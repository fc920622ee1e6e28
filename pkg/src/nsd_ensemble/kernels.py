"""Element-level hot loops, compiled with numba when available.

Set ``NSD_ENSEMBLE_DISABLE_NUMBA=1`` to force the pure-numpy path (useful
for debugging and for the comparison benchmark in ``benchmarks/``). Both
paths compute the same quantities; the test-suite checks them against each
other.

Array conventions
-----------------
phi   : (Q, nb)          reference basis values at quadrature points
dphi  : (E, Q, nb, 2)    physical basis gradients
wq    : (E, Q)           quadrature weight times |det J|
"""

import os

import numpy as np

_DISABLED = os.environ.get("NSD_ENSEMBLE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by environment")
    import numba
    from numba import njit, prange
    # TBB in this image is too old for numba; pick a layer that needs no probe
    if os.environ.get("NUMBA_THREADING_LAYER") is None:
        numba.config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# -- numpy reference path ---------------------------------------------------

def convection_local_numpy(W, phi, dphi, wq):
    """Skew-symmetrized convection ((w.grad)w + (div w) w / 2, v) per element.

    W : (J, E, nb, 2) element coefficients of J velocity fields.
    Returns (J, E, nb, 2).
    """
    w = np.einsum("jeac,qa->jeqc", W, phi)
    G = np.einsum("jeac,eqad->jeqcd", W, dphi)
    adv = np.einsum("jeqd,jeqcd->jeqc", w, G)
    div = G[..., 0, 0] + G[..., 1, 1]
    val = adv + 0.5 * div[..., None] * w
    return np.einsum("eq,jeqc,qb->jebc", wq, val, phi)


def stiffness_local_numpy(dphi, coef, wq):
    """sum_q wq * grad(phi_a) . K grad(phi_b); coef (E, Q, 2, 2)."""
    return np.einsum("eq,eqac,eqcd,eqbd->eab", wq, dphi, coef, dphi)


def mass_local_numpy(phi, coef, wq):
    """sum_q wq * coef * phi_a * phi_b; coef (E, Q)."""
    return np.einsum("eq,qa,qb->eab", wq * coef, phi, phi)


# -- numba path ---------------------------------------------------------------

if HAVE_NUMBA:

    @njit(parallel=True, fastmath=False, cache=True)
    def _convection_local_nb(W, phi, dphi, wq):
        J, E, nb, _ = W.shape
        Q = phi.shape[0]
        out = np.zeros((J, E, nb, 2))
        for e in prange(E):
            for j in range(J):
                for q in range(Q):
                    w0 = 0.0
                    w1 = 0.0
                    g00 = 0.0
                    g01 = 0.0
                    g10 = 0.0
                    g11 = 0.0
                    for a in range(nb):
                        c0 = W[j, e, a, 0]
                        c1 = W[j, e, a, 1]
                        pa = phi[q, a]
                        dx = dphi[e, q, a, 0]
                        dy = dphi[e, q, a, 1]
                        w0 += c0 * pa
                        w1 += c1 * pa
                        g00 += c0 * dx
                        g01 += c0 * dy
                        g10 += c1 * dx
                        g11 += c1 * dy
                    hdiv = 0.5 * (g00 + g11)
                    v0 = (w0 * g00 + w1 * g01 + hdiv * w0) * wq[e, q]
                    v1 = (w0 * g10 + w1 * g11 + hdiv * w1) * wq[e, q]
                    for b in range(nb):
                        out[j, e, b, 0] += v0 * phi[q, b]
                        out[j, e, b, 1] += v1 * phi[q, b]
        return out

    @njit(parallel=True, fastmath=False, cache=True)
    def _stiffness_local_nb(dphi, coef, wq):
        E, Q, nb, _ = dphi.shape
        out = np.zeros((E, nb, nb))
        for e in prange(E):
            for q in range(Q):
                k00 = coef[e, q, 0, 0] * wq[e, q]
                k01 = coef[e, q, 0, 1] * wq[e, q]
                k10 = coef[e, q, 1, 0] * wq[e, q]
                k11 = coef[e, q, 1, 1] * wq[e, q]
                for a in range(nb):
                    ax = dphi[e, q, a, 0]
                    ay = dphi[e, q, a, 1]
                    for b in range(nb):
                        bx = dphi[e, q, b, 0]
                        by = dphi[e, q, b, 1]
                        out[e, a, b] += ax * (k00 * bx + k01 * by) + ay * (k10 * bx + k11 * by)
        return out

    @njit(parallel=True, fastmath=False, cache=True)
    def _mass_local_nb(phi, coef, wq):
        E, Q = wq.shape
        nb = phi.shape[1]
        out = np.zeros((E, nb, nb))
        for e in prange(E):
            for q in range(Q):
                s = coef[e, q] * wq[e, q]
                for a in range(nb):
                    sa = s * phi[q, a]
                    for b in range(nb):
                        out[e, a, b] += sa * phi[q, b]
        return out


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def convection_local(W, phi, dphi, wq):
    if HAVE_NUMBA:
        return _convection_local_nb(_f64(W), _f64(phi), _f64(dphi), _f64(wq))
    return convection_local_numpy(W, phi, dphi, wq)


def stiffness_local(dphi, coef, wq):
    if HAVE_NUMBA:
        return _stiffness_local_nb(_f64(dphi), _f64(coef), _f64(wq))
    return stiffness_local_numpy(dphi, coef, wq)


def mass_local(phi, coef, wq):
    if HAVE_NUMBA:
        return _mass_local_nb(_f64(phi), _f64(coef), _f64(wq))
    return mass_local_numpy(phi, coef, wq)
