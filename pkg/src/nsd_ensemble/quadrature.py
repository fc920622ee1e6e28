"""Quadrature on the reference triangle and the unit interval."""

from functools import lru_cache
import math

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Rule exact for total degree ``degree`` on {x, y >= 0, x + y <= 1}.

    Collapsed (Duffy) product of Gauss-Jacobi(1, 0) in x and Gauss-Legendre
    in y. Returns ``(points (Q, 2), weights (Q,))``; weights sum to 1/2.
    """
    n = max(1, math.ceil((degree + 1) / 2))
    s, ws = roots_jacobi(n, 1.0, 0.0)
    v, wv = roots_legendre(n)
    u = 0.5 * (1.0 + s)
    wu = 0.25 * ws
    v = 0.5 * (1.0 + v)
    wv = 0.5 * wv
    x = np.repeat(u, n)
    y = (1.0 - x) * np.tile(v, n)
    w = np.outer(wu, wv).ravel()
    pts = np.column_stack([x, y])
    pts.flags.writeable = False
    w.flags.writeable = False
    return pts, w


@lru_cache(maxsize=None)
def line_rule(degree):
    """Gauss-Legendre on [0, 1] exact for polynomials of ``degree``."""
    n = max(1, math.ceil((degree + 1) / 2))
    s, w = roots_legendre(n)
    pts = 0.5 * (1.0 + s)
    w = 0.5 * w
    pts.flags.writeable = False
    w.flags.writeable = False
    return pts, w
