"""Scalar auxiliary variable: dissipation functional and closed-form updates.

Per realization the auxiliary scalar ``r`` tracks ``E + c_r`` where
``E = ||u||^2/2 + g S ||phi||^2/2``. After each pair of subproblem solves,
``r`` is advanced with the exact solution of its implicit-Euler discretization,
``xi = r / (E + c_r)`` is formed and both fields are scaled by
``eta = 1 - (1 - xi)^(k+1)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonpositiveDenominatorError


@dataclass(frozen=True)
class SavParams:
    gamma: float = 0.01      # relaxation rate (1/time)
    alpha_sav: float = 1e3   # forcing weight
    c_r: float = 1.0         # energy offset

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.alpha_sav > 0:
            raise ValueError(f"alpha_sav must be > 0, got {self.alpha_sav}")
        if not self.c_r >= 1:
            raise ValueError(f"c_r must be >= 1, got {self.c_r}")


@dataclass(frozen=True)
class SavState:
    r: float
    xi: float = 1.0
    eta: float = 1.0


@dataclass(frozen=True)
class DissipationTerms:
    """Scalar ingredients of the dissipation functional for one realization.

    viscous   : nu ||grad u||^2
    conductive: g ||sqrt(K_j) grad phi||^2
    slip      : sum_i ||sqrt(eta_ij) u.tau_i||_Gamma^2
    work      : power supplied by sources (and by non-homogeneous boundary data)
    forcing_sq: ||f_f||^2 + ||g f_p||^2
    mass_sq   : ||u||^2 + g S ||phi||^2
    """
    viscous: float = 0.0
    conductive: float = 0.0
    slip: float = 0.0
    work: float = 0.0
    forcing_sq: float = 0.0
    mass_sq: float = 0.0


def dissipation(terms, params):
    """Value of the braced dissipation functional driving ``r``."""
    return (terms.viscous + terms.conductive + terms.slip - terms.work
            + 0.5 * params.alpha_sav * terms.forcing_sq
            - 0.5 * params.gamma * terms.mass_sq)


def update_r(r_n, E_next, D_next, params, dt, forcing_sq=0.0):
    """Closed-form ``r^{n+1}`` from the discretized auxiliary equation.

    Raises NonpositiveDenominatorError if the implicit coefficient is not
    positive, i.e. the stability parameters are badly chosen.
    """
    if not r_n > 0:
        raise ValueError(f"r_n must be positive, got {r_n}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    num = r_n + dt * 0.5 * params.alpha_sav * forcing_sq + dt * params.gamma * params.c_r
    den = 1.0 + params.gamma * dt + dt * D_next / (E_next + params.c_r)
    if not den > 0:
        raise NonpositiveDenominatorError(den)
    return num / den


def compute_xi(r, E, c_r):
    return r / (E + c_r)


def compute_eta(xi, k):
    return 1.0 - (1.0 - xi) ** (k + 1)


def check_rho_max(params, physics, poincare, k_min):
    """``min(nu, g k_min) - (1/(2 alpha) + gamma/2 max(1, g S)) C_p^2``.

    ``physics`` supplies nu, g and S; ``k_min`` is the smallest conductivity
    eigenvalue over the ensemble. A non-positive value means the chosen
    (alpha_sav, gamma) do not satisfy the construction that guarantees
    positivity of the update; callers warn but proceed.
    """
    if poincare <= 0:
        raise ValueError("poincare estimate must be positive")
    nu, g, S = physics.nu, physics.g, physics.S
    return (min(nu, g * k_min)
            - (0.5 / params.alpha_sav + 0.5 * params.gamma * max(1.0, g * S)) * poincare ** 2)


def gronwall_bound(r0, params, dt, forcing_bound, g=1.0):
    """Uniform-in-time bound on ``r^n`` from the discrete Gronwall argument."""
    lam = params.gamma
    b = params.alpha_sav * g * g * forcing_bound ** 2 + lam * params.c_r
    return r0 + (1 + lam * dt) / lam * b


def iterate_r(r0, params, dt, n_steps, E=0.0, D=0.0, forcing_sq=0.0):
    """Apply ``update_r`` ``n_steps`` times with frozen E and D; returns the trajectory."""
    out = np.empty(n_steps + 1)
    out[0] = r0
    for i in range(n_steps):
        out[i + 1] = update_r(out[i], E, D, params, dt, forcing_sq)
    return out
