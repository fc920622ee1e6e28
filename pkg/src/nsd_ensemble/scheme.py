"""GSAV-GBDFk ensemble time stepping for the coupled Navier-Stokes/Darcy system.

Each step solves, for every realization, one saddle-point system for
(velocity, aggregated pressure) and one head system. Both coefficient
matrices are built from ensemble-mean parameters only, so in ``ensemble``
mode they are factored once and reused for all realizations and steps. The
realization-specific parts (conductivity and slip fluctuations, forcing,
boundary data) enter explicitly through the right-hand sides. The auxiliary
scalar then rescales both fields.

``individual`` mode runs every realization on its own with matrices built
from its own parameters and no fluctuation terms; it exists to measure what
sharing the matrices buys.

Startup
-------
``exact``      levels 0..k-1 are interpolated from an analytic solution.
``bootstrap``  from initial data only: a few implicit Euler substeps, then
               GBDF2 with substep ``dt**(k/2)``; levels falling on multiples of
               ``dt`` are promoted into the order-k history. When the initial
               fields do not match the Dirichlet data at ``t = 0`` the startup
               runs one interval further and level 0 is left out.
"""

from dataclasses import dataclass, field
import math
import time
import warnings

import numpy as np
import scipy.sparse as sp

from . import fem, linalg
from . import sav as _sav
from .sav import SavParams
from .errors import MissingAnalyticSolutionError
from .gbdf import euler_tableau, make_tableau, eval_Abar, eval_C
from .stochastic import mean_fields

MODES = ("ensemble", "individual")
STARTS = ("exact", "bootstrap")


@dataclass
class EnsembleConfig:
    J: int = 1
    k: int = 2
    beta: float = 3.0
    dt: float = 1.0 / 32
    t_end: float = 0.5
    physics: fem.Physics = field(default_factory=fem.Physics)
    sav: SavParams = field(default_factory=SavParams)
    deg_u: int = 2
    deg_p: int = 1
    deg_phi: int = 2
    seed: int = 0
    mode: str = "ensemble"
    start: str = "exact"
    euler_substeps: int = 4
    startup_refine: int = 1       # extra factor on the number of GBDF2 startup substeps
    startup_beta: float = 3.0     # shift of the second-order startup stepper (1 is unstable with spread)
    boundary_power: bool = True   # count work done by non-homogeneous Dirichlet data

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt * (1 - 1e-12):
            raise ValueError("t_end must be >= dt")
        p = self.physics
        for name in ("nu", "g", "S", "alpha_bj"):
            if not getattr(p, name) > 0:
                raise ValueError(f"physics.{name} must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.start not in STARTS:
            raise ValueError(f"start must be one of {STARTS}")
        if self.euler_substeps < 1:
            raise ValueError("euler_substeps must be >= 1")
        if self.startup_refine < 1:
            raise ValueError("startup_refine must be >= 1")

    @property
    def n_steps(self):
        n = int(round(self.t_end / self.dt))
        if abs(n * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ValueError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")
        if n < self.k - 1:
            raise ValueError("t_end too short for the startup levels")
        return n


@dataclass
class RealizationInput:
    """Data of one ensemble member.

    Time-dependent callables take ``(t, xy)`` with ``xy`` of shape (n, 2);
    vector-valued ones return (n, 2). ``interface(t, xy, n_f, tau)`` returns
    the three interface residuals (mass, normal stress, slip) that are added
    to the weak form when the data do not satisfy the homogeneous interface
    conditions. Dirichlet data may be a callable or a fixed array of values
    at the Dirichlet dofs.
    """
    K: object
    f_f: object = None
    f_p: object = None
    u0: object = None
    phi0: object = None
    u_bc: object = None
    phi_bc: object = None
    interface: object = None
    exact: object = None
    sav: object = None


@dataclass
class EnsembleState:
    t: float
    n: int
    ubar: list      # newest-first list of (J, n_u)
    u: list
    phibar: list
    phi: list
    p: list         # newest-first list of (J, n_p)
    r: np.ndarray
    xi: np.ndarray
    eta: np.ndarray

    @property
    def J(self):
        return len(self.r)


@dataclass(frozen=True)
class StepRecord:
    n: int
    t: float
    r: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    energy: np.ndarray
    norm_u: np.ndarray
    norm_phi: np.ndarray


@dataclass
class RunResult:
    state: EnsembleState
    records: list
    counters: dict
    timers: dict
    metadata: dict
    spaces: object = None
    matrices: object = None


# -- per-realization data ---------------------------------------------------------

@dataclass
class _Member:
    inp: RealizationInput
    params: SavParams
    dS: object          # slip fluctuation operator or None
    dA: object          # conductivity fluctuation operator or None


def _eval_points(fn, t, xy):
    return np.asarray(fn(t, xy), dtype=float)


class _Loads:
    """Right-hand side vectors of one realization, cached per time level."""

    def __init__(self, sp_, physics):
        self.sp = sp_
        self.physics = physics
        self._cache = {}

    def _get(self, key, make):
        t = key[-1]
        bucket = self._cache.get(t)
        if bucket is None:
            if len(self._cache) >= 4:
                self._cache.pop(next(iter(self._cache)))
            bucket = self._cache[t] = {}
        if key not in bucket:
            bucket[key] = make()
        return bucket[key]

    def velocity(self, inp, t):
        sp_ = self.sp
        vec = np.zeros(sp_.n_u)
        fsq = 0.0
        if inp.f_f is not None:
            v, fsq = self._get(("ff", id(inp.f_f), t), lambda: fem.velocity_load(sp_, inp.f_f, t))
            vec = vec + v
        if inp.interface is not None:
            vec = vec + self._get(("gu", id(inp.interface), t), lambda: self._iface_u(inp, t))
        return vec, fsq

    def head(self, inp, t):
        sp_, g = self.sp, self.physics.g
        vec = np.zeros(sp_.n_phi)
        fsq = 0.0
        if inp.f_p is not None:
            v, f2 = self._get(("fp", id(inp.f_p), t), lambda: fem.head_load(sp_, inp.f_p, t))
            vec = vec + g * v
            fsq = g * g * f2
        if inp.interface is not None:
            vec = vec + self._get(("gp", id(inp.interface), t), lambda: self._iface_p(inp, t))
        return vec, fsq

    def _residuals(self, inp, t):
        eq = self.sp.eq_u_gamma
        xy = eq.xq.reshape(-1, 2)
        n = np.repeat(eq.normal, eq.w.shape[1], axis=0)
        tau = np.repeat(eq.tangent, eq.w.shape[1], axis=0)
        g1, g2, g3 = (np.asarray(a, dtype=float).reshape(eq.w.shape)
                      for a in inp.interface(t, xy, n, tau))
        return g1, g2, g3

    def _iface_u(self, inp, t):
        _, g2, g3 = self._get(("res", id(inp.interface), t), lambda: self._residuals(inp, t))
        return fem.interface_velocity_load(self.sp, -g2, -g3)

    def _iface_p(self, inp, t):
        g1, _, _ = self._get(("res", id(inp.interface), t), lambda: self._residuals(inp, t))
        return fem.interface_head_load(self.sp, -self.physics.g * g1)


class NodalDirichlet:
    """Fixed Dirichlet-dof values scaled by a time profile (``None`` means constant)."""

    def __init__(self, values, profile=None):
        self.values = np.asarray(values, dtype=float)
        self.profile = profile

    def values_at(self, t):
        return self.values if self.profile is None else self.profile(t) * self.values


def smooth_ramp(t_ramp):
    """``(1 - cos(pi t / t_ramp)) / 2`` up to ``t_ramp``, then 1; ``None`` for no ramp."""
    if not t_ramp > 0:
        return None
    return lambda t: 1.0 if t >= t_ramp else 0.5 * (1.0 - math.cos(math.pi * t / t_ramp))


class _Dirichlet:
    def __init__(self, sp_):
        self.sp = sp_
        nv = sp_.nv
        self.u_nodes = sp_.u_dirichlet % nv
        self.u_comp = sp_.u_dirichlet // nv
        self.u_xy = sp_.velocity.dof_coords[self.u_nodes]
        self.phi_xy = sp_.head.dof_coords[sp_.phi_dirichlet]

    def velocity(self, bc, t):
        if bc is None:
            return np.zeros(len(self.u_nodes))
        if isinstance(bc, NodalDirichlet):
            return bc.values_at(t)
        if isinstance(bc, np.ndarray):
            return bc
        vals = _eval_points(bc, t, self.u_xy)
        return vals[np.arange(len(self.u_nodes)), self.u_comp]

    def head(self, bc, t):
        if bc is None:
            return np.zeros(len(self.phi_xy))
        if isinstance(bc, np.ndarray):
            return bc
        return np.broadcast_to(_eval_points(bc, t, self.phi_xy), (len(self.phi_xy),)).copy()


# -- shared operators ---------------------------------------------------------------

@dataclass
class SharedOperators:
    tableau: object
    dt: float
    K: sp.csr_matrix        # full velocity operator
    H: sp.csr_matrix        # full head operator
    K_fD: sp.csr_matrix
    H_fD: sp.csr_matrix
    ns: linalg.Factorization
    darcy: linalg.Factorization
    ns_matrix: sp.csc_matrix
    darcy_matrix: sp.csc_matrix


def build_operators(sm, tableau, dt, sp_, timers=None):
    t0 = time.perf_counter()
    K = linalg.velocity_operator(sm, tableau, dt)
    H = linalg.head_operator(sm, tableau, dt)
    Ans = linalg.build_ns_matrix(sm, tableau, dt)
    Ad = linalg.build_darcy_matrix(sm, tableau, dt)
    t1 = time.perf_counter()
    ns = linalg.factorize(Ans, symmetric=True)
    darcy = linalg.factorize(Ad, symmetric=True)
    t2 = time.perf_counter()
    if timers is not None:
        timers["assembly"] = timers.get("assembly", 0.0) + (t1 - t0)
        timers["factorization"] = timers.get("factorization", 0.0) + (t2 - t1)
    f, D = sp_.u_free, sp_.u_dirichlet
    pf, pD = sp_.phi_free, sp_.phi_dirichlet
    return SharedOperators(tableau, dt, K, H, K[f][:, D].tocsr(), H[pf][:, pD].tocsr(),
                           ns, darcy, Ans, Ad)


# -- pressure recovery and parameter checks --------------------------------------

def recover_pressure(X, p_history, tableau):
    """Invert ``X = b_0 p^{n+1} + sum_{i>=1} b_i p^{n+1-i}`` for ``p^{n+1}``."""
    b = tableau.b
    if b[0] == 0:
        raise ZeroDivisionError("leading coefficient of B vanishes")
    if len(p_history) < len(b) - 1:
        raise ValueError(f"need {len(b) - 1} pressure levels, got {len(p_history)}")
    out = np.array(X, dtype=float, copy=True)
    for bi, pi in zip(b[1:], p_history):
        out -= bi * pi
    return out / b[0]


@dataclass(frozen=True)
class ConditionReport:
    eta_ratio: float
    eta_threshold: float
    rho_ratio: float
    rho_threshold: float
    amplification: float = float("nan")   # stiff-limit growth factor of the conductivity splitting

    @property
    def eta_ok(self):
        return self.eta_ratio < self.eta_threshold

    @property
    def rho_ok(self):
        return self.rho_ratio < self.rho_threshold

    @property
    def satisfied(self):
        return self.eta_ok and self.rho_ok

    @property
    def stable(self):
        return not self.amplification > 1 + 1e-12


def stiff_amplification(tableau, rho_lo, rho_hi, samples=41):
    """Largest per-step growth factor of head modes with ``dt * lambda -> inf``.

    In that limit the Darcy step reduces to ``b(z) + rho c(z) = 0`` with
    ``b, c`` the B and C polynomials and ``rho`` the pointwise relative
    fluctuation ``(K_j - Kbar) / Kbar``. Values above 1 mean the explicit
    fluctuation term makes fine, stiff modes grow.
    """
    b = np.append(tableau.b, 0.0)
    c = np.insert(np.asarray(tableau.c, dtype=float), 0, 0.0)
    return max(np.abs(np.roots(b + rho * c)).max() for rho in np.linspace(rho_lo, rho_hi, samples))


def check_parameter_condition(Kq, eta_q, tableau, warn=True):
    """Compare the ensemble spread with the thresholds of the error analysis.

    ``Kq`` (J, ..., 2, 2) and ``eta_q`` (J, ...) are sampled at the same points
    for every realization. Advisory only: the report also carries the
    stiff-limit amplification of the conductivity splitting, and a separate
    warning is issued when it exceeds 1.
    """
    Kq = np.asarray(Kq, dtype=float)
    eta_q = np.asarray(eta_q, dtype=float)
    Kbar, etabar = Kq.mean(axis=0), eta_q.mean(axis=0)
    rho = np.abs(np.linalg.eigvalsh(Kq - Kbar)).max()
    kbar_min = np.linalg.eigvalsh(Kbar)[..., 0].min()
    eta_max = np.abs(eta_q - etabar).max()
    # generalized eigenvalues of (K_j - Kbar) relative to Kbar, pointwise
    Li = np.linalg.inv(np.linalg.cholesky(Kbar))
    rel = np.linalg.eigvalsh(Li @ (Kq - Kbar) @ np.swapaxes(Li, -1, -2))
    amp = stiff_amplification(tableau, min(rel.min(), 0.0), max(rel.max(), 0.0))
    rep = ConditionReport(float(eta_max / etabar.min()), 2 * tableau.tau / 3,
                          float(rho / kbar_min), tableau.tau / 3, float(amp))
    if warn and not rep.satisfied:
        warnings.warn(
            f"ensemble spread exceeds the error-analysis condition: "
            f"slip ratio {rep.eta_ratio:.4g} (limit {rep.eta_threshold:.4g}), "
            f"conductivity ratio {rep.rho_ratio:.4g} (limit {rep.rho_threshold:.4g})",
            stacklevel=2)
    if warn and not rep.stable:
        warnings.warn(
            f"conductivity splitting amplifies stiff head modes by {amp:.4g} per step; "
            f"ensemble-mode runs with many steps or small dt will grow", stacklevel=2)
    return rep


# -- one time step ------------------------------------------------------------------

class _Stepper:
    """Holds everything a step needs for one group of realizations sharing matrices."""

    def __init__(self, sp_, sm, members, physics, boundary_power, timers):
        self.sp = sp_
        self.sm = sm
        self.members = members
        self.physics = physics
        self.boundary_power = boundary_power
        self.timers = timers
        self.loads = _Loads(sp_, physics)
        self.bc = _Dirichlet(sp_)
        self.AS = (sm.A_f + sm.S_bjs_mean).tocsr()
        self.B_f = sm.B_div[:, sp_.u_free].tocsr()
        self.B_D = sm.B_div[:, sp_.u_dirichlet].tocsr()
        self._ops = {}

    def operators(self, tableau, dt):
        key = (tableau.k, tableau.beta, float(dt))
        if key not in self._ops:
            self._ops[key] = build_operators(self.sm, tableau, dt, self.sp, self.timers)
        return self._ops[key]

    def _tick(self, name, t0):
        t1 = time.perf_counter()
        self.timers[name] = self.timers.get(name, 0.0) + (t1 - t0)
        return t1

    def step(self, state, tableau, dt, order=None):
        sp_, sm, ph = self.sp, self.sm, self.physics
        ops = self.operators(tableau, dt)
        J = state.J
        order = np.arange(J) if order is None else np.asarray(order)
        k = tableau.k
        t_n = state.t
        t1 = t_n + dt
        tb = t_n + tableau.beta * dt
        b = tableau.b
        f, D = sp_.u_free, sp_.u_dirichlet
        pf, pD = sp_.phi_free, sp_.phi_dirichlet
        clock = time.perf_counter()

        Cu = eval_C(tableau, state.ubar[:k])
        Cphi = eval_C(tableau, state.phibar[:k])
        Au = eval_Abar(tableau, state.u[:k])
        Aphi = eval_Abar(tableau, state.phi[:k])
        tail_u = np.zeros_like(Cu)
        tail_phi = np.zeros_like(Cphi)
        for bi, ub, pb in zip(b[1:], state.ubar, state.phibar):
            tail_u += bi * ub
            tail_phi += bi * pb

        conv = fem.assemble_convection_rhs(Cu[order], sp_)
        rhs_u = np.empty_like(Cu)
        rhs_p = np.empty_like(Cphi)
        uD = np.empty((J, len(D)))
        phiD = np.empty((J, len(pD)))
        base_u = -(sm.M_f @ Au.T).T / dt - (self.AS @ tail_u.T).T - (sm.C_gamma @ Cphi.T).T
        base_p = -(sm.M_p @ Aphi.T).T / dt - (sm.A_p_mean @ tail_phi.T).T + (sm.C_gamma.T @ Cu.T).T
        for pos, j in enumerate(order):
            m = self.members[j]
            lu, _ = self.loads.velocity(m.inp, tb)
            lp, _ = self.loads.head(m.inp, tb)
            rhs_u[j] = base_u[j] + lu - conv[pos]
            rhs_p[j] = base_p[j] + lp
            if m.dS is not None:
                rhs_u[j] -= m.dS @ Cu[j]
            if m.dA is not None:
                rhs_p[j] -= m.dA @ Cphi[j]
            uD[j] = self.bc.velocity(m.inp.u_bc, t1)
            phiD[j] = self.bc.head(m.inp.phi_bc, t1)
        clock = self._tick("rhs", clock)

        top = rhs_u[:, f] - (ops.K_fD @ uD.T).T
        bottom = (self.B_D @ uD.T).T + (sm.B_div @ tail_u.T).T / b[0]
        sol = ops.ns.solve(np.hstack([top, bottom])[order].T).T
        dsol = ops.darcy.solve((rhs_p[:, pf] - (ops.H_fD @ phiD.T).T)[order].T).T
        inv = np.empty_like(order)
        inv[order] = np.arange(J)
        sol, dsol = sol[inv], dsol[inv]
        clock = self._tick("solve", clock)

        nf = len(f)
        ubar = np.empty_like(Cu)
        ubar[:, f] = sol[:, :nf]
        ubar[:, D] = uD
        X = sol[:, nf:]
        phibar = np.empty_like(Cphi)
        phibar[:, pf] = dsol
        phibar[:, pD] = phiD
        p_new = recover_pressure(X, state.p[:k - 1], tableau)

        # auxiliary scalar
        r_new = np.empty(J)
        Mu = (sm.M_f @ ubar.T).T
        Mp = (sm.M_p @ phibar.T).T
        Au_ = (sm.A_f @ ubar.T).T
        Sp = (sm.S_bjs_mean @ ubar.T).T
        Ap = (sm.A_p_mean @ phibar.T).T
        if self.boundary_power:
            Ru = (ops.K @ ubar.T).T - (sm.B_div.T @ X.T).T - rhs_u
            Rp = (ops.H @ phibar.T).T - rhs_p
            outer = self._outflow_power(ubar) if len(sp_.mesh.gamma_f) else np.zeros(J)
        for j in range(J):
            m = self.members[j]
            lu, fsq_u = self.loads.velocity(m.inp, t1)
            lp, fsq_p = self.loads.head(m.inp, t1)
            u_j, ph_j = ubar[j], phibar[j]
            slip = u_j @ Sp[j] + (u_j @ (m.dS @ u_j) if m.dS is not None else 0.0)
            cond = ph_j @ Ap[j] + (ph_j @ (m.dA @ ph_j) if m.dA is not None else 0.0)
            work = u_j @ lu + ph_j @ lp
            if self.boundary_power:
                work += uD[j] @ Ru[j, D] + phiD[j] @ Rp[j, pD] - outer[j]
            mass_sq = u_j @ Mu[j] + ph_j @ Mp[j]
            terms = _sav.DissipationTerms(viscous=u_j @ Au_[j], conductive=cond, slip=slip,
                                         work=work, forcing_sq=fsq_u + fsq_p, mass_sq=mass_sq)
            E = 0.5 * mass_sq
            Dj = _sav.dissipation(terms, m.params)
            r_new[j] = _sav.update_r(state.r[j], E, Dj, m.params, dt, fsq_u + fsq_p)
        E_all = 0.5 * (np.einsum("ji,ji->j", ubar, Mu) + np.einsum("ji,ji->j", phibar, Mp))
        c_r = np.array([m.params.c_r for m in self.members])
        xi = _sav.compute_xi(r_new, E_all, c_r)
        eta = _sav.compute_eta(xi, k)
        self._tick("sav", clock)

        depth = len(state.ubar)
        state.ubar = [ubar] + state.ubar[:depth - 1]
        state.u = [eta[:, None] * ubar] + state.u[:depth - 1]
        state.phibar = [phibar] + state.phibar[:depth - 1]
        state.phi = [eta[:, None] * phibar] + state.phi[:depth - 1]
        state.p = [p_new] + state.p[:depth - 1]
        state.r, state.xi, state.eta = r_new, xi, eta
        state.t = t1
        state.n += 1
        return state

    def _outflow_power(self, U):
        """``1/2 int_{Gamma_f} |u|^2 (u.n_out)`` for each row of ``U``."""
        eq = self.sp.eq_u_outer
        # the trace on Gamma_f depends on the Dirichlet dofs only; dropping the rest keeps
        # round-off in the vanishing cell basis functions from leaking in when U is large
        Ub = np.zeros_like(U)
        Ub[:, self.sp.u_dirichlet] = U[:, self.sp.u_dirichlet]
        Ue = Ub[:, self.sp.u_edge_index(eq)]
        uq = np.einsum("jeac,eqa->jeqc", Ue, eq.phi)
        un = np.einsum("jeqc,ec->jeq", uq, eq.normal)
        return 0.5 * np.einsum("jeq,jeq,eq->j", np.einsum("jeqc,jeqc->jeq", uq, uq), un, eq.w)

    def record(self, state):
        sm = self.sm
        U, P = state.u[0], state.phi[0]
        nu = np.sqrt(np.maximum(np.einsum("ji,ji->j", U, (sm.M_f @ U.T).T), 0))
        nphi = np.sqrt(np.maximum(np.einsum("ji,ji->j", P, (sm.mass_phi @ P.T).T), 0))
        E = 0.5 * nu ** 2 + 0.5 * np.einsum("ji,ji->j", P, (sm.M_p @ P.T).T)
        return StepRecord(state.n, state.t, state.r.copy(), state.xi.copy(), state.eta.copy(),
                          E, nu, nphi)


# -- initialization -----------------------------------------------------------------

def _energy_rows(sm, U, P):
    return 0.5 * (np.einsum("ji,ji->j", U, (sm.M_f @ U.T).T)
                  + np.einsum("ji,ji->j", P, (sm.M_p @ P.T).T))


def _initial_level(sp_, inputs):
    """Velocity and head at t = 0: initial-data callables of ``xy``, else the analytic solution."""
    J = len(inputs)
    U = np.zeros((J, sp_.n_u))
    P = np.zeros((J, sp_.n_phi))
    for j, inp in enumerate(inputs):
        ex = inp.exact
        if inp.u0 is not None:
            U[j] = fem.interpolate(inp.u0, sp_.velocity)
        elif ex is not None:
            U[j] = fem.interpolate(ex.u, sp_.velocity, 0.0)
        if inp.phi0 is not None:
            P[j] = fem.interpolate(inp.phi0, sp_.head)
        elif ex is not None:
            P[j] = fem.interpolate(ex.phi, sp_.head, 0.0)
    return U, P


def init_ensemble(cfg, inputs, stepper, start=None):
    """Fill the order-k histories; returns the state at ``t = (k-1) dt`` (``k dt`` if level 0 is skipped)."""
    start = start or cfg.start
    sp_, sm = stepper.sp, stepper.sm
    k, dt = cfg.k, cfg.dt
    c_r = np.array([m.params.c_r for m in stepper.members])
    J = len(inputs)
    if start == "exact":
        if any(inp.exact is None for inp in inputs):
            raise MissingAnalyticSolutionError("exact start needs an analytic solution for every realization")
        levels = [_exact_level(sp_, inputs, i * dt) for i in range(k)][::-1]
        U = [lv[0] for lv in levels]
        P = [lv[1] for lv in levels]
        Pr = [lv[2] for lv in levels]
        r = _energy_rows(sm, U[0], P[0]) + c_r
        return EnsembleState((k - 1) * dt, k - 1, list(U), [u.copy() for u in U],
                             list(P), [p.copy() for p in P], list(Pr), r,
                             np.ones(J), np.ones(J))

    U0, P0 = _initial_level(sp_, inputs)
    zero_p = np.zeros((J, sp_.n_p))
    r0 = _energy_rows(sm, U0, P0) + c_r
    depth = max(k, 2)
    state = EnsembleState(0.0, 0, [U0] + [U0] * (depth - 1), [U0.copy()] + [U0] * (depth - 1),
                          [P0] + [P0] * (depth - 1), [P0.copy()] + [P0] * (depth - 1),
                          [zero_p] * depth, r0, np.ones(J), np.ones(J))
    if k == 1:
        return state
    # data incompatible at t = 0 (e.g. switched-on boundary fluxes) start with an initial
    # layer; the main extrapolations must not reach back across it, so level 0 is dropped
    skip = int(cfg.n_steps >= k and not _compatible_initial_level(stepper, U0, P0))
    m = 1 if k == 2 else max(1, math.ceil(dt / dt ** (k / 2.0) - 1e-9))
    m *= cfg.startup_refine
    s = dt / m
    n_e = cfg.euler_substeps
    eul = euler_tableau()
    for _ in range(n_e):
        stepper.step(state, eul, s / n_e)
    state.t = s
    lvl = (state.ubar[0], state.u[0], state.phibar[0], state.phi[0], state.p[0])
    promoted = [(U0, U0, P0, P0, zero_p)]
    # reset spacing: history is [level s, level 0]
    state.ubar = [lvl[0], U0] + [U0] * (depth - 2)
    state.u = [lvl[1], U0] + [U0] * (depth - 2)
    state.phibar = [lvl[2], P0] + [P0] * (depth - 2)
    state.phi = [lvl[3], P0] + [P0] * (depth - 2)
    state.p = [lvl[4]] + [zero_p] * (depth - 1)
    state.n = 1
    if m == 1:
        promoted.append(lvl)
    bdf2 = make_tableau(2, cfg.startup_beta)
    for i in range(2, (k - 1 + skip) * m + 1):
        stepper.step(state, bdf2, s)
        if i % m == 0:
            promoted.append((state.ubar[0], state.u[0], state.phibar[0], state.phi[0], state.p[0]))
    promoted = promoted[-k:][::-1]
    state.ubar = [q[0] for q in promoted]
    state.u = [q[1] for q in promoted]
    state.phibar = [q[2] for q in promoted]
    state.phi = [q[3] for q in promoted]
    state.p = [q[4] for q in promoted]
    state.t = (k - 1 + skip) * dt
    state.n = k - 1 + skip
    return state


def _compatible_initial_level(stepper, U0, P0, rtol=1e-8):
    """True when the initial fields already carry the Dirichlet values of ``t = 0``."""
    for j, m in enumerate(stepper.members):
        uD = stepper.bc.velocity(m.inp.u_bc, 0.0)
        phiD = stepper.bc.head(m.inp.phi_bc, 0.0)
        for got, want in ((U0[j, stepper.sp.u_dirichlet], uD), (P0[j, stepper.sp.phi_dirichlet], phiD)):
            if np.abs(got - want).max(initial=0.0) > rtol * max(1.0, np.abs(want).max(initial=0.0)):
                return False
    return True


def _exact_level(sp_, inputs, t):
    J = len(inputs)
    U = np.empty((J, sp_.n_u))
    P = np.empty((J, sp_.n_phi))
    Pr = np.empty((J, sp_.n_p))
    for j, inp in enumerate(inputs):
        ex = inp.exact
        U[j] = fem.interpolate(ex.u, sp_.velocity, t)
        P[j] = fem.interpolate(ex.phi, sp_.head, t)
        Pr[j] = fem.interpolate(ex.p, sp_.pressure, t)
    return U, P, Pr


# -- drivers --------------------------------------------------------------------------

def sample_parameters(sp_, inputs, physics):
    """Conductivity (J, E, Q, 2, 2) at head quadrature and slip (J, Ni, Qe) on the interface."""
    cq = sp_.cq_phi
    Kq = np.stack([fem.conductivity_at(inp.K, cq.xq) for inp in inputs])
    eq = sp_.eq_phi_gamma
    if len(eq.edges):
        eta = np.stack([fem.interface_eta(sp_, inp.K, physics) for inp in inputs])
    else:
        eta = np.ones((len(inputs), 0, 0))
    return Kq, eta


def _members(sp_, inputs, Kq, eta_q, Kbar, etabar, cfg):
    out = []
    for j, inp in enumerate(inputs):
        dA = None
        if not np.array_equal(Kq[j], Kbar):
            dA = fem.fluctuation_K_matrix(sp_, Kq[j], Kbar, cfg.physics.g)
        dS = None
        if eta_q.size and not np.array_equal(eta_q[j], etabar):
            dS = fem.fluctuation_bjs_matrix(sp_, eta_q[j], etabar)
        out.append(_Member(inp, inp.sav or cfg.sav, dS, dA))
    return out


def _poincare_estimate(mesh):
    v = mesh.vertices
    return float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))


def _run_group(cfg, sp_, sm, members, inputs, timers, counters, order=None):
    stepper = _Stepper(sp_, sm, members, cfg.physics, cfg.boundary_power, timers)
    n_fact0 = linalg.factorization_count()
    state = init_ensemble(cfg, inputs, stepper)
    counters["startup_factorizations"] += linalg.factorization_count() - n_fact0
    n_fact1 = linalg.factorization_count()
    tab = make_tableau(cfg.k, cfg.beta)
    records = [stepper.record(state)]
    for _ in range(state.n, cfg.n_steps):
        stepper.step(state, tab, cfg.dt, order=order)
        counters["steps"] += 1
        records.append(stepper.record(state))
    counters["main_factorizations"] += linalg.factorization_count() - n_fact1
    return state, records, stepper


def _merge_states(states):
    s0 = states[0]
    cat = lambda name: [np.concatenate([getattr(s, name)[i] for s in states])
                        for i in range(len(getattr(s0, name)))]
    return EnsembleState(s0.t, s0.n, cat("ubar"), cat("u"), cat("phibar"), cat("phi"), cat("p"),
                         np.concatenate([s.r for s in states]),
                         np.concatenate([s.xi for s in states]),
                         np.concatenate([s.eta for s in states]))


def _merge_records(groups):
    out = []
    for recs in zip(*groups):
        r0 = recs[0]
        out.append(StepRecord(r0.n, r0.t, *(np.concatenate([getattr(r, name) for r in recs])
                                            for name in ("r", "xi", "eta", "energy", "norm_u", "norm_phi"))))
    return out


def run(cfg, inputs, mesh, observers=(), sp_=None, order=None):
    """Integrate all realizations to ``cfg.t_end``.

    Observers are called with each :class:`StepRecord` (after startup and
    after every main step). In ensemble mode exactly two factorizations are
    made for the main time loop; bootstrap startup adds its own.
    """
    if len(inputs) != cfg.J:
        raise ValueError(f"got {len(inputs)} realization inputs for J={cfg.J}")
    timers = {"assembly": 0.0, "factorization": 0.0, "rhs": 0.0, "solve": 0.0, "sav": 0.0}
    counters = {"steps": 0, "main_factorizations": 0, "startup_factorizations": 0}
    wall0 = time.perf_counter()
    n_fact = linalg.factorization_count()

    t0 = time.perf_counter()
    if sp_ is None:
        sp_ = fem.build_spaces(mesh, cfg.deg_u, cfg.deg_p, cfg.deg_phi)
    Kq, eta_q = sample_parameters(sp_, inputs, cfg.physics)
    fem.check_spd(Kq)
    Kbar, etabar = mean_fields(Kq, eta_q)
    tab = make_tableau(cfg.k, cfg.beta)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = check_parameter_condition(Kq, eta_q, tab) if eta_q.size else None
        k_min = float(np.linalg.eigvalsh(Kq)[..., 0].min())
        rho_max = min(_sav.check_rho_max(inp.sav or cfg.sav, cfg.physics, _poincare_estimate(mesh), k_min)
                      for inp in inputs)
        if rho_max <= 0:
            warnings.warn(f"rho_max = {rho_max:.4g} <= 0 for the chosen SAV parameters", stacklevel=2)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    timers["assembly"] += time.perf_counter() - t0

    if cfg.mode == "ensemble":
        t0 = time.perf_counter()
        sm = fem.assemble_static(mesh, sp_, cfg.physics, Kbar, etabar)
        members = _members(sp_, inputs, Kq, eta_q, Kbar, etabar, cfg)
        timers["assembly"] += time.perf_counter() - t0
        state, records, _ = _run_group(cfg, sp_, sm, members, inputs, timers, counters, order)
    else:
        states, groups = [], []
        for j, inp in enumerate(inputs):
            t0 = time.perf_counter()
            sm = fem.assemble_static(mesh, sp_, cfg.physics, Kq[j], eta_q[j])
            members = _members(sp_, [inp], Kq[j:j + 1], eta_q[j:j + 1], Kq[j], eta_q[j], cfg)
            timers["assembly"] += time.perf_counter() - t0
            s, recs, _ = _run_group(cfg, sp_, sm, members, [inp], timers, counters)
            states.append(s)
            groups.append(recs)
        counters["steps"] //= cfg.J
        state, records = _merge_states(states), _merge_records(groups)
    for rec in records:
        for obs in observers:
            obs(rec)

    counters["factorizations"] = linalg.factorization_count() - n_fact
    timers["total"] = time.perf_counter() - wall0
    meta = run_metadata(cfg, counters, timers)
    meta["k_min"] = k_min
    meta["rho_max"] = rho_max
    if report is not None:
        meta.update(condition_eta_ratio=report.eta_ratio, condition_eta_limit=report.eta_threshold,
                    condition_rho_ratio=report.rho_ratio, condition_rho_limit=report.rho_threshold,
                    condition_stiff_amplification=report.amplification)
    meta["warnings"] = "; ".join(str(w.message) for w in caught) or "none"
    return RunResult(state, records, counters, timers, meta, sp_, sm if cfg.mode == "ensemble" else None)


def run_metadata(cfg, counters, timers):
    meta = {
        "J": cfg.J, "k": cfg.k, "beta": cfg.beta, "dt": cfg.dt, "t_end": cfg.t_end,
        "nu": cfg.physics.nu, "g": cfg.physics.g, "S": cfg.physics.S,
        "alpha_bj": cfg.physics.alpha_bj,
        "sav.gamma": cfg.sav.gamma, "sav.alpha_sav": cfg.sav.alpha_sav, "sav.c_r": cfg.sav.c_r,
        "deg_u": cfg.deg_u, "deg_p": cfg.deg_p, "deg_phi": cfg.deg_phi,
        "seed": cfg.seed, "mode": cfg.mode, "start": cfg.start,
        "euler_substeps": cfg.euler_substeps, "startup_refine": cfg.startup_refine,
        "startup_beta": cfg.startup_beta, "boundary_power": cfg.boundary_power,
        "backend": fem.kernels.BACKEND,
    }
    meta.update({f"count.{k}": v for k, v in counters.items()})
    meta.update({f"time.{k}": round(v, 6) for k, v in timers.items()})
    return meta
