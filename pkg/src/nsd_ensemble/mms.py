"""Manufactured solution on the coupled rectangle and convergence drivers.

Fluid region [0,1]x[0,1], porous region [0,1]x[-1,0], interface y = 0 with
``n_f = (0, -1)``. The exact triple (with ``E = exp(t)``)::

    u   = [pi sin(pi x) cos(pi y) + x + 2y, -pi cos(pi x) sin(pi y) - y - 2x] E
    p   = cos(pi x) cos(pi y) E
    phi = (sin(pi x) cos(pi y) + 1) E

is divergence free but does not satisfy the homogeneous interface
conditions; the three interface residuals are fed back as boundary sources.
"""

from dataclasses import dataclass

import numpy as np

from . import fem
from .fem import cell_quadrature
from .scheme import EnsembleConfig, RealizationInput, run
from .mesh import build_coupled_rect_mesh

PI = np.pi


def _parts(t, xy):
    xy = np.asarray(xy, dtype=float)
    x, y = xy[:, 0], xy[:, 1]
    return (np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y),
            np.exp(t), x, y)


@dataclass(frozen=True)
class ExactSolution:
    """Analytic fields and derivatives; every callable takes ``(t, xy)``."""

    def u(self, t, xy):
        sx, cx, sy, cy, E, x, y = _parts(t, xy)
        return np.column_stack([PI * sx * cy + x + 2 * y, -PI * cx * sy - y - 2 * x]) * E

    def u_t(self, t, xy):
        return self.u(t, xy)

    def grad_u(self, t, xy):
        """(n, 2, 2) with ``[:, i, k] = d u_i / d x_k``."""
        sx, cx, sy, cy, E, _, _ = _parts(t, xy)
        g = np.empty((len(sx), 2, 2))
        g[:, 0, 0] = PI ** 2 * cx * cy + 1
        g[:, 0, 1] = -PI ** 2 * sx * sy + 2
        g[:, 1, 0] = PI ** 2 * sx * sy - 2
        g[:, 1, 1] = -PI ** 2 * cx * cy - 1
        return g * E

    def lap_u(self, t, xy):
        sx, cx, sy, cy, E, _, _ = _parts(t, xy)
        return np.column_stack([-2 * PI ** 3 * sx * cy, 2 * PI ** 3 * cx * sy]) * E

    def p(self, t, xy):
        sx, cx, sy, cy, E, _, _ = _parts(t, xy)
        return cx * cy * E

    def grad_p(self, t, xy):
        sx, cx, sy, cy, E, _, _ = _parts(t, xy)
        return np.column_stack([-PI * sx * cy, -PI * cx * sy]) * E

    def phi(self, t, xy):
        sx, cx, sy, cy, E, _, _ = _parts(t, xy)
        return (sx * cy + 1) * E

    def phi_t(self, t, xy):
        return self.phi(t, xy)

    def grad_phi(self, t, xy):
        sx, cx, sy, cy, E, _, _ = _parts(t, xy)
        return np.column_stack([PI * cx * cy, -PI * sx * sy]) * E

    def hess_phi(self, t, xy):
        sx, cx, sy, cy, E, _, _ = _parts(t, xy)
        h = np.empty((len(sx), 2, 2))
        h[:, 0, 0] = h[:, 1, 1] = -PI ** 2 * sx * cy
        h[:, 0, 1] = h[:, 1, 0] = -PI ** 2 * cx * sy
        return h * E


def exact_solution():
    return ExactSolution()


def _constant_tensor(K):
    """Spatially constant conductivity as a (2, 2) array."""
    if callable(K):
        vals = np.asarray(K(np.zeros((1, 2))), dtype=float)
        if vals.ndim == 3:
            return vals[0]
        return float(vals.reshape(-1)[0]) * np.eye(2)
    K = np.asarray(K, dtype=float)
    return K if K.shape == (2, 2) else float(K) * np.eye(2)


def mms_sources(ex, physics, K):
    """Volume sources ``(f_f, f_p)`` for a spatially constant conductivity ``K``."""
    Kt = _constant_tensor(K)
    nu, S = physics.nu, physics.S

    def f_f(t, xy):
        u = ex.u(t, xy)
        conv = np.einsum("nik,nk->ni", ex.grad_u(t, xy), u)
        return ex.u_t(t, xy) - nu * ex.lap_u(t, xy) + conv + ex.grad_p(t, xy)

    def f_p(t, xy):
        return S * ex.phi_t(t, xy) - np.einsum("ab,nab->n", Kt, ex.hess_phi(t, xy))

    return f_f, f_p


def interface_residual_sources(ex, physics, K):
    """Residuals of the mass, normal-stress and slip interface conditions.

    Returns a callable ``(t, xy, n_f, tau) -> (g1, g2, g3)``; ``n_f`` points
    from the fluid into the porous region and ``n_p = -n_f``.
    """
    Kt = _constant_tensor(K)
    nu, g, a_bj = physics.nu, physics.g, physics.alpha_bj

    def residuals(t, xy, n_f, tau):
        n_f = np.broadcast_to(np.asarray(n_f, dtype=float), (len(xy), 2))
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (len(xy), 2))
        u = ex.u(t, xy)
        G = ex.grad_u(t, xy)
        dn = np.einsum("nik,nk->ni", G, n_f)             # normal derivative of u
        flux = ex.grad_phi(t, xy) @ Kt.T
        g1 = np.einsum("ni,ni->n", u, n_f) + np.einsum("ni,ni->n", flux, n_f)
        g2 = (ex.p(t, xy) - nu * np.einsum("ni,ni->n", dn, n_f)
              + 0.5 * np.einsum("ni,ni->n", u, u) - g * ex.phi(t, xy))
        eta = a_bj * nu * np.sqrt(2.0) / np.sqrt(np.einsum("ni,ij,nj->n", tau, Kt, tau))
        g3 = -nu * np.einsum("ni,ni->n", dn, tau) - eta * np.einsum("ni,ni->n", u, tau)
        return g1, g2, g3

    return residuals


def mms_inputs(ks, physics, ex=None, sav=None):
    """Realization inputs for the manufactured problem, one per conductivity."""
    from .stochastic import IsotropicConductivity
    ex = ex or exact_solution()
    out = []
    for k in ks:
        K = k if callable(k) else IsotropicConductivity(k)
        f_f, f_p = mms_sources(ex, physics, K)
        out.append(RealizationInput(
            K=K, f_f=f_f, f_p=f_p, u_bc=ex.u, phi_bc=ex.phi,
            interface=interface_residual_sources(ex, physics, K), exact=ex, sav=sav))
    # the momentum source does not depend on K; share one callable so loads are reused
    for inp in out[1:]:
        inp.f_f = out[0].f_f
    return out


def error_norms(sp_, u_h, p_h, phi_h, ex, t, degree=fem.ASSEMBLY_DEGREE + 2):
    """L2 errors against the analytic fields, by quadrature (not interpolants)."""
    cu = cell_quadrature(sp_.velocity, degree)
    cp = cell_quadrature(sp_.pressure, degree)
    ch = cell_quadrature(sp_.head, degree)
    du = fem.eval_velocity(sp_, u_h, cu) - ex.u(t, cu.xq.reshape(-1, 2)).reshape(cu.xq.shape)
    dp = fem.eval_scalar(sp_.pressure, p_h, cp) - ex.p(t, cp.xq.reshape(-1, 2)).reshape(cp.wq.shape)
    dh = fem.eval_scalar(sp_.head, phi_h, ch) - ex.phi(t, ch.xq.reshape(-1, 2)).reshape(ch.wq.shape)
    eu = np.sqrt(np.sum(cu.wq * np.einsum("eqc,eqc->eq", du, du)))
    ep = np.sqrt(np.sum(cp.wq * dp * dp))
    eh = np.sqrt(np.sum(ch.wq * dh * dh))
    return float(eu), float(ep), float(eh)


def rates(errors, sizes):
    """Observed orders between successive entries; first entry is NaN."""
    e = np.asarray(errors, dtype=float)
    s = np.asarray(sizes, dtype=float)
    out = np.full(len(e), np.nan)
    out[1:] = np.log(e[:-1] / e[1:]) / np.log(s[:-1] / s[1:])
    return out


def _tabulate(sizes, errs, size_name):
    """errs[i][j] = (eu, ep, ephi) for size i, realization j -> list of row dicts."""
    rows = []
    J = len(errs[0])
    for j in range(J):
        cols = np.array([errs[i][j] for i in range(len(sizes))])
        r = [rates(cols[:, c], sizes) for c in range(3)]
        for i, s in enumerate(sizes):
            rows.append({size_name: s, "error_u": cols[i, 0], "rate_u": r[0][i],
                         "error_p": cols[i, 1], "rate_p": r[1][i],
                         "error_phi": cols[i, 2], "rate_phi": r[2][i], "realization": j + 1})
    return rows


def convergence_study(ns, ks=(1.1, 2.1, 3.3), k=2, beta=3.0, t_end=0.5, physics=None,
                      sav=None, dt_of_h=lambda h: h, mode="ensemble", start="exact"):
    """Errors at ``t_end`` on a sequence of meshes with ``dt = dt_of_h(h)``."""
    physics = physics or fem.Physics()
    ex = exact_solution()
    sizes, errs = [], []
    for n in ns:
        h = 1.0 / n
        m = build_coupled_rect_mesh(n)
        cfg = EnsembleConfig(J=len(ks), k=k, beta=beta, dt=dt_of_h(h), t_end=t_end,
                             physics=physics, mode=mode, start=start,
                             **({"sav": sav} if sav is not None else {}))
        res = run(cfg, mms_inputs(ks, physics, ex), m)
        st = res.state
        errs.append([error_norms(res.spaces, st.u[0][j], st.p[0][j], st.phi[0][j], ex, st.t)
                     for j in range(cfg.J)])
        sizes.append(h)
    return _tabulate(sizes, errs, "h")


def temporal_refinement_study(n, dts, dt_ref, ks=(1.1, 2.1, 3.3), k=3, beta=3.0, t_end=0.5,
                              physics=None, sav=None, start="bootstrap", startup_refine=1,
                              ref_mode="individual"):
    """Time-step errors on a fixed mesh measured against a fine-step reference run.

    Spatial error is common to every run and cancels in the differences.
    Errors are L2 norms computed with the assembled mass matrices.

    The reference only has to approximate the ``dt -> 0`` limit of the
    semi-discrete problem, which both modes share. By default it is run in
    individual mode: with a wide ensemble spread the explicit fluctuation
    terms of ensemble mode grow over the many steps of a fine run.
    """
    physics = physics or fem.Physics()
    ex = exact_solution()
    m = build_coupled_rect_mesh(n)
    sp_ = fem.build_spaces(m)

    def solve(dt, mode="ensemble"):
        cfg = EnsembleConfig(J=len(ks), k=k, beta=beta, dt=dt, t_end=t_end, physics=physics, mode=mode,
                             start=start, startup_refine=startup_refine, **({"sav": sav} if sav is not None else {}))
        return run(cfg, mms_inputs(ks, physics, ex), m, sp_=sp_)

    ref = solve(dt_ref, ref_mode)
    Mp = fem.mass_matrix(sp_.pressure, sp_.cq_p)
    errs = []
    for dt in dts:
        res = solve(dt)
        st, sm = res.state, res.matrices
        row = []
        for j in range(len(ks)):
            du = st.u[0][j] - ref.state.u[0][j]
            dp = st.p[0][j] - ref.state.p[0][j]
            dh = st.phi[0][j] - ref.state.phi[0][j]
            row.append((fem.l2_norm(sm.M_f, du), fem.l2_norm(Mp, dp), fem.l2_norm(sm.mass_phi, dh)))
        errs.append(row)
    return _tabulate(list(dts), errs, "dt")
