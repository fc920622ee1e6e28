"""Problem set-ups and drivers for the experiment scenarios.

Every driver takes a :class:`~nsd_ensemble.config.RunConfig` and returns a
dict of named artifacts (tables as lists of row dicts, VTK field sets and the
run metadata); writing them out is left to :mod:`nsd_ensemble.output`.
"""

import statistics
import time

import numpy as np

from . import fem, linalg, mms
from .mesh import build_coupled_rect_mesh, build_y_domain_mesh
from .scheme import NodalDirichlet, RealizationInput, run, smooth_ramp
from .stochastic import ConductivitySpec, ensemble_stats, sample_conductivities

PI = np.pi


# -- Y-domain flux boundary data -----------------------------------------------------

def flux_dirichlet_values(sp_, fluxes):
    """Velocity Dirichlet values realizing the segment fluxes ``{name: Q}``.

    ``Q > 0`` is inflow. On each segment the velocity is ``(Q/|S|)(-n_out)``
    with zero tangential part; nodes shared by two edges of a segment (a
    corner) get the average of the two edge values. The nodal values of each
    segment are then rescaled so that the discrete inflow, integrated with
    the velocity basis, equals ``Q`` to round-off. Edges of the fluid
    boundary outside every segment get zero velocity.

    Returns ``(values, flux)`` where ``values`` is ordered like
    ``sp_.u_dirichlet`` and ``flux`` holds the discrete inflow per segment.
    """
    m, V, nv = sp_.mesh, sp_.velocity, sp_.nv
    nodal = np.zeros((nv, 2))
    count = np.zeros(nv)
    for name, Q in fluxes.items():
        ids = m.flux_segments[name]
        L = m.segment_length(name)
        normals = m.edge_outward_normals(ids)
        for e, n in zip(ids, normals):
            d = V.edge_dofs([e])
            nodal[d] += -Q / L * n
            count[d] += 1
    hit = count > 0
    nodal[hit] /= count[hit, None]

    def inflow(ids):
        eq = fem.edge_quadrature(V, ids)
        uq = np.einsum("eqb,ebc->eqc", eq.phi, nodal[eq.dofs])
        return -float(np.sum(eq.w * np.einsum("eqc,ec->eq", uq, eq.normal)))

    flux = {}
    for name, Q in fluxes.items():
        ids = m.flux_segments[name]
        q = inflow(ids)
        if Q != 0:
            nodal[V.edge_dofs(ids)] *= Q / q
        flux[name] = inflow(ids)
    ud = sp_.u_dirichlet
    return nodal[ud % nv, ud // nv], flux


def segment_mean_inflow(sp_, U, name):
    """Inflow ``-int_S u.n_out`` of each row of ``U`` through segment ``name``."""
    eq = fem.edge_quadrature(sp_.velocity, sp_.mesh.flux_segments[name])
    Ue = np.asarray(U)[:, sp_.u_edge_index(eq)]
    uq = np.einsum("jebc,eqb->jeqc", Ue, eq.phi)
    return -np.einsum("jeqc,ec,eq->j", uq, eq.normal, eq.w)


def y_domain_inputs(sp_, ks, fluxes, t_ramp=0.0):
    """Zero initial data and sources; flux data switched on over ``t_ramp``."""
    values, flux = flux_dirichlet_values(sp_, fluxes)
    bc = NodalDirichlet(values, smooth_ramp(t_ramp))
    zero_u = lambda xy: np.zeros((len(xy), 2))
    zero_p = lambda xy: np.zeros(len(xy))
    inputs = [RealizationInput(K=K, u0=zero_u, phi0=zero_p, u_bc=bc, phi_bc=None) for K in ks]
    return inputs, flux


# -- vertex sampling for VTK ---------------------------------------------------------

def vertex_values(space, f, fill=0.0):
    """Values of the Lagrange field ``f`` (..., n_dofs) at mesh vertices, ``fill`` elsewhere."""
    nv = space.mesh.n_vertices
    glob = space._global
    vert = glob[glob < nv]
    f = np.asarray(f)
    out = np.full(f.shape[:-1] + (nv,), fill, dtype=float)
    out[..., vert] = f[..., :len(vert)]
    return out


def velocity_at_vertices(sp_, U):
    U = np.asarray(U)
    nv = sp_.nv
    return np.stack([vertex_values(sp_.velocity, U[..., :nv]),
                     vertex_values(sp_.velocity, U[..., nv:])], axis=-1)


def ensemble_fields(sp_, state):
    """Vertex fields of the ensemble mean and variance at the final level."""
    u_mean, u_var = ensemble_stats(state.u[0])
    phi_mean, phi_var = ensemble_stats(state.phi[0])
    return {
        "velocity_mean": velocity_at_vertices(sp_, u_mean),
        "velocity_variance": velocity_at_vertices(sp_, u_var),
        "head_mean": vertex_values(sp_.head, phi_mean),
        "head_variance": vertex_values(sp_.head, phi_var),
    }


# -- long-time forcing -----------------------------------------------------------------

def sinusoidal_forcing(amplitude, omega=1.0):
    """Bounded, time-periodic sources on the coupled rectangle."""

    def f_f(t, xy):
        x, y = xy[:, 0], xy[:, 1]
        s = amplitude * np.sin(omega * t)
        return s * np.column_stack([np.sin(PI * x) * np.sin(PI * y), np.cos(PI * x) * np.sin(PI * y)])

    def f_p(t, xy):
        x, y = xy[:, 0], xy[:, 1]
        return amplitude * np.cos(omega * t) * np.sin(PI * x) * np.sin(PI * y)

    return f_f, f_p


# -- drivers -----------------------------------------------------------------------

def _ensemble_cfg(rc, **over):
    return rc.ensemble_config(**over)


def _ks(rc, J=None):
    spec = rc.conductivity_spec()
    return sample_conductivities(spec, J or rc.ensemble.J, rc.ensemble.seed)


def run_mms_convergence(rc):
    e = rc.ensemble
    rows = mms.convergence_study(
        rc.study.ns, ks=tuple(_ks(rc)), k=e.k, beta=e.beta, t_end=e.t_end,
        physics=e.physics, sav=e.sav, dt_of_h=lambda h: h * rc.study.dt_factor,
        mode=e.mode, start=e.start)
    return {"tables": {"convergence": rows}, "metadata": _base_meta(rc)}


def run_mms_temporal(rc):
    e = rc.ensemble
    rows = mms.temporal_refinement_study(
        rc.mesh_n, rc.study.dts, rc.study.dt_ref, ks=tuple(_ks(rc)), k=e.k, beta=e.beta,
        t_end=e.t_end, physics=e.physics, sav=e.sav, start=e.start,
        startup_refine=e.startup_refine)
    return {"tables": {"temporal": rows}, "metadata": _base_meta(rc)}


def run_longtime(rc):
    e = rc.ensemble
    m = build_coupled_rect_mesh(rc.mesh_n)
    sp_ = fem.build_spaces(m, e.deg_u, e.deg_p, e.deg_phi)
    Ks = _ks(rc)
    f_f, f_p = sinusoidal_forcing(rc.study.amplitude)
    rows, meta = [], _base_meta(rc)
    for k in rc.study.orders:
        cfg = _ensemble_cfg(rc, k=k, start="bootstrap")
        zero_u = lambda xy: np.zeros((len(xy), 2))
        zero_p = lambda xy: np.zeros(len(xy))
        inputs = [RealizationInput(K=K, f_f=f_f, f_p=f_p, u0=zero_u, phi0=zero_p) for K in Ks]
        res = run(cfg, inputs, m, sp_=sp_)
        for rec in res.records:
            for j in range(cfg.J):
                rows.append({"k": k, "step": rec.n, "t": rec.t, "realization": j + 1,
                             "r": rec.r[j], "xi": rec.xi[j], "eta": rec.eta[j],
                             "energy": rec.energy[j], "norm_u": rec.norm_u[j],
                             "norm_phi": rec.norm_phi[j]})
        meta.update({f"k{k}.{key}": val for key, val in res.metadata.items()
                     if key.startswith("count.") or key in ("warnings", "rho_max")})
    return {"tables": {"longtime": rows}, "metadata": meta}


def timing_rows(rc, Js=None, repeats=None, log=None):
    """Median wall-clock of ensemble vs individual mode for each J."""
    e = rc.ensemble
    m = build_coupled_rect_mesh(rc.mesh_n)
    sp_ = fem.build_spaces(m, e.deg_u, e.deg_p, e.deg_phi)
    physics = e.physics
    ex = mms.exact_solution()
    rows = []
    phases = ("assembly", "factorization", "rhs", "solve", "sav", "total")
    # untimed warm-up: fills per-mesh caches and compiles kernels
    warm = mms.mms_inputs(sample_conductivities(rc.conductivity_spec(), 1, e.seed), physics, ex)
    run(_ensemble_cfg(rc, J=1, k=2, start="exact", t_end=2 * e.dt), warm, m, sp_=sp_)
    for J in (Js or rc.study.js):
        Ks = sample_conductivities(rc.conductivity_spec(), J, e.seed)
        inputs = mms.mms_inputs(Ks, physics, ex)
        out = {"J": J}
        for mode in ("ensemble", "individual"):
            cfg = _ensemble_cfg(rc, J=J, mode=mode, k=2, start="exact")
            samples = []
            for _ in range(repeats or rc.study.repeats):
                res = run(cfg, inputs, m, sp_=sp_)
                samples.append(res.timers)
            for ph in phases:
                out[f"{mode}.{ph}"] = statistics.median(s[ph] for s in samples)
            out[f"{mode}.factorizations"] = res.counters["factorizations"]
        ti, te = out["individual.total"], out["ensemble.total"]
        out["gain_percent"] = 100.0 * (ti - te) / ti
        rows.append(out)
        if log:
            log(f"J={J}: ensemble {te:.2f}s, individual {ti:.2f}s, gain {out['gain_percent']:.1f}%")
    return rows


def run_timing(rc):
    return {"tables": {"timing": timing_rows(rc)}, "metadata": _base_meta(rc)}


def y_domain_case(rc, fluxes, m=None, sp_=None):
    """One flux case; returns (RunResult, prescribed flux per segment, spaces)."""
    e = rc.ensemble
    m = m or build_y_domain_mesh(rc.mesh_n)
    sp_ = sp_ or fem.build_spaces(m, e.deg_u, e.deg_p, e.deg_phi)
    inputs, flux = y_domain_inputs(sp_, _ks(rc), fluxes, rc.study.ramp)
    res = run(_ensemble_cfg(rc), inputs, m, sp_=sp_)
    return res, flux, sp_


def run_y_domain(rc):
    e = rc.ensemble
    m = build_y_domain_mesh(rc.mesh_n)
    sp_ = fem.build_spaces(m, e.deg_u, e.deg_p, e.deg_phi)
    names = ("S0", "S1", "S2")
    vtk, rows, meta = {}, [], _base_meta(rc)
    meta["flux_profile"] = "uniform normal velocity per segment, rescaled to the exact discrete flux"
    for i, case in enumerate(rc.study.fluxes, start=1):
        fluxes = dict(zip(names, case))
        res, flux, _ = y_domain_case(rc, fluxes, m, sp_)
        U = res.state.u[0]
        u_mean = U.mean(axis=0, keepdims=True)
        row = {"case": i, "Q0": case[0], "Q1": case[1], "Q2": case[2],
               "prescribed_total": sum(flux.values())}
        for s in names:
            row[f"prescribed_{s}"] = flux[s]
            row[f"mean_inflow_{s}"] = float(segment_mean_inflow(sp_, u_mean, s)[0])
        rows.append(row)
        vtk[f"case{i}"] = ensemble_fields(sp_, res.state)
        meta.update({f"case{i}.{key}": val for key, val in res.metadata.items()
                     if key.startswith(("count.", "time.")) or key in ("warnings", "rho_max")})
    return {"tables": {"y_domain_fluxes": rows}, "vtk": vtk, "mesh": m, "metadata": meta}


def run_single(rc):
    """One MMS ensemble run on the coupled rectangle."""
    e = rc.ensemble
    m = build_coupled_rect_mesh(rc.mesh_n)
    Ks = _ks(rc)
    ex = mms.exact_solution()
    res = run(_ensemble_cfg(rc), mms.mms_inputs(Ks, e.physics, ex), m)
    st, sp_ = res.state, res.spaces
    errs = []
    for j in range(e.J):
        eu, ep, eh = mms.error_norms(sp_, st.u[0][j], st.p[0][j], st.phi[0][j], ex, st.t)
        errs.append({"realization": j + 1, "error_u": eu, "error_p": ep, "error_phi": eh})
    series = [{"step": r.n, "t": r.t, "realization": j + 1, "r": r.r[j], "xi": r.xi[j],
               "energy": r.energy[j], "norm_u": r.norm_u[j], "norm_phi": r.norm_phi[j]}
              for r in res.records for j in range(e.J)]
    meta = _base_meta(rc)
    meta.update({f"run.{k}": v for k, v in res.metadata.items()})
    return {"tables": {"errors": errs, "series": series},
            "vtk": {"final": ensemble_fields(sp_, st)}, "mesh": m, "metadata": meta}


DRIVERS = {
    "mms-convergence": run_mms_convergence,
    "mms-temporal": run_mms_temporal,
    "longtime": run_longtime,
    "timing": run_timing,
    "y-domain": run_y_domain,
    "single-run": run_single,
}


def _base_meta(rc):
    from .config import flatten
    meta = dict(flatten(rc))
    meta["backend"] = fem.kernels.BACKEND
    return meta


def run_scenario(rc):
    t0 = time.perf_counter()
    linalg.reset_factorization_count()
    out = DRIVERS[rc.scenario](rc)
    out["metadata"]["time.scenario"] = round(time.perf_counter() - t0, 3)
    return out
