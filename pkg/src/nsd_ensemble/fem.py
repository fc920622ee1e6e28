"""Lagrange finite-element spaces and assembly of the coupled weak forms.

Velocity vectors are stored component-blocked: ``u[c * nv + a]`` is
component ``c`` at scalar dof ``a`` of the velocity space. Spatial
callables take an ``(n, 2)`` array of points; time-dependent ones take
``(t, xy)``.

Dirichlet conditions are handled by lifting: constrained rows and columns
are removed from the factored systems and their known values moved to the
right-hand side.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import NonSPDConductivityError, SpaceMismatchError, UnstablePairError
from .mesh import FLUID, POROUS
from .quadrature import line_rule, triangle_rule

ASSEMBLY_DEGREE = 6
EDGE_DEGREE = 7


# -- reference Lagrange basis -------------------------------------------------

def lagrange_nodes(p):
    """Reference nodes: vertices, edge-interior nodes (edge l runs v_l -> v_{l+1}), interior."""
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [v[0], v[1], v[2]]
    for l in range(3):
        a, b = v[l], v[(l + 1) % 3]
        for i in range(1, p):
            nodes.append(a + (i / p) * (b - a))
    for j in range(1, p):
        for i in range(1, p - j):
            nodes.append(np.array([i / p, j / p]))
    return np.array(nodes)


def _monomials(p):
    return [(a, s - a) for s in range(p + 1) for a in range(s + 1)]


class LagrangeBasis:
    def __init__(self, degree):
        self.degree = degree
        self.nodes = lagrange_nodes(degree)
        self._exps = _monomials(degree)
        V = self._mono(self.nodes)
        self.coeffs = np.linalg.inv(V)

    @property
    def n(self):
        return len(self.nodes)

    def _mono(self, pts):
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([x ** a * y ** b for a, b in self._exps], axis=-1)

    def _mono_grad(self, pts):
        x, y = pts[..., 0], pts[..., 1]
        gx = [a * x ** max(a - 1, 0) * y ** b if a else np.zeros_like(x) for a, b in self._exps]
        gy = [b * x ** a * y ** max(b - 1, 0) if b else np.zeros_like(x) for a, b in self._exps]
        return np.stack([np.stack(gx, -1), np.stack(gy, -1)], axis=-1)

    def eval(self, pts):
        return self._mono(np.asarray(pts, float)) @ self.coeffs

    def grad(self, pts):
        g = self._mono_grad(np.asarray(pts, float))
        return np.einsum("...mk,mb->...bk", g, self.coeffs)


# -- spaces -------------------------------------------------------------------

class ScalarSpace:
    """Continuous Lagrange space of given degree on the triangles ``cells``."""

    def __init__(self, mesh, degree, cells):
        self.mesh = mesh
        self.degree = degree
        self.cells = np.asarray(cells, dtype=np.int64)
        self.basis = LagrangeBasis(degree)
        p = degree
        nv, ne = mesh.n_vertices, len(mesh.edges)
        n_int = max(0, (p - 1) * (p - 2) // 2)
        tris = mesh.triangles[self.cells]
        cols = [tris]
        for l in range(3):
            if p < 2:
                break
            e = mesh.tri_edges[self.cells, l]
            forward = tris[:, l] < tris[:, (l + 1) % 3]
            idx = np.arange(p - 1)
            loc = np.where(forward[:, None], idx[None, :], (p - 2 - idx)[None, :])
            cols.append(nv + e[:, None] * (p - 1) + loc)
        if n_int:
            cols.append(nv + ne * (p - 1) + self.cells[:, None] * n_int + np.arange(n_int)[None, :])
        gdofs = np.concatenate(cols, axis=1)
        used, inv = np.unique(gdofs, return_inverse=True)
        self._global = used
        self.cell_dofs = inv.reshape(gdofs.shape)
        self.n_dofs = len(used)
        pts = self.map_points(self.basis.nodes)
        coords = np.empty((self.n_dofs, 2))
        coords[self.cell_dofs.ravel()] = pts.reshape(-1, 2)
        self.dof_coords = coords

    @cached_property
    def jacobians(self):
        v = self.mesh.vertices[self.mesh.triangles[self.cells]]
        J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        return v[:, 0], J

    def map_points(self, ref):
        """Reference points (Q, 2) -> physical (E, Q, 2)."""
        x0, J = self.jacobians
        return x0[:, None, :] + np.einsum("eij,qj->eqi", J, ref)

    def edge_dofs(self, edge_ids):
        """Sorted local dofs lying on the closure of the given mesh edges."""
        p = self.degree
        m = self.mesh
        edge_ids = np.asarray(edge_ids, dtype=np.int64)
        g = [m.edges[edge_ids].ravel()]
        if p >= 2:
            g.append((m.n_vertices + edge_ids[:, None] * (p - 1) + np.arange(p - 1)).ravel())
        g = np.unique(np.concatenate(g))
        loc = np.searchsorted(self._global, g)
        ok = (loc < len(self._global)) & (self._global[np.minimum(loc, len(self._global) - 1)] == g)
        return np.sort(loc[ok])

    def cell_of(self, tri_ids):
        """Position of mesh triangles within ``self.cells``."""
        lookup = -np.ones(self.mesh.n_triangles, dtype=np.int64)
        lookup[self.cells] = np.arange(len(self.cells))
        pos = lookup[tri_ids]
        if np.any(pos < 0):
            raise SpaceMismatchError("triangle outside the space's subdomain")
        return pos


@dataclass
class CellQuadrature:
    xq: np.ndarray      # (E, Q, 2)
    wq: np.ndarray      # (E, Q)
    phi: np.ndarray     # (Q, nb)
    dphi: np.ndarray    # (E, Q, nb, 2)


def cell_quadrature(space, degree=ASSEMBLY_DEGREE):
    ref, w = triangle_rule(degree)
    x0, J = space.jacobians
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv_T = np.linalg.inv(J).transpose(0, 2, 1)
    phi = space.basis.eval(ref)
    dref = space.basis.grad(ref)                       # (Q, nb, 2)
    dphi = np.einsum("eij,qbj->eqbi", Jinv_T, dref)
    return CellQuadrature(space.map_points(ref), np.abs(det)[:, None] * w[None, :],
                          phi, dphi)


@dataclass
class EdgeQuadrature:
    edges: np.ndarray       # mesh edge ids
    cell: np.ndarray        # owning position within space.cells
    dofs: np.ndarray        # (Ne, nb) owning-cell dofs
    xq: np.ndarray          # (Ne, Qe, 2)
    w: np.ndarray           # (Ne, Qe) weight * length
    phi: np.ndarray         # (Ne, Qe, nb)
    dphi: np.ndarray        # (Ne, Qe, nb, 2)
    normal: np.ndarray      # (Ne, 2) outward from the owning cell
    tangent: np.ndarray     # (Ne, 2)


def edge_quadrature(space, edge_ids, side=None, degree=EDGE_DEGREE):
    m = space.mesh
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    s, ws = line_rule(degree)
    p = m.vertices[m.edges[edge_ids]]
    L = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    xq = p[:, None, 0, :] + s[None, :, None] * (p[:, 1] - p[:, 0])[:, None, :]
    owners = m.edge_owner(edge_ids, side)
    cell = space.cell_of(owners)
    x0, J = space.jacobians
    Jinv = np.linalg.inv(J[cell])
    ref = np.einsum("eij,eqj->eqi", Jinv, xq - x0[cell][:, None, :])
    phi = space.basis.eval(ref)
    dref = space.basis.grad(ref)
    dphi = np.einsum("eji,eqbj->eqbi", Jinv, dref)
    normal = m.edge_outward_normals(edge_ids, side)
    tangent = np.column_stack([-normal[:, 1], normal[:, 0]])
    return EdgeQuadrature(edge_ids, cell, space.cell_dofs[cell], xq,
                          L[:, None] * ws[None, :], phi, dphi, normal, tangent)


def _scatter_matrix(index, n):
    """Sparse (n, index.size) matrix summing flattened local values into globals."""
    index = np.asarray(index).ravel()
    return sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))),
                         shape=(n, index.size))


def _assemble(rows, cols, local, shape):
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    A = sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


@dataclass
class FESpaces:
    mesh: object
    deg_u: int
    deg_p: int
    deg_phi: int
    velocity: ScalarSpace
    pressure: ScalarSpace
    head: ScalarSpace
    u_dirichlet: np.ndarray       # indices into the full velocity vector
    phi_dirichlet: np.ndarray
    quad_degree: int = ASSEMBLY_DEGREE
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def nv(self):
        return self.velocity.n_dofs

    @property
    def n_u(self):
        return 2 * self.velocity.n_dofs

    @property
    def n_p(self):
        return self.pressure.n_dofs

    @property
    def n_phi(self):
        return self.head.n_dofs

    @cached_property
    def u_free(self):
        return np.setdiff1d(np.arange(self.n_u), self.u_dirichlet)

    @cached_property
    def phi_free(self):
        return np.setdiff1d(np.arange(self.n_phi), self.phi_dirichlet)

    @cached_property
    def cq_u(self):
        return cell_quadrature(self.velocity, self.quad_degree)

    @cached_property
    def cq_p(self):
        return cell_quadrature(self.pressure, self.quad_degree)

    @cached_property
    def cq_phi(self):
        return cell_quadrature(self.head, self.quad_degree)

    @cached_property
    def eq_u_gamma(self):
        """Interface quadrature seen from the fluid side."""
        return edge_quadrature(self.velocity, self.mesh.interface, side=FLUID)

    @cached_property
    def eq_phi_gamma(self):
        return edge_quadrature(self.head, self.mesh.interface, side=POROUS)

    @cached_property
    def eq_u_outer(self):
        return edge_quadrature(self.velocity, self.mesh.gamma_f)

    @cached_property
    def u_cell_index(self):
        """(E, nb, 2) positions of element velocity coefficients in the full vector."""
        d = self.velocity.cell_dofs
        return np.stack([d, d + self.nv], axis=-1)

    @cached_property
    def u_scatter(self):
        return _scatter_matrix(self.u_cell_index, self.n_u)

    @cached_property
    def phi_scatter(self):
        return _scatter_matrix(self.head.cell_dofs, self.n_phi)

    def u_edge_index(self, eq):
        return np.stack([eq.dofs, eq.dofs + self.nv], axis=-1)


def build_spaces(m, deg_u=2, deg_p=1, deg_phi=2, quad_degree=ASSEMBLY_DEGREE):
    if deg_u != deg_p + 1:
        raise UnstablePairError(f"velocity degree {deg_u} must equal pressure degree {deg_p} + 1")
    for d in (deg_u, deg_p, deg_phi):
        if d not in (1, 2, 3):
            raise ValueError(f"polynomial degree {d} not in (1, 2, 3)")
    fluid = np.flatnonzero(m.subdomain == FLUID)
    porous = np.flatnonzero(m.subdomain == POROUS)
    V = ScalarSpace(m, deg_u, fluid)
    P = ScalarSpace(m, deg_p, fluid)
    H = ScalarSpace(m, deg_phi, porous)
    vd = V.edge_dofs(m.gamma_f)
    u_dir = np.concatenate([vd, vd + V.n_dofs])
    phi_dir = H.edge_dofs(m.gamma_p)
    return FESpaces(m, deg_u, deg_p, deg_phi, V, P, H, u_dir, phi_dir, quad_degree)


# -- static operators ---------------------------------------------------------

@dataclass
class Physics:
    nu: float = 1.0
    g: float = 1.0
    S: float = 1.0
    alpha_bj: float = 1.0


@dataclass
class SystemMatrices:
    M_f: sp.csr_matrix          # velocity mass
    A_f: sp.csr_matrix          # nu * vector stiffness
    B_div: sp.csr_matrix        # (n_p, n_u): (div v, q)
    S_bjs_mean: sp.csr_matrix   # (etabar u.tau, v.tau)_Gamma
    C_gamma: sp.csr_matrix      # (n_u, n_phi): (g psi, v.n_f)_Gamma
    M_p: sp.csr_matrix          # g*S * head mass
    A_p_mean: sp.csr_matrix     # g * (Kbar grad, grad)
    mass_phi: sp.csr_matrix     # unweighted head mass
    u_free: np.ndarray
    phi_free: np.ndarray
    physics: Physics = None


def _vector_block(A):
    return sp.block_diag([A, A], format="csr")


def mass_matrix(space, cq, coef=None):
    c = np.ones_like(cq.wq) if coef is None else np.broadcast_to(coef, cq.wq.shape)
    loc = kernels.mass_local(cq.phi, c, cq.wq)
    d = space.cell_dofs
    return _assemble(d, d, loc, (space.n_dofs, space.n_dofs))


def stiffness_matrix(space, cq, tensor=None):
    if tensor is None:
        tensor = np.broadcast_to(np.eye(2), cq.wq.shape + (2, 2))
    loc = kernels.stiffness_local(cq.dphi, tensor, cq.wq)
    d = space.cell_dofs
    return _assemble(d, d, loc, (space.n_dofs, space.n_dofs))


def divergence_matrix(sp_):
    cq, cqp = sp_.cq_u, sp_.cq_p
    loc = np.einsum("eq,qp,eqac->epac", cq.wq, cqp.phi, cq.dphi)
    E, npb, nb, _ = loc.shape
    rows = np.broadcast_to(sp_.pressure.cell_dofs[:, :, None, None], loc.shape)
    cols = np.broadcast_to(sp_.u_cell_index[:, None, :, :], loc.shape)
    A = sp.coo_matrix((loc.ravel(), (rows.ravel(), cols.ravel())),
                      shape=(sp_.n_p, sp_.n_u)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def check_spd(tensors):
    t = np.asarray(tensors)
    if not np.allclose(t, np.swapaxes(t, -1, -2), rtol=1e-12, atol=1e-14):
        raise NonSPDConductivityError("conductivity tensor not symmetric")
    if np.any(np.linalg.eigvalsh(t)[..., 0] <= 0):
        raise NonSPDConductivityError("conductivity tensor not positive definite")


def conductivity_at(K, xq):
    """Evaluate a conductivity callable at (..., 2) points -> (..., 2, 2)."""
    shape = xq.shape[:-1]
    vals = np.asarray(K(xq.reshape(-1, 2)), dtype=float)
    if vals.ndim == 1 or vals.shape[-2:] != (2, 2):
        vals = np.broadcast_to(vals.reshape(-1)[:, None, None] * np.eye(2), (vals.size, 2, 2))
    return np.broadcast_to(vals, (int(np.prod(shape)), 2, 2)).reshape(shape + (2, 2))


def head_stiffness(sp_, K, g=1.0):
    """``g * (K grad phi, grad psi)`` over Omega_p for a tensor callable or (E, Q, 2, 2) array."""
    cq = sp_.cq_phi
    Kq = K if isinstance(K, np.ndarray) and K.shape == cq.wq.shape + (2, 2) else conductivity_at(K, cq.xq)
    return stiffness_matrix(sp_.head, cq, g * Kq)


def interface_slip_matrix(sp_, eta_q):
    """``(eta u.tau, v.tau)_Gamma``; eta_q sampled at interface quadrature (Ni, Qe)."""
    eq = sp_.eq_u_gamma
    tau = eq.tangent
    loc = np.einsum("iq,iqa,iqb,ic,id->iacbd", eq.w * eta_q, eq.phi, eq.phi, tau, tau)
    idx = sp_.u_edge_index(eq)
    Ni, nb = eq.dofs.shape
    loc = loc.reshape(Ni, nb * 2, nb * 2)
    idx = idx.reshape(Ni, nb * 2)
    return _assemble(idx, idx, loc, (sp_.n_u, sp_.n_u))


def interface_coupling_matrix(sp_, g=1.0):
    """``(g psi, v.n_f)_Gamma`` as an (n_u, n_phi) matrix."""
    eu, ep = sp_.eq_u_gamma, sp_.eq_phi_gamma
    loc = g * np.einsum("iq,iqa,ic,iqb->iacb", eu.w, eu.phi, eu.normal, ep.phi)
    Ni, nb, _, nbp = loc.shape
    rows = sp_.u_edge_index(eu).reshape(Ni, nb * 2)
    return _assemble(rows, ep.dofs, loc.reshape(Ni, nb * 2, nbp), (sp_.n_u, sp_.n_phi))


def eta_field(K, tangent, nu, alpha_bj, d=2):
    """BJS coefficient ``alpha_bj * nu * sqrt(d) / sqrt(tau . K . tau)``.

    ``K`` is an array of tensors (..., 2, 2) and ``tangent`` (..., 2).
    """
    from .errors import DegenerateTangentialConductivityError
    tKt = np.einsum("...i,...ij,...j->...", tangent, K, tangent)
    if np.any(tKt <= 0):
        raise DegenerateTangentialConductivityError("tau . K . tau must be positive")
    return alpha_bj * nu * np.sqrt(d) / np.sqrt(tKt)


def interface_eta(sp_, K, physics):
    """eta sampled at interface quadrature points for a conductivity callable."""
    eq = sp_.eq_phi_gamma
    Kq = conductivity_at(K, eq.xq)
    tau = np.broadcast_to(eq.tangent[:, None, :], eq.xq.shape)
    # porous-side tangent is reversed relative to the fluid side; tau.K.tau is even in tau
    return eta_field(Kq, tau, physics.nu, physics.alpha_bj)


def assemble_static(m, sp_, physics, Kbar, etabar):
    """Mean-parameter operators shared by every realization.

    ``Kbar``: conductivity callable or (E, Q, 2, 2) array at head
    quadrature; ``etabar``: callable of points or (Ni, Qe) array at
    interface quadrature.
    """
    cq = sp_.cq_phi
    Kq = Kbar if isinstance(Kbar, np.ndarray) else conductivity_at(Kbar, cq.xq)
    check_spd(Kq)
    eq = sp_.eq_u_gamma
    eta_q = etabar if isinstance(etabar, np.ndarray) else np.asarray(etabar(eq.xq.reshape(-1, 2))).reshape(eq.w.shape)
    if np.any(eta_q <= 0):
        raise ValueError("etabar must be positive on the interface")
    Mv = mass_matrix(sp_.velocity, sp_.cq_u)
    Av = stiffness_matrix(sp_.velocity, sp_.cq_u)
    Mh = mass_matrix(sp_.head, cq)
    return SystemMatrices(
        M_f=_vector_block(Mv),
        A_f=physics.nu * _vector_block(Av),
        B_div=divergence_matrix(sp_),
        S_bjs_mean=interface_slip_matrix(sp_, eta_q),
        C_gamma=interface_coupling_matrix(sp_, physics.g),
        M_p=(physics.g * physics.S) * Mh,
        A_p_mean=stiffness_matrix(sp_.head, cq, physics.g * Kq),
        mass_phi=Mh,
        u_free=sp_.u_free,
        phi_free=sp_.phi_free,
        physics=physics,
    )


# -- per-step vectors -----------------------------------------------------------

def element_values(sp_, W):
    """Full velocity vectors (J, n_u) -> element coefficients (J, E, nb, 2)."""
    return np.asarray(W)[:, sp_.u_cell_index]


def assemble_convection_rhs(w, sp_):
    """Vectors ``d(w, w, v)`` for all velocity test functions.

    ``w`` is (n_u,) or (J, n_u). The volume part uses the skew-symmetrized
    form ``((w.grad)w, v) + ((div w) w, v)/2``, the interface part
    ``-1/2 int_Gamma (w.w)(v.n_f)``.
    """
    W = np.atleast_2d(np.asarray(w, dtype=float))
    cq = sp_.cq_u
    loc = kernels.convection_local(element_values(sp_, W), cq.phi, cq.dphi, cq.wq)
    out = (sp_.u_scatter @ loc.reshape(len(W), -1).T).T
    eq = sp_.eq_u_gamma
    if len(eq.edges):
        We = W[:, sp_.u_edge_index(eq)]                       # (J, Ni, nb, 2)
        wv = np.einsum("jiac,iqa->jiqc", We, eq.phi)
        val = -0.5 * np.einsum("jiqc,jiqc->jiq", wv, wv) * eq.w
        loc_e = np.einsum("jiq,iqa,ic->jiac", val, eq.phi, eq.normal)
        idx = sp_.u_edge_index(eq).ravel()
        for j in range(len(W)):
            out[j] += np.bincount(idx, loc_e[j].ravel(), minlength=sp_.n_u)
    return out[0] if np.ndim(w) == 1 else out


def velocity_load(sp_, f, t):
    """``(f(t), v)`` for a vector source callable; also returns ||f||^2."""
    cq = sp_.cq_u
    fx = np.asarray(f(t, cq.xq.reshape(-1, 2)), dtype=float).reshape(cq.wq.shape + (2,))
    loc = np.einsum("eq,eqc,qa->eac", cq.wq, fx, cq.phi)
    vec = sp_.u_scatter @ loc.ravel()
    return vec, float(np.einsum("eq,eqc,eqc->", cq.wq, fx, fx))


def head_load(sp_, f, t):
    """``(f(t), psi)`` for a scalar source callable; also returns ||f||^2."""
    cq = sp_.cq_phi
    fx = np.asarray(f(t, cq.xq.reshape(-1, 2)), dtype=float).reshape(cq.wq.shape)
    loc = np.einsum("eq,eq,qa->ea", cq.wq, fx, cq.phi)
    return sp_.phi_scatter @ loc.ravel(), float(np.sum(cq.wq * fx * fx))


def interface_velocity_load(sp_, normal_data=None, tangential_data=None):
    """``(a, v.n_f)_Gamma + (b, v.tau)_Gamma`` with a, b sampled at interface quadrature."""
    eq = sp_.eq_u_gamma
    vals = np.zeros(eq.w.shape + (2,))
    if normal_data is not None:
        vals += normal_data[..., None] * eq.normal[:, None, :]
    if tangential_data is not None:
        vals += tangential_data[..., None] * eq.tangent[:, None, :]
    loc = np.einsum("iq,iqc,iqa->iac", eq.w, vals, eq.phi)
    return np.bincount(sp_.u_edge_index(eq).ravel(), loc.ravel(), minlength=sp_.n_u)


def interface_head_load(sp_, data):
    """``(a, psi)_Gamma`` with a sampled at interface quadrature (porous side)."""
    eq = sp_.eq_phi_gamma
    loc = np.einsum("iq,iq,iqa->ia", eq.w, data, eq.phi)
    return np.bincount(eq.dofs.ravel(), loc.ravel(), minlength=sp_.n_phi)


def fluctuation_bjs_matrix(sp_, eta_j_q, etabar_q):
    """Operator of ``((eta_j - etabar) w.tau, v.tau)_Gamma``."""
    return interface_slip_matrix(sp_, np.asarray(eta_j_q) - np.asarray(etabar_q))


def fluctuation_K_matrix(sp_, Kj_q, Kbar_q, g=1.0):
    """Operator of ``g ((K_j - Kbar) grad w, grad psi)`` over Omega_p."""
    return stiffness_matrix(sp_.head, sp_.cq_phi, g * (np.asarray(Kj_q) - np.asarray(Kbar_q)))


def apply_fluctuation_bjs(sp_, eta_j_q, etabar_q, w):
    return fluctuation_bjs_matrix(sp_, eta_j_q, etabar_q) @ w


def apply_fluctuation_K(sp_, Kj_q, Kbar_q, psi, g=1.0):
    return fluctuation_K_matrix(sp_, Kj_q, Kbar_q, g) @ psi


# -- interpolation and norms ----------------------------------------------------

def interpolate(fn, space, t=None):
    """Nodal interpolant. Vector-valued fn (n, 2) returns the component-blocked vector."""
    xy = space.dof_coords
    vals = np.asarray(fn(xy) if t is None else fn(t, xy), dtype=float)
    if vals.ndim == 2:
        return np.concatenate([vals[:, 0], vals[:, 1]])
    return np.broadcast_to(vals, (len(xy),)).copy()


def l2_norm(M, f):
    """``sqrt(f^T M f)`` for a mass matrix M."""
    return float(np.sqrt(max(f @ (M @ f), 0.0)))


def energy(sm, u, phi):
    """``||u||^2 / 2 + g S ||phi||^2 / 2`` using the assembled mass matrices."""
    return 0.5 * float(u @ (sm.M_f @ u)) + 0.5 * float(phi @ (sm.M_p @ phi))


def interface_tangential_norm(sp_, u):
    eq = sp_.eq_u_gamma
    ue = np.einsum("iac,iqa->iqc", u[sp_.u_edge_index(eq)], eq.phi)
    ut = np.einsum("iqc,ic->iq", ue, eq.tangent)
    return float(np.sqrt(np.sum(eq.w * ut * ut)))


def divergence_residual(sp_, u, B=None, Mp=None):
    """``sup_q |b(u, q)| / ||q||`` over the pressure space."""
    import scipy.sparse.linalg as spla
    B = divergence_matrix(sp_) if B is None else B
    Mp = mass_matrix(sp_.pressure, sp_.cq_p) if Mp is None else Mp
    r = B @ u
    return float(np.sqrt(max(r @ spla.spsolve(Mp.tocsc(), r), 0.0)))


def eval_velocity(sp_, u, cq):
    """Velocity (E, Q, 2) at the points of a velocity cell quadrature."""
    return np.einsum("eac,qa->eqc", u[sp_.u_cell_index], cq.phi)


def eval_scalar(space, f, cq):
    return np.einsum("ea,qa->eq", f[space.cell_dofs], cq.phi)
