"""Structured triangulations of the two coupled free-flow/porous geometries.

Triangles carry a subdomain tag (``FLUID`` or ``POROUS``). Edges are
classified into

* ``gamma_f``   -- outer boundary of the fluid region,
* ``gamma_p``   -- outer boundary of the porous region,
* ``interface`` -- interior edges separating fluid from porous triangles,

and named flux segments (subsets of ``gamma_f``) may be attached.
"""

from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path

from .errors import ResolutionMismatchError

FLUID = 0
POROUS = 1

# Y-domain decagon (free-flow region) in the unit square.
Y_DECAGON = np.array([
    (0.0, 1.0),     # A
    (0.0, 0.75),    # B
    (0.5, 0.25),    # C
    (0.5, 0.0),     # D
    (0.75, 0.0),    # E
    (0.75, 0.25),   # F
    (1.0, 0.25),    # G
    (1.0, 0.5),     # H
    (0.75, 0.5),    # I
    (0.25, 1.0),    # J
])


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray        # (N, 2)
    triangles: np.ndarray       # (M, 3), counter-clockwise
    subdomain: np.ndarray       # (M,) FLUID | POROUS
    edges: np.ndarray           # (Ne, 2), sorted vertex pairs
    tri_edges: np.ndarray       # (M, 3); local edge l joins local vertices l, l+1
    edge_tris: np.ndarray       # (Ne, 2); second entry -1 on the boundary
    gamma_f: np.ndarray
    gamma_p: np.ndarray
    interface: np.ndarray
    interface_normal: np.ndarray    # (Ni, 2) n_f, fluid -> porous
    interface_tangent: np.ndarray   # (Ni, 2) n_f rotated by +90 degrees
    flux_segments: dict = field(default_factory=dict)
    h: float = float("nan")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edge_lengths(self, edge_ids):
        p = self.vertices[self.edges[edge_ids]]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def edge_outward_normals(self, edge_ids, side=None):
        """Unit normals of ``edge_ids`` pointing out of their owning triangle.

        ``side`` selects the owner on interior edges (``FLUID``/``POROUS``);
        boundary edges have a single owner.
        """
        owners = self.edge_owner(edge_ids, side)
        p = self.vertices[self.edges[edge_ids]]
        t = p[:, 1] - p[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        n /= np.linalg.norm(n, axis=1)[:, None]
        cen = self.vertices[self.triangles[owners]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, cen - p[:, 0]) > 0
        n[flip] *= -1
        return n

    def edge_owner(self, edge_ids, side=None):
        et = self.edge_tris[edge_ids]
        if side is None:
            return et[:, 0]
        first = self.subdomain[et[:, 0]] == side
        return np.where(first, et[:, 0], et[:, 1])

    def segment_length(self, name):
        return float(self.edge_lengths(self.flux_segments[name]).sum())


def _edge_structure(triangles):
    m = len(triangles)
    local = np.stack([triangles[:, [0, 1]], triangles[:, [1, 2]],
                      triangles[:, [2, 0]]], axis=1).reshape(-1, 2)
    key = np.sort(local, axis=1)
    edges, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    tri_edges = inv.reshape(m, 3)
    edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
    owner = np.repeat(np.arange(m), 3)
    order = np.argsort(inv, kind="stable")
    counts = np.bincount(inv, minlength=len(edges))
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    edge_tris[:, 0] = owner[order[starts]]
    two = counts == 2
    edge_tris[two, 1] = owner[order[starts[two] + 1]]
    return edges, tri_edges, edge_tris


def build_mesh(vertices, triangles, subdomain, flux_segments=None, h=float("nan")):
    """Assemble a :class:`Mesh`, deriving edges and boundary/interface tags.

    ``flux_segments`` maps names to predicates ``pred(midpoints) -> bool mask``
    evaluated on ``gamma_f`` edge midpoints.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    subdomain = np.asarray(subdomain, dtype=np.int8)
    edges, tri_edges, edge_tris = _edge_structure(triangles)
    boundary = edge_tris[:, 1] < 0
    sub0 = subdomain[edge_tris[:, 0]]
    sub1 = np.where(boundary, -1, subdomain[np.maximum(edge_tris[:, 1], 0)])
    gamma_f = np.flatnonzero(boundary & (sub0 == FLUID))
    gamma_p = np.flatnonzero(boundary & (sub0 == POROUS))
    interface = np.flatnonzero(~boundary & (sub0 != sub1))

    mesh = Mesh(vertices, triangles, subdomain, edges, tri_edges, edge_tris,
                gamma_f, gamma_p, interface,
                np.zeros((0, 2)), np.zeros((0, 2)), {}, h)
    n_f = mesh.edge_outward_normals(interface, side=FLUID)
    tangent = np.column_stack([-n_f[:, 1], n_f[:, 0]])
    segs = {}
    if flux_segments:
        mid = vertices[edges[gamma_f]].mean(axis=1)
        for name, pred in flux_segments.items():
            segs[name] = gamma_f[np.asarray(pred(mid), dtype=bool)]
    return Mesh(vertices, triangles, subdomain, edges, tri_edges, edge_tris,
                gamma_f, gamma_p, interface, n_f, tangent, segs, h)


def _grid(nx, ny, x0, y0, h, diagonal):
    xs = x0 + h * np.arange(nx + 1)
    ys = y0 + h * np.arange(ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    if diagonal == "ll-ur":
        t1 = np.column_stack([v00, v10, v11])
        t2 = np.column_stack([v00, v11, v01])
    elif diagonal == "ul-lr":
        t1 = np.column_stack([v00, v10, v01])
        t2 = np.column_stack([v10, v11, v01])
    else:
        raise ValueError(f"unknown diagonal orientation {diagonal!r}")
    tris = np.stack([t1, t2], axis=1).reshape(-1, 3)
    return verts, tris


def build_coupled_rect_mesh(n):
    """Omega_f = [0,1]x[0,1] over Omega_p = [0,1]x[-1,0], ``n`` cells per unit length."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    h = 1.0 / n
    verts, tris = _grid(n, 2 * n, 0.0, -1.0, h, "ll-ur")
    cy = verts[tris][:, :, 1].mean(axis=1)
    sub = np.where(cy > 0.0, FLUID, POROUS)
    return build_mesh(verts, tris, sub, h=h)


def build_y_domain_mesh(n):
    """Unit square with the decagonal conduit region tagged as fluid.

    Cells are split along the lower-right/upper-left diagonal so that the
    slanted decagon sides (slope -1) are resolved exactly by mesh edges.
    """
    n = int(n)
    if n < 4 or n % 4:
        raise ResolutionMismatchError(
            f"n={n}: decagon vertices lie on the grid only for n a positive multiple of 4")
    h = 1.0 / n
    verts, tris = _grid(n, n, 0.0, 0.0, h, "ul-lr")
    cen = verts[tris].mean(axis=1)
    inside = Path(Y_DECAGON).contains_points(cen)
    sub = np.where(inside, FLUID, POROUS)
    tol = 1e-12
    segs = {
        # S0 = AB u JA (inlets), S1 = DE, S2 = GH (outlets)
        "S0": lambda m: ((np.abs(m[:, 0]) < tol) & (m[:, 1] > 0.75 - tol))
        | ((np.abs(m[:, 1] - 1) < tol) & (m[:, 0] < 0.25 + tol)),
        "S1": lambda m: (np.abs(m[:, 1]) < tol) & (m[:, 0] > 0.5 - tol) & (m[:, 0] < 0.75 + tol),
        "S2": lambda m: (np.abs(m[:, 0] - 1) < tol) & (m[:, 1] > 0.25 - tol) & (m[:, 1] < 0.5 + tol),
    }
    return build_mesh(verts, tris, sub, flux_segments=segs, h=h)


def validate_mesh(m):
    """Check the structural invariants of ``m``; return a list of violations."""
    problems = []
    areas = m.signed_areas()
    for t in np.flatnonzero(areas <= 0):
        problems.append(f"triangle {t}: non-positive signed area {areas[t]:.3g}")

    et = m.edge_tris[m.interface]
    if np.any(et[:, 1] < 0):
        problems.append("interface edge on the domain boundary")
    else:
        subs = np.sort(m.subdomain[et], axis=1)
        bad = ~((subs[:, 0] == FLUID) & (subs[:, 1] == POROUS))
        for e in m.interface[bad]:
            problems.append(f"interface edge {e}: not shared by one fluid and one porous triangle")

    n = m.interface_normal
    tau = m.interface_tangent
    if len(n):
        if not np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12):
            problems.append("interface normals are not unit vectors")
        if not np.allclose(np.linalg.norm(tau, axis=1), 1.0, atol=1e-12):
            problems.append("interface tangents are not unit vectors")
        if np.max(np.abs(np.einsum("ij,ij->i", n, tau))) > 1e-12:
            problems.append("interface tangent not orthogonal to normal")
        porous = m.edge_owner(m.interface, side=POROUS)
        mid = m.vertices[m.edges[m.interface]].mean(axis=1)
        cen = m.vertices[m.triangles[porous]].mean(axis=1)
        wrong = np.einsum("ij,ij->i", n, cen - mid) <= 0
        for e in m.interface[wrong]:
            problems.append(f"interface edge {e}: normal does not point into the porous side")

    boundary = np.flatnonzero(m.edge_tris[:, 1] < 0)
    tagged = np.concatenate([m.gamma_f, m.gamma_p])
    if len(tagged) != len(np.unique(tagged)):
        problems.append("boundary edge tagged both gamma_f and gamma_p")
    if not np.array_equal(np.sort(tagged), boundary):
        problems.append("gamma_f and gamma_p do not partition the boundary")
    if np.intersect1d(m.interface, boundary).size:
        problems.append("interface edge lies on the domain boundary")
    for name, ids in m.flux_segments.items():
        if np.setdiff1d(ids, m.gamma_f).size:
            problems.append(f"flux segment {name} not contained in gamma_f")
    return problems
