"""Shared-matrix construction, one-time factorization and repeated solves.

Both coefficient matrices are factored with SuperLU (``scipy.sparse.linalg.splu``)
using the structure-only COLAMD column ordering, so the symbolic analysis
depends on the sparsity pattern alone. The Navier-Stokes saddle-point block
is symmetric indefinite; it is factored as a general sparse LU of the
2x2 block matrix rather than with a symmetric-indefinite solver, which
scipy does not ship.
"""

from dataclasses import dataclass
import threading
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularMatrixError

_lock = threading.Lock()
_factorizations = 0


def factorization_count():
    """Number of ``factorize`` calls made so far in this process."""
    return _factorizations


def reset_factorization_count():
    global _factorizations
    with _lock:
        _factorizations = 0


@dataclass(frozen=True)
class Factorization:
    lu: object
    n: int
    symmetric: bool
    fill_nnz: int
    matrix_nnz: int
    factored_at: float

    def solve(self, rhs):
        """Solve for one (n,) or several (n, m) right-hand sides."""
        rhs = np.asarray(rhs, dtype=float)
        return self.lu.solve(rhs)


def factorize(A, symmetric=None):
    """Factor a square sparse matrix once; raises SingularMatrixError if singular."""
    global _factorizations
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got {A.shape}")
    if symmetric is None:
        symmetric = abs(A - A.T).max() <= 1e-12 * max(abs(A).max(), 1.0) if A.nnz else True
    with _lock:
        _factorizations += 1
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    diag = np.abs(lu.U.diagonal())
    if diag.size and (not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * diag.max()):
        raise SingularMatrixError("matrix is numerically singular (check the pressure null space)")
    return Factorization(lu, A.shape[0], bool(symmetric),
                         int(lu.L.nnz + lu.U.nnz), int(A.nnz), time.time())


def solve(f, rhs):
    return f.solve(rhs)


def relative_residual(A, x, b):
    r = A @ x - b
    nb = np.linalg.norm(b)
    return np.linalg.norm(r) / (nb if nb > 0 else 1.0)


def velocity_operator(sm, t, dt):
    """``(alpha/dt) M_f + b_0 (A_f + S_bjs_mean)`` on the full velocity space."""
    return ((t.alpha / dt) * sm.M_f + t.b[0] * (sm.A_f + sm.S_bjs_mean)).tocsr()


def head_operator(sm, t, dt):
    """``(alpha/dt) M_p + b_0 A_p_mean`` on the full head space."""
    return ((t.alpha / dt) * sm.M_p + t.b[0] * sm.A_p_mean).tocsr()


def build_ns_matrix(sm, t, dt):
    """Shared saddle-point matrix on free velocity dofs and all pressure dofs.

    ``[[K, -B^T], [-B, 0]]`` where the pressure unknown is the aggregated
    ``X = B_k(p^{n+1})``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    K = velocity_operator(sm, t, dt)
    f = sm.u_free
    Kff = K[f][:, f]
    Bf = sm.B_div[:, f]
    return sp.bmat([[Kff, -Bf.T], [-Bf, None]], format="csc")


def build_darcy_matrix(sm, t, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    H = head_operator(sm, t, dt)
    f = sm.phi_free
    return H[f][:, f].tocsc()
