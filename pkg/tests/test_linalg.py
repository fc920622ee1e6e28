import numpy as np
import pytest
import scipy.sparse as sp

from nsd_ensemble import fem, linalg
from nsd_ensemble.errors import SingularMatrixError
from nsd_ensemble.gbdf import make_tableau
from nsd_ensemble.stochastic import IsotropicConductivity


def _sm(sp_, K=1.3):
    physics = fem.Physics()
    Kq = fem.conductivity_at(IsotropicConductivity(K), sp_.cq_phi.xq)
    return fem.assemble_static(sp_.mesh, sp_, physics, Kq, fem.interface_eta(sp_, IsotropicConductivity(K), physics))


def test_identity():
    f = linalg.factorize(sp.identity(5, format="csc"))
    b = np.arange(5.0)
    np.testing.assert_array_equal(linalg.solve(f, b), b)


def test_two_by_two():
    f = linalg.factorize(sp.csc_matrix([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(f.solve([1.0, 1.0]), [1 / 3, 1 / 3], rtol=1e-15)
    assert f.symmetric and f.n == 2


def test_random_spd(rng):
    L = rng.standard_normal((50, 50))
    A = sp.csc_matrix(L @ L.T + 50 * np.eye(50))
    b = rng.standard_normal((50, 3))
    x = linalg.factorize(A).solve(b)
    for i in range(3):
        assert linalg.relative_residual(A, x[:, i], b[:, i]) <= 1e-10


def test_singular():
    with pytest.raises(SingularMatrixError):
        linalg.factorize(sp.csc_matrix([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        linalg.factorize(sp.csc_matrix(np.ones((2, 3))))


def test_counter():
    linalg.reset_factorization_count()
    linalg.factorize(sp.identity(3, format="csc"))
    assert linalg.factorization_count() == 1
    linalg.factorize(sp.identity(3, format="csc"))
    assert linalg.factorization_count() == 2


def test_ns_weights(rect2):
    m, sp_ = rect2
    sm = _sm(sp_)
    t = make_tableau(2, 3)
    dt = 0.125
    K = linalg.velocity_operator(sm, t, dt)
    ref = 3.5 / dt * sm.M_f + 3.0 * (sm.A_f + sm.S_bjs_mean)
    assert abs(K - ref).max() <= 1e-12
    f = sp_.u_free
    A = linalg.build_ns_matrix(sm, t, dt)
    nf = len(f)
    assert abs(A[:nf, :nf] - ref[f][:, f]).max() <= 1e-12
    assert abs(A[nf:, :nf] + sm.B_div[:, f]).max() == 0
    assert A[nf:, nf:].nnz == 0
    assert abs(A - A.T).max() <= 1e-12


def test_ns_large_dt_limit(rect2):
    m, sp_ = rect2
    sm = _sm(sp_)
    t = make_tableau(3, 3)
    f = sp_.u_free
    A = linalg.build_ns_matrix(sm, t, 1e300)
    nf = len(f)
    lim = t.b[0] * (sm.A_f + sm.S_bjs_mean)[f][:, f]
    assert abs(A[:nf, :nf] - lim).max() <= 1e-12 * abs(lim).max()


def test_darcy_matrix(rect2):
    m, sp_ = rect2
    sm = _sm(sp_)
    H = linalg.build_darcy_matrix(sm, make_tableau(2, 3), 0.1)
    assert abs(H - H.T).max() <= 1e-12
    assert np.linalg.eigvalsh(H.toarray()).min() > 0
    with pytest.raises(ValueError):
        linalg.build_darcy_matrix(sm, make_tableau(2, 3), 0.0)


def test_ns_solve_residual(rect4, rng):
    m, sp_ = rect4
    sm = _sm(sp_)
    A = linalg.build_ns_matrix(sm, make_tableau(2, 3), 1 / 4)
    f = linalg.factorize(A)
    b = rng.standard_normal((A.shape[0], 4))
    x = f.solve(b)
    for i in range(4):
        assert linalg.relative_residual(A, x[:, i], b[:, i]) <= 1e-10
    # several right-hand sides at once equal column-by-column solves
    np.testing.assert_array_equal(x[:, 2], f.solve(b[:, 2]))
