import numpy as np
import pytest
import scipy.sparse as sp

from wel.calculus import dirichlet_laplacian_matrix
from wel.errors import SolverFailure
from wel.grid import build_rectangle
from wel.solvers import amg_preconditioner, cg_solve


def test_identity_converges_in_one_step():
    b = np.arange(1.0, 11.0)
    res = cg_solve(lambda v: v, b)
    assert res.iterations == 1
    np.testing.assert_allclose(res.x, b)


def test_zero_rhs():
    res = cg_solve(sp.identity(4), np.zeros(4))
    assert res.iterations == 0 and not res.x.any()


@pytest.mark.parametrize("precond", [False, True])
def test_manufactured_solution(precond):
    g = build_rectangle((0, 0), (1, 1), h=1 / 64)
    K = dirichlet_laplacian_matrix(g)
    u = (np.sin(np.pi * g.x) * np.sin(np.pi * g.y))[g.interior_mask]
    rhs = K @ u
    M = amg_preconditioner(K) if precond else None
    res = cg_solve(K, rhs, tol=1e-12, precond=M)
    assert np.linalg.norm(res.x - u) <= 1e-10 * np.linalg.norm(u)
    assert res.residual <= 1e-11
    if precond:
        assert res.iterations < 30


def test_indefinite_operator_detected():
    g = build_rectangle((0, 0), (1, 1), h=1 / 16)
    K = dirichlet_laplacian_matrix(g)
    lam1 = 8 * 16**2 * np.sin(np.pi / 32) ** 2  # exact discrete first eigenvalue
    shifted = K - 1.5 * lam1 * sp.identity(K.shape[0])
    u = (np.sin(np.pi * g.x) * np.sin(np.pi * g.y))[g.interior_mask]
    with pytest.raises(SolverFailure) as info:
        cg_solve(shifted, u)
    assert info.value.x is not None and np.isfinite(info.value.residual)


def test_budget_exhausted_carries_best_iterate():
    g = build_rectangle((0, 0), (1, 1), h=1 / 64)
    K = dirichlet_laplacian_matrix(g)
    b = np.ones(K.shape[0])
    with pytest.raises(SolverFailure) as info:
        cg_solve(K, b, tol=1e-14, max_iter=3)
    err = info.value
    assert err.iterations == 3 and err.x.shape == b.shape and 0 < err.residual <= 1
