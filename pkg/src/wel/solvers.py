"""Conjugate gradients for the SPD systems used throughout the package."""

from __future__ import annotations

import logging
import threading
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import SolverFailure

log = logging.getLogger(__name__)

_AMG_LOCK = threading.Lock()


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float  # relative, ||A x - b|| / ||b||


def _as_operator(apply) -> Callable[[np.ndarray], np.ndarray]:
    if sp.issparse(apply) or isinstance(apply, np.ndarray):
        return lambda v: apply @ v
    return apply


def amg_preconditioner(matrix):
    """Smoothed-aggregation AMG V-cycle as a callable preconditioner."""
    import pyamg

    # pyamg estimates spectral radii from a random start drawn from the global
    # numpy RNG; pin it so repeated runs build identical hierarchies
    with _AMG_LOCK:
        state = np.random.get_state()
        np.random.seed(0)
        try:
            ml = pyamg.smoothed_aggregation_solver(sp.csr_matrix(matrix), symmetry="symmetric")
        finally:
            np.random.set_state(state)
    return ml.aspreconditioner()


def cg_solve(apply, rhs, tol: float = 1e-10, max_iter: int = 10_000, x0=None, precond=None) -> CGResult:
    """Solve ``apply(x) = rhs`` by (preconditioned) conjugate gradients.

    ``apply`` is a matrix or a callable on flat vectors and must be
    symmetric positive definite on the subspace the iterates explore.
    Converges when ``||apply(x) - rhs|| <= tol * ||rhs||``.

    Raises :class:`SolverFailure` (carrying the best iterate) when the
    budget is exhausted or a direction of non-positive curvature shows the
    operator is not positive definite.
    """
    A = _as_operator(apply)
    M = _as_operator(precond) if precond is not None else (lambda v: v)
    b = np.asarray(rhs, dtype=float)
    shape = b.shape
    b = b.ravel()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CGResult(np.zeros(shape), 0, 0.0)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float).ravel()
    r = b - A(x) if x0 is not None else b.copy()
    z = M(r)
    p = z.copy()
    rz = r @ z
    best_x, best_res = x.copy(), np.linalg.norm(r) / bnorm
    if best_res <= tol:
        return CGResult(x.reshape(shape), 0, best_res)

    for k in range(1, max_iter + 1):
        Ap = A(p)
        curvature = p @ Ap
        if not curvature > 0:
            raise SolverFailure(
                f"operator is not positive definite (p.Ap = {curvature:.3e} at iteration {k})",
                x=best_x.reshape(shape), residual=best_res, iterations=k,
            )
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            # guard against drift of the recursive residual
            true_res = np.linalg.norm(b - A(x)) / bnorm
            if true_res <= 10 * tol:
                return CGResult(x.reshape(shape), k, true_res)
            r = b - A(x)
            z = M(r)
            p = z.copy()
            rz = r @ z
            continue
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new

    raise SolverFailure(
        f"CG did not reach tol={tol:g} in {max_iter} iterations (residual {best_res:.3e})",
        x=best_x.reshape(shape), residual=best_res, iterations=max_iter,
    )
