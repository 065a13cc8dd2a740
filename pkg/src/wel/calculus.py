"""Discrete differential operators on a :class:`~wel.grid.Grid2D`.

Scalar fields are ``(nx, ny)`` arrays; one-forms are ``(2, nx, ny)``
arrays holding the dx and dy coefficients.  All first derivatives are
centered differences.  Two Laplacians are available: the compact 5-point
stencil and the wide one, ``-D^T D`` with ``D`` the centered gradient,
which makes discrete summation by parts exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument
from .grid import Grid2D, _fmt


def _check_field(grid: Grid2D, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise InvalidArgument(f"field shape {f.shape} does not match lattice {grid.shape}")
    return f


def _check_form(grid: Grid2D, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (2,) + grid.shape:
        raise InvalidArgument(f"one-form shape {w.shape} does not match lattice {grid.shape}")
    return w


def _centered(f: np.ndarray, h: float):
    """Centered differences at every node, with zeros beyond the array."""
    p = np.pad(f, 1)
    dx = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * h)
    dy = (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * h)
    return dx, dy


def gradient(grid: Grid2D, f, padded: bool = False) -> np.ndarray:
    """Centered-difference differential ``df`` as a one-form.

    By default values are kept on interior nodes only.  With
    ``padded=True`` the field is extended by zero past the array and the
    differences are kept everywhere, which is the operator ``D`` whose
    transpose gives the wide Laplacian.
    """
    f = _check_field(grid, f)
    dx, dy = _centered(f, grid.h)
    out = np.stack([dx, dy])
    if not padded:
        out[:, ~grid.interior_mask] = 0.0
    return out


def laplacian(grid: Grid2D, f) -> np.ndarray:
    """5-point Laplace-Beltrami operator, ``exp(-2 psi) * Delta_5``."""
    f = _check_field(grid, f)
    out = np.zeros(grid.shape)
    out[1:-1, 1:-1] = (
        f[2:, 1:-1] + f[:-2, 1:-1] + f[1:-1, 2:] + f[1:-1, :-2] - 4.0 * f[1:-1, 1:-1]
    ) / grid.h**2
    out *= grid.inverse_metric_factor
    out[~grid.interior_mask] = 0.0
    return out


def divergence(grid: Grid2D, w) -> np.ndarray:
    """Flat divergence ``d_x a + d_y b`` on interior nodes."""
    w = _check_form(grid, w)
    dxa, _ = _centered(w[0], grid.h)
    _, dyb = _centered(w[1], grid.h)
    out = dxa + dyb
    out[~grid.interior_mask] = 0.0
    return out


def wide_laplacian(grid: Grid2D, f) -> np.ndarray:
    """``-D^T D f`` restricted to interior nodes (metric scaled)."""
    out = divergence(grid, gradient(grid, f, padded=True))
    return out * grid.inverse_metric_factor


def hodge_star(w) -> np.ndarray:
    """Quarter turn ``(a, b) -> (-b, a)`` on one-forms."""
    w = np.asarray(w, dtype=float)
    return np.stack([-w[1], w[0]])


def curl(grid: Grid2D, w) -> np.ndarray:
    """``*d`` on one-forms: ``exp(-2 psi) (d_x b - d_y a)`` on interior nodes."""
    w = _check_form(grid, w)
    _, dya = _centered(w[0], grid.h)
    dxb, _ = _centered(w[1], grid.h)
    out = (dxb - dya) * grid.inverse_metric_factor
    out[~grid.interior_mask] = 0.0
    return out


def integrate(grid: Grid2D, f) -> float:
    """Midpoint-rule ``integral f dvol_g`` over interior nodes."""
    f = _check_field(grid, f)
    m = grid.interior_mask
    return float(np.sum(f[m] * grid.volume_factor[m]) * grid.h**2)


def form_norm_sq(grid: Grid2D, w) -> np.ndarray:
    """Pointwise ``|w|_g^2 = exp(-2 psi) (a^2 + b^2)``."""
    w = _check_form(grid, w)
    return (w[0] ** 2 + w[1] ** 2) * grid.inverse_metric_factor


def l2_norm(grid: Grid2D, f) -> float:
    f = np.asarray(f, dtype=float)
    if f.shape == (2,) + grid.shape:
        return float(np.sqrt(integrate(grid, form_norm_sq(grid, f))))
    return float(np.sqrt(integrate(grid, f**2)))


# -- sparse operators --------------------------------------------------------


def _diff1d(n: int, h: float) -> sp.csr_matrix:
    off = np.ones(n - 1) / (2 * h)
    return sp.diags([-off, off], [-1, 1], format="csr")


def difference_matrices(grid: Grid2D):
    """Sparse ``(Dx, Dy)`` acting on flattened node values.

    Both are the padded centered differences of :func:`gradient`.
    """
    key = "difference_matrices"
    if key not in grid.cache:
        ex = sp.identity(grid.nx, format="csr")
        ey = sp.identity(grid.ny, format="csr")
        dx = sp.kron(_diff1d(grid.nx, grid.h), ey, format="csr")
        dy = sp.kron(ex, _diff1d(grid.ny, grid.h), format="csr")
        grid.cache[key] = (dx, dy)
    return grid.cache[key]


def dirichlet_laplacian_matrix(grid: Grid2D) -> sp.csr_matrix:
    """``-Delta_5`` (flat) on interior unknowns, SPD."""
    key = "dirichlet_laplacian"
    if key not in grid.cache:
        nx, ny, h = grid.nx, grid.ny, grid.h

        def second(n):
            return sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1])

        lap = (sp.kron(second(nx), sp.identity(ny)) + sp.kron(sp.identity(nx), second(ny))) / h**2
        idx = np.flatnonzero(grid.interior_mask.ravel())
        grid.cache[key] = (-lap.tocsr()[idx][:, idx]).tocsr()
    return grid.cache[key]


# -- 2x2 symmetric matrices --------------------------------------------------


@dataclass(frozen=True)
class Sym2:
    """Symmetric 2x2 matrix ``[[a11, a12], [a12, a22]]``."""

    a11: float
    a12: float
    a22: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]])

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    def contract(self, u, v) -> float:
        """``A : u (x) v = sum_ij A_ij u_i v_j``."""
        return self.a11 * u[0] * v[0] + self.a12 * (u[0] * v[1] + u[1] * v[0]) + self.a22 * u[1] * v[1]


def perp(c):
    """``c_perp = (-c2, c1)``."""
    return (-c[1], c[0])


def sym2_identity(A: Sym2, b, c) -> tuple[float, float]:
    """Both sides of the planar symmetric-matrix identity.

    ``lhs = 2 (A:b(x)c) <b,c> - (A:b(x)b)|c|^2 - (A:c(x)c)|b|^2`` and
    ``rhs = -trace(A) <b, c_perp>^2``.  The two agree for every symmetric
    ``A``; note the minus sign on the right.
    """
    bc = b[0] * c[0] + b[1] * c[1]
    bb = b[0] ** 2 + b[1] ** 2
    cc = c[0] ** 2 + c[1] ** 2
    lhs = 2 * A.contract(b, c) * bc - A.contract(b, b) * cc - A.contract(c, c) * bb
    cp = perp(c)
    rhs = -A.trace * (b[0] * cp[0] + b[1] * cp[1]) ** 2
    return lhs, rhs


# double-double helpers: a value is a pair (hi, lo) with |lo| <= ulp(hi)/2

_SPLIT = 134217729.0  # 2^27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _two_prod(a, b):
    p = a * b
    t = _SPLIT * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLIT * b
    bh = t - (t - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _dd(x):
    return x, np.zeros_like(x)


def _dd_add(x, y):
    s, e = _two_sum(x[0], y[0])
    e = e + x[1] + y[1]
    return _two_sum(s, e)


def _dd_neg(x):
    return -x[0], -x[1]


def _dd_mul(x, y):
    p, e = _two_prod(x[0], y[0])
    e = e + (x[0] * y[1] + x[1] * y[0])
    return _two_sum(p, e)


def sym2_identity_batch(a11, a12, a22, b, c):
    """Vectorised :func:`sym2_identity`; ``b`` and ``c`` have shape (n, 2).

    Both sides are evaluated in double-double arithmetic: the left side
    cancels terms of size ``|A| |b|^2 |c|^2`` down to its value, which plain
    doubles would resolve only to ~1e-16 of that size.
    """
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    a11, a12, a22 = (_dd(np.asarray(v, dtype=float)) for v in (a11, a12, a22))
    b1, b2, c1, c2 = (_dd(v) for v in (b[:, 0], b[:, 1], c[:, 0], c[:, 1]))
    mul, add = _dd_mul, _dd_add

    def form(u1, u2, v1, v2):
        cross = add(mul(u1, v2), mul(u2, v1))
        return add(add(mul(a11, mul(u1, v1)), mul(a12, cross)), mul(a22, mul(u2, v2)))

    bc = add(mul(b1, c1), mul(b2, c2))
    bb = add(mul(b1, b1), mul(b2, b2))
    cc = add(mul(c1, c1), mul(c2, c2))
    abc = form(b1, b2, c1, c2)
    lhs = add(mul(_dd(2.0 * np.ones_like(b[:, 0])), mul(abc, bc)),
              _dd_neg(add(mul(form(b1, b2, b1, b2), cc), mul(form(c1, c2, c1, c2), bb))))
    det = add(mul(b2, c1), _dd_neg(mul(b1, c2)))
    rhs = _dd_neg(mul(add(a11, a22), mul(det, det)))
    return lhs[0] + lhs[1], rhs[0] + rhs[1]


# -- CSV dumps ---------------------------------------------------------------


def field_to_csv(grid: Grid2D, f, path) -> None:
    """Write ``x,y,value`` (scalar) or ``x,y,a,b`` (one-form), row-major."""
    f = np.asarray(f, dtype=float)
    if f.shape == grid.shape:
        header, cols = ["x", "y", "value"], [f.ravel()]
    elif f.shape == (2,) + grid.shape:
        header, cols = ["x", "y", "a", "b"], [f[0].ravel(), f[1].ravel()]
    else:
        raise InvalidArgument(f"cannot dump array of shape {f.shape} on lattice {grid.shape}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(grid.x.ravel(), grid.y.ravel(), *cols):
            w.writerow([_fmt(v) for v in row])


def field_from_csv(grid: Grid2D, path) -> np.ndarray:
    """Read a dump written by :func:`field_to_csv` back onto ``grid``.

    Raises :class:`InvalidArgument` if the node coordinates do not match.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgument(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if header[:2] != ["x", "y"] or header[2:] not in (["value"], ["a", "b"]):
        raise InvalidArgument(f"unrecognised header {header}")
    data = np.array(body, dtype=float)
    if data.shape[0] != grid.nx * grid.ny:
        raise InvalidArgument(f"{path} has {data.shape[0]} nodes, lattice has {grid.nx * grid.ny}")
    tol = 1e-9 * grid.h
    if np.abs(data[:, 0] - grid.x.ravel()).max() > tol or np.abs(data[:, 1] - grid.y.ravel()).max() > tol:
        raise InvalidArgument(f"{path} was written on a different lattice")
    if header[2:] == ["value"]:
        return data[:, 2].reshape(grid.shape)
    return np.stack([data[:, 2].reshape(grid.shape), data[:, 3].reshape(grid.shape)])
