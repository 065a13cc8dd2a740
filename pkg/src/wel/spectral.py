"""First Dirichlet eigenvalue and log-polar cylinder energies.

The cylinder ``C = [0, T] x S^1`` carries ``t = -ln|x|`` and the polar
angle; a function on the unit disk maps to ``u = |x| f``.  Fields on the
cylinder are stored as Fourier modes in the angle, each a complex profile
in ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from .calculus import dirichlet_laplacian_matrix
from .errors import InvalidArgument, SolverFailure
from .grid import Grid2D
from .solvers import amg_preconditioner, cg_solve


class EigenResult(NamedTuple):
    lambda1: float
    iterations: int
    mode: np.ndarray

    def report(self, grid: Grid2D) -> dict:
        return {"lambda1": self.lambda1, "iterations": self.iterations, "h": grid.h,
                "domain": grid.descriptor()}


def first_dirichlet_eigenvalue(grid: Grid2D, tol: float = 1e-8, max_iter: int = 500,
                               cg_tol: float = 1e-10) -> EigenResult:
    """Smallest eigenvalue of ``-Lap_g`` with zero Dirichlet data.

    Inverse power iteration on the generalized problem
    ``-Delta_5 u = lambda exp(2 psi) u``; every step is one CG solve.
    Stops when successive Rayleigh quotients differ by less than
    ``tol * lambda``.
    """
    if grid.interior_count == 0:
        raise InvalidArgument("grid has no interior nodes")
    K = dirichlet_laplacian_matrix(grid)
    mass = grid.volume_factor[grid.interior_mask]
    key = "dirichlet_laplacian_amg"
    if key not in grid.cache:
        grid.cache[key] = amg_preconditioner(K)
    M = grid.cache[key]

    u = np.ones(K.shape[0])
    u /= np.sqrt(u @ (mass * u))
    lam_old = (u @ (K @ u))
    for it in range(1, max_iter + 1):
        sol = cg_solve(K, mass * u, tol=cg_tol, x0=u / lam_old, precond=M)
        v = sol.x
        v /= np.sqrt(v @ (mass * v))
        lam = v @ (K @ v)
        u = v
        if abs(lam - lam_old) < tol * lam:
            mode = np.zeros(grid.shape)
            mode[grid.interior_mask] = u
            return EigenResult(float(lam), it, mode)
        lam_old = lam
    raise SolverFailure(f"inverse iteration did not settle in {max_iter} steps",
                        x=u, residual=abs(lam - lam_old) / lam, iterations=max_iter)


# -- log-polar cylinder ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CylinderField:
    """Angular Fourier modes ``u_m(t)``, ``m = -M..M``, on ``t in [0, t_max]``."""

    t_max: float
    modes: np.ndarray  # shape (2M+1, nt), row k holds m = k - M

    @property
    def nt(self) -> int:
        return self.modes.shape[1]

    @property
    def M(self) -> int:
        return (self.modes.shape[0] - 1) // 2

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.nt)

    @property
    def m(self) -> np.ndarray:
        return np.arange(-self.M, self.M + 1)

    def mode(self, m: int) -> np.ndarray:
        return self.modes[m + self.M]

    def scaled(self, c: float) -> "CylinderField":
        return CylinderField(self.t_max, c * self.modes)

    @classmethod
    def from_function(cls, func, t_max: float = 12.0, nt: int = 1024, M: int = 32) -> "CylinderField":
        """Sample ``func(t, theta)`` and keep the angular modes ``|m| <= M``."""
        t = np.linspace(0.0, t_max, nt)
        return cls(t_max, _angular_modes(func, t, M))

    def evaluate(self, t, theta) -> np.ndarray:
        """Real part of the mode sum at arbitrary ``(t, theta)``."""
        t = np.asarray(t, dtype=float)
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(np.broadcast(t, theta).shape, dtype=complex)
        tt = self.t
        for m, prof in zip(self.m, self.modes):
            if not np.any(prof):
                continue
            spline_r = CubicSpline(tt, prof.real)
            spline_i = CubicSpline(tt, prof.imag)
            out += (spline_r(t) + 1j * spline_i(t)) * np.exp(1j * m * theta)
        return out.real


def _angular_modes(func, t, M):
    ntheta = 4 * M + 4
    theta = 2 * np.pi * np.arange(ntheta) / ntheta
    samples = np.asarray(func(t[None, :], theta[:, None]), dtype=float) * np.ones((ntheta, t.size))
    coeffs = np.fft.fft(samples, axis=0) / ntheta
    ms = np.arange(-M, M + 1)
    return coeffs[ms % ntheta]


def logpolar_transform(grid: Grid2D, f, t_max: float = 12.0, nt: int = 1024, M: int = 32) -> CylinderField:
    """Pull ``f`` on the unit disk back to ``u(t, theta) = |x| f(x)``.

    ``f`` must vanish outside ``exp(-t_max) < |x| < 1``.  Values between
    nodes come from cubic spline interpolation on the lattice.
    """
    dom = grid.domain
    if dom.get("type") != "disk" or dom.get("radius") != 1.0:
        raise InvalidArgument("log-polar transform needs a unit-disk grid")
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise InvalidArgument("field does not match the lattice")
    cx, cy = dom["center"]
    r = np.hypot(grid.x - cx, grid.y - cy)
    outside = (r <= np.exp(-t_max)) | (r >= 1.0)
    if np.any(f[outside] != 0):
        raise InvalidArgument("support of f leaves the annulus exp(-t_max) < |x| < 1")

    coeffs = ndimage.spline_filter(f, order=3, mode="constant")

    def u(t, theta):
        rad = np.exp(-t)
        px = (cx + rad * np.cos(theta) - grid.origin[0]) / grid.h
        py = (cy + rad * np.sin(theta) - grid.origin[1]) / grid.h
        shape = np.broadcast(px, py).shape
        px = np.broadcast_to(px, shape)
        py = np.broadcast_to(py, shape)
        vals = ndimage.map_coordinates(coeffs, [px.ravel(), py.ravel()], order=3,
                                       mode="constant", prefilter=False)
        return rad * vals.reshape(shape)

    t = np.linspace(0.0, t_max, nt)
    return CylinderField(t_max, _angular_modes(u, t, M))


def inverse_logpolar(grid: Grid2D, u: CylinderField) -> np.ndarray:
    """``f = |x|^{-1} u`` on the lattice; zero outside the represented annulus."""
    cx, cy = grid.domain.get("center", (0.0, 0.0))
    dx = grid.x - cx
    dy = grid.y - cy
    r = np.hypot(dx, dy)
    inside = (r > np.exp(-u.t_max)) & (r < 1.0)
    f = np.zeros(grid.shape)
    vals = u.evaluate(-np.log(r[inside]), np.arctan2(dy[inside], dx[inside]))
    f[inside] = vals / r[inside]
    return f


def _dt(prof, dt):
    return np.gradient(prof, dt, edge_order=2)


def _dtt(prof, dt):
    out = np.empty_like(prof)
    out[1:-1] = (prof[2:] - 2 * prof[1:-1] + prof[:-2]) / dt**2
    out[0] = (2 * prof[0] - 5 * prof[1] + 4 * prof[2] - prof[3]) / dt**2
    out[-1] = (2 * prof[-1] - 5 * prof[-2] + 4 * prof[-3] - prof[-4]) / dt**2
    return out


class CylinderEnergies(NamedTuple):
    zeroth: float
    first: float
    fourth: float


def cylinder_energies(u: CylinderField, eps: float = 0.0) -> CylinderEnergies:
    """Mode-wise energies of ``u`` on the truncated cylinder.

    * ``zeroth = int |u|^2 e^{-2 eps t}``
    * ``first = int (|grad u|^2 + |u|^2) e^{-2 eps t}``
    * ``fourth = int |u_tt|^2 + 2|u_t theta|^2 + 2|u_t|^2 + |u_theta theta + u|^2``

    ``fourth`` equals ``int |Lap u + 2 u_t + u|^2`` once boundary terms in
    ``t`` drop out; it is only defined for ``eps = 0`` (NaN otherwise).
    """
    if eps < 0:
        raise InvalidArgument("eps must be nonnegative")
    t = u.t
    dt = t[1] - t[0]
    decay = np.exp(-2 * eps * t)
    zeroth = first = fourth = 0.0
    for m, prof in zip(u.m, u.modes):
        if not np.any(prof):
            continue
        p1 = _dt(prof, dt)
        a0 = np.abs(prof) ** 2
        a1 = np.abs(p1) ** 2
        zeroth += simpson(a0 * decay, x=t)
        first += simpson((a1 + m**2 * a0 + a0) * decay, x=t)
        if eps == 0:
            p2 = _dtt(prof, dt)
            dens = np.abs(p2) ** 2 + (2 * m**2 + 2) * a1 + (1 - m**2) ** 2 * a0
            fourth += simpson(dens, x=t)
    scale = 2 * np.pi
    return CylinderEnergies(float(scale * zeroth), float(scale * first),
                            float(scale * fourth) if eps == 0 else float("nan"))


def cylinder_fourth_direct(u: CylinderField) -> float:
    """``int |Lap u + 2 u_t + u|^2`` without integrating by parts."""
    t = u.t
    dt = t[1] - t[0]
    total = 0.0
    for m, prof in zip(u.m, u.modes):
        if not np.any(prof):
            continue
        dens = _dtt(prof, dt) + 2 * _dt(prof, dt) + (1 - m**2) * prof
        total += simpson(np.abs(dens) ** 2, x=t)
    return float(2 * np.pi * total)
