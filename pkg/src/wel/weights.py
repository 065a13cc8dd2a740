"""Admissible weights and the weak form of ``omega^2 Lap_g ln(omega) = -kappa omega^2``.

Two analytic families are provided:

* power products ``prod |x - x_i|^alpha_i`` (``kappa = 0``), and
* Green's-function exponentials ``exp(-sum alpha_i G_{p_i})`` with ``G`` the
  discrete Dirichlet Green's function of the domain (``kappa = 0`` off the
  poles).

Arbitrary samples can be wrapped with :func:`sampled_weight`, which can also
estimate ``kappa`` pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .calculus import dirichlet_laplacian_matrix, gradient, integrate, laplacian
from .errors import InvalidArgument
from .grid import Grid2D
from .solvers import amg_preconditioner, cg_solve

OMEGA_TOL = 1e-12
GRAD_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Weight:
    grid: Grid2D
    omega: np.ndarray
    grad_omega: np.ndarray
    kappa: float | np.ndarray
    singular_points: list = field(default_factory=list)
    critical_points: list = field(default_factory=list)
    singular_nodes: np.ndarray | None = None
    critical_nodes: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def grad_norm(self) -> np.ndarray:
        return np.hypot(self.grad_omega[0], self.grad_omega[1])

    @property
    def grad_norm_sq_g(self) -> np.ndarray:
        """``|grad omega|_g^2`` including the conformal factor."""
        return (self.grad_omega[0] ** 2 + self.grad_omega[1] ** 2) * self.grid.inverse_metric_factor

    def kappa_field(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.kappa, dtype=float), self.grid.shape)

    @property
    def kappa_is_zero(self) -> bool:
        return bool(np.all(self.kappa_field()[self.grid.interior_mask] == 0.0))

    def sup_omega(self) -> float:
        """Max of omega over interior nodes."""
        return float(self.omega[self.grid.interior_mask].max())

    def scaled(self, c: float) -> "Weight":
        """The weight ``c * omega`` for ``c > 0``."""
        if not c > 0:
            raise InvalidArgument("weights can only be scaled by a positive constant")
        prov = dict(self.provenance, scale=self.provenance.get("scale", 1.0) * c)
        return replace(self, omega=c * self.omega, grad_omega=c * self.grad_omega, provenance=prov)

    def _point_nodes(self, points) -> np.ndarray:
        """Corners of the lattice cells containing ``points``."""
        g = self.grid
        out = np.zeros(g.shape, dtype=bool)
        for p in points:
            fi = (p[0] - g.origin[0]) / g.h
            fj = (p[1] - g.origin[1]) / g.h
            i0, j0 = int(np.floor(fi)), int(np.floor(fj))
            for i in (i0, i0 + 1):
                for j in (j0, j0 + 1):
                    if 0 <= i < g.nx and 0 <= j < g.ny:
                        out[i, j] = True
        return out

    def singular_region(self, margin: int = 0) -> np.ndarray:
        """Singular nodes plus corners of cells holding a singular point, dilated."""
        region = self.singular_nodes | self._point_nodes(self.singular_points)
        if margin > 0 and region.any():
            region = ndimage.binary_dilation(region, iterations=margin)
        return region

    def critical_region(self, margin: int = 0) -> np.ndarray:
        region = self.critical_nodes.copy()
        if margin > 0 and region.any():
            region = ndimage.binary_dilation(region, iterations=margin)
        return region

    def descriptor(self) -> dict:
        return dict(self.provenance)


def _finish(grid, omega, grad, kappa, singular_points, provenance,
            omega_tol, g_tol, critical_points=None) -> Weight:
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0) or not np.all(np.isfinite(omega)):
        raise InvalidArgument("weights must be finite and nonnegative")
    if critical_points is None:
        critical_points = locate_critical_points(grid, grad, singular_points)
    w = Weight(grid, omega, np.asarray(grad, dtype=float), kappa,
               singular_points=list(singular_points), critical_points=list(critical_points),
               singular_nodes=np.zeros(grid.shape, dtype=bool),
               critical_nodes=np.zeros(grid.shape, dtype=bool), provenance=provenance)
    singular = omega < omega_tol
    critical = (w.grad_norm < g_tol) & ~singular
    critical |= w._point_nodes(critical_points)
    provenance.setdefault("omega_tol", omega_tol)
    provenance.setdefault("g_tol", g_tol)
    return replace(w, singular_nodes=singular, critical_nodes=critical)


def locate_critical_points(grid: Grid2D, grad, singular_points=(), exclusion: float = 2.0) -> list:
    """Centers of lattice cells across which both gradient components change sign.

    Cells within ``exclusion * h`` of a singular point are skipped, since
    the gradient swings through every direction there without vanishing.
    """
    a, b = np.asarray(grad[0]), np.asarray(grad[1])
    closure = grid.closure_mask

    def straddles(c):
        corners = np.stack([c[:-1, :-1], c[1:, :-1], c[:-1, 1:], c[1:, 1:]])
        return (corners.min(axis=0) < 0) & (corners.max(axis=0) > 0)

    hit = straddles(a) & straddles(b)
    hit &= closure[:-1, :-1] & closure[1:, :-1] & closure[:-1, 1:] & closure[1:, 1:]
    pts = []
    for i, j in zip(*np.nonzero(hit)):
        cx = grid.origin[0] + (i + 0.5) * grid.h
        cy = grid.origin[1] + (j + 0.5) * grid.h
        if any(np.hypot(cx - p[0], cy - p[1]) < exclusion * grid.h for p in singular_points):
            continue
        pts.append((float(cx), float(cy)))
    return pts


def _power_product_critical_points(points, alphas) -> list:
    """Zeros of grad ln(omega) = sum alpha_i (x - x_i)/|x - x_i|^2.

    In complex notation this is the conjugate of sum alpha_i / (z - z_i),
    so the critical points are the roots of
    sum_i alpha_i prod_{j != i} (z - z_j).
    """
    if len(points) < 2:
        return []
    zs = [complex(p[0], p[1]) for p in points]
    poly = np.poly1d([0.0])
    for i, a in enumerate(alphas):
        term = np.poly1d([a])
        for j, z in enumerate(zs):
            if j != i:
                term = term * np.poly1d([1.0, -z])
        poly = poly + term
    roots = np.roots(poly.coeffs)
    out = []
    for r in roots:
        if min(abs(r - z) for z in zs) > 1e-12:
            out.append((float(r.real), float(r.imag)))
    return out


def power_product_weight(points, alphas, grid: Grid2D, omega_tol: float = OMEGA_TOL,
                         g_tol: float = GRAD_TOL) -> Weight:
    """``omega = prod |x - x_i|^alpha_i`` with its analytic gradient.

    Points landing on a lattice node are moved by ``(h/2, h/2)``; the
    shifted locations are recorded in the provenance.
    """
    points = [tuple(map(float, p)) for p in points]
    alphas = [float(a) for a in alphas]
    if not points or len(points) != len(alphas):
        raise InvalidArgument("need matching, non-empty lists of points and exponents")
    if any(not a > 0 for a in alphas):
        raise InvalidArgument(f"exponents must be positive, got {alphas}")
    moved = []
    shifted = []
    for p in points:
        if not grid.contains(p):
            raise InvalidArgument(f"point {p} lies outside the domain")
        q, was_moved = grid.offset_point(p)
        shifted.append(q)
        moved.append(was_moved)

    log_omega = np.zeros(grid.shape)
    glog = np.zeros((2,) + grid.shape)
    for (px, py), a in zip(shifted, alphas):
        dx = grid.x - px
        dy = grid.y - py
        r2 = dx**2 + dy**2
        log_omega += 0.5 * a * np.log(r2)
        glog[0] += a * dx / r2
        glog[1] += a * dy / r2
    omega = np.exp(log_omega)
    grad = omega * glog
    prov = {"family": "power_product", "points": [list(p) for p in points], "alphas": alphas,
            "effective_points": [list(p) for p in shifted], "offset": moved, "kappa": 0.0}
    crit = [c for c in _power_product_critical_points(shifted, alphas) if grid.contains(c)]
    return _finish(grid, omega, grad, 0.0, shifted, prov, omega_tol, g_tol, critical_points=crit)


def green_function(grid: Grid2D, p, tol: float = 1e-10, max_iter: int = 2000) -> np.ndarray:
    """Discrete Dirichlet Green's function with pole at the node nearest ``p``.

    Solves ``Delta_5 G = -delta / h^2`` on interior nodes with ``G = 0``
    off the mask, so ``-Delta G`` carries unit discrete mass.  The flat
    stencil is used on conformal grids too: ``Delta_g G dvol_g`` equals
    ``Delta G dx`` in two dimensions.
    """
    i, j = grid.index_of(p)
    if not (0 <= i < grid.nx and 0 <= j < grid.ny) or not grid.interior_mask[i, j]:
        raise InvalidArgument(f"pole {tuple(p)} is not at an interior node")
    K = dirichlet_laplacian_matrix(grid)
    idx = np.flatnonzero(grid.interior_mask.ravel())
    rhs = np.zeros(idx.size)
    rhs[np.searchsorted(idx, i * grid.ny + j)] = 1.0 / grid.h**2
    key = "dirichlet_laplacian_amg"
    if key not in grid.cache:
        grid.cache[key] = amg_preconditioner(K)
    sol = cg_solve(K, rhs, tol=tol, max_iter=max_iter, precond=grid.cache[key])
    G = np.zeros(grid.shape)
    G.ravel()[idx] = sol.x
    return G


def green_exponential_weight(points, alphas, grid: Grid2D, omega_tol: float = OMEGA_TOL,
                             g_tol: float = GRAD_TOL, tol: float = 1e-10) -> Weight:
    """``omega = exp(-sum alpha_i G_{p_i})``; empty lists give ``omega = 1``."""
    points = [tuple(map(float, p)) for p in points]
    alphas = [float(a) for a in alphas]
    if len(points) != len(alphas):
        raise InvalidArgument("points and exponents differ in length")
    if any(not a > 0 for a in alphas):
        raise InvalidArgument(f"exponents must be positive, got {alphas}")
    log_omega = np.zeros(grid.shape)
    poles = []
    for p, a in zip(points, alphas):
        log_omega -= a * green_function(grid, p, tol=tol)
        i, j = grid.index_of(p)
        poles.append((float(grid.x[i, j]), float(grid.y[i, j])))
    omega = np.exp(log_omega)
    gx, gy = np.gradient(log_omega, grid.h)
    grad = omega * np.stack([gx, gy])
    prov = {"family": "green_exponential", "points": [list(p) for p in points], "alphas": alphas,
            "poles": [list(p) for p in poles], "kappa": 0.0}
    return _finish(grid, omega, grad, 0.0, poles, prov, omega_tol, g_tol)


def constant_weight(grid: Grid2D, value: float = 1.0) -> Weight:
    if not value > 0:
        raise InvalidArgument("constant weight must be positive")
    prov = {"family": "constant", "value": float(value), "kappa": 0.0}
    return _finish(grid, np.full(grid.shape, float(value)), np.zeros((2,) + grid.shape), 0.0, [],
                   prov, OMEGA_TOL, GRAD_TOL, critical_points=[])


def estimate_kappa(grid: Grid2D, omega) -> np.ndarray:
    """Pointwise ``kappa = -Lap_g ln(omega)`` on interior nodes."""
    omega = np.asarray(omega, dtype=float)
    with np.errstate(divide="ignore"):
        lw = np.log(omega)
    if not np.all(np.isfinite(lw[grid.closure_mask])):
        raise InvalidArgument("omega vanishes on the domain; kappa is undefined there")
    return -laplacian(grid, np.where(np.isfinite(lw), lw, 0.0))


def sampled_weight(grid: Grid2D, omega, kappa=0.0, grad_omega=None, singular_points=(),
                   omega_tol: float = OMEGA_TOL, g_tol: float = GRAD_TOL) -> Weight:
    """Wrap user samples.  ``kappa='field'`` estimates it from the samples."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != grid.shape:
        raise InvalidArgument("samples do not match the lattice")
    if grad_omega is None:
        gx, gy = np.gradient(omega, grid.h)
        grad_omega = np.stack([gx, gy])
    if isinstance(kappa, str):
        if kappa != "field":
            raise InvalidArgument(f"kappa must be a number or 'field', got {kappa!r}")
        kappa = estimate_kappa(grid, omega)
        kdesc = "field"
    else:
        kdesc = kappa if np.isscalar(kappa) else "field"
    prov = {"family": "sampled", "kappa": kdesc}
    return _finish(grid, omega, grad_omega, kappa, list(singular_points), prov, omega_tol, g_tol)


@dataclass(frozen=True)
class WeakResidual:
    value: float
    trusted: bool

    def __float__(self):
        return self.value


def weak_equation_residual(w: Weight, phi, kappa=None) -> WeakResidual:
    """``int (4|grad w|^2 - 2 kappa w^2) phi - w^2 Lap_g phi dvol_g``.

    The gradient of omega is recomputed from the samples by centered
    differences, so this checks the sampled weight rather than whatever
    gradient it was built with.  The result is marked untrusted when the
    support of ``phi`` reaches the immediate neighbours of a singular node.
    """
    grid = w.grid
    phi = np.asarray(phi, dtype=float)
    if phi.shape != grid.shape:
        raise InvalidArgument("test function does not match the lattice")
    kap = w.kappa_field() if kappa is None else np.broadcast_to(np.asarray(kappa, float), grid.shape)
    dw = gradient(grid, w.omega)
    dw2 = (dw[0] ** 2 + dw[1] ** 2) * grid.inverse_metric_factor
    support = phi != 0
    support = ndimage.binary_dilation(support) if support.any() else support
    if np.any(support & ~grid.interior_mask):
        raise InvalidArgument("test function must vanish within one node of the mask boundary")
    # sum by parts: int w^2 Lap_g phi = int phi Lap_g(w^2) for such phi, and the
    # right side is exactly zero for constant w
    w2 = w.omega**2
    with np.errstate(invalid="ignore"):
        integrand = np.where(phi != 0, (4 * dw2 - 2 * kap * w2) * phi - phi * laplacian(grid, w2), 0.0)
    trusted = not bool(np.any(support & w.singular_region(1)))
    return WeakResidual(integrate(grid, integrand), trusted)


def weight_from_descriptor(desc: dict, grid: Grid2D, omega_tol: float = OMEGA_TOL,
                           g_tol: float = GRAD_TOL) -> Weight:
    """Build a weight from its JSON descriptor.

    Recognised families: ``power_product``, ``green_exponential``,
    ``constant`` and ``sampled`` (with ``samples`` naming a CSV dump).
    """
    if not isinstance(desc, dict) or "family" not in desc:
        raise InvalidArgument(f"malformed weight descriptor: {desc!r}")
    allowed = {"family", "points", "alphas", "kappa", "value", "samples"}
    unknown = set(desc) - allowed
    if unknown:
        raise InvalidArgument(f"unknown weight descriptor keys: {sorted(unknown)}")
    fam = desc["family"]
    if fam == "power_product":
        return power_product_weight(desc.get("points", []), desc.get("alphas", []), grid, omega_tol, g_tol)
    if fam == "green_exponential":
        return green_exponential_weight(desc.get("points", []), desc.get("alphas", []), grid, omega_tol, g_tol)
    if fam == "constant":
        return constant_weight(grid, desc.get("value", 1.0))
    if fam == "sampled":
        from .calculus import field_from_csv

        if "samples" not in desc:
            raise InvalidArgument("sampled weights need a 'samples' CSV path")
        omega = field_from_csv(grid, desc["samples"])
        return sampled_weight(grid, omega, desc.get("kappa", "field"), omega_tol=omega_tol, g_tol=g_tol)
    raise InvalidArgument(f"unknown weight family {fam!r}")


def parse_weight_shorthand(text: str) -> dict:
    """Descriptor for shorthand strings such as ``|x|``, ``|x|^0.5`` or ``|x||x-e1|``.

    Anything starting with ``{`` is parsed as JSON.
    """
    import json
    import re

    s = text.strip().replace(" ", "")
    if s.startswith("{"):
        try:
            return json.loads(s)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"malformed weight JSON: {exc}") from None
    if s in ("1", "const", "constant"):
        return {"family": "constant", "value": 1.0}
    if s == "|x||x-e1|":
        return {"family": "power_product", "points": [[0.0, 0.0], [1.0, 0.0]], "alphas": [1.0, 1.0]}
    m = re.fullmatch(r"\|x\|(?:\^\(?([0-9.eE+-]+)\)?)?", s)
    if m:
        alpha = float(m.group(1)) if m.group(1) else 1.0
        return {"family": "power_product", "points": [[0.0, 0.0]], "alphas": [alpha]}
    raise InvalidArgument(f"unrecognised weight {text!r}")
