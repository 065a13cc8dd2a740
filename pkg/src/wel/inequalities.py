"""Both sides of the three weighted inequalities, plus test-function generators.

* ``check_ckn``:      int |grad w|^2 f^2            <= int w^2 |grad f|^2
* ``check_elliptic``: int w^2 |grad f|^2            <= tau^-1 int 2 w^4/|grad w|^2 |Lap f|^2 + 5 |grad w|^2 f^2
* ``check_epsilon``:  int w^(2+2 eps) |grad f|^2    <= C(eps) sup(w)^(2 eps) / eps^2 int w^4/|grad w|^2 |Lap f|^2

All integrals are taken with the metric of the grid.  A discretisation
slack of ``c_tol * h`` (relative) is allowed on the right-hand side.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .calculus import form_norm_sq, gradient, integrate, laplacian
from .errors import InvalidArgument
from .grid import Grid2D, grid_from_descriptor
from .seeding import stream
from .weights import Weight, weight_from_descriptor

C_TOL = 10.0
REGULARIZATION = 1e-10


def epsilon_constant(eps: float) -> float:
    """``C(eps) = (8 eps^2 + 5 (1+eps)^4) / (8 (1+eps)^2)``; tends to 5/8."""
    return (8 * eps**2 + 5 * (1 + eps) ** 4) / (8 * (1 + eps) ** 2)


def _json_float(v):
    if v is None:
        return None
    v = float(v)
    if math.isfinite(v):
        return v
    return "inf" if v > 0 else ("-inf" if v < 0 else "nan")


@dataclass
class InequalityReport:
    which: str
    lhs: float
    rhs: float
    ratio: float
    verdict: str
    margin: float
    h: float
    constants: dict = field(default_factory=dict)
    excluded_nodes: int = 0
    hypothesis_ok: bool = True
    flagged: bool = False
    rhs_regularized: float | None = None
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "pass-trivially")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("lhs", "rhs", "ratio", "margin", "h", "rhs_regularized"):
            d[k] = _json_float(d[k])
        d["constants"] = {k: _json_float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v
                          for k, v in d["constants"].items()}
        return d


def _verdict(lhs, rhs, tol_h):
    if math.isinf(rhs):
        return "pass-trivially", 0.0, 1.0
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    margin = (rhs - lhs) / rhs if rhs > 0 else (0.0 if lhs == 0 else -math.inf)
    ok = lhs <= rhs * (1 + tol_h)
    return ("pass" if ok else "fail"), ratio, margin


def _check_inputs(w: Weight, f):
    f = np.asarray(f, dtype=float)
    if f.shape != w.grid.shape:
        raise InvalidArgument("test function does not match the weight's lattice")
    return f


def _support_info(w: Weight, f):
    """(flagged, excluded count, touches critical) for the support of f."""
    supp = f != 0
    if supp.any():
        supp = ndimage.binary_dilation(supp)
    sing = w.singular_region(0)
    crit = w.critical_region(0)
    flagged = bool(np.any(supp & ndimage.binary_dilation(sing))) if sing.any() else False
    excluded = int(np.count_nonzero(supp & (sing | crit)))
    touches_critical = bool(np.any(supp & crit))
    return flagged, excluded, touches_critical


def _hessian_term(w: Weight, f, lap_f, delta=0.0):
    """``int w^4 / |grad w|_g^2 |Lap_g f|^2 dvol_g`` with 0 * inf read as 0."""
    g2 = w.grad_norm_sq_g + delta
    lap2 = lap_f**2
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(lap2 == 0, 0.0, w.omega**4 * lap2 / g2)
    return integrate(w.grid, dens)


def check_ckn(w: Weight, f, lambda1: float = 0.0, c_tol: float = C_TOL) -> InequalityReport:
    """``int |grad w|^2 f^2 <= int w^2 |grad f|^2``, valid when kappa <= lambda1."""
    f = _check_inputs(w, f)
    grid = w.grid
    df2 = form_norm_sq(grid, gradient(grid, f))
    lhs = integrate(grid, w.grad_norm_sq_g * f**2)
    rhs = integrate(grid, w.omega**2 * df2)
    kappa = w.kappa_field()[grid.interior_mask]
    hyp = bool(np.all(kappa <= lambda1))
    flagged, excluded, _ = _support_info(w, f)
    verdict, ratio, margin = _verdict(lhs, rhs, c_tol * grid.h)
    consts = {"lambda1": lambda1, "kappa": _kappa_summary(w), "c_tol": c_tol}
    return InequalityReport("CKN", lhs, rhs, ratio, verdict, margin, grid.h, consts,
                            excluded, hyp, flagged)


def check_elliptic(w: Weight, f, tau: float, lambda1: float = 0.0, c_tol: float = C_TOL) -> InequalityReport:
    """Homogeneous elliptic estimate with parameter ``0 < tau <= 2``.

    Hypothesis: ``-(lambda1/8)(2 - tau) <= kappa <= lambda1`` pointwise.
    If the support of ``f`` meets a critical node of the weight, the
    right-hand side is infinite and the verdict is ``pass-trivially``.
    """
    if not 0 < tau <= 2:
        raise InvalidArgument(f"tau must lie in (0, 2], got {tau}")
    f = _check_inputs(w, f)
    grid = w.grid
    df2 = form_norm_sq(grid, gradient(grid, f))
    lap_f = laplacian(grid, f)
    lhs = integrate(grid, w.omega**2 * df2)
    zeroth = integrate(grid, w.grad_norm_sq_g * f**2)
    flagged, excluded, touches = _support_info(w, f)
    hess_reg = _hessian_term(w, f, lap_f, REGULARIZATION)
    rhs_reg = (2 * hess_reg + 5 * zeroth) / tau
    rhs = math.inf if touches else (2 * _hessian_term(w, f, lap_f) + 5 * zeroth) / tau
    kappa = w.kappa_field()[grid.interior_mask]
    hyp = bool(np.all(kappa <= lambda1) and np.all(kappa >= -(lambda1 / 8) * (2 - tau)))
    verdict, ratio, margin = _verdict(lhs, rhs, c_tol * grid.h)
    consts = {"lambda1": lambda1, "kappa": _kappa_summary(w), "tau": tau, "c_tol": c_tol}
    return InequalityReport("ELLIPTIC", lhs, rhs, ratio, verdict, margin, grid.h, consts,
                            excluded, hyp, flagged, rhs_reg)


def check_epsilon(w: Weight, f, eps: float, c_tol: float = C_TOL) -> InequalityReport:
    """Inhomogeneous estimate with ``C(eps)``; requires ``kappa = 0``."""
    if not eps > 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    f = _check_inputs(w, f)
    grid = w.grid
    df2 = form_norm_sq(grid, gradient(grid, f))
    lap_f = laplacian(grid, f)
    lhs = integrate(grid, w.omega ** (2 + 2 * eps) * df2)
    C = epsilon_constant(eps)
    sup = w.sup_omega()
    factor = C * sup ** (2 * eps) / eps**2
    flagged, excluded, touches = _support_info(w, f)
    rhs_reg = factor * _hessian_term(w, f, lap_f, REGULARIZATION)
    rhs = math.inf if touches else factor * _hessian_term(w, f, lap_f)
    verdict, ratio, margin = _verdict(lhs, rhs, c_tol * grid.h)
    consts = {"eps": eps, "C": C, "sup_omega": sup, "kappa": _kappa_summary(w), "c_tol": c_tol}
    return InequalityReport("EPSILON", lhs, rhs, ratio, verdict, margin, grid.h, consts,
                            excluded, w.kappa_is_zero, flagged, rhs_reg)


def _kappa_summary(w: Weight):
    k = np.asarray(w.kappa, dtype=float)
    if k.ndim == 0:
        return float(k)
    return "field"


# -- test functions ----------------------------------------------------------


def bump(grid: Grid2D, center, radius: float, amplitude: float = 1.0) -> np.ndarray:
    """Smooth compactly supported bump ``exp(1 - 1/(1 - rho^2))``, ``rho = |x-c|/radius``."""
    rho2 = ((grid.x - center[0]) ** 2 + (grid.y - center[1]) ** 2) / radius**2
    out = np.zeros(grid.shape)
    inside = rho2 < 1
    out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return out


def _domain_scale(grid: Grid2D) -> float:
    d = grid.domain
    if d.get("type") == "disk":
        return d["radius"]
    if d.get("type") == "rectangle":
        return 0.5 * min(d["size"])
    return 0.5 * grid.h * (min(grid.nx, grid.ny) - 1)


def _bump_params(grid: Grid2D, rng, bumps: int, clearance) -> list:
    """``bumps`` random ``(center, radius, amplitude)`` whose supports fit inside ``clearance(x, y)``."""
    scale = _domain_scale(grid)
    x0, y0 = grid.origin
    x1 = x0 + (grid.nx - 1) * grid.h
    y1 = y0 + (grid.ny - 1) * grid.h
    out = []
    for _ in range(200 * bumps):
        if len(out) == bumps:
            break
        px, py = rng.uniform(x0, x1), rng.uniform(y0, y1)
        radius_frac = rng.uniform(0.4, 0.95)
        sign = rng.choice([-1.0, 1.0])
        amp = rng.uniform(0.5, 1.5)
        d = clearance(px, py)
        if d < 0.05 * scale:
            continue
        out.append(((px, py), min(radius_frac * d, 0.6 * scale), sign * amp))
    if not out:
        raise InvalidArgument("no admissible region for test functions")
    return out


def sum_of_bumps(grid: Grid2D, params) -> np.ndarray:
    f = np.zeros(grid.shape)
    for center, radius, amp in params:
        f += bump(grid, center, radius, amp)
    return f


def _place_bumps(grid: Grid2D, rng, bumps: int, clearance) -> np.ndarray:
    return sum_of_bumps(grid, _bump_params(grid, rng, bumps, clearance))


def random_bump_params(grid: Grid2D, seed: int, bumps: int = 3, margin: int = 2,
                       weight: Weight | None = None) -> list:
    """Parameters of :func:`random_test_function` as ``(center, radius, amplitude)`` triples.

    Supports keep ``margin`` cells of ``grid`` away from the boundary and
    from the weight's singular and critical points, so the same bumps are
    admissible on any finer lattice of the same domain.
    """
    if margin < 2:
        raise InvalidArgument("margin must be at least 2 cells")
    avoid = []
    if weight is not None:
        avoid = list(weight.singular_points) + list(weight.critical_points)

    def clearance(px, py):
        d = float(grid.boundary_distance(px, py))
        for q in avoid:
            d = min(d, math.hypot(px - q[0], py - q[1]))
        return d - margin * grid.h

    return _bump_params(grid, stream(seed, 0), bumps, clearance)


def random_test_function(grid: Grid2D, seed: int, bumps: int = 3, margin: int = 2,
                         weight: Weight | None = None) -> np.ndarray:
    """Seeded sum of smooth bumps with random centers, radii, signs.

    Each bump is placed so that its support stays clear of the domain
    boundary and, when ``weight`` is given, of its singular and critical
    points.  The result is also forced to vanish within ``margin`` cells of
    the mask boundary and of the weight's singular/critical nodes.
    """
    blocked = ~grid.interior_mask
    if weight is not None:
        blocked = blocked | weight.singular_region(0) | weight.critical_region(0)
    f = sum_of_bumps(grid, random_bump_params(grid, seed, bumps, margin, weight))
    keep_out = ndimage.binary_dilation(blocked, iterations=margin)
    f[keep_out] = 0.0
    return f


# -- refinement sweeps -------------------------------------------------------

_DEFAULT_DOMAIN = {"type": "disk", "center": [0.0, 0.0], "radius": 1.0}


def refinement_sweep(kind: str, weight: dict, params: dict | None = None, resolutions=(64, 128, 256),
                     domain: dict | None = None, center=(0.35, 0.2), radius: float = 0.3) -> list[dict]:
    """Re-run one check with a fixed closed-form bump at several spacings.

    ``resolutions`` are cells per unit length (``h = 1/N``).  Each row holds
    ``h``, both sides, their ratio and ``defect = max(0, lhs - rhs)/rhs``.
    """
    resolutions = list(resolutions)
    if len(resolutions) < 2:
        raise InvalidArgument("a sweep needs at least two resolutions")
    params = dict(params or {})
    domain = domain or _DEFAULT_DOMAIN
    rows = []
    for n in resolutions:
        grid = grid_from_descriptor(domain, 1.0 / n)
        w = weight_from_descriptor(weight, grid)
        f = bump(grid, center, radius)
        rep = run_check(kind, w, f, params)
        defect = 0.0 if math.isinf(rep.rhs) or rep.rhs == 0 else max(0.0, rep.lhs - rep.rhs) / rep.rhs
        rows.append({"h": grid.h, "lhs": rep.lhs, "rhs": rep.rhs, "ratio": rep.ratio,
                     "defect": defect, "verdict": rep.verdict})
    return rows


def run_check(kind: str, w: Weight, f, params: dict) -> InequalityReport:
    kind = kind.lower()
    c_tol = params.get("c_tol", C_TOL)
    if kind == "ckn":
        return check_ckn(w, f, params.get("lambda1", 0.0), c_tol)
    if kind == "elliptic":
        return check_elliptic(w, f, params.get("tau", 2.0), params.get("lambda1", 0.0), c_tol)
    if kind == "epsilon":
        return check_epsilon(w, f, params.get("eps", 0.5), c_tol)
    raise InvalidArgument(f"unknown inequality kind {kind!r}")
