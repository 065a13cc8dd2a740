"""Uniform lattices over bounded planar domains.

A :class:`Grid2D` is a rectangular array of nodes with square cells of side
``h``.  Disks and other shapes are represented by masking the bounding
rectangle.  Arrays sampled on a grid use ``indexing='ij'``: axis 0 runs
along x, axis 1 along y, so ``f[i, j]`` lives at ``origin + (i*h, j*h)``.

An optional conformal exponent ``psi`` turns the flat metric into
``g = exp(2 psi) * delta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import InvalidArgument

# tolerance, in units of h, for deciding a point sits on a node
_NODE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Grid2D:
    nx: int
    ny: int
    h: float
    origin: tuple[float, float]
    interior_mask: np.ndarray
    conformal_exponent: np.ndarray | None = None
    domain: dict = field(default_factory=dict)
    # per-grid memo for assembled operators; never part of identity
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.h > 0:
            raise InvalidArgument(f"lattice spacing must be positive, got {self.h}")
        if self.nx < 4 or self.ny < 4:
            raise InvalidArgument(f"need at least 4 nodes per axis, got {self.nx}x{self.ny}")
        mask = np.asarray(self.interior_mask, dtype=bool)
        if mask.shape != (self.nx, self.ny):
            raise InvalidArgument("interior mask does not match lattice shape")
        if mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any():
            raise InvalidArgument("interior nodes must have all four neighbours in bounds")
        mask.setflags(write=False)
        object.__setattr__(self, "interior_mask", mask)
        if self.conformal_exponent is not None:
            psi = np.array(self.conformal_exponent, dtype=float)
            if psi.shape != mask.shape:
                raise InvalidArgument("conformal exponent sampled on a different lattice")
            if not np.all(np.isfinite(psi)):
                raise InvalidArgument("conformal exponent must be finite")
            psi.setflags(write=False)
            object.__setattr__(self, "conformal_exponent", psi)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @cached_property
    def x(self) -> np.ndarray:
        xs = self.origin[0] + self.h * np.arange(self.nx)
        return np.broadcast_to(xs[:, None], self.shape)

    @cached_property
    def y(self) -> np.ndarray:
        ys = self.origin[1] + self.h * np.arange(self.ny)
        return np.broadcast_to(ys[None, :], self.shape)

    @cached_property
    def psi(self) -> np.ndarray:
        if self.conformal_exponent is None:
            return np.zeros(self.shape)
        return self.conformal_exponent

    @cached_property
    def volume_factor(self) -> np.ndarray:
        """exp(2 psi): density of dvol_g against dx dy."""
        return np.exp(2.0 * self.psi)

    @cached_property
    def inverse_metric_factor(self) -> np.ndarray:
        """exp(-2 psi): scales |df|^2 and the Laplacian."""
        return np.exp(-2.0 * self.psi)

    @property
    def is_flat(self) -> bool:
        return self.conformal_exponent is None

    @cached_property
    def closure_mask(self) -> np.ndarray:
        """Interior nodes together with their lattice neighbours."""
        m = self.interior_mask
        c = m.copy()
        c[1:, :] |= m[:-1, :]
        c[:-1, :] |= m[1:, :]
        c[:, 1:] |= m[:, :-1]
        c[:, :-1] |= m[:, 1:]
        return c

    @property
    def interior_count(self) -> int:
        return int(self.interior_mask.sum())

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(x, y)`` on every node."""
        return np.asarray(func(self.x, self.y), dtype=float) * np.ones(self.shape)

    def index_of(self, point) -> tuple[int, int]:
        """Nearest node to ``point`` (may lie outside the array)."""
        i = int(math.floor((point[0] - self.origin[0]) / self.h + 0.5))
        j = int(math.floor((point[1] - self.origin[1]) / self.h + 0.5))
        return i, j

    def on_node(self, point) -> bool:
        fi = (point[0] - self.origin[0]) / self.h
        fj = (point[1] - self.origin[1]) / self.h
        return abs(fi - round(fi)) < _NODE_TOL and abs(fj - round(fj)) < _NODE_TOL

    def offset_point(self, point) -> tuple[tuple[float, float], bool]:
        """Shift ``point`` by (h/2, h/2) if it coincides with a node."""
        p = (float(point[0]), float(point[1]))
        if self.on_node(p):
            return (p[0] + self.h / 2, p[1] + self.h / 2), True
        return p, False

    def contains(self, point) -> bool:
        """Whether ``point`` lies in the closed bounding rectangle."""
        x0, y0 = self.origin
        x1 = x0 + (self.nx - 1) * self.h
        y1 = y0 + (self.ny - 1) * self.h
        return x0 <= point[0] <= x1 and y0 <= point[1] <= y1

    def boundary_distance(self, x, y):
        """Distance to the continuum domain boundary (negative outside)."""
        kind = self.domain.get("type")
        if kind == "disk":
            cx, cy = self.domain["center"]
            return self.domain["radius"] - np.hypot(np.asarray(x) - cx, np.asarray(y) - cy)
        if kind == "rectangle":
            x0, y0 = self.domain["origin"]
            w, hgt = self.domain["size"]
            x = np.asarray(x)
            y = np.asarray(y)
            return np.minimum(np.minimum(x - x0, x0 + w - x), np.minimum(y - y0, y0 + hgt - y))
        # fall back to the lattice rectangle
        x0, y0 = self.origin
        x1 = x0 + (self.nx - 1) * self.h
        y1 = y0 + (self.ny - 1) * self.h
        x = np.asarray(x)
        y = np.asarray(y)
        return np.minimum(np.minimum(x - x0, x1 - x), np.minimum(y - y0, y1 - y))

    def same_lattice(self, other: "Grid2D") -> bool:
        return (
            self.shape == other.shape
            and math.isclose(self.h, other.h, rel_tol=1e-12)
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12 * self.h)
        )

    def descriptor(self) -> dict:
        d = dict(self.domain)
        d["h"] = self.h
        d["nx"] = self.nx
        d["ny"] = self.ny
        return d

    def to_csv(self, path) -> None:
        """Dump nodes as ``x,y,mask[,psi]`` in row-major order."""
        header = ["x", "y", "mask"]
        cols = [self.x.ravel(), self.y.ravel(), self.interior_mask.ravel().astype(int)]
        if self.conformal_exponent is not None:
            header.append("psi")
            cols.append(self.conformal_exponent.ravel())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in zip(*cols):
                w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _spacing(resolution, h) -> float:
    if h is not None:
        if not h > 0:
            raise InvalidArgument(f"h must be positive, got {h}")
        return float(h)
    if resolution is None:
        raise InvalidArgument("give either resolution or h")
    if not resolution >= 4:
        raise InvalidArgument(f"resolution must be >= 4 nodes per unit, got {resolution}")
    return 1.0 / (resolution - 1)


def _cells(length: float, h: float) -> int:
    n = length / h
    k = round(n)
    if abs(n - k) > 1e-9 * max(1.0, n):
        raise InvalidArgument(f"length {length} is not a whole number of cells of size {h}")
    return int(k)


def build_rectangle(origin=(0.0, 0.0), size=(1.0, 1.0), resolution=None, *, h=None) -> Grid2D:
    """Lattice on ``[x0, x0+w] x [y0, y0+height]``.

    ``resolution`` counts nodes along a unit length, so ``resolution=9``
    gives ``h = 1/8``.  Pass ``h`` directly to bypass that convention.
    The outermost ring of nodes is boundary (mask false).
    """
    width, height = float(size[0]), float(size[1])
    if not (width > 0 and height > 0):
        raise InvalidArgument(f"rectangle size must be positive, got {size}")
    step = _spacing(resolution, h)
    nx = _cells(width, step) + 1
    ny = _cells(height, step) + 1
    if nx < 4 or ny < 4:
        raise InvalidArgument("rectangle too small for the requested spacing")
    mask = np.zeros((nx, ny), dtype=bool)
    mask[1:-1, 1:-1] = True
    domain = {"type": "rectangle", "origin": [float(origin[0]), float(origin[1])],
              "size": [width, height]}
    return Grid2D(nx, ny, step, (float(origin[0]), float(origin[1])), mask, domain=domain)


def build_disk(center=(0.0, 0.0), radius=1.0, resolution=None, *, h=None) -> Grid2D:
    """Masked lattice for the disk ``|x - center| < radius``.

    Nodes sit on the global lattice ``h * Z^2``, so the mask is symmetric
    whenever the center is a lattice point.  Interior nodes satisfy
    ``|x - center| < radius - h/2``.
    """
    step = _spacing(resolution, h)
    radius = float(radius)
    if not radius > 2 * step:
        raise InvalidArgument(f"radius {radius} leaves no interior at h={step}")
    cx, cy = float(center[0]), float(center[1])
    i0 = math.floor((cx - radius) / step) - 1
    i1 = math.ceil((cx + radius) / step) + 1
    j0 = math.floor((cy - radius) / step) - 1
    j1 = math.ceil((cy + radius) / step) + 1
    nx, ny = i1 - i0 + 1, j1 - j0 + 1
    origin = (i0 * step, j0 * step)
    xs = origin[0] + step * np.arange(nx)
    ys = origin[1] + step * np.arange(ny)
    r = np.hypot(xs[:, None] - cx, ys[None, :] - cy)
    mask = r < radius - 0.5 * step
    mask[0, :] = mask[-1, :] = False
    mask[:, 0] = mask[:, -1] = False
    domain = {"type": "disk", "center": [cx, cy], "radius": radius}
    return Grid2D(nx, ny, step, origin, mask, domain=domain)


def with_conformal_factor(grid: Grid2D, psi) -> Grid2D:
    """Same lattice carrying the metric ``exp(2 psi) * delta``."""
    psi = np.asarray(psi, dtype=float)
    if psi.shape != grid.shape:
        raise InvalidArgument(f"psi has shape {psi.shape}, lattice is {grid.shape}")
    return replace(grid, conformal_exponent=psi, cache={})


def grid_from_descriptor(domain: dict, h: float) -> Grid2D:
    kind = domain.get("type")
    if kind == "disk":
        return build_disk(domain.get("center", (0.0, 0.0)), domain.get("radius", 1.0), h=h)
    if kind == "rectangle":
        return build_rectangle(domain.get("origin", (0.0, 0.0)), domain.get("size", (1.0, 1.0)), h=h)
    raise InvalidArgument(f"unknown domain type {kind!r}")
