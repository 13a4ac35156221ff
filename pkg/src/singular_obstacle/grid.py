"""Uniform Cartesian grids, grid fields and the discrete operators on them.

Fields live on nodes, gradients live on cells (forward differences). A disc
is realized as a masked square whose first exterior ring carries the
Dirichlet data.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

INTERIOR = 1
BOUNDARY = 2
EXTERIOR = 0

_GEOM_TOL = 1e-9


@dataclass(frozen=True)
class Domain:
    """Interval, rectangle, or origin-centred disc."""

    shape: str
    bounds: tuple = ()
    radius: float | None = None

    def __post_init__(self):
        if self.shape == "disc":
            if self.radius is None or not self.radius > 0:
                raise ValueError("disc radius must be positive")
            object.__setattr__(self, "bounds", ((-self.radius, self.radius),) * 2)
            return
        if self.shape not in ("interval", "rectangle"):
            raise ValueError(f"unknown domain shape {self.shape!r}")
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        expected = 1 if self.shape == "interval" else 2
        if len(bounds) != expected:
            raise ValueError(f"{self.shape} needs {expected} (a, b) pairs")
        for a, b in bounds:
            if not b > a:
                raise ValueError(f"empty extent [{a}, {b}]")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def interval(cls, a, b):
        return cls("interval", ((a, b),))

    @classmethod
    def rectangle(cls, a1, b1, a2, b2):
        return cls("rectangle", ((a1, b1), (a2, b2)))

    @classmethod
    def disc(cls, radius):
        return cls("disc", radius=float(radius))

    @property
    def dim(self):
        return len(self.bounds)

    def to_dict(self):
        if self.shape == "disc":
            return {"shape": "disc", "radius": self.radius}
        return {"shape": self.shape, "bounds": [list(b) for b in self.bounds]}

    @classmethod
    def from_dict(cls, d):
        if d["shape"] == "disc":
            return cls.disc(d["radius"])
        return cls(d["shape"], tuple(tuple(b) for b in d["bounds"]))


class Grid:
    """Tensor-product node set with interior/boundary/exterior labels.

    ``status`` has the box shape; ``active`` nodes (interior or boundary)
    carry field values, flattened in C order.
    """

    def __init__(self, domain: Domain, h: float, axes: list[np.ndarray], status: np.ndarray):
        self.domain = domain
        self.h = float(h)
        self.axes = axes
        self.status = status
        self.status.setflags(write=False)

    @property
    def dim(self):
        return self.domain.dim

    @property
    def shape(self):
        return self.status.shape

    @cached_property
    def active(self):
        return self.status != EXTERIOR

    @cached_property
    def n_active(self):
        return int(self.active.sum())

    @cached_property
    def coords(self):
        """(n_active, dim) node coordinates."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m[self.active] for m in mesh], axis=-1)

    @cached_property
    def boundary_mask(self):
        return self.status[self.active] == BOUNDARY

    @cached_property
    def interior_mask(self):
        return self.status[self.active] == INTERIOR

    @cached_property
    def index(self):
        """Box-shaped array mapping node -> active index (-1 if exterior)."""
        idx = np.full(self.shape, -1, dtype=np.int64)
        idx[self.active] = np.arange(self.n_active)
        return idx

    @cached_property
    def cell_mask(self):
        """Cells whose 2**dim corners are all active."""
        a = self.active
        if self.dim == 1:
            return a[:-1] & a[1:]
        return a[:-1, :-1] & a[1:, :-1] & a[:-1, 1:] & a[1:, 1:]

    @cached_property
    def cell_centers(self):
        mids = [0.5 * (ax[:-1] + ax[1:]) for ax in self.axes]
        mesh = np.meshgrid(*mids, indexing="ij")
        return np.stack([m[self.cell_mask] for m in mesh], axis=-1)

    @cached_property
    def node_weights(self):
        """Quadrature weights: trapezoid on boxes, h**n inside a disc."""
        h = self.h
        if self.domain.shape == "disc":
            w = np.where(self.interior_mask, h ** 2, 0.0)
            return w
        w = np.full(self.shape, h ** self.dim)
        for axis in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[axis] = 0
            w[tuple(sl)] *= 0.5
            sl[axis] = -1
            w[tuple(sl)] *= 0.5
        return w[self.active]

    def to_array(self, values):
        out = np.full(self.shape, np.nan)
        out[self.active] = values
        return out

    def nearest_node(self, point):
        """Active index of the node closest to ``point``."""
        d = np.linalg.norm(self.coords - np.asarray(point, float).reshape(1, -1), axis=1)
        return int(np.argmin(d))

    def neighbors(self, i):
        """Axis neighbours of active node ``i`` as a list of (axis, sign, j)."""
        pos = np.unravel_index(np.flatnonzero(self.active)[i], self.shape)
        out = []
        for axis in range(self.dim):
            for sign in (-1, 1):
                q = list(pos)
                q[axis] += sign
                if 0 <= q[axis] < self.shape[axis]:
                    j = self.index[tuple(q)]
                    if j >= 0:
                        out.append((axis, sign, int(j)))
        return out

    def adjacent_to(self, mask):
        """Active nodes with at least one axis neighbour in ``mask``."""
        full = np.zeros(self.shape, dtype=bool)
        full[self.active] = mask
        out = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dim):
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            lo[axis], hi[axis] = slice(None, -1), slice(1, None)
            out[tuple(lo)] |= full[tuple(hi)]
            out[tuple(hi)] |= full[tuple(lo)]
        return out[self.active]

    def neighbor_mean(self, values, mask):
        """Mean of ``values`` over axis neighbours in ``mask`` (0 if none)."""
        full_v = np.zeros(self.shape)
        full_m = np.zeros(self.shape)
        full_v[self.active] = np.where(mask, values, 0.0)
        full_m[self.active] = mask
        tot = np.zeros(self.shape)
        cnt = np.zeros(self.shape)
        for axis in range(self.dim):
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            lo[axis], hi[axis] = slice(None, -1), slice(1, None)
            tot[tuple(lo)] += full_v[tuple(hi)]
            cnt[tuple(lo)] += full_m[tuple(hi)]
            tot[tuple(hi)] += full_v[tuple(lo)]
            cnt[tuple(hi)] += full_m[tuple(lo)]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(cnt > 0, tot / cnt, 0.0)
        return out[self.active]

    def __repr__(self):
        return f"Grid({self.domain.shape}, h={self.h:g}, nodes={self.n_active})"


@dataclass
class GridField:
    """Scalar values on the active nodes of a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.shape[0] != self.grid.n_active:
            raise ValueError(
                f"field has {self.values.shape[0]} values, grid has {self.grid.n_active} active nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(grid.coords))

    def with_values(self, values):
        return GridField(self.grid, values)

    def __add__(self, other):
        other = other.values if isinstance(other, GridField) else other
        return GridField(self.grid, self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, GridField) else other
        return GridField(self.grid, self.values - other)

    def __mul__(self, c):
        return GridField(self.grid, self.values * c)

    __rmul__ = __mul__

    def to_csv(self, path):
        write_field_csv(path, self)


def make_grid(domain: Domain, h: float) -> Grid:
    """Build the node set for ``domain`` with spacing ``h``."""
    h = float(h)
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    extents = [b - a for a, b in domain.bounds]
    if h > 0.5 * min(extents) * (1 + _GEOM_TOL):
        raise ValueError(f"h={h} exceeds half the domain extent")

    if domain.shape == "disc":
        R = domain.radius
        m = int(np.floor(R / h + _GEOM_TOL)) + 1
        ax = h * np.arange(-m, m + 1)
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        inside = X ** 2 + Y ** 2 <= R ** 2 * (1 + _GEOM_TOL)
        # 8-neighbour ring so every cell touching the disc is complete
        pad = np.pad(inside, 1)
        near = np.zeros_like(inside)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                near |= pad[1 + di: 1 + di + inside.shape[0], 1 + dj: 1 + dj + inside.shape[1]]
        status = np.full(inside.shape, EXTERIOR, dtype=np.int8)
        status[near & ~inside] = BOUNDARY
        status[inside] = INTERIOR
        return Grid(domain, h, [ax, ax.copy()], status)

    axes = []
    for a, b in domain.bounds:
        n = (b - a) / h
        k = int(round(n))
        if abs(n - k) > 1e-6 * max(1.0, n):
            raise ValueError(f"h={h} does not divide the extent [{a}, {b}]")
        axes.append(a + h * np.arange(k + 1))
    shape = tuple(len(ax) for ax in axes)
    status = np.full(shape, BOUNDARY, dtype=np.int8)
    status[tuple(slice(1, -1) for _ in shape)] = INTERIOR
    return Grid(domain, h, axes, status)


def discrete_gradient(f: GridField):
    """Cell-centred forward-difference gradient.

    Returns ``(centers, grads)``, both ``(n_cells, dim)``. In 2-d the two
    edge differences along each axis are averaged, so affine fields are
    reproduced exactly.
    """
    g = f.grid
    if min(g.shape) < 2:
        raise ValueError("need at least two nodes per axis")
    F = g.to_array(f.values)
    h = g.h
    if g.dim == 1:
        grads = (np.diff(F) / h)[g.cell_mask][:, None]
    else:
        gx = 0.5 * ((F[1:, :-1] - F[:-1, :-1]) + (F[1:, 1:] - F[:-1, 1:])) / h
        gy = 0.5 * ((F[:-1, 1:] - F[:-1, :-1]) + (F[1:, 1:] - F[1:, :-1])) / h
        m = g.cell_mask
        grads = np.stack([gx[m], gy[m]], axis=-1)
    return g.cell_centers, grads


def _in_ball(points, center, rho):
    center = np.asarray(center, float).reshape(1, -1)
    d = np.linalg.norm(points - center, axis=1)
    return d <= rho * (1 + _GEOM_TOL) + 1e-14


def sup_on_ball(f: GridField, center, rho) -> float:
    """max |f| over active nodes within distance ``rho`` of ``center``."""
    sel = _in_ball(f.grid.coords, center, rho)
    if not sel.any():
        raise ValueError(f"no grid node within {rho} of {center}")
    return float(np.max(np.abs(f.values[sel])))


def _ball_gradients(f, center, r):
    centers, grads = discrete_gradient(f)
    sel = _in_ball(centers, center, r)
    if not sel.any():
        raise ValueError(f"no gradient cell within {r} of {center}")
    return grads[sel]


def mean_gradient_on_ball(f: GridField, center, r) -> np.ndarray:
    """Average of the cell gradients whose centres lie in the ball."""
    return _ball_gradients(f, center, r).mean(axis=0)


def oscillation_integral(f: GridField, center, r, q) -> float:
    """Sum over cells in the ball of |grad f - mean|**q * h**n."""
    grads = _ball_gradients(f, center, r)
    dev = np.linalg.norm(grads - grads.mean(axis=0), axis=1)
    return float(np.sum(dev ** q) * f.grid.h ** f.grid.dim)


def interpolate(f: GridField, points) -> np.ndarray:
    """Multilinear interpolation of ``f`` at ``points`` (shape (m, dim))."""
    from scipy.interpolate import RegularGridInterpolator

    g = f.grid
    pts = np.atleast_2d(np.asarray(points, float))
    if g.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
        pts = pts.T
    interp = RegularGridInterpolator(tuple(g.axes), g.to_array(f.values), bounds_error=False)
    out = interp(pts)
    if np.any(np.isnan(out)):
        raise ValueError("interpolation point outside the active region")
    return out


def write_field_csv(path, f: GridField, extra: dict | None = None):
    """Write node coordinates and values (columns x1[,x2],value[,extra...])."""
    g = f.grid
    cols = [f"x{i + 1}" for i in range(g.dim)] + ["value"]
    extra = extra or {}
    cols += list(extra)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(g.n_active):
            row = [repr(float(c)) for c in g.coords[i]] + [repr(float(f.values[i]))]
            row += [v[i] if not isinstance(v[i], float) else repr(v[i]) for v in extra.values()]
            w.writerow(row)


def read_field_csv(path, grid: Grid) -> GridField:
    """Read a field CSV written for ``grid`` (node order must match)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    coords = data[:, : grid.dim]
    if coords.shape[0] != grid.n_active or not np.allclose(coords, grid.coords, atol=1e-9 * max(1.0, grid.h)):
        raise ValueError(f"{path} does not match the configured grid")
    return GridField(grid, data[:, grid.dim])
