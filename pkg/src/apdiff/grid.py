"""Uniform 2D staggered mesh with one ghost ring, plus dense field containers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Grid",
    "NodeField",
    "CellField",
    "CellVectorField",
    "make_grid",
    "sample_node",
    "sample_cell",
    "sample_cell_vec",
    "dump_node_csv",
    "dump_cell_csv",
]

# slice picking the interior part of a node array (indices 0..n) or of a
# cell array (indices 0..n-1), i.e. everything but the outer ring
INTERIOR = (slice(1, -1), slice(1, -1))


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian mesh over ``[x_min, x_max] x [y_min, y_max]``.

    The domain is split into ``(nx + 1) x (ny + 1)`` equal squares.  Scalar
    unknowns live on the node lattice at the square centers,
    ``x_i = x_min + (i + 1/2) dx`` for ``i in {-1, .., nx + 1}``; the
    ``i = -1`` and ``i = nx + 1`` rings are ghost nodes lying outside the
    domain.  Staggered cell centers ``x_{i+1/2} = x_min + (i + 1) dx`` for
    ``i in {-1, .., nx}`` interleave the nodes; the outermost cell ring sits
    exactly on the domain boundary, where the flux conditions are imposed.

    Node arrays have shape ``(nx + 3, ny + 3)`` and cell arrays
    ``(nx + 2, ny + 2)``; array index = logical index + 1 in each direction.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx + 1)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny + 1)

    @property
    def h(self) -> float:
        return max(self.dx, self.dy)

    @property
    def node_shape(self) -> tuple[int, int]:
        return (self.nx + 3, self.ny + 3)

    @property
    def cell_shape(self) -> tuple[int, int]:
        return (self.nx + 2, self.ny + 2)

    @property
    def n_interior_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_interior_cells(self) -> int:
        return self.nx * self.ny

    @cached_property
    def node_xs(self) -> np.ndarray:
        return self.x_min + (np.arange(-1, self.nx + 2) + 0.5) * self.dx

    @cached_property
    def node_ys(self) -> np.ndarray:
        return self.y_min + (np.arange(-1, self.ny + 2) + 0.5) * self.dy

    @cached_property
    def cell_xs(self) -> np.ndarray:
        return self.x_min + (np.arange(-1, self.nx + 1) + 1.0) * self.dx

    @cached_property
    def cell_ys(self) -> np.ndarray:
        return self.y_min + (np.arange(-1, self.ny + 1) + 1.0) * self.dy

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of node coordinates, ghost ring included."""
        return np.meshgrid(self.node_xs, self.node_ys, indexing="ij")

    def cell_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of cell-center coordinates, boundary ring included."""
        return np.meshgrid(self.cell_xs, self.cell_ys, indexing="ij")

    @cached_property
    def interior_node_mask(self) -> np.ndarray:
        m = np.zeros(self.node_shape, dtype=bool)
        m[INTERIOR] = True
        return m

    @cached_property
    def interior_cell_mask(self) -> np.ndarray:
        m = np.zeros(self.cell_shape, dtype=bool)
        m[INTERIOR] = True
        return m


def make_grid(bounds, nx: int, ny: int) -> Grid:
    """Build a uniform grid over ``bounds = ((x_min, x_max), (y_min, y_max))``.

    ``nx`` and ``ny`` count the interior nodes per direction minus one, so a
    mesh of ``k x k`` squares is obtained with ``nx = ny = k - 1``.
    """
    (x_min, x_max), (y_min, y_max) = bounds
    if not (x_max > x_min and y_max > y_min):
        raise ValueError(f"domain extents must be positive, got {bounds}")
    if nx < 2 or ny < 2:
        raise ValueError(f"need nx, ny >= 2, got nx={nx}, ny={ny}")
    return Grid(float(x_min), float(x_max), float(y_min), float(y_max), int(nx), int(ny))


def _check_shape(values: np.ndarray, expected: tuple[int, ...], what: str) -> None:
    if values.shape != expected:
        raise ValueError(f"{what} array has shape {values.shape}, expected {expected}")


@dataclass
class NodeField:
    """Scalar values on the full node lattice (ghost ring included)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _check_shape(self.values, self.grid.node_shape, "node")

    @classmethod
    def zeros(cls, grid: Grid) -> "NodeField":
        return cls(grid, np.zeros(grid.node_shape))

    @property
    def interior(self) -> np.ndarray:
        """View of the interior nodes (logical indices 0..nx, 0..ny)."""
        return self.values[INTERIOR]

    def copy(self) -> "NodeField":
        return NodeField(self.grid, self.values.copy())


@dataclass
class CellField:
    """Scalar values at every cell center (boundary ring included)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _check_shape(self.values, self.grid.cell_shape, "cell")

    @classmethod
    def zeros(cls, grid: Grid) -> "CellField":
        return cls(grid, np.zeros(grid.cell_shape))

    @property
    def interior(self) -> np.ndarray:
        """View of the interior cells (logical indices 0..nx-1, 0..ny-1)."""
        return self.values[INTERIOR]

    def copy(self) -> "CellField":
        return CellField(self.grid, self.values.copy())


@dataclass
class CellVectorField:
    """2-vectors at every cell center; last axis is the (x, y) component."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _check_shape(self.values, self.grid.cell_shape + (2,), "cell vector")

    @property
    def x(self) -> np.ndarray:
        return self.values[..., 0]

    @property
    def y(self) -> np.ndarray:
        return self.values[..., 1]


def _evaluate(fn, xs: np.ndarray, ys: np.ndarray, what: str) -> np.ndarray:
    out = np.asarray(fn(xs, ys), dtype=float)
    if out.ndim == 0:
        out = np.full(xs.shape, float(out))
    if out.shape != xs.shape:
        raise ValueError(f"{what} sampler returned shape {out.shape}, expected {xs.shape}")
    if not np.all(np.isfinite(out)):
        i, j = np.argwhere(~np.isfinite(out))[0]
        raise ValueError(
            f"{what} sampler returned {out[i, j]} at (x={xs[i, j]:.6g}, y={ys[i, j]:.6g})"
        )
    return out


def sample_node(fn, grid: Grid) -> NodeField:
    """Evaluate ``fn(x, y)`` at every node, ghosts included."""
    xs, ys = grid.node_coords()
    return NodeField(grid, _evaluate(fn, xs, ys, "node"))


def sample_cell(fn, grid: Grid) -> CellField:
    """Evaluate ``fn(x, y)`` at every cell center, boundary ring included."""
    xs, ys = grid.cell_coords()
    return CellField(grid, _evaluate(fn, xs, ys, "cell"))


def sample_cell_vec(fn, grid: Grid) -> CellVectorField:
    """Evaluate a vector function ``fn(x, y) -> (vx, vy)`` at cell centers."""
    xs, ys = grid.cell_coords()
    vx, vy = fn(xs, ys)
    out = np.stack(
        [
            _evaluate(lambda x, y: vx, xs, ys, "cell vector x"),
            _evaluate(lambda x, y: vy, xs, ys, "cell vector y"),
        ],
        axis=-1,
    )
    return CellVectorField(grid, out)


def dump_node_csv(fld: NodeField, path) -> None:
    """Write a node field as ``i,j,x,y,value`` rows (logical indices)."""
    g = fld.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "x", "y", "value"])
        for ai, i in enumerate(range(-1, g.nx + 2)):
            for aj, j in enumerate(range(-1, g.ny + 2)):
                w.writerow([i, j, repr(float(g.node_xs[ai])), repr(float(g.node_ys[aj])), repr(float(fld.values[ai, aj]))])


def dump_cell_csv(fld: CellField, path) -> None:
    """Write a cell field as ``i,j,xc,yc,value`` rows (logical indices)."""
    g = fld.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "xc", "yc", "value"])
        for ai, i in enumerate(range(-1, g.nx + 1)):
            for aj, j in enumerate(range(-1, g.ny + 1)):
                w.writerow([i, j, repr(float(g.cell_xs[ai])), repr(float(g.cell_ys[aj])), repr(float(fld.values[ai, aj]))])
