"""Uniform node lattices for bounded domains in one and two dimensions.

Only nodes strictly inside the domain carry unknowns. Every other node, and the
exterior collar around the bounding box, holds the value zero.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SHAPES_1D = ("interval",)
SHAPES_2D = ("rectangle", "disk", "annulus")


class GridError(ValueError):
    """Raised for inconsistent domain descriptions or mismatched grids."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice on the bounding box of a domain.

    Attributes
    ----------
    shape : str
        One of ``interval``, ``rectangle``, ``disk``, ``annulus``.
    bounds : tuple of (lo, hi) per axis
        Bounding box. All axes must have the same length so that the spacing
        is identical on every axis.
    nodes_per_axis : int
    collar_radius : float
        Radius of the explicitly represented exterior around each interior node.
    center, radius, inner_radius
        Disk/annulus parameters; ``None`` for box shapes.
    """

    shape: str
    bounds: tuple[tuple[float, float], ...]
    nodes_per_axis: int
    collar_radius: float
    center: tuple[float, ...] | None = None
    radius: float | None = None
    inner_radius: float | None = None
    axes: tuple[np.ndarray, ...] = field(init=False, repr=False)
    interior_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        axes = tuple(
            np.linspace(lo, hi, self.nodes_per_axis) for lo, hi in self.bounds
        )
        for ax in axes:
            ax.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        mask = _interior_mask(self, np.stack(self.mesh(), axis=-1))
        mask.setflags(write=False)
        object.__setattr__(self, "interior_mask", mask)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def h(self) -> float:
        lo, hi = self.bounds[0]
        return (hi - lo) / (self.nodes_per_axis - 1)

    @property
    def node_shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dim

    @property
    def n_interior(self) -> int:
        return int(self.interior_mask.sum())

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def diameter(self) -> float:
        return _diameter(self.shape, self.bounds, self.radius)

    def mesh(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*self.axes, indexing="ij")

    @property
    def node_coords(self) -> np.ndarray:
        """Coordinates of every lattice node, shape ``node_shape + (dim,)``."""
        return np.stack(self.mesh(), axis=-1)

    @property
    def interior_coords(self) -> np.ndarray:
        """Coordinates of interior nodes, shape ``(n_interior, dim)``."""
        return self.node_coords[self.interior_mask]

    def boundary_distance_cells(self) -> np.ndarray:
        """Chebyshev lattice distance from each node to the nearest non-interior node."""
        from scipy import ndimage

        outside = ~self.interior_mask
        padded = np.pad(outside, 1, constant_values=True)
        dist = ndimage.distance_transform_cdt(~padded, metric="chessboard")
        inner = tuple(slice(1, -1) for _ in range(self.dim))
        return dist[inner]

    def compact_mask(self, margin: int) -> np.ndarray:
        """Interior nodes at least ``margin`` cells away from the exterior."""
        return self.boundary_distance_cells() >= margin

    def is_symmetric(self, axis: int) -> bool:
        return bool(np.array_equal(self.interior_mask, np.flip(self.interior_mask, axis)))

    def to_dict(self) -> dict:
        doc = {
            "shape": self.shape,
            "bounds": [list(b) for b in self.bounds],
            "nodes_per_axis": self.nodes_per_axis,
            "collar_radius": self.collar_radius,
        }
        if self.center is not None:
            doc["center"] = list(self.center)
        if self.radius is not None:
            doc["radius"] = self.radius
        if self.inner_radius is not None:
            doc["inner_radius"] = self.inner_radius
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "Grid":
        return build_grid(**doc)

    @classmethod
    def from_json(cls, text: str) -> "Grid":
        return cls.from_dict(json.loads(text))


def _diameter(shape, bounds, radius) -> float:
    if shape in ("disk", "annulus"):
        return 2.0 * radius
    return float(np.sqrt(sum((hi - lo) ** 2 for lo, hi in bounds)))


def _interior_mask(grid: Grid, coords: np.ndarray) -> np.ndarray:
    if grid.shape in ("interval", "rectangle"):
        mask = np.ones(coords.shape[:-1], dtype=bool)
        for k, (lo, hi) in enumerate(grid.bounds):
            mask &= (coords[..., k] > lo) & (coords[..., k] < hi)
        # strict inequality on lattice points: guard against round-off at the box faces
        for k in range(grid.dim):
            idx = [slice(None)] * grid.dim
            idx[k] = 0
            mask[tuple(idx)] = False
            idx[k] = -1
            mask[tuple(idx)] = False
        return mask
    r = np.linalg.norm(coords - np.asarray(grid.center), axis=-1)
    tol = 1e-12 * grid.radius
    mask = r < grid.radius - tol
    if grid.shape == "annulus":
        mask &= r > grid.inner_radius + tol
    return mask


def build_grid(
    shape: str,
    bounds: Sequence[Sequence[float]],
    nodes_per_axis: int,
    collar_radius: float | None = None,
    center: Sequence[float] | None = None,
    radius: float | None = None,
    inner_radius: float | None = None,
) -> Grid:
    """Build a :class:`Grid` after validating the domain description.

    ``collar_radius`` defaults to the domain diameter.
    """
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    if shape in SHAPES_1D:
        if len(bounds) != 1:
            raise GridError(f"shape {shape!r} needs one axis, got {len(bounds)}")
    elif shape in SHAPES_2D:
        if len(bounds) != 2:
            raise GridError(f"shape {shape!r} needs two axes, got {len(bounds)}")
    else:
        raise GridError(f"unknown shape {shape!r}")
    if int(nodes_per_axis) != nodes_per_axis or nodes_per_axis < 3:
        raise GridError(f"nodes_per_axis must be an integer >= 3, got {nodes_per_axis}")
    lengths = [hi - lo for lo, hi in bounds]
    if min(lengths) <= 0:
        raise GridError(f"degenerate bounds {bounds}")
    if not np.allclose(lengths, lengths[0], rtol=1e-12, atol=0):
        raise GridError(f"all axes must have equal length for uniform spacing, got {lengths}")

    if shape in ("disk", "annulus"):
        if radius is None:
            raise GridError(f"{shape} requires a radius")
        radius = float(radius)
        if center is None:
            center = tuple(0.5 * (lo + hi) for lo, hi in bounds)
        center = tuple(float(c) for c in center)
        if len(center) != 2:
            raise GridError("center must have two coordinates")
        if radius <= 0:
            raise GridError("radius must be positive")
        for c, (lo, hi) in zip(center, bounds):
            if c - radius < lo - 1e-12 or c + radius > hi + 1e-12:
                raise GridError(f"radius {radius} around {center} exceeds bounds {bounds}")
        if shape == "annulus":
            if inner_radius is None or not 0 < float(inner_radius) < radius:
                raise GridError("annulus needs 0 < inner_radius < radius")
            inner_radius = float(inner_radius)
        elif inner_radius is not None:
            raise GridError("inner_radius only applies to an annulus")
    else:
        if radius is not None or inner_radius is not None:
            raise GridError(f"{shape} does not take radii")
        center = None

    diam = _diameter(shape, bounds, radius)
    if collar_radius is None:
        collar_radius = diam
    collar_radius = float(collar_radius)
    if collar_radius < diam * (1 - 1e-12):
        raise GridError(f"collar_radius {collar_radius} is smaller than the diameter {diam}")

    grid = Grid(
        shape=shape,
        bounds=bounds,
        nodes_per_axis=int(nodes_per_axis),
        collar_radius=collar_radius,
        center=center,
        radius=radius,
        inner_radius=inner_radius if shape == "annulus" else None,
    )
    if grid.n_interior < 1:
        raise GridError("no lattice node falls inside the domain")
    return grid


def interval_grid(a: float, b: float, nodes: int, collar_radius: float | None = None) -> Grid:
    return build_grid("interval", [(a, b)], nodes, collar_radius)


def disk_grid(radius: float, nodes: int, center=(0.0, 0.0), collar_radius=None) -> Grid:
    cx, cy = center
    bounds = [(cx - radius, cx + radius), (cy - radius, cy + radius)]
    return build_grid("disk", bounds, nodes, collar_radius, center=center, radius=radius)


class GridFunction:
    """Nodal values on a :class:`Grid`, identically zero off the domain.

    Instances are read-only; arithmetic returns new objects.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.array(values, dtype=float)
        if values.shape != grid.node_shape:
            raise GridError(f"values shape {values.shape} != grid shape {grid.node_shape}")
        if not np.all(np.isfinite(values)):
            raise GridError("grid function values must be finite")
        if np.any(values[~grid.interior_mask] != 0.0):
            raise GridError("grid function must vanish at non-interior nodes")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @property
    def interior(self) -> np.ndarray:
        return self.values[self.grid.interior_mask]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def with_interior(self, x: np.ndarray) -> "GridFunction":
        return zero_extend(x, self.grid)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return zero_extend(self.interior + _interior_of(other, self.grid), self.grid)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return zero_extend(self.interior - _interior_of(other, self.grid), self.grid)

    def __mul__(self, scalar: float) -> "GridFunction":
        return zero_extend(float(scalar) * self.interior, self.grid)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return zero_extend(-self.interior, self.grid)

    def __repr__(self) -> str:
        return f"GridFunction(shape={self.grid.node_shape}, sup={self.sup_norm():.6g})"

    def to_csv(self, path: str | Path | None = None) -> str:
        """CSV rows ``node, x[, y], value`` in C order over all lattice nodes."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        coord_names = ["x", "y"][: self.grid.dim]
        writer.writerow(["node", *coord_names, "value"])
        coords = self.grid.node_coords.reshape(-1, self.grid.dim)
        for k, (xy, val) in enumerate(zip(coords, self.values.ravel())):
            writer.writerow([k, *(repr(float(c)) for c in xy), repr(float(val))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, grid: Grid, path: str | Path) -> "GridFunction":
        rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
        values = np.zeros(grid.node_shape).ravel()
        if len(rows) != values.size:
            raise GridError(f"expected {values.size} rows, got {len(rows)}")
        for row in rows:
            values[int(row["node"])] = float(row["value"])
        return cls(grid, values.reshape(grid.node_shape))


def _interior_of(u, grid: Grid) -> np.ndarray:
    if isinstance(u, GridFunction):
        if u.grid is not grid:
            raise GridError("grid functions live on different grids")
        return u.interior
    return np.asarray(u, dtype=float)


def zero_extend(u: np.ndarray, grid: Grid) -> GridFunction:
    """Place one value per interior node into a full :class:`GridFunction`."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size != grid.n_interior:
        raise GridError(f"expected {grid.n_interior} interior values, got {u.size}")
    values = np.zeros(grid.node_shape)
    values[grid.interior_mask] = u
    return GridFunction(grid, values)


def reflect(u: GridFunction, axis: int = 0) -> GridFunction:
    """Mirror ``u`` across the midplane of ``axis``."""
    grid = u.grid
    if not 0 <= axis < grid.dim:
        raise GridError(f"axis {axis} out of range for a {grid.dim}-D grid")
    if not grid.is_symmetric(axis):
        raise GridError(f"grid is not symmetric about the midplane of axis {axis}")
    return GridFunction(grid, np.flip(u.values, axis))
