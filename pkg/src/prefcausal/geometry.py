"""Rectangular domains tiled by regular grids, with optional cell masks.

Cells are indexed row-major with x varying fastest: cell g = iy * nx + ix
covers [x_min + ix*wx, x_min + (ix+1)*wx) x [y_min + iy*wy, y_min + (iy+1)*wy),
half-open on the right/top except for the last column/row, which are closed so
that points on the outer boundary still belong to a cell.

A geometry may carry a boolean mask of active cells. Masked (inactive) cells
take no part in spatial averages, hold no observations, and are excluded from
the latent fields; they exist so that non-rectangular regions can be embedded
in a rectangular tiling.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GeometryError

__all__ = [
    "Domain",
    "GridGeometry",
    "build_grid",
    "pairwise_distances",
]


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle [x_min, x_max] x [y_min, y_max]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        for v in (self.x_min, self.x_max, self.y_min, self.y_max):
            if not np.isfinite(v):
                raise GeometryError("domain bounds must be finite")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise GeometryError("domain must have positive width and height")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class GridGeometry:
    """A regular nx-by-ny tiling of a rectangular domain.

    Attributes:
        domain: The tiled rectangle.
        nx, ny: Number of cells along each axis.
        active: Boolean mask of length G = nx * ny; True marks active cells.
    """

    domain: Domain
    nx: int
    ny: int
    active: np.ndarray

    def __post_init__(self) -> None:
        if self.nx < 1 or self.ny < 1:
            raise GeometryError("grid must have at least one cell per axis")
        active = np.asarray(self.active, dtype=bool)
        if active.shape != (self.nx * self.ny,):
            raise GeometryError(
                f"active mask must have length nx*ny = {self.nx * self.ny}, got {active.shape}"
            )
        if not active.any():
            raise GeometryError("grid has no active cells")
        object.__setattr__(self, "active", active)
        self.active.setflags(write=False)

    @property
    def G(self) -> int:
        """Total cell count, including masked cells."""
        return self.nx * self.ny

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def cell_area(self) -> float:
        return self.domain.area / self.G

    @property
    def cell_width(self) -> float:
        return self.domain.width / self.nx

    @property
    def cell_height(self) -> float:
        return self.domain.height / self.ny

    @cached_property
    def centroids(self) -> np.ndarray:
        """(G, 2) array of cell centroids, row-major with x fastest."""
        wx, wy = self.cell_width, self.cell_height
        ix = np.arange(self.nx)
        iy = np.arange(self.ny)
        cx = self.domain.x_min + (ix + 0.5) * wx
        cy = self.domain.y_min + (iy + 0.5) * wy
        out = np.empty((self.G, 2))
        out[:, 0] = np.tile(cx, self.ny)
        out[:, 1] = np.repeat(cy, self.nx)
        out.setflags(write=False)
        return out

    @cached_property
    def active_cells(self) -> np.ndarray:
        """Full-grid indices of the active cells, ascending."""
        out = np.flatnonzero(self.active)
        out.setflags(write=False)
        return out

    @cached_property
    def active_index(self) -> np.ndarray:
        """Full-grid index -> compact active index; -1 for masked cells."""
        out = np.full(self.G, -1, dtype=np.int64)
        out[self.active_cells] = np.arange(self.n_active)
        out.setflags(write=False)
        return out

    @cached_property
    def active_centroids(self) -> np.ndarray:
        out = self.centroids[self.active_cells]
        out.setflags(write=False)
        return out

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Map points to full-grid cell indices.

        Args:
            points: (m, 2) array of coordinates.

        Returns:
            (m,) int64 array of cell indices in [0, G).

        Raises:
            GeometryError: If any point falls outside the domain.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise GeometryError(f"points must have shape (m, 2), got {pts.shape}")
        x, y = pts[:, 0], pts[:, 1]
        d = self.domain
        inside = (x >= d.x_min) & (x <= d.x_max) & (y >= d.y_min) & (y <= d.y_max)
        if not inside.all():
            bad = pts[~inside][0]
            raise GeometryError(f"point ({bad[0]}, {bad[1]}) lies outside the domain")
        ix = np.floor((x - d.x_min) / self.cell_width).astype(np.int64)
        iy = np.floor((y - d.y_min) / self.cell_height).astype(np.int64)
        # The top/right boundary of the last column/row is closed.
        np.clip(ix, 0, self.nx - 1, out=ix)
        np.clip(iy, 0, self.ny - 1, out=iy)
        return iy * self.nx + ix

    def locate_active(self, points: np.ndarray) -> np.ndarray:
        """Map points to compact active-cell indices.

        Raises:
            GeometryError: If any point is outside the domain or in a masked cell.
        """
        full = self.locate(points)
        compact = self.active_index[full]
        if (compact < 0).any():
            g = int(full[compact < 0][0])
            raise GeometryError(f"point falls in masked cell {g}")
        return compact


def build_grid(
    domain: Domain,
    nx: int,
    ny: int,
    active: np.ndarray | None = None,
) -> GridGeometry:
    """Construct a GridGeometry, defaulting to an all-active mask."""
    if active is None:
        active = np.ones(nx * ny, dtype=bool)
    return GridGeometry(domain=domain, nx=nx, ny=ny, active=np.asarray(active, dtype=bool))


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between rows of an (m, 2) coordinate array."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GeometryError(f"points must have shape (m, 2), got {pts.shape}")
    dx = pts[:, 0:1] - pts[None, :, 0]
    dy = pts[:, 1:2] - pts[None, :, 1]
    return np.hypot(dx, dy)
