"""Orthographic rasteriser producing intensity and depth grids."""

from __future__ import annotations

import numpy as np

from . import geometry
from .world import EnvState, body_polygons

GRID = 32
VIEW = (-0.30, 0.30, -0.15, 0.45)  # x0, x1, y0, y1 in metres


def cell_centres(grid: int = GRID, view=VIEW) -> np.ndarray:
    """(grid*grid, 2) world coordinates of cell centres; row 0 is the top of the view."""
    x0, x1, y0, y1 = view
    cw, ch = (x1 - x0) / grid, (y1 - y0) / grid
    xs = x0 + (np.arange(grid) + 0.5) * cw
    ys = y1 - (np.arange(grid) + 0.5) * ch
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


_CENTRES = cell_centres()


def render_polygons(
    items: list[tuple[np.ndarray, float, float]], grid: int = GRID, view=VIEW
) -> tuple[np.ndarray, np.ndarray]:
    """Rasterise (polygon, intensity, depth) items; the larger depth (nearer) wins a cell."""
    pts = _CENTRES if (grid == GRID and view == VIEW) else cell_centres(grid, view)
    intensity = np.zeros(grid * grid)
    depth = np.zeros(grid * grid)
    for poly, value, z in items:
        inside = geometry.contains(pts, poly) & (z > depth)
        intensity[inside] = value
        depth[inside] = z
    return (np.clip(intensity, 0.0, 1.0).reshape(grid, grid),
            np.clip(depth, 0.0, 1.0).reshape(grid, grid))


def render(state: EnvState) -> tuple[np.ndarray, np.ndarray]:
    return render_polygons(body_polygons(state))


def cell_of(x: float, y: float, grid: int = GRID, view=VIEW) -> tuple[int, int] | None:
    x0, x1, y0, y1 = view
    col = int((x - x0) / (x1 - x0) * grid)
    row = int((y1 - y) / (y1 - y0) * grid)
    if 0 <= row < grid and 0 <= col < grid:
        return row, col
    return None
