"""Midpoint-rule quadrature on rectangular domains."""
from __future__ import annotations

import numpy as np

DEFAULT_RESOLUTION = 400


def axis_midpoints(lo: float, hi: float, resolution: int):
    """Cell centres and cell width of ``resolution`` equal cells on ``[lo, hi)``."""
    if resolution < 1:
        raise ValueError(f"resolution must be >= 1, got {resolution}")
    width = (hi - lo) / resolution
    return lo + (np.arange(resolution) + 0.5) * width, width


def midpoint_grid(domain, resolution: int = DEFAULT_RESOLUTION):
    """All cell centres of a ``resolution x resolution`` grid, as ``(r*r, 2)``, plus cell area.

    Rows are ordered with the x index varying slowest.
    """
    xs, dx = axis_midpoints(domain.x_min, domain.x_max, resolution)
    ys, dy = axis_midpoints(domain.y_min, domain.y_max, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()]), dx * dy


def integrate(func, domain, resolution: int = DEFAULT_RESOLUTION, chunk: int = 40_000) -> float:
    """Midpoint-rule integral of a vectorised ``func(points) -> values`` over ``domain``."""
    centers, cell_area = midpoint_grid(domain, resolution)
    total = 0.0
    for lo in range(0, len(centers), chunk):
        total += float(np.sum(func(centers[lo:lo + chunk])))
    return total * cell_area
