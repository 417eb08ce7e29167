"""Convex-polygon helpers. Polygons are (n, 2) arrays with counter-clockwise vertices."""

from __future__ import annotations

import math

import numpy as np


def box(cx: float, cy: float, angle: float, width: float, height: float) -> np.ndarray:
    """Corners of an oriented rectangle, counter-clockwise from bottom-left."""
    hw, hh = width / 2.0, height / 2.0
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def segment_box(x0: float, y0: float, angle: float, length: float, thickness: float) -> np.ndarray:
    """Rectangle starting at (x0, y0) and extending ``length`` along ``angle``."""
    c, s = math.cos(angle), math.sin(angle)
    return box(x0 + 0.5 * length * c, y0 + 0.5 * length * s, angle, length, thickness)


def outward_normals(poly: np.ndarray) -> np.ndarray:
    edges = np.roll(poly, -1, axis=0) - poly
    normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def penetration(point: np.ndarray, poly: np.ndarray) -> tuple[float, np.ndarray] | None:
    """Depth and exit normal of ``point`` inside ``poly``, or None when outside.

    The exit normal is the outward normal of the nearest edge.
    """
    normals = outward_normals(poly)
    signed = np.einsum("ij,ij->i", point[None, :] - poly, normals)
    if np.any(signed >= 0.0):
        return None
    i = int(np.argmax(signed))
    return float(-signed[i]), normals[i]


def contains(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Vectorised strict inside test for an (m, 2) array of points."""
    normals = outward_normals(poly)
    signed =np.einsum("mij,ij->mi", points[:, None, :] - poly[None, :, :], normals)
    return np.all(signed < 0.0, axis=1)
