"""Pixel-set rasterization of 2D grasp manifolds.

Coordinates here are pixel-index coordinates: pixel ``(x, y)`` is the point
``(x, y)``. Image-space keypoints, whose pixel centres sit at ``i + 0.5``, go
through :func:`image_to_pixel_coords` first.

Pixel sets are sorted arrays of flat indices ``y * width + x``.
"""

from __future__ import annotations

import numpy as np

from .shapes import ManifoldKind

_EPS = 1e-9


def image_to_pixel_coords(points) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, 2) - 0.5


def _local_grid(points: np.ndarray, pad: float, canvas: tuple[int, int]):
    width, height = canvas
    lo = np.floor(points.min(axis=0) - pad)
    hi = np.ceil(points.max(axis=0) + pad)
    x0, y0 = max(int(lo[0]), 0), max(int(lo[1]), 0)
    x1, y1 = min(int(hi[0]), width - 1), min(int(hi[1]), height - 1)
    if x1 < x0 or y1 < y0:
        return None
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    return xs.ravel().astype(float), ys.ravel().astype(float)


def _segment_distance(px, py, a, b) -> np.ndarray:
    d = b - a
    len2 = float(d @ d)
    if len2 == 0.0:
        return np.hypot(px - a[0], py - a[1])
    s = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / len2, 0.0, 1.0)
    return np.hypot(px - (a[0] + s * d[0]), py - (a[1] + s * d[1]))


def _inside_even_odd(px, py, poly: np.ndarray) -> np.ndarray:
    inside = np.zeros(px.shape, dtype=bool)
    xj, yj = poly[-1]
    for xi, yi in poly:
        crosses = (yi > py) != (yj > py)
        if crosses.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                x_at = (xj - xi) * (py - yi) / (yj - yi) + xi
            inside ^= crosses & (px < x_at)
        xj, yj = xi, yi
    return inside


def rasterize_manifold(keypoints, kind: ManifoldKind, stroke_px: float = 3.0,
                       canvas: tuple[int, int] = (512, 512)) -> np.ndarray:
    """Pixels covered by a manifold polyline (Line) or closed polygon (Surface).

    Line: every pixel within ``stroke_px / 2`` of the open polyline.
    Surface: the even-odd fill of the closed polygon plus its stroked boundary.
    ``canvas`` is ``(width, height)``; pixels outside it are dropped.
    """
    pts = np.asarray(keypoints, dtype=float).reshape(-1, 2)
    kind = ManifoldKind(kind)
    need = 3 if kind is ManifoldKind.SURFACE else 2
    if len(pts) < need:
        raise ValueError(f"{kind.value} manifold needs at least {need} keypoints, got {len(pts)}")
    if stroke_px < 1:
        raise ValueError(f"stroke_px must be >= 1, got {stroke_px}")
    if not np.isfinite(pts).all():
        raise ValueError("keypoints must be finite")
    radius = stroke_px / 2.0
    grid = _local_grid(pts, radius + 1.0, canvas)
    if grid is None:
        return np.empty(0, dtype=np.int64)
    px, py = grid
    path = np.vstack([pts, pts[:1]]) if kind is ManifoldKind.SURFACE else pts
    covered = np.zeros(px.shape, dtype=bool)
    for a, b in zip(path[:-1], path[1:]):
        covered |= _segment_distance(px, py, a, b) <= radius + _EPS
    if kind is ManifoldKind.SURFACE:
        covered |= _inside_even_odd(px, py, pts)
    flat = py[covered].astype(np.int64) * canvas[0] + px[covered].astype(np.int64)
    return np.sort(flat)


def manifold_pixels(points, kind: ManifoldKind, stroke_px: float, canvas: tuple[int, int]) -> np.ndarray:
    """Like :func:`rasterize_manifold` but tolerant of too few points.

    A surface with fewer than three points is drawn as a line, a single
    point as a disc, and no points as the empty set.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.empty(0, dtype=np.int64)
    kind = ManifoldKind(kind)
    if kind is ManifoldKind.SURFACE and len(pts) < 3:
        kind = ManifoldKind.LINE
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    return rasterize_manifold(pts, kind, stroke_px, canvas)


def pixel_set_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two sorted unique flat-index sets; 0 when both are empty."""
    if len(a) == 0 and len(b) == 0:
        return 0.0
    inter = len(np.intersect1d(a, b, assume_unique=True))
    union = len(a) + len(b) - inter
    return inter / union


def pixel_set_to_mask(pixels: np.ndarray, canvas: tuple[int, int]) -> np.ndarray:
    width, height = canvas
    mask = np.zeros(width * height, dtype=bool)
    mask[pixels] = True
    return mask.reshape(height, width)

