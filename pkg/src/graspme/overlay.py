"""Visual inspection overlays for dataset images and predictions."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .dataset import RleMask, category_kind, decode_rle
from .raster2d import image_to_pixel_coords, manifold_pixels

BOX_COLOR = (0, 255, 0)
VISIBLE_COLOR = (255, 0, 0)
OCCLUDED_COLOR = (255, 255, 0)
PRED_COLOR = (255, 0, 255)
MANIFOLD_COLOR = (0, 0, 0)
TINT_ALPHA = 0.35


def _palette(i: int) -> np.ndarray:
    rng = np.random.default_rng(i)
    return rng.integers(64, 256, size=3).astype(float)


def _set_pixels(img: np.ndarray, pixels: np.ndarray, color) -> None:
    height, width = img.shape[:2]
    img.reshape(height * width, 3)[pixels] = color


def _dots(draw: ImageDraw.ImageDraw, kps: np.ndarray, radius: float = 2.0, color_for=None) -> None:
    for u, v, flag in kps:
        color = color_for(flag)
        if color is None:
            continue
        draw.ellipse([u - radius, v - radius, u + radius, v + radius], fill=color)


def draw_overlay(rgb: np.ndarray, annotations: Sequence[dict], categories: dict[int, dict],
                 predictions: Sequence[dict] | None = None) -> np.ndarray:
    """Overlay boxes, tinted masks, keypoints and manifolds on an RGB image.

    Ground-truth manifolds are drawn last, in black, 1 px wide, through the
    visible (v = 2) keypoints only. Predictions use a second colour.
    """
    height, width = rgb.shape[:2]
    canvas = (width, height)
    out = rgb.astype(float)
    for i, ann in enumerate(annotations):
        mask = decode_rle(RleMask.from_dict(ann["segmentation"]), (height, width))
        out[mask] = (1 - TINT_ALPHA) * out[mask] + TINT_ALPHA * _palette(i + 1)
    image = Image.fromarray(np.clip(np.rint(out), 0, 255).astype(np.uint8), "RGB")
    draw = ImageDraw.Draw(image)

    for ann in annotations:
        x, y, w, h = ann["bbox"]
        draw.rectangle([x, y, x + w, y + h], outline=BOX_COLOR)
        kps = np.asarray(ann["keypoints"], dtype=float).reshape(-1, 3)
        _dots(draw, kps, color_for=lambda f: VISIBLE_COLOR if f == 2 else OCCLUDED_COLOR if f == 1 else None)

    for pred in predictions or ():
        x, y, w, h = pred["bbox"]
        draw.rectangle([x, y, x + w, y + h], outline=PRED_COLOR)
        kps = np.asarray(pred["keypoints"], dtype=float).reshape(-1, 3)
        _dots(draw, kps, radius=1.5, color_for=lambda f: PRED_COLOR if f > 0 else None)

    img = np.array(image)
    for pred in predictions or ():
        kps = np.asarray(pred["keypoints"], dtype=float).reshape(-1, 3)
        kps = kps[kps[:, 2] > 0]
        if len(kps) >= 2:
            kind = category_kind(categories[pred["category_id"]])
            _set_pixels(img, manifold_pixels(image_to_pixel_coords(kps[:, :2]), kind, 1, canvas), PRED_COLOR)
    for ann in annotations:
        _set_pixels(img, gt_manifold_pixels(ann, categories, canvas), MANIFOLD_COLOR)
    return img


def gt_manifold_pixels(ann: dict, categories: dict[int, dict], canvas: tuple[int, int]) -> np.ndarray:
    """Pixels of the 1 px manifold through the visible keypoints; empty if fewer than two."""
    kps = np.asarray(ann["keypoints"], dtype=float).reshape(-1, 3)
    visible = kps[kps[:, 2] == 2, :2]
    if len(visible) < 2:
        return np.empty(0, dtype=np.int64)
    kind = category_kind(categories[ann["category_id"]])
    return manifold_pixels(image_to_pixel_coords(visible), kind, 1, canvas)
