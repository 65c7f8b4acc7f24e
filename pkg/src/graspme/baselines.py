"""Reference predictors: the random-keypoint baseline and a controllable
perturbation of the ground truth."""

from __future__ import annotations

import numpy as np

from .dataset import CocoDataset, PredictionSet


def _image_sizes(gt: CocoDataset) -> dict[int, tuple[int, int]]:
    return {img["id"]: (img["width"], img["height"]) for img in gt.images}


def random_baseline(gt: CocoDataset, rng: np.random.Generator, boxes: PredictionSet | None = None) -> PredictionSet:
    """K keypoints drawn uniformly inside each source box, score 1.

    The boxes come from the ground truth, or from ``boxes`` (e.g. a detector's
    output) when given. The confidence slot of every keypoint is 2.
    """
    if boxes is None:
        sources = [(a["image_id"], a["category_id"], a["bbox"]) for a in gt.annotations]
    else:
        sources = [(p["image_id"], p["category_id"], p["bbox"]) for p in boxes.records]
    records = []
    for image_id, category_id, bbox in sources:
        k = gt.num_keypoints(category_id)
        x, y, w, h = (float(c) for c in bbox)
        us = x + w * rng.random(k)
        vs = y + h * rng.random(k)
        flat = np.stack([us, vs, np.full(k, 2.0)], axis=1).ravel().tolist()
        records.append({"image_id": image_id, "category_id": category_id, "score": 1.0,
                        "bbox": [float(c) for c in bbox], "keypoints": flat})
    return PredictionSet(records)


def perturbation_predictor(gt: CocoDataset, noise_px: float, rng: np.random.Generator) -> PredictionSet:
    """Copy the ground truth and jitter every keypoint uniformly within a disc.

    Jittered points are clamped to the image, widened where needed to contain
    the original point, so ``noise_px == 0`` reproduces the ground truth.
    """
    if noise_px < 0:
        raise ValueError(f"noise_px must be >= 0, got {noise_px}")
    sizes = _image_sizes(gt)
    records = []
    for ann in gt.annotations:
        width, height = sizes[ann["image_id"]]
        kps = np.asarray(ann["keypoints"], dtype=float).reshape(-1, 3)
        radius = noise_px * np.sqrt(rng.random(len(kps)))
        angle = 2.0 * np.pi * rng.random(len(kps))
        u = kps[:, 0] + radius * np.cos(angle)
        v = kps[:, 1] + radius * np.sin(angle)
        u = np.clip(u, np.minimum(kps[:, 0], 0.0), np.maximum(kps[:, 0], width))
        v = np.clip(v, np.minimum(kps[:, 1], 0.0), np.maximum(kps[:, 1], height))
        flat = np.stack([u, v, kps[:, 2]], axis=1).ravel().tolist()
        records.append({"image_id": ann["image_id"], "category_id": ann["category_id"], "score": 1.0,
                        "bbox": list(ann["bbox"]), "segmentation": ann["segmentation"], "keypoints": flat})
    return PredictionSet(records)
