"""COCO-format persistence: RLE masks, canonical index files, image emission,
splits and the prediction-file interface.

Bounding boxes follow ``w = x_max - x_min`` and ``h = y_max - y_min`` on pixel
indices, so a one-pixel-wide mask has ``w == 0``. This differs from most COCO
tooling, which adds one. ``area`` is the mask pixel count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import DanglingReferenceError, SchemaError
from .render import AnnotatedObject, FrameBuffers
from .shapes import ManifoldKind, ObjectTemplate

DEPTH_SENTINEL = 65535
SPLITS = ("train", "val", "test")


# --- run-length encoding ------------------------------------------------------

@dataclass(frozen=True)
class RleMask:
    """Uncompressed COCO RLE: column-major runs, starting with background."""

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"size": list(self.size), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, doc, path: str = "segmentation") -> RleMask:
        if not isinstance(doc, dict) or set(doc) != {"size", "counts"}:
            raise SchemaError("expected an RLE object with 'size' and 'counts'", path)
        size, counts = doc["size"], doc["counts"]
        if not (isinstance(size, list) and len(size) == 2 and all(_is_int(s) and s >= 0 for s in size)):
            raise SchemaError("size must be [height, width]", f"{path}.size")
        if not (isinstance(counts, list) and all(_is_int(c) and c >= 0 for c in counts)):
            raise SchemaError("counts must be a list of non-negative integers", f"{path}.counts")
        if sum(counts) != size[0] * size[1]:
            raise SchemaError(f"counts sum to {sum(counts)}, expected {size[0] * size[1]}", f"{path}.counts")
        return cls((size[0], size[1]), tuple(counts))

    @property
    def area(self) -> int:
        return int(sum(self.counts[1::2]))


def encode_rle(mask, width: int | None = None, height: int | None = None) -> RleMask:
    """Encode an (H, W) boolean mask, or a set of (x, y) pixels given ``width`` and ``height``."""
    if not isinstance(mask, np.ndarray):
        if width is None or height is None:
            raise ValueError("width and height are required for a pixel set")
        grid = np.zeros((height, width), dtype=bool)
        for x, y in mask:
            if not (0 <= x < width and 0 <= y < height):
                raise ValueError(f"pixel ({x}, {y}) outside a {width}x{height} mask")
            grid[y, x] = True
        mask = grid
    mask = np.asarray(mask, dtype=bool)
    if (width is not None and mask.shape[1] != width) or (height is not None and mask.shape[0] != height):
        raise ValueError(f"mask shape {mask.shape} does not match {height}x{width}")
    height, width = mask.shape
    flat = mask.ravel(order="F")
    if not len(flat):
        return RleMask((height, width), (0,))
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [len(flat)]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask((height, width), tuple(int(r) for r in runs))


def decode_rle(rle: RleMask, size: tuple[int, int] | None = None) -> np.ndarray:
    """Decode to an (H, W) boolean mask; ``size`` optionally asserts the shape."""
    height, width = rle.size
    if size is not None and tuple(size) != (height, width):
        raise SchemaError(f"RLE size {list(rle.size)} does not match expected {list(size)}")
    if sum(rle.counts) != height * width:
        raise SchemaError(f"RLE counts sum to {sum(rle.counts)}, expected {height * width}")
    values = np.arange(len(rle.counts)) % 2 == 1
    flat = np.repeat(values, rle.counts)
    return flat.reshape((width, height)).T.copy()


def rle_foreground(rle: RleMask) -> np.ndarray:
    """Sorted column-major flat indices of the foreground pixels."""
    counts = np.asarray(rle.counts, dtype=np.int64)
    starts = np.cumsum(counts) - counts
    fg_starts, fg_len = starts[1::2], counts[1::2]
    if not len(fg_len) or fg_len.sum() == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.arange(fg_len.sum()) - np.repeat(np.cumsum(fg_len) - fg_len, fg_len)
    return np.repeat(fg_starts, fg_len) + offsets


# --- canonical JSON -----------------------------------------------------------

def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def canonical_json(obj) -> str:
    """Compact JSON with sorted keys and every float written with 2 decimals.

    Used for the COCO index, whose only floats are pixel coordinates.
    """
    if isinstance(obj, dict):
        items = (json.dumps(str(k)) + ":" + canonical_json(obj[k]) for k in sorted(obj))
        return "{" + ",".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(canonical_json(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise SchemaError(f"non-finite number {obj!r} cannot be serialised")
        return "%.2f" % (round(float(obj), 2) + 0.0)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# --- dataset model ----------------------------------------------------------

@dataclass
class CocoDataset:
    images: list[dict] = field(default_factory=list)
    annotations: list[dict] = field(default_factory=list)
    categories: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"images": self.images, "annotations": self.annotations, "categories": self.categories}

    def category(self, category_id: int) -> dict:
        return self._categories_by_id()[category_id]

    def _categories_by_id(self) -> dict[int, dict]:
        return {c["id"]: c for c in self.categories}

    def num_keypoints(self, category_id: int) -> int:
        return len(self.category(category_id)["keypoints"])

    def image_ids(self) -> list[int]:
        return [img["id"] for img in self.images]

    def annotations_by_image(self) -> dict[int, list[dict]]:
        out: dict[int, list[dict]] = {img["id"]: [] for img in self.images}
        for ann in self.annotations:
            out[ann["image_id"]].append(ann)
        return out

    def validate(self) -> None:
        validate_coco(self.to_dict())


def category_kind(category: dict) -> ManifoldKind:
    return ManifoldKind(category.get("kind", "line"))


def _require(doc: dict, keys: Iterable[str], path: str) -> None:
    if not isinstance(doc, dict):
        raise SchemaError("expected an object", path)
    missing = [k for k in keys if k not in doc]
    if missing:
        raise SchemaError(f"missing keys {missing}", path)


def validate_coco(doc: dict) -> None:
    """Check the COCO index invariants, raising SchemaError with a JSON path."""
    _require(doc, ("images", "annotations", "categories"), "")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc[key], list):
            raise SchemaError("expected a list", key)

    images: dict[int, dict] = {}
    for i, img in enumerate(doc["images"]):
        path = f"images[{i}]"
        _require(img, ("id", "file_name", "width", "height"), path)
        if not _is_int(img["id"]):
            raise SchemaError("id must be an integer", f"{path}.id")
        if img["id"] in images:
            raise SchemaError(f"duplicate image id {img['id']}", f"{path}.id")
        if not isinstance(img["file_name"], str):
            raise SchemaError("file_name must be a string", f"{path}.file_name")
        for key in ("width", "height"):
            if not (_is_int(img[key]) and img[key] > 0):
                raise SchemaError("must be a positive integer", f"{path}.{key}")
        images[img["id"]] = img

    categories: dict[int, dict] = {}
    for i, cat in enumerate(doc["categories"]):
        path = f"categories[{i}]"
        _require(cat, ("id", "name", "keypoints", "skeleton"), path)
        if not _is_int(cat["id"]):
            raise SchemaError("id must be an integer", f"{path}.id")
        if cat["id"] in categories:
            raise SchemaError(f"duplicate category id {cat['id']}", f"{path}.id")
        if not isinstance(cat["name"], str):
            raise SchemaError("name must be a string", f"{path}.name")
        names = cat["keypoints"]
        if not (isinstance(names, list) and names and all(isinstance(n, str) for n in names)):
            raise SchemaError("keypoints must be a non-empty list of names", f"{path}.keypoints")
        skeleton = cat["skeleton"]
        if not (isinstance(skeleton, list) and all(
            isinstance(p, list) and len(p) == 2 and all(_is_int(j) and 1 <= j <= len(names) for j in p)
            for p in skeleton
        )):
            raise SchemaError("skeleton must be a list of 1-based keypoint index pairs", f"{path}.skeleton")
        if "kind" in cat and cat["kind"] not in ("line", "surface"):
            raise SchemaError(f"unknown manifold kind {cat['kind']!r}", f"{path}.kind")
        categories[cat["id"]] = cat

    seen: set[int] = set()
    for i, ann in enumerate(doc["annotations"]):
        path = f"annotations[{i}]"
        _require(ann, ("id", "image_id", "category_id", "bbox", "area", "iscrowd", "segmentation",
                       "keypoints", "num_keypoints"), path)
        if not _is_int(ann["id"]):
            raise SchemaError("id must be an integer", f"{path}.id")
        if ann["id"] in seen:
            raise SchemaError(f"duplicate annotation id {ann['id']}", f"{path}.id")
        seen.add(ann["id"])
        if ann["image_id"] not in images:
            raise DanglingReferenceError(f"unknown image id {ann['image_id']}", f"{path}.image_id")
        if ann["category_id"] not in categories:
            raise DanglingReferenceError(f"unknown category id {ann['category_id']}", f"{path}.category_id")
        _check_bbox(ann["bbox"], f"{path}.bbox")
        if not (_is_num(ann["area"]) and ann["area"] >= 0):
            raise SchemaError("area must be a non-negative number", f"{path}.area")
        if ann["iscrowd"] != 0:
            raise SchemaError("crowd annotations are not supported", f"{path}.iscrowd")
        img = images[ann["image_id"]]
        rle = RleMask.from_dict(ann["segmentation"], f"{path}.segmentation")
        if rle.size != (img["height"], img["width"]):
            raise SchemaError(f"mask size {list(rle.size)} differs from image size", f"{path}.segmentation.size")
        k = len(categories[ann["category_id"]]["keypoints"])
        kps = ann["keypoints"]
        _check_keypoints(kps, k, f"{path}.keypoints", flags=True)
        visible = sum(1 for v in kps[2::3] if v > 0)
        if ann["num_keypoints"] != visible:
            raise SchemaError(f"num_keypoints is {ann['num_keypoints']}, flags give {visible}",
                              f"{path}.num_keypoints")


def _check_bbox(bbox, path: str) -> None:
    if not (isinstance(bbox, list) and len(bbox) == 4 and all(_is_num(v) for v in bbox)):
        raise SchemaError("bbox must be [x, y, w, h]", path)
    if bbox[2] < 0 or bbox[3] < 0:
        raise SchemaError("bbox width and height must be non-negative", path)


def _check_keypoints(kps, k: int, path: str, flags: bool) -> None:
    if not isinstance(kps, list) or len(kps) != 3 * k:
        n = len(kps) if isinstance(kps, list) else "?"
        raise SchemaError(f"expected {3 * k} keypoint values, got {n}", path)
    if not all(_is_num(v) for v in kps):
        raise SchemaError("keypoint values must be finite numbers", path)
    if flags and not all(_is_int(v) and v in (0, 1, 2) for v in kps[2::3]):
        raise SchemaError("visibility flags must be 0, 1 or 2", path)


def write_coco(dataset: CocoDataset) -> str:
    dataset.validate()
    return canonical_json(dataset.to_dict()) + "\n"


def read_coco(text: str) -> CocoDataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    validate_coco(doc)
    return CocoDataset(doc["images"], doc["annotations"], doc["categories"])


# --- building records -------------------------------------------------------

def category_records(templates: Sequence[ObjectTemplate]) -> list[dict]:
    """One category per template, ids from 1 in template order."""
    out = []
    for cid, t in enumerate(templates, start=1):
        k = len(t.manifold)
        skeleton = [[j, j + 1] for j in range(1, k)]
        if t.manifold.kind is ManifoldKind.SURFACE:
            skeleton.append([k, 1])
        out.append({
            "id": cid,
            "name": t.category_name,
            "keypoints": [f"kp{j}" for j in range(1, t.K + 1)],
            "skeleton": skeleton,
            "kind": t.manifold.kind.value,
        })
    return out


def annotation_record(obj: AnnotatedObject, category_id: int) -> dict:
    """Annotation dict without ``id``/``image_id``; those are assigned by the index writer."""
    flat: list = []
    for u, v, flag in obj.keypoints:
        flat.extend((round(float(u), 2) + 0.0, round(float(v), 2) + 0.0, int(flag)))
    return {
        "category_id": category_id,
        "bbox": [int(c) for c in obj.bbox],
        "area": obj.area,
        "iscrowd": 0,
        "segmentation": encode_rle(obj.mask).to_dict(),
        "keypoints": flat,
        "num_keypoints": sum(1 for _, _, f in obj.keypoints if f > 0),
    }


def depth_to_millimeters(depth: np.ndarray) -> np.ndarray:
    mm = np.where(np.isfinite(depth), np.rint(depth * 1000.0), DEPTH_SENTINEL)
    return np.clip(mm, 0, DEPTH_SENTINEL).astype(np.uint16)


def image_file_names(scene_index: int) -> dict[str, str]:
    return {kind: f"{kind}_{scene_index:06d}.png" for kind in ("rgb", "depth", "seg")}


def emit_scene(buffers: FrameBuffers, annotations: Sequence[AnnotatedObject], out_dir: str | Path,
               scene_index: int, category_ids: dict[str, int]) -> tuple[dict, list[dict]]:
    """Write the RGB, depth and segmentation PNGs of one scene.

    Returns the image record and the annotation records for the COCO index.
    """
    ids = buffers.instance_id
    if ids.max(initial=0) > 255:
        raise ValueError(f"instance id {int(ids.max())} does not fit an 8-bit segmentation image")
    out_dir = Path(out_dir)
    names = image_file_names(scene_index)
    Image.fromarray(buffers.rgb, "RGB").save(out_dir / names["rgb"], compress_level=1)
    Image.fromarray(depth_to_millimeters(buffers.depth)).save(out_dir / names["depth"], compress_level=1)
    Image.fromarray(ids.astype(np.uint8), "L").save(out_dir / names["seg"], compress_level=1)
    height, width = ids.shape
    image = {"id": scene_index, "file_name": names["rgb"], "width": width, "height": height}
    records = [annotation_record(a, category_ids[a.category_name]) for a in annotations]
    return image, records


def split_dataset(n_scenes: int, seed: int) -> tuple[list[int], list[int], list[int]]:
    """Shuffled 80/10/10 partition of scene indices; rounding remainder goes to train."""
    if n_scenes < 10:
        raise ValueError(f"need at least 10 scenes to split, got {n_scenes}")
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED])).permutation(n_scenes)
    n_val = n_test = n_scenes // 10
    n_train = n_scenes - n_val - n_test
    train = sorted(perm[:n_train].tolist())
    val = sorted(perm[n_train:n_train + n_val].tolist())
    test = sorted(perm[n_train + n_val:].tolist())
    return train, val, test


def assemble_index(images: Sequence[dict], per_image_annotations: Sequence[list[dict]],
                   categories: list[dict]) -> CocoDataset:
    """Number annotations 1..N in image order and build a dataset."""
    annotations = []
    for image, records in zip(images, per_image_annotations):
        for rec in records:
            annotations.append({"id": len(annotations) + 1, "image_id": image["id"], **rec})
    return CocoDataset(list(images), annotations, categories)


def subset(dataset: CocoDataset, image_ids: Iterable[int]) -> CocoDataset:
    keep = set(image_ids)
    images = [img for img in dataset.images if img["id"] in keep]
    by_image = dataset.annotations_by_image()
    per_image = [[{k: v for k, v in a.items() if k not in ("id", "image_id")} for a in by_image[img["id"]]]
                 for img in images]
    return assemble_index(images, per_image, dataset.categories)


# --- predictions --------------------------------------------------------------

@dataclass
class PredictionSet:
    records: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def by_image(self) -> dict[int, list[dict]]:
        out: dict[int, list[dict]] = {}
        for rec in self.records:
            out.setdefault(rec["image_id"], []).append(rec)
        return out


def validate_predictions(records, gt: CocoDataset) -> PredictionSet:
    if not isinstance(records, list):
        raise SchemaError("prediction file must be a JSON array")
    image_ids = set(gt.image_ids())
    cats = {c["id"]: c for c in gt.categories}
    out = []
    for i, rec in enumerate(records):
        path = f"[{i}]"
        _require(rec, ("image_id", "category_id", "score", "bbox", "keypoints"), path)
        if rec["image_id"] not in image_ids:
            raise DanglingReferenceError(f"unknown image id {rec['image_id']}", f"{path}.image_id")
        if rec["category_id"] not in cats:
            raise DanglingReferenceError(f"unknown category id {rec['category_id']}", f"{path}.category_id")
        score = rec["score"]
        if not (_is_num(score) and 0.0 <= score <= 1.0):
            raise SchemaError(f"score must be a finite number in [0, 1], got {score!r}", f"{path}.score")
        _check_bbox(rec["bbox"], f"{path}.bbox")
        _check_keypoints(rec["keypoints"], len(cats[rec["category_id"]]["keypoints"]), f"{path}.keypoints",
                         flags=False)
        if rec.get("segmentation") is not None:
            RleMask.from_dict(rec["segmentation"], f"{path}.segmentation")
        out.append(rec)
    return PredictionSet(out)


def read_predictions(text: str, gt: CocoDataset) -> PredictionSet:
    """Parse a prediction file against its ground truth.

    A COCO index is also accepted, its annotations becoming score-1 predictions.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    if isinstance(doc, dict) and "annotations" in doc:
        doc = [
            {"image_id": a["image_id"], "category_id": a["category_id"], "score": 1.0, "bbox": a["bbox"],
             "segmentation": a.get("segmentation"), "keypoints": a["keypoints"]}
            for a in doc["annotations"]
        ]
    return validate_predictions(doc, gt)


def write_predictions(preds: PredictionSet) -> str:
    return json.dumps(preds.records, sort_keys=True, separators=(",", ":")) + "\n"
