"""Evaluation suite: COCO-style AP for boxes, masks and keypoints, manifold
IoU in clip and full mode, and mean pixel distance after instance matching."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import perturbation_predictor, random_baseline  # noqa: F401  (re-exported)
from .dataset import CocoDataset, PredictionSet, RleMask, category_kind, rle_foreground
from .raster2d import image_to_pixel_coords, manifold_pixels, pixel_set_iou
from .shapes import ManifoldKind

DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    oks_kappa: float = 0.1
    stroke_px: float = 3.0
    merge_classes: bool = False
    canvas: tuple[int, int] | None = None  # (width, height); None uses each image's size

    def __post_init__(self):
        t = tuple(float(x) for x in self.iou_thresholds)
        if not t or any(not 0.0 < x <= 1.0 for x in t):
            raise ValueError(f"thresholds must lie in (0, 1]: {t}")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError(f"thresholds must be strictly increasing: {t}")
        object.__setattr__(self, "iou_thresholds", t)
        if self.stroke_px < 1:
            raise ValueError(f"stroke_px must be >= 1, got {self.stroke_px}")
        if not self.oks_kappa > 0:
            raise ValueError(f"oks_kappa must be positive, got {self.oks_kappa}")

    def to_dict(self) -> dict:
        return {"iou_thresholds": list(self.iou_thresholds), "oks_kappa": self.oks_kappa,
                "stroke_px": self.stroke_px, "merge_classes": self.merge_classes,
                "canvas": list(self.canvas) if self.canvas else None}


# --- similarities -------------------------------------------------------------

def iou_bbox(a, b) -> float:
    """IoU of two [x, y, w, h] boxes. Identical boxes give 1 even when degenerate."""
    ax, ay, aw, ah = (float(c) for c in a)
    bx, by, bw, bh = (float(c) for c in b)
    if (ax, ay, aw, ah) == (bx, by, bw, bh):
        return 1.0
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def oks(pred_kps, gt_kps, gt_area: float, kappa: float = 0.1) -> float:
    """Object keypoint similarity over the GT keypoints with v > 0."""
    pred = np.asarray(pred_kps, dtype=float).reshape(-1)
    gt = np.asarray(gt_kps, dtype=float).reshape(-1)
    if pred.shape != gt.shape or len(gt) % 3:
        raise ValueError(f"keypoint arity mismatch: {len(pred)} vs {len(gt)}")
    pred, gt = pred.reshape(-1, 3), gt.reshape(-1, 3)
    vis = gt[:, 2] > 0
    if not vis.any():
        return 0.0
    d2 = ((pred[vis, :2] - gt[vis, :2]) ** 2).sum(axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * gt_area * kappa**2))))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two foreground index arrays."""
    return pixel_set_iou(a, b)


# --- average precision ------------------------------------------------------

def _group_key(record: dict, merge_classes: bool):
    return (record["image_id"], None if merge_classes else record["category_id"])


def _category_key(record: dict, merge_classes: bool):
    return None if merge_classes else record["category_id"]


def _interpolated_ap(tp: np.ndarray, scores: np.ndarray, n_gt: int) -> float:
    order = np.argsort(-scores, kind="mergesort")
    tp = tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, np.finfo(float).eps)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(q.mean())


def coco_ap(gts: Sequence[dict], preds: Sequence[dict], similarity_fn: Callable[[dict, dict], float],
            thresholds: Sequence[float] = DEFAULT_THRESHOLDS, merge_classes: bool = False) -> float:
    """COCO average precision in percent.

    Records need ``image_id`` and ``category_id``; predictions also ``score``.
    Per threshold, predictions of each image are visited by descending score
    and take the most similar unmatched GT whose similarity reaches the
    threshold. AP is the 101-point interpolated precision, averaged over the
    categories that have GT and then over thresholds. There is no cap on the
    number of detections per image.
    """
    categories = sorted({_category_key(g, merge_classes) for g in gts}, key=lambda c: (c is None, c))
    if not categories:
        return 0.0
    gt_groups: dict = {}
    for i, g in enumerate(gts):
        gt_groups.setdefault(_group_key(g, merge_classes), []).append(i)
    pred_groups: dict = {}
    for i, p in enumerate(preds):
        pred_groups.setdefault(_group_key(p, merge_classes), []).append(i)

    # similarity matrices, predictions in (score desc, input order) within each group
    groups = {}
    for key, pidx in pred_groups.items():
        pidx = sorted(pidx, key=lambda i: -preds[i]["score"])
        gidx = gt_groups.get(key, [])
        sim = np.array([[similarity_fn(preds[p], gts[g]) for g in gidx] for p in pidx]).reshape(len(pidx), len(gidx))
        groups[key] = (pidx, sim)

    n_gt = {c: 0 for c in categories}
    for g in gts:
        n_gt[_category_key(g, merge_classes)] += 1
    scores = np.array([float(p["score"]) for p in preds])
    pred_cats = [_category_key(p, merge_classes) for p in preds]
    selections = {c: np.array([i for i, pc in enumerate(pred_cats) if pc == c], dtype=np.int64) for c in categories}
    per_threshold = []
    for t in thresholds:
        tp = np.zeros(len(preds), dtype=bool)
        for pidx, sim in groups.values():
            taken = np.zeros(sim.shape[1], dtype=bool)
            for row, p in enumerate(pidx):
                cand = np.where(taken | (sim[row] < t), -np.inf, sim[row])
                if len(cand) and np.isfinite(cand.max()):
                    j = int(np.argmax(cand))
                    taken[j] = True
                    tp[p] = True
        per_cat = [_interpolated_ap(tp[sel], scores[sel], n_gt[c]) if len(sel) else 0.0
                   for c, sel in selections.items()]
        per_threshold.append(float(np.mean(per_cat)))
    return 100.0 * float(np.mean(per_threshold))


# --- manifold IoU, matching, distance -------------------------------------------

def _kps(flat) -> np.ndarray:
    return np.asarray(flat, dtype=float).reshape(-1, 3)


def manifold_iou(gt_kps, pred_kps, kind: ManifoldKind, mode: str = "clip", stroke_px: float = 3.0,
                 canvas: tuple[int, int] = (512, 512)) -> float:
    """Pixel-set IoU between the GT manifold and a predicted one.

    The GT manifold uses the GT keypoints with v > 0. The prediction uses its
    first k keypoints (``clip``, k = that GT count) or all of them (``full``).
    When both sets are empty (manifolds entirely off canvas), identical
    keypoint geometry scores 1 and anything else 0.
    """
    gt = _kps(gt_kps)
    pred = _kps(pred_kps)
    vis = gt[:, 2] > 0
    if mode == "clip":
        pred_pts = pred[: int(vis.sum()), :2]
    elif mode == "full":
        pred_pts = pred[:, :2]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a = manifold_pixels(image_to_pixel_coords(gt[vis, :2]), kind, stroke_px, canvas)
    b = manifold_pixels(image_to_pixel_coords(pred_pts), kind, stroke_px, canvas)
    if len(a) == 0 and len(b) == 0:
        same = gt[vis, :2].shape == pred_pts.shape and bool(np.array_equal(gt[vis, :2], pred_pts))
        return 1.0 if same and len(pred_pts) else 0.0
    return pixel_set_iou(a, b)


def keypoint_set_distance(pred_kps, gt_kps) -> float:
    """Mean pixel distance over the GT keypoints with v > 0, index-aligned; inf if none."""
    gt, pred = _kps(gt_kps), _kps(pred_kps)
    if len(gt) != len(pred):
        return math.inf
    vis = gt[:, 2] > 0
    if not vis.any():
        return math.inf
    return float(np.mean(np.hypot(*(pred[vis, :2] - gt[vis, :2]).T)))


@dataclass(frozen=True)
class Match:
    pred: int
    gt: int
    distance: float


def match_instances(gt_objects: Sequence[dict], pred_objects: Sequence[dict]) -> list[Match]:
    """Greedy pairing by mean keypoint distance, globally closest pair first.

    Ties go to the lower prediction index, then the lower GT index. Pairs with
    no finite distance (no visible GT keypoint, arity mismatch) never match.
    """
    cands = []
    for i, p in enumerate(pred_objects):
        for j, g in enumerate(gt_objects):
            d = keypoint_set_distance(p["keypoints"], g["keypoints"])
            if math.isfinite(d):
                cands.append((d, i, j))
    cands.sort()
    used_p, used_g, out = set(), set(), []
    for d, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append(Match(i, j, d))
    return sorted(out, key=lambda m: m.gt)


def mean_std(values: Sequence[float]) -> tuple[float, float] | None:
    if len(values) == 0:
        return None
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def mean_pixel_distance(pairing: Sequence[Match]) -> tuple[float, float] | None:
    """Mean and population std of per-pair distances; None for an empty pairing."""
    return mean_std([m.distance for m in pairing])


# --- full evaluation -----------------------------------------------------------

@dataclass
class EvalReport:
    ap_bb: float
    ap_seg: float | None
    ap_kp: float
    iou_clip: tuple[float, float] | None
    iou_full: tuple[float, float] | None
    mdist: tuple[float, float] | None
    n_gt: int
    n_pred: int
    n_matched: int
    per_category: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def match_rate(self) -> float:
        return self.n_matched / self.n_gt if self.n_gt else 0.0

    def to_dict(self) -> dict:
        def pair(v):
            return None if v is None else {"mean": v[0], "std": v[1]}

        return {
            "ap_bb": self.ap_bb, "ap_seg": self.ap_seg, "ap_kp": self.ap_kp,
            "iou_clip": pair(self.iou_clip), "iou_full": pair(self.iou_full), "mdist": pair(self.mdist),
            "n_gt": self.n_gt, "n_pred": self.n_pred, "n_matched": self.n_matched,
            "match_rate": self.match_rate, "per_category": self.per_category, "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def format_table(self, label: str = "Model") -> str:
        header = ["Method", "AP^bb", "AP^seg", "AP^kp", "IoU_clip", "IoU_full", "mDist"]
        rows = [[label, *_row_cells(self.ap_bb, self.ap_seg, self.ap_kp, self.iou_clip, self.iou_full, self.mdist)]]
        for name, cat in self.per_category.items():
            rows.append([f"  {name}", *_row_cells(cat["ap_bb"], cat["ap_seg"], cat["ap_kp"],
                                                  _unpair(cat["iou_clip"]), _unpair(cat["iou_full"]),
                                                  _unpair(cat["mdist"]))])
        widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                 for r in [header, *rows]]
        lines.insert(1, "-" * len(lines[0]))
        lines.append(f"matched {self.n_matched}/{self.n_gt} GT objects ({100 * self.match_rate:.1f}%), "
                     f"stroke {self.config.get('stroke_px', '?')} px")
        return "\n".join(lines)


def _unpair(v):
    return None if v is None else (v["mean"], v["std"])


def _row_cells(ap_bb, ap_seg, ap_kp, clip, full, mdist) -> list[str]:
    def ap(v):
        return "—" if v is None else f"{v:.1f}"

    def pm(v, scale=1.0):
        return "—" if v is None else f"{v[0] * scale:.2f} ± {v[1] * scale:.2f}"

    return [ap(ap_bb), ap(ap_seg), ap(ap_kp), pm(clip, 100.0), pm(full, 100.0), pm(mdist)]


def _prepare_masks(records: Sequence[dict]) -> list[np.ndarray]:
    return [rle_foreground(RleMask.from_dict(r["segmentation"])) for r in records]


def _mask_similarity(pred_masks, gt_masks):
    def sim(p: dict, g: dict) -> float:
        if iou_bbox_overlap(p["bbox"], g["bbox"]):
            return mask_iou(pred_masks[p["_i"]], gt_masks[g["_i"]])
        return 0.0

    return sim


def iou_bbox_overlap(a, b) -> bool:
    """Whether the closed pixel ranges of two boxes intersect (mask-IoU prune)."""
    return not (a[0] + a[2] < b[0] or b[0] + b[2] < a[0] or a[1] + a[3] < b[1] or b[1] + b[3] < a[1])


def evaluate(gt: CocoDataset, preds: PredictionSet, config: EvalConfig | None = None) -> EvalReport:
    config = config or EvalConfig()
    gts = [dict(a, _i=i) for i, a in enumerate(gt.annotations)]
    prs = [dict(p, _i=i) for i, p in enumerate(preds.records)]
    cats = {c["id"]: c for c in gt.categories}
    sizes = {img["id"]: (img["width"], img["height"]) for img in gt.images}
    merge = config.merge_classes
    has_seg = bool(prs) and all(p.get("segmentation") is not None for p in prs)

    def ap_suite(g_sub, p_sub):
        t = config.iou_thresholds
        ap_bb = coco_ap(g_sub, p_sub, lambda p, g: iou_bbox(p["bbox"], g["bbox"]), t, merge)
        ap_kp = coco_ap(g_sub, p_sub, lambda p, g: oks(p["keypoints"], g["keypoints"], g["area"], config.oks_kappa)
                        if len(p["keypoints"]) == len(g["keypoints"]) else 0.0, t, merge)
        if has_seg:
            ap_seg = coco_ap(g_sub, p_sub, seg_sim, t, merge)
        else:
            ap_seg = 0.0 if not prs else None  # no predictions at all score 0; unsegmented ones are absent
        return ap_bb, ap_seg, ap_kp

    seg_sim = _mask_similarity(_prepare_masks(prs), _prepare_masks(gts)) if has_seg else None
    ap_bb, ap_seg, ap_kp = ap_suite(gts, prs)

    # instance matching per image (and per category unless merged), in image-id order
    by_key_g: dict = {}
    by_key_p: dict = {}
    for g in gts:
        by_key_g.setdefault(_group_key(g, merge), []).append(g)
    for p in prs:
        by_key_p.setdefault(_group_key(p, merge), []).append(p)
    pairs = []  # (gt, pred, distance, iou_clip, iou_full)
    for key in sorted(by_key_g, key=lambda k: (k[0], -1 if k[1] is None else k[1])):
        g_list, p_list = by_key_g[key], by_key_p.get(key, [])
        for m in match_instances(g_list, p_list):
            g, p = g_list[m.gt], p_list[m.pred]
            kind = category_kind(cats[g["category_id"]])
            canvas = config.canvas or sizes[g["image_id"]]
            clip = manifold_iou(g["keypoints"], p["keypoints"], kind, "clip", config.stroke_px, canvas)
            full = manifold_iou(g["keypoints"], p["keypoints"], kind, "full", config.stroke_px, canvas)
            pairs.append((g, p, m.distance, clip, full))

    per_category = {}
    for cid in sorted(cats):
        g_sub = [g for g in gts if g["category_id"] == cid]
        if not g_sub:
            continue
        p_sub = [p for p in prs if p["category_id"] == cid]
        c_bb, c_seg, c_kp = ap_suite(g_sub, p_sub)
        c_pairs = [x for x in pairs if x[0]["category_id"] == cid]
        per_category[cats[cid]["name"]] = {
            "ap_bb": c_bb, "ap_seg": c_seg, "ap_kp": c_kp,
            "iou_clip": _pair_dict(mean_std([x[3] for x in c_pairs])),
            "iou_full": _pair_dict(mean_std([x[4] for x in c_pairs])),
            "mdist": _pair_dict(mean_std([x[2] for x in c_pairs])),
            "n_gt": len(g_sub), "n_matched": len(c_pairs),
        }

    return EvalReport(
        ap_bb=ap_bb, ap_seg=ap_seg, ap_kp=ap_kp,
        iou_clip=mean_std([x[3] for x in pairs]),
        iou_full=mean_std([x[4] for x in pairs]),
        mdist=mean_std([x[2] for x in pairs]),
        n_gt=len(gts), n_pred=len(prs), n_matched=len(pairs),
        per_category=per_category, config=config.to_dict(),
    )


def _pair_dict(v):
    return None if v is None else {"mean": v[0], "std": v[1]}
