import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspme.dataset import CocoDataset, PredictionSet
from graspme.metrics import (
    EvalConfig,
    Match,
    coco_ap,
    evaluate,
    iou_bbox,
    keypoint_set_distance,
    manifold_iou,
    match_instances,
    mean_pixel_distance,
    oks,
    perturbation_predictor,
    random_baseline,
)

from ap_oracle import fixtures, iou_06_fixture, oracle_ap


def bbox_sim(p, g):
    return iou_bbox(p["bbox"], g["bbox"])


def with_visible(gt, flag=2):
    """Copy of ``gt`` with every keypoint flag forced to ``flag``."""
    anns = []
    for a in gt.annotations:
        kps = list(a["keypoints"])
        kps[2::3] = [flag] * (len(kps) // 3)
        anns.append(dict(a, keypoints=kps, num_keypoints=len(kps) // 3))
    return CocoDataset(gt.images, anns, gt.categories)


class TestEvalConfig:
    @pytest.mark.parametrize("kwargs", [dict(iou_thresholds=()), dict(iou_thresholds=(0.5, 0.5)),
                                        dict(iou_thresholds=(0.0, 0.5)), dict(stroke_px=0.5),
                                        dict(oks_kappa=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            EvalConfig(**kwargs)

    def test_default_thresholds(self):
        assert EvalConfig().iou_thresholds == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


class TestIouBbox:
    def test_examples(self):
        assert iou_bbox((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
        assert iou_bbox((0, 0, 10, 10), (20, 0, 5, 5)) == 0.0
        assert iou_bbox((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(1 / 3)

    def test_degenerate(self):
        assert iou_bbox((3, 3, 0, 0), (3, 3, 0, 0)) == 1.0
        assert iou_bbox((3, 3, 0, 0), (4, 3, 0, 0)) == 0.0

    @given(st.lists(st.integers(0, 30), min_size=8, max_size=8))
    def test_symmetric_bounded(self, c):
        a, b = c[:4], c[4:]
        assert iou_bbox(a, b) == iou_bbox(b, a)
        assert 0.0 <= iou_bbox(a, b) <= 1.0


class TestOks:
    def test_identical(self):
        kps = [1, 2, 2, 5, 5, 1]
        assert oks(kps, kps, 100.0) == 1.0

    def test_no_visible(self):
        assert oks([1, 1, 2, 2, 2, 2], [0, 0, 0, 0, 0, 0], 50.0) == 0.0

    def test_closed_form(self):
        area, kappa = 200.0, 0.1
        d = math.sqrt(2 * area * kappa**2)
        assert oks([d, 0, 2], [0, 0, 2], area, kappa) == pytest.approx(math.exp(-1))

    def test_ignores_invisible(self):
        assert oks([0, 0, 2, 99, 99, 2], [0, 0, 2, 0, 0, 0], 10.0) == 1.0

    def test_arity(self):
        with pytest.raises(ValueError):
            oks([0, 0, 2], [0, 0, 2, 1, 1, 2], 10.0)


class TestCocoAp:
    def test_iou_06_case(self):
        gts, preds = iou_06_fixture()
        assert coco_ap(gts, preds, bbox_sim) == pytest.approx(30.0)

    def test_perfect(self):
        gts = [{"image_id": i, "category_id": 1 + i % 2, "bbox": [i, i, 5, 5]} for i in range(6)]
        preds = [dict(g, score=1.0) for g in gts]
        assert coco_ap(gts, preds, bbox_sim) == 100.0

    def test_no_predictions(self):
        gts, _ = iou_06_fixture()
        assert coco_ap(gts, [], bbox_sim) == 0.0

    def test_no_gt(self):
        assert coco_ap([], [{"image_id": 0, "category_id": 1, "bbox": [0, 0, 1, 1], "score": 1.0}], bbox_sim) == 0.0

    def test_false_positive_ranked_first(self):
        gts = [{"image_id": 0, "category_id": 1, "bbox": [0, 0, 10, 10]}]
        preds = [{"image_id": 0, "category_id": 1, "bbox": [50, 50, 5, 5], "score": 0.9},
                 {"image_id": 0, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.8}]
        assert coco_ap(gts, preds, bbox_sim) == pytest.approx(50.0)

    def test_other_image_never_matches(self):
        gts = [{"image_id": 0, "category_id": 1, "bbox": [0, 0, 10, 10]}]
        preds = [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "score": 1.0}]
        assert coco_ap(gts, preds, bbox_sim) == 0.0

    def test_merge_classes(self):
        gts = [{"image_id": 0, "category_id": 1, "bbox": [0, 0, 10, 10]}]
        preds = [{"image_id": 0, "category_id": 2, "bbox": [0, 0, 10, 10], "score": 1.0}]
        assert coco_ap(gts, preds, bbox_sim) == 0.0
        assert coco_ap(gts, preds, bbox_sim, merge_classes=True) == 100.0

    @pytest.mark.parametrize("case", range(60))
    def test_matches_exact_oracle(self, case):
        gts, preds = fixtures()[case]
        assert round(coco_ap(gts, preds, bbox_sim), 9) == round(float(oracle_ap(gts, preds)), 9)


class TestManifoldIou:
    gt = [10.5, 10.5, 2, 30.5, 10.5, 2]

    def test_identical(self):
        for mode in ("clip", "full"):
            assert manifold_iou(self.gt, self.gt, "line", mode, 3, (64, 64)) == 1.0

    def test_translated(self):
        shifted = [10.5, 14.5, 2, 30.5, 14.5, 2]
        assert manifold_iou(self.gt, shifted, "line", "clip", 3, (64, 64)) == 0.0

    def test_clip_uses_gt_count(self):
        gt = [10.5, 10.5, 2, 30.5, 10.5, 2, 0, 0, 0]
        pred = [10.5, 10.5, 2, 30.5, 10.5, 2, 50.5, 50.5, 2]
        assert manifold_iou(gt, pred, "line", "clip", 3, (64, 64)) == 1.0
        assert manifold_iou(gt, pred, "line", "full", 3, (64, 64)) < 1.0

    def test_off_canvas(self):
        off = [10.5, 90.5, 1, 30.5, 95.5, 1]
        assert manifold_iou(off, off, "line", "clip", 3, (64, 64)) == 1.0
        moved = [12.5, 90.5, 2, 30.5, 95.5, 2]
        assert manifold_iou(off, moved, "line", "clip", 3, (64, 64)) == 0.0

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            manifold_iou(self.gt, self.gt, "line", "half")

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 60), min_size=4, max_size=4), st.lists(st.floats(0, 60), min_size=4, max_size=4))
    def test_symmetric_bounded(self, a, b):
        ka = [a[0], a[1], 2, a[2], a[3], 2]
        kb = [b[0], b[1], 2, b[2], b[3], 2]
        iou = manifold_iou(ka, kb, "line", "full", 3, (64, 64))
        assert iou == manifold_iou(kb, ka, "line", "full", 3, (64, 64))
        assert 0.0 <= iou <= 1.0


def exhaustive_lexmin(dist):
    """Full-size pairing whose ascending distance list is lexicographically smallest."""
    n_p, n_g = dist.shape
    best = None
    if n_p <= n_g:
        options = (list(zip(range(n_p), cols)) for cols in itertools.permutations(range(n_g), n_p))
    else:
        options = (list(zip(rows, range(n_g))) for rows in itertools.permutations(range(n_p), n_g))
    for pairing in options:
        key = sorted(dist[i, j] for i, j in pairing)
        if best is None or key < best[0]:
            best = (key, sorted(pairing))
    return best[1]


def obj(*points):
    flat = []
    for x, y in points:
        flat.extend((x, y, 2))
    return {"keypoints": flat}


class TestMatching:
    def test_exact_preferred(self):
        gts = [obj((0, 0), (10, 0)), obj((50, 50), (60, 50))]
        preds = [obj((50, 50), (60, 50))]
        assert match_instances(gts, preds) == [Match(0, 1, 0.0)]

    def test_bijection(self):
        gts = [obj((0, 0), (10, 0)), obj((50, 50), (60, 50)), obj((0, 40), (0, 50))]
        preds = [obj((1, 40), (1, 50)), obj((0, 1), (10, 1)), obj((50, 52), (60, 52))]
        pairs = match_instances(gts, preds)
        assert {(m.pred, m.gt) for m in pairs} == {(0, 2), (1, 0), (2, 1)}

    def test_crossed_distances(self):
        # P0: 1 to G0, 2 to G1; P1: 1.5 to G0, 4.5 to G1
        gts = [obj((0, 0)), obj((3, 0))]
        preds = [obj((1, 0)), obj((-1.5, 0))]
        pairs = match_instances(gts, preds)
        dist = np.array([[keypoint_set_distance(p["keypoints"], g["keypoints"]) for g in gts] for p in preds])
        assert sorted((m.pred, m.gt) for m in pairs) == exhaustive_lexmin(dist) == [(0, 0), (1, 1)]
        # optimal total cost would pair them the other way
        assert dist[0, 0] + dist[1, 1] > dist[0, 1] + dist[1, 0]

    @settings(max_examples=60)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
    def test_matches_exhaustive_oracle(self, n_p, n_g, seed):
        rng = np.random.default_rng(seed)
        gts = [obj(*rng.uniform(0, 100, (2, 2))) for _ in range(n_g)]
        preds = [obj(*rng.uniform(0, 100, (2, 2))) for _ in range(n_p)]
        dist = np.array([[keypoint_set_distance(p["keypoints"], g["keypoints"]) for g in gts] for p in preds])
        pairs = match_instances(gts, preds)
        assert len(pairs) == min(n_p, n_g)
        assert sorted((m.pred, m.gt) for m in pairs) == exhaustive_lexmin(dist)

    def test_invisible_gt_never_matches(self):
        gts = [{"keypoints": [0, 0, 0, 0, 0, 0]}]
        assert match_instances(gts, [obj((0, 0), (0, 0))]) == []


class TestMeanPixelDistance:
    def test_example(self):
        d = keypoint_set_distance([3, 4, 2, 0, 0, 2], [0, 0, 2, 0, 0, 2])
        assert d == 2.5
        assert mean_pixel_distance([Match(0, 0, d)]) == (2.5, 0.0)

    def test_empty(self):
        assert mean_pixel_distance([]) is None

    @given(st.lists(st.floats(-100, 100), min_size=4, max_size=4), st.floats(0.1, 10))
    def test_scale_equivariant(self, c, s):
        pred, gt = [c[0], c[1], 2, c[2], c[3], 2], [0, 0, 2, 5, 5, 2]
        scaled = keypoint_set_distance([v * s if i % 3 != 2 else v for i, v in enumerate(pred)],
                                       [v * s if i % 3 != 2 else v for i, v in enumerate(gt)])
        assert scaled == pytest.approx(s * keypoint_set_distance(pred, gt), rel=1e-9, abs=1e-9)

    def test_invisible_ignored(self):
        assert keypoint_set_distance([0, 0, 2, 99, 99, 2], [0, 0, 2, 0, 0, 0]) == 0.0


class TestBaselines:
    def test_random_inside_box(self, simple_gt, complex_gt):
        rng = np.random.default_rng(0)
        n = 0
        while n < 10_000:
            for gt in (simple_gt, complex_gt):
                for p in random_baseline(gt, rng).records:
                    x, y, w, h = p["bbox"]
                    kps = np.reshape(p["keypoints"], (-1, 3))
                    assert ((kps[:, 0] >= x) & (kps[:, 0] <= x + w)).all()
                    assert ((kps[:, 1] >= y) & (kps[:, 1] <= y + h)).all()
                    assert (kps[:, 2] == 2).all() and p["score"] == 1.0
                    n += len(kps)

    def test_random_deterministic(self, simple_gt):
        a = random_baseline(simple_gt, np.random.default_rng(5))
        b = random_baseline(simple_gt, np.random.default_rng(5))
        assert json.dumps(a.records) == json.dumps(b.records)

    def test_random_from_box_file(self, simple_gt):
        boxes = PredictionSet([dict(image_id=0, category_id=1, score=0.3, bbox=[1, 2, 3, 4], keypoints=[0] * 6)])
        preds = random_baseline(simple_gt, np.random.default_rng(0), boxes)
        assert len(preds) == 1 and preds.records[0]["bbox"] == [1.0, 2.0, 3.0, 4.0]

    def test_perturbation_bounded(self, simple_gt):
        preds = perturbation_predictor(simple_gt, 2.0, np.random.default_rng(1))
        for p, g in zip(preds.records, simple_gt.annotations):
            d = np.hypot(*(np.reshape(p["keypoints"], (-1, 3))[:, :2] - np.reshape(g["keypoints"], (-1, 3))[:, :2]).T)
            assert (d <= 2.0 + 1e-9).all()

    def test_perturbation_negative_noise(self, simple_gt):
        with pytest.raises(ValueError):
            perturbation_predictor(simple_gt, -1, np.random.default_rng(0))


class TestEvaluate:
    def test_perfect_predictor(self, simple_gt):
        report = evaluate(simple_gt, perturbation_predictor(simple_gt, 0, np.random.default_rng(0)))
        assert (report.ap_bb, report.ap_seg, report.ap_kp) == (100.0, 100.0, 100.0)
        assert report.iou_clip == (1.0, 0.0) and report.iou_full == (1.0, 0.0)
        assert report.mdist == (0.0, 0.0) and report.match_rate == 1.0

    def test_monotone_in_noise(self, simple_gt, complex_gt):
        for gt in (simple_gt, complex_gt):
            reports = [evaluate(gt, perturbation_predictor(gt, n, np.random.default_rng(3))) for n in (0, 2, 5, 10)]
            mdists = [r.mdist[0] for r in reports]
            aps = [r.ap_kp for r in reports]
            assert mdists == sorted(mdists) and aps == sorted(aps, reverse=True)
            assert mdists[1] <= 2.0

    def test_random_baseline_kp_ap_near_zero(self, simple_gt):
        report = evaluate(simple_gt, random_baseline(simple_gt, np.random.default_rng(0)))
        assert report.ap_kp <= 1.0 and report.ap_bb == 100.0 and report.ap_seg is None

    def test_empty_predictions(self, simple_gt):
        report = evaluate(simple_gt, PredictionSet([]))
        assert (report.ap_bb, report.ap_seg, report.ap_kp) == (0.0, 0.0, 0.0)
        assert report.iou_clip is None and report.iou_full is None and report.mdist is None
        assert "—" in report.format_table()

    def test_clip_equals_full_when_all_visible(self, simple_gt):
        gt = with_visible(simple_gt)
        report = evaluate(gt, random_baseline(gt, np.random.default_rng(2)))
        assert report.iou_clip[0] == pytest.approx(report.iou_full[0], abs=1e-12)
        assert report.iou_clip[1] == pytest.approx(report.iou_full[1], abs=1e-12)

    def test_merge_classes_view(self, complex_gt):
        preds = perturbation_predictor(complex_gt, 0, np.random.default_rng(0))
        relabelled = PredictionSet([dict(p, category_id=1) for p in preds.records])
        split = evaluate(complex_gt, relabelled)
        merged = evaluate(complex_gt, relabelled, EvalConfig(merge_classes=True))
        assert merged.ap_bb == 100.0 and split.ap_bb < 100.0

    def test_report_json_and_table(self, simple_gt):
        report = evaluate(simple_gt, perturbation_predictor(simple_gt, 2, np.random.default_rng(0)))
        doc = json.loads(report.to_json())
        assert set(doc) >= {"ap_bb", "ap_seg", "ap_kp", "iou_clip", "iou_full", "mdist", "per_category", "config"}
        header = report.format_table("Noise").splitlines()[0].split()
        assert header == ["Method", "AP^bb", "AP^seg", "AP^kp", "IoU_clip", "IoU_full", "mDist"]
        for cat in doc["per_category"].values():
            assert 0 <= cat["ap_kp"] <= 100

    def test_deterministic(self, complex_gt):
        preds = random_baseline(complex_gt, np.random.default_rng(9))
        assert evaluate(complex_gt, preds).to_json() == evaluate(complex_gt, preds).to_json()
