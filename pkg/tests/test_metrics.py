"""AP/AR/orientation-accuracy machinery against hand-computed oracles."""

import itertools

import numpy as np
import pytest

from moldspot.metrics import (
    EvalConfig,
    ap_from_flags,
    evaluate,
    match_detections,
    orientation_accuracy,
)
from moldspot.model import Annotation, Detection, Family, PixelBox, category


def det(x, y, w, h, score, cat="Hook", rotation=None):
    return Detection(PixelBox(x, y, w, h), category(cat), score, rotation=rotation)


def ann(x, y, w, h, cat="Hook", rotation=0, image_id="img"):
    return Annotation(image_id, PixelBox(x, y, w, h), category(cat), rotation)


class TestMatchDetections:
    def test_single_tp(self):
        flags, pairs = match_detections(
            [det(0, 0, 10, 10, 0.9)], [ann(0, 2, 10, 10)], 0.5
        )
        # iou = 80/120 = 2/3 >= 0.5
        assert [tp for _, tp in flags] == [True]
        assert len(pairs) == 1

    def test_second_detection_on_same_gt_is_fp(self):
        dets = [det(0, 0, 10, 10, 0.9), det(1, 0, 10, 10, 0.8)]
        flags, _ = match_detections(dets, [ann(0, 0, 10, 10)], 0.5)
        assert [(d.score, tp) for d, tp in flags] == [(0.9, True), (0.8, False)]

    def test_below_threshold_is_fp_and_fn(self):
        flags, pairs = match_detections(
            [det(0, 0, 10, 10, 0.9)], [ann(6, 6, 10, 10)], 0.5
        )
        assert [tp for _, tp in flags] == [False]
        assert pairs == []

    def test_greedy_takes_highest_iou(self):
        gts = [ann(0, 0, 10, 10), ann(2, 0, 10, 10)]
        flags, pairs = match_detections([det(2, 0, 10, 10, 0.9)], gts, 0.5)
        assert flags[0][1] is True
        assert pairs[0].annotation.box.x == 2

    def test_deterministic_under_score_ties(self):
        dets = [det(2, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.9)]
        gts = [ann(0, 0, 10, 10)]
        flags, pairs = match_detections(dets, gts, 0.5)
        # tie broken by x: the x=0 detection is matched
        assert pairs[0].detection.box.x == 0
        flags2, pairs2 = match_detections(list(reversed(dets)), gts, 0.5)
        assert pairs2[0].detection.box.x == 0

    def test_greedy_equals_maximum_matching_on_all_or_nothing(self):
        # GT clusters sit far apart; detections duplicate a cluster's box
        # (IoU 1 within, 0 across), so the bipartite graph is a union of
        # complete blocks. Enumerate every cluster shape exhaustively.
        for gt_sizes in itertools.product(range(5), repeat=3):
            if not 1 <= sum(gt_sizes) <= 4:
                continue
            for det_sizes in itertools.product(range(4), repeat=4):
                if sum(det_sizes) > 6:
                    continue
                gts, dets = [], []
                for c, g in enumerate(gt_sizes):
                    for _ in range(g):
                        gts.append(ann(100 * c, 0, 10, 10))
                score = 1.0
                for c, d in enumerate(det_sizes):
                    x = 100 * (c - 1) if c > 0 else 900  # cluster 0 = background
                    for _ in range(d):
                        score -= 0.01
                        dets.append(det(x, 0, 10, 10, round(score, 3)))
                flags, _ = match_detections(dets, gts, 0.5)
                greedy_tp = sum(tp for _, tp in flags)
                maximum = sum(
                    min(g, d) for g, d in zip(gt_sizes, det_sizes[1:])
                )
                assert greedy_tp == maximum


class TestApFromFlags:
    def test_perfect_detector(self):
        assert ap_from_flags([True, True], 2) == 1.0

    def test_no_detections_some_gt(self):
        assert ap_from_flags([], 3) == 0.0

    def test_detections_but_no_gt(self):
        assert ap_from_flags([False, False], 0) == 0.0

    def test_nothing_at_all_is_undefined(self):
        assert ap_from_flags([], 0) is None

    def test_hand_computed_interpolated_value(self):
        # ranked flags [TP, FP, TP] over 2 GT:
        # 51 recall points see precision 1.0, the other 50 see 2/3
        expected = (51 * 1.0 + 50 * (2 / 3)) / 101
        assert ap_from_flags([True, False, True], 2) == pytest.approx(expected, abs=1e-12)
        assert ap_from_flags([True, False, True], 2) == pytest.approx(0.83498, abs=1e-5)


def _single_category_eval(dets_by_image, gts_by_image, **kw):
    return evaluate(dets_by_image, gts_by_image, Family.INJECTION, EvalConfig(**kw))


class TestEvaluate:
    def test_oracle_identity(self):
        gts = {
            "a": [ann(10, 10, 40, 40, "Hook", 90, "a"), ann(200, 50, 30, 30, "Boss", 0, "a")],
            "b": [ann(5, 5, 60, 20, "Undercut", 180, "b")],
        }
        dets = {
            img: [
                Detection(a.box, a.category, 1.0, rotation=a.rotation)
                for a in anns
            ]
            for img, anns in gts.items()
        }
        report = _single_category_eval(dets, gts)
        assert report.mean_ap == 1.0
        assert report.mean_ar == 1.0
        assert report.orientation_accuracy == 1.0
        for t, c in report.counts.items():
            assert c["fp"] == 0 and c["fn"] == 0 and c["tp"] == 3

    def test_identical_ap_everywhere_means_that_value(self):
        # one TP + one FP per category at every threshold
        gts = {"a": [ann(0, 0, 10, 10, "Hook"), ann(100, 100, 10, 10, "Boss")]}
        dets = {
            "a": [
                det(0, 0, 10, 10, 0.9, "Hook"),
                det(500, 0, 10, 10, 0.8, "Hook"),
                det(100, 100, 10, 10, 0.9, "Boss"),
                det(500, 500, 10, 10, 0.8, "Boss"),
            ]
        }
        report = _single_category_eval(dets, gts)
        x = report.ap_per_category["Hook"]
        assert report.ap_per_category["Boss"] == pytest.approx(x)
        assert report.mean_ap == pytest.approx(x)

    def test_mean_over_two_categories(self):
        # Hook found perfectly, Boss never found -> mean of 1.0 and 0.0
        gts = {"a": [ann(0, 0, 10, 10, "Hook"), ann(100, 100, 10, 10, "Boss")]}
        dets = {"a": [det(0, 0, 10, 10, 1.0, "Hook")]}
        report = _single_category_eval(dets, gts)
        assert report.ap_per_category["Hook"] == 1.0
        assert report.ap_per_category["Boss"] == 0.0
        assert report.ap_per_category["Undercut"] is None  # nothing to measure
        assert report.mean_ap == pytest.approx(0.5)

    def test_ar_half_when_half_found(self):
        gts = {"a": [ann(100 * i, 0, 10, 10) for i in range(4)]}
        dets = {"a": [det(0, 0, 10, 10, 0.9), det(100, 0, 10, 10, 0.8)]}
        report = _single_category_eval(dets, gts)
        assert report.ar_per_category["Hook"] == pytest.approx(0.5)
        assert report.mean_ar == pytest.approx(0.5)

    def test_no_gt_in_dataset_ar_absent(self):
        report = _single_category_eval({"a": [det(0, 0, 10, 10, 0.9)]}, {"a": []})
        assert report.mean_ar is None
        assert report.mean_ap == 0.0  # detections with no GT score zero

    def test_max_detections_cap(self):
        gts = {"a": [ann(100 * i, 0, 10, 10) for i in range(3)]}
        dets = {
            "a": [det(100 * i, 0, 10, 10, 0.9 - 0.1 * i) for i in range(3)]
        }
        capped = _single_category_eval(dets, gts, max_detections=1)
        assert capped.ar_per_category["Hook"] == pytest.approx(1 / 3)

    def test_ap_monotone_in_threshold(self):
        rng = np.random.default_rng(404)
        for _ in range(50):
            gts = {"a": [ann(float(rng.integers(0, 200)), float(rng.integers(0, 200)), 20, 20)
                          for _ in range(int(rng.integers(1, 6)))]}
            dets = {"a": [det(float(rng.integers(0, 200)), float(rng.integers(0, 200)),
                              20, 20, float(rng.integers(1, 100)) / 100)
                           for _ in range(int(rng.integers(0, 8)))]}
            report = _single_category_eval(dets, gts)
            aps = [report.ap["Hook"][t] for t in report.iou_thresholds]
            rcs = [report.recall["Hook"][t] for t in report.iou_thresholds]
            for a, b in zip(aps, aps[1:]):
                assert b <= a + 1e-12
            for a, b in zip(rcs, rcs[1:]):
                assert b <= a + 1e-12

    def test_ap_invariant_under_monotone_score_rescale(self):
        rng = np.random.default_rng(505)
        gts = {"a": [ann(float(rng.integers(0, 300)), float(rng.integers(0, 300)), 20, 20)
                      for _ in range(5)]}
        dets = {"a": [det(float(rng.integers(0, 300)), float(rng.integers(0, 300)),
                          20, 20, float(s)) for s in rng.uniform(0.1, 0.9, 10)]}
        rescaled = {
            "a": [
                Detection(d.box, d.category, round(d.score**2, 6))
                for d in dets["a"]
            ]
        }
        a = _single_category_eval(dets, gts)
        b = _single_category_eval(rescaled, gts)
        assert a.ap == b.ap


class TestOrientationAccuracy:
    def test_all_correct(self):
        gts = {"a": [ann(0, 0, 10, 10, "Hook", 90)]}
        dets = {"a": [det(0, 0, 10, 10, 1.0, "Hook", rotation=90)]}
        acc, pairs = orientation_accuracy(dets, gts, Family.INJECTION)
        assert acc == 1.0 and pairs == 1

    def test_symmetric_and_other_family_excluded(self):
        gts = {
            "a": [
                ann(0, 0, 10, 10, "Hook", 90),
                ann(100, 0, 10, 10, "Undercut", 180),
                ann(200, 0, 10, 10, "Boss", 0),
                ann(300, 0, 10, 10, "Embo", 0),
            ]
        }
        dets = {
            "a": [
                det(0, 0, 10, 10, 1.0, "Hook", rotation=90),  # correct
                det(100, 0, 10, 10, 1.0, "Undercut", rotation=0),  # wrong
                det(200, 0, 10, 10, 1.0, "Boss", rotation=0),  # excluded: symmetric
                det(300, 0, 10, 10, 1.0, "Embo", rotation=0),  # excluded: press
            ]
        }
        acc, pairs = orientation_accuracy(dets, gts, Family.INJECTION)
        assert pairs == 2
        assert acc == pytest.approx(0.5)

    def test_only_symmetric_parts_undefined(self):
        gts = {"a": [ann(0, 0, 10, 10, "Boss", 0)]}
        dets = {"a": [det(0, 0, 10, 10, 1.0, "Boss", rotation=0)]}
        acc, pairs = orientation_accuracy(dets, gts, Family.INJECTION)
        assert acc is None and pairs == 0

    def test_missing_rotation_counts_wrong(self):
        gts = {"a": [ann(0, 0, 10, 10, "Hook", 90)]}
        dets = {"a": [det(0, 0, 10, 10, 1.0, "Hook", rotation=None)]}
        acc, pairs = orientation_accuracy(dets, gts, Family.INJECTION)
        assert pairs == 1 and acc == 0.0


class TestEvalConfig:
    def test_default_thresholds(self):
        ts = EvalConfig().iou_thresholds
        assert len(ts) == 10
        assert ts[0] == 0.5 and ts[-1] == 0.95
        assert all(b - a == pytest.approx(0.05) for a, b in zip(ts, ts[1:]))

    def test_rejects_bad_thresholds(self):
        with pytest.raises(ValueError):
            EvalConfig(iou_thresholds=(0.5, 0.5))
        with pytest.raises(ValueError):
            EvalConfig(iou_thresholds=(0.0, 0.5))


class TestReportDoc:
    def test_doc_round_trip_fields(self):
        gts = {"a": [ann(0, 0, 10, 10, "Hook", 90)]}
        dets = {"a": [det(0, 0, 10, 10, 1.0, "Hook", rotation=90)]}
        report = _single_category_eval(dets, gts)
        doc = report.to_doc()
        assert doc["family"] == "injection"
        assert doc["mean_ap"] == 1.0
        assert doc["ap"]["Hook"]["0.50"] == 1.0
        assert doc["counts"]["0.95"] == {"tp": 1, "fp": 0, "fn": 0}
        assert doc["orientation_accuracy"] == 1.0
        assert len(doc["notes"]) == 2
        table = report.render_table()
        assert "Hook" in table and "orientation accuracy" in table
