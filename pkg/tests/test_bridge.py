"""External child-process protocol: loopback, contract violations, timeouts."""

import sys
from pathlib import Path

import numpy as np
import pytest

from moldspot.backends import ExternalDetector, detect_tiles
from moldspot.bridge import LineBridge
from moldspot.errors import BridgeError
from moldspot.model import DrawingImage, Family, PixelBox
from moldspot.orientation import ExternalOrientationClassifier, OrientationContext
from moldspot.tiler import Tile, TilerConfig, plan_tiles

STUBS = Path(__file__).parent / "stubs"


def stub_cmd(name: str) -> list[str]:
    return [sys.executable, str(STUBS / name)]


def gray_tile(h=60, w=80):
    return ((np.arange(h)[:, None] + np.arange(w)[None, :]) % 256).astype(np.uint8)


class TestLineBridge:
    def test_round_trip_ids_increase(self):
        with LineBridge(stub_cmd("echo_detector.py"), timeout=10) as bridge:
            r1 = bridge.request({"width": 1, "height": 1, "pixels_b64": ""})
            r2 = bridge.request({"width": 1, "height": 1, "pixels_b64": ""})
            assert r1["id"] == 1 and r2["id"] == 2

    def test_malformed_line_raises(self):
        with LineBridge(stub_cmd("malformed_detector.py"), timeout=10) as bridge:
            with pytest.raises(BridgeError, match="malformed"):
                bridge.request({"x": 1})

    def test_dead_process_raises(self):
        with LineBridge([sys.executable, "-c", "pass"], timeout=10) as bridge:
            with pytest.raises(BridgeError):
                bridge.request({"x": 1})


class TestExternalDetector:
    def _tile(self):
        return Tile(0, 0, 0, 80, 60)

    def test_loopback_detection_list(self):
        det = ExternalDetector(stub_cmd("echo_detector.py"), Family.INJECTION, timeout=10)
        try:
            out = det.detect(gray_tile(), self._tile(), "img")
            assert len(out) == 1
            assert out[0].box == PixelBox(10, 20, 30, 15)
            assert out[0].category.name == "Hook"
            assert out[0].score == 0.75
        finally:
            det.close()

    def test_pixels_arrive_intact(self):
        pixels = gray_tile()
        det = ExternalDetector(stub_cmd("mean_detector.py"), Family.INJECTION, timeout=10)
        try:
            out = det.detect(pixels, self._tile(), "img")
            assert out[0].score == pytest.approx(pixels.mean() / 255.0, abs=1e-6)
        finally:
            det.close()

    def test_score_out_of_range_is_tile_failure(self):
        image = DrawingImage("img", gray_tile(700, 900))
        plan = plan_tiles((900, 700), TilerConfig(1333, 800), "img")
        det = ExternalDetector(stub_cmd("bad_score_detector.py"), Family.INJECTION, timeout=10)
        try:
            results = detect_tiles(plan, image, det)
            assert results.by_tile == []
            assert len(results.failures) == 1
        finally:
            det.close()

    def test_timeout_isolates_single_tile(self):
        # two-tile plan; the stub hangs on request 1 and answers request 2
        image = DrawingImage("img", gray_tile(800, 1500))
        plan = plan_tiles((1500, 800), TilerConfig(1333, 800, overlap=0.2), "img")
        assert len(plan) == 2
        det = ExternalDetector(stub_cmd("flaky_detector.py"), Family.INJECTION, timeout=2.0)
        try:
            results = detect_tiles(plan, image, det)
            assert [f.tile_index for f in results.failures] == [0]
            assert [i for i, _ in results.by_tile] == [1]
        finally:
            det.close()

    def test_wrong_family_category_rejected(self):
        det = ExternalDetector(stub_cmd("echo_detector.py"), Family.PRESS, timeout=10)
        try:
            image = DrawingImage("img", gray_tile(700, 900))
            plan = plan_tiles((900, 700), TilerConfig(1333, 800), "img")
            results = detect_tiles(plan, image, det)
            assert len(results.failures) == 1
            assert "family" in results.failures[0].error
        finally:
            det.close()

    def test_pool_allows_concurrent_tiles(self):
        # pool of 2 children, threaded tiles: same results as a single child
        image = DrawingImage("img", gray_tile(800, 2000))
        plan = plan_tiles((2000, 800), TilerConfig(1333, 800, overlap=0.5), "img")
        assert len(plan) > 1
        serial = ExternalDetector(stub_cmd("echo_detector.py"), Family.INJECTION, timeout=10)
        pooled = ExternalDetector(
            stub_cmd("echo_detector.py"), Family.INJECTION, timeout=10, pool_size=2
        )
        assert serial.parallel_safe is False and pooled.parallel_safe is True
        try:
            a = detect_tiles(plan, image, serial, workers=1)
            b = detect_tiles(plan, image, pooled, workers=2)
            assert a.by_tile == b.by_tile and b.failures == []
        finally:
            serial.close()
            pooled.close()


class TestExternalClassifier:
    def _ctx(self):
        from moldspot.model import Detection, category

        return OrientationContext(
            "img", Detection(PixelBox(0, 0, 10, 10), category("Hook"), 0.9)
        )

    def test_loopback_label(self):
        clf = ExternalOrientationClassifier(
            stub_cmd("echo_classifier.py"), Family.INJECTION, timeout=10
        )
        try:
            patch = np.full((224, 224), 255, dtype=np.uint8)
            index, confidence = clf.classify(patch, Family.INJECTION, self._ctx())
            assert index == 2 and confidence == 0.9
        finally:
            clf.close()

    def test_label_outside_space_rejected(self):
        clf = ExternalOrientationClassifier(
            stub_cmd("bad_classifier.py"), Family.INJECTION, timeout=10
        )
        try:
            patch = np.full((224, 224), 255, dtype=np.uint8)
            from moldspot.orientation import OrientationError

            with pytest.raises(OrientationError, match="outside"):
                clf.classify(patch, Family.INJECTION, self._ctx())
        finally:
            clf.close()
