import pytest
from hypothesis import given
from hypothesis import strategies as st

from terdagger.detector import (
    FORCE_THRESHOLDS,
    POSITION_THRESHOLDS,
    CalibrationError,
    DetectorConfig,
    LabeledEpisode,
    Metric,
    StreamingDetector,
    calibrate,
    confusion,
    detect,
    evaluate,
    force_error,
    position_error,
)
from terdagger.geometry import Pose, Wrench

from oracles import ep, sweep_best_precision

wrench_vals = st.lists(st.floats(-100, 100, allow_nan=False), min_size=6, max_size=6).map(Wrench.from_array)


class TestConfig:
    def test_reported_thresholds(self):
        assert FORCE_THRESHOLDS == {"usb": 11.0, "two_pin": 13.0, "usb_real": 16.0, "two_pin_real": 15.0,
                                    "three_pin_real": 14.0}
        assert min(POSITION_THRESHOLDS.values()) == 0.012 and max(POSITION_THRESHOLDS.values()) == 0.025
        assert DetectorConfig().threshold_c == 11.0

    @pytest.mark.parametrize("kw", [{"threshold_c": 0.0}, {"debounce_k": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DetectorConfig(**kw)

    def test_episode_validation(self):
        with pytest.raises(ValueError):
            LabeledEpisode((), True)
        with pytest.raises(ValueError):
            LabeledEpisode((1.0, float("inf")), True)


class TestErrors:
    def test_force_examples(self):
        w = Wrench([1, 2, 3], [4, 5, 6])
        assert force_error(w, w) == 0.0
        assert force_error(Wrench([1, 0, 0]), Wrench([0, 2, 0], [0, 0, 0.5])) == 3.5
        eps = 1e-3
        assert force_error(w, Wrench.from_array(w.as_array() + eps)) == pytest.approx(6 * eps, rel=1e-9)

    @given(wrench_vals, wrench_vals, wrench_vals, st.floats(-10, 10))
    def test_force_metric_properties(self, a, b, c, s):
        assert force_error(a, c) <= force_error(a, b) + force_error(b, c) + 1e-9
        scaled = force_error(Wrench.from_array(s * a.as_array()), Wrench.from_array(s * b.as_array()))
        assert scaled == pytest.approx(abs(s) * force_error(a, b), rel=1e-9, abs=1e-9)
        assert force_error(a, b) == force_error(b, a)

    def test_position_examples(self):
        assert position_error(Pose([0, 0, 0]), Pose([0, 0, 0])) == 0.0
        assert position_error(Pose([0.012, 0, 0]), Pose([0, 0, 0])) == pytest.approx(0.012, abs=1e-15)
        assert position_error(Pose([0.003, 0.004, 0]), Pose([0, 0, 0])) == pytest.approx(0.005, abs=1e-15)


class TestDetect:
    def test_examples(self):
        cfg = DetectorConfig(threshold_c=11.0)
        assert detect([1, 2, 11.0], cfg) is None
        assert detect([3, 9, 12, 5], cfg) == 2
        assert detect([12, 12, 5, 12, 12, 12], DetectorConfig(threshold_c=11.0, debounce_k=3)) == 5

    @given(st.lists(st.floats(0, 30), min_size=1, max_size=50), st.floats(0.1, 30), st.floats(0.0, 10),
           st.integers(1, 4))
    def test_monotone_in_threshold(self, scores, c, dc, k):
        lo = detect(scores, DetectorConfig(threshold_c=c, debounce_k=k))
        hi = detect(scores, DetectorConfig(threshold_c=c + dc, debounce_k=k))
        if lo is None:
            assert hi is None
        elif hi is not None:
            assert hi >= lo

    @given(st.lists(st.floats(0, 30), min_size=1, max_size=50), st.integers(1, 4))
    def test_streaming_matches_batch(self, scores, k):
        cfg = DetectorConfig(threshold_c=10.0, debounce_k=k)
        s = StreamingDetector(cfg)
        fired = [s.update(x) for x in scores]
        first = next((i for i, f in enumerate(fired) if f), None)
        assert first == detect(scores, cfg) == s.triggered_at

    def test_metric_enum_extension_points(self):
        assert {m.value for m in Metric} >= {"force", "position", "kl", "reconstruction"}


class TestCalibrate:
    def test_example_separable(self):
        eps = [ep(14, True), ep(18, True), ep(6, False), ep(9, False)]
        c = calibrate(eps)
        assert 9 < c < 14
        assert evaluate(eps, DetectorConfig(threshold_c=c)) == (1.0, 1.0)

    def test_all_failed(self):
        eps = [ep(14, True), ep(18, True)]
        c = calibrate(eps)
        assert c < 14 and c == pytest.approx(14, rel=1e-8)
        assert evaluate(eps, DetectorConfig(threshold_c=c)) == (1.0, 1.0)

    def test_overlapping(self):
        eps = [ep(10, True), ep(12, False), ep(13, False)]
        c = calibrate(eps)
        assert c < 10 and c == pytest.approx(10, rel=1e-8)
        assert confusion(eps, DetectorConfig(threshold_c=c)) == (1, 2, 0, 0)
        p, r = evaluate(eps, DetectorConfig(threshold_c=c))
        assert r == 1.0 and p == pytest.approx(1 / 3)

    def test_errors(self):
        with pytest.raises(CalibrationError):
            calibrate([ep(3, False)])
        with pytest.raises(CalibrationError):
            calibrate([LabeledEpisode((0.0, 0.0), True), ep(3, False)])

    @given(st.lists(st.tuples(st.floats(0.01, 50), st.booleans()), min_size=2, max_size=60))
    def test_recall_one_and_max_precision(self, data):
        eps = [ep(p, f) for p, f in data]
        if not any(f for _, f in data):
            return
        c = calibrate(eps)
        p, r = evaluate(eps, DetectorConfig(threshold_c=c))
        assert r == 1.0
        assert p == pytest.approx(sweep_best_precision(eps), abs=1e-12)


class TestEvaluate:
    def test_conventions(self):
        ok = [ep(1, False), ep(2, False)]
        assert evaluate(ok, DetectorConfig(threshold_c=10)) == (1.0, 1.0)
        bad = [ep(1, True)]
        assert evaluate(bad, DetectorConfig(threshold_c=10)) == (0.0, 0.0)

    def test_all_positive_predictor(self):
        eps = [ep(5, True), ep(6, False), ep(7, False), ep(8, True)]
        assert evaluate(eps, DetectorConfig(threshold_c=0.5)) == (0.5, 1.0)
