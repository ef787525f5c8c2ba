import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsett.boxes import BBox
from sparsett.errors import InputError
from sparsett.experiments import evaluate, overall
from sparsett.model import SparseTT, fuse_and_select, micro_config
from sparsett.synth import make_preset, render_sequence
from sparsett.tracking import (THRESHOLDS, OracleTracker, SparseTTTracker, TrackMetrics, run_tracker,
                               success_rate, track_sequence)


class TestMetrics:
    def test_hand_trace(self):
        m = TrackMetrics(np.array([0.9, 0.6, 0.4]))
        assert m.ao == pytest.approx(0.6333333333333333)
        assert m.sr50 == pytest.approx(2 / 3)
        assert m.sr75 == pytest.approx(1 / 3)

    def test_threshold_is_strict(self):
        assert success_rate([0.5, 0.5], 0.5) == 0.0

    def test_thresholds_grid(self):
        assert len(THRESHOLDS) == 21 and THRESHOLDS[0] == 0.0 and THRESHOLDS[-1] == 1.0

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
    def test_auc_close_to_ao(self, ious):
        # mean of the 21-point success curve approximates the mean overlap
        m = TrackMetrics(np.array(ious))
        assert abs(m.auc - m.ao) <= 1 / 21 + 1e-12
        curve = m.success_curve()
        assert np.all(np.diff(curve) <= 0)

    def test_perfect_trace(self):
        m = TrackMetrics(np.ones(10))
        assert (m.ao, m.sr50, m.sr75) == (1.0, 1.0, 1.0)


class TestOracle:
    def test_oracle_scores_one(self):
        seq = render_sequence(make_preset("easy-linear", 5, n_frames=12))
        res = run_tracker(OracleTracker(seq.bboxes()), seq.images, seq.box(0), seq.boxes)
        assert res.metrics.ao == 1.0 and len(res.metrics.ious) == 11

    def test_evaluate_oracle_overall(self):
        results = evaluate(None, ["easy-linear", "occlude-40"], seeds=[0], oracle=True, frames=10)
        assert overall(results)["ao"] == 1.0

    def test_unknown_suite(self):
        with pytest.raises(InputError):
            evaluate(None, ["nope"], oracle=True)


@pytest.fixture(scope="module")
def setup():
    model = SparseTT(micro_config(template_size=31, search_size=63), seed=0)
    seq = render_sequence(make_preset("easy-linear", 1, n_frames=6, canvas=128))
    return model, seq


class TestModelTracker:
    def test_degenerate_init_rejected(self, setup):
        model, seq = setup
        with pytest.raises(InputError):
            track_sequence(model, seq.images, BBox(10, 10, 10, 30))

    def test_runs_and_keeps_boxes_in_frame(self, setup):
        model, seq = setup
        res = track_sequence(model, seq.images, seq.box(0), seq.boxes)
        assert res.boxes.shape == (6, 4) and np.isfinite(res.boxes).all()
        np.testing.assert_array_equal(res.boxes[0], seq.box(0).as_array())
        cx = (res.boxes[:, 0] + res.boxes[:, 2]) / 2
        assert np.all((cx >= 0) & (cx <= 128))

    def test_deterministic(self, setup):
        model, seq = setup
        a = track_sequence(model, seq.images, seq.box(0))
        b = track_sequence(model, seq.images, seq.box(0))
        np.testing.assert_array_equal(a.boxes, b.boxes)

    def test_box_fc_never_affects_output(self, setup):
        model, seq = setup
        tracker = SparseTTTracker(model, keep_maps=True)
        res = run_tracker(tracker, seq.images, seq.box(0), keep_steps=True)
        rng = np.random.default_rng(0)
        for st_ in res.steps:
            base = fuse_and_select(st_.maps, tracker.geometry, tracker.fusion, tracker.window_influence)
            st_.maps.box_fc.data[...] = rng.uniform(0, 50, st_.maps.box_fc.shape)
            fuzzed = fuse_and_select(st_.maps, tracker.geometry, tracker.fusion, tracker.window_influence)
            assert fuzzed.box == base.box
