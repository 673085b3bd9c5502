import itertools

import numpy as np
import pytest

from sleepevents.models.models import DetectionThresholds
from sleepevents.services.geometry import iou
from sleepevents.services.inference import (
    Proposals,
    detect_record,
    detect_records,
    propose_record,
    propose_records,
    select_detections,
    tile_record,
)
from sleepevents.services.network import init_model
from sleepevents.utils.errors import RecordTooShort, ShapeMismatch

from conftest import forced_model, make_record


def proposals(rows, duration=30.0):
    labels, probs, starts, ends = zip(*rows) if rows else ((), (), (), ())
    return Proposals(
        record_id="rec",
        duration=duration,
        labels=np.asarray(labels, dtype=np.int64),
        probs=np.asarray(probs, dtype=np.float64),
        starts=np.asarray(starts, dtype=np.float64),
        ends=np.asarray(ends, dtype=np.float64),
    )


class TestTiling:
    def test_exact_fit(self):
        tiles = tile_record(make_record(np.zeros((1, 60)), sample_rate=1.0), 20.0)
        assert [t.start for t in tiles] == [0.0, 20.0, 40.0]
        assert not any(t.padded for t in tiles)

    def test_partial_last_window(self):
        data = np.arange(50, dtype=float)[None] + 1.0
        tiles = tile_record(make_record(data, sample_rate=1.0), 20.0)
        assert [t.start for t in tiles] == [0.0, 20.0, 40.0]
        assert [t.padded for t in tiles] == [False, False, True]
        assert tiles[-1].data.shape == (1, 20)
        assert not tiles[-1].data[0, 10:].any()
        assert tiles[-1].data[0, 9] == 50.0

    def test_too_short(self):
        with pytest.raises(RecordTooShort):
            tile_record(make_record(np.zeros((1, 19)), sample_rate=1.0), 20.0)

    def test_stride(self):
        tiles = tile_record(make_record(np.zeros((1, 60)), sample_rate=1.0), 20.0, stride=10.0)
        assert [t.start for t in tiles] == [0.0, 10.0, 20.0, 30.0, 40.0]


class TestSelectDetections:
    def test_duplicates_from_adjacent_windows(self):
        detections = select_detections(
            proposals([(1, 0.9, 10.0, 11.0), (1, 0.8, 10.1, 11.1)]), DetectionThresholds(theta={1: 0.5})
        )
        assert len(detections) == 1
        assert detections[0].probability == 0.9
        assert (detections[0].start, detections[0].end) == (10.0, 11.0)

    def test_suppression_is_per_label(self):
        detections = select_detections(
            proposals([(1, 0.9, 10.0, 11.0), (2, 0.8, 10.0, 11.0)]), DetectionThresholds(theta={1: 0.5, 2: 0.5})
        )
        assert sorted(d.label for d in detections) == [1, 2]

    def test_threshold(self):
        rows = [(1, 0.9, 1.0, 2.0), (1, 0.4, 5.0, 6.0)]
        assert len(select_detections(proposals(rows), DetectionThresholds(theta={1: 0.5}))) == 1
        assert len(select_detections(proposals(rows), DetectionThresholds(theta={1: 0.4}))) == 2
        assert select_detections(proposals(rows), DetectionThresholds(theta={1: 1.0})) == []

    def test_labels_without_threshold_are_dropped(self):
        rows = [(1, 0.9, 1.0, 2.0), (2, 0.9, 5.0, 6.0)]
        detections = select_detections(proposals(rows), DetectionThresholds(theta={1: 0.5}))
        assert [d.label for d in detections] == [1]

    def test_clipped_and_sorted(self):
        rows = [(1, 0.9, 9.5, 10.5), (1, 0.7, -0.5, 0.5), (1, 0.8, 4.0, 5.0)]
        detections = select_detections(proposals(rows, duration=10.0), DetectionThresholds(theta={1: 0.5}))
        assert [(d.start, d.end) for d in detections] == [(0.0, 0.5), (4.0, 5.0), (9.5, 10.0)]

    def test_suppression_sees_clipped_intervals(self):
        rows = [(1, 0.9, 48.0, 52.0), (1, 0.8, 49.0, 56.0)]
        detections = select_detections(proposals(rows, duration=50.0), DetectionThresholds(theta={1: 0.5}))
        assert [(d.start, d.end, d.probability) for d in detections] == [(48.0, 50.0, 0.9)]

    def test_no_proposals(self):
        assert select_detections(proposals([]), DetectionThresholds(theta={1: 0.5})) == []

    def test_invariants(self):
        rng = np.random.default_rng(0)
        starts = rng.uniform(-1.0, 30.0, size=200)
        rows = [
            (int(rng.integers(1, 3)), float(rng.uniform(0.1, 1.0)), s, s + float(rng.uniform(0.3, 2.0)))
            for s in starts
        ]
        theta = {1: 0.3, 2: 0.6}
        detections = select_detections(proposals(rows), DetectionThresholds(theta=theta))
        assert [d.start for d in detections] == sorted(d.start for d in detections)
        for d in detections:
            assert d.probability >= theta[d.label]
            assert 0.0 <= d.start < d.end <= 30.0
        for label in theta:
            kept = [d.interval for d in detections if d.label == label]
            assert all(iou(a, b) < 0.4 for a, b in itertools.combinations(kept, 2))


class TestProposeRecord:
    def test_forced_model_with_stride(self, tiny_net_cfg, tiny_grid):
        model = forced_model(tiny_net_cfg, positive_default=1)
        record = make_record(np.zeros((1, 12)), sample_rate=4.0)
        found = propose_record(model, record, tiny_grid, stride=0.5)
        assert len(found) == 3
        np.testing.assert_allclose(found.starts, [1.0, 1.5, 2.0])
        np.testing.assert_allclose(found.probs, 0.9)

        detections = detect_record(model, record, tiny_grid, DetectionThresholds(theta={1: 0.5}), stride=0.5)
        assert [(d.start, d.end) for d in detections] == [(1.0, 2.0), (1.5, 2.5), (2.0, 3.0)]

    def test_candidates_past_the_end_are_dropped(self, tiny_net_cfg, tiny_grid):
        model = forced_model(tiny_net_cfg, positive_default=1)
        record = make_record(np.zeros((1, 20)), sample_rate=4.0)
        found = propose_record(model, record, tiny_grid)
        np.testing.assert_allclose(found.starts, [1.0, 3.0])

    def test_overlapping_duplicates_merge(self, tiny_net_cfg, tiny_grid):
        model = forced_model(tiny_net_cfg, positive_default=1)
        record = make_record(np.zeros((1, 12)), sample_rate=4.0)
        detections = detect_record(model, record, tiny_grid, DetectionThresholds(theta={1: 0.5}), stride=0.25)
        assert len(detections) < len(propose_record(model, record, tiny_grid, stride=0.25))

    def test_channel_mismatch(self, tiny_model64, tiny_grid):
        with pytest.raises(ShapeMismatch):
            propose_record(tiny_model64, make_record(np.zeros((2, 16)), sample_rate=4.0), tiny_grid)


def test_thread_count_does_not_change_results(tiny_net_cfg, tiny_grid):
    model = init_model(tiny_net_cfg, seed=11)
    rng = np.random.default_rng(0)
    records = [make_record(rng.normal(size=(1, 40)), sample_rate=4.0, record_id=f"r{i}") for i in range(6)]
    thresholds = DetectionThresholds(theta={1: 0.0})
    single = detect_records(model, records, tiny_grid, thresholds, threads=1)
    pooled = detect_records(model, records, tiny_grid, thresholds, threads=4)
    assert list(single) == [r.id for r in records]
    assert single == pooled
    assert list(propose_records(model, records, tiny_grid, threads=3)) == list(single)
