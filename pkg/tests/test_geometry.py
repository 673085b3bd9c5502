import math

import numpy as np
import pytest

from sleepevents.models.configs import MatchConfig
from sleepevents.models.models import Event, Interval
from sleepevents.services.geometry import (
    build_grid,
    decode,
    decode_many,
    encode,
    encode_many,
    iou,
    iou_matrix,
    match,
    nms,
    nms_indices,
)
from sleepevents.utils.errors import InvalidOverlap, NonPositiveDuration


class TestIoU:
    def test_identity(self):
        assert iou(Interval(0, 2), Interval(0, 2)) == 1.0

    def test_disjoint(self):
        assert iou(Interval(0, 1), Interval(2, 3)) == 0.0

    def test_partial(self):
        assert iou(Interval(0, 2), Interval(1, 3)) == pytest.approx(1 / 3)

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(0)
        a = np.sort(rng.uniform(0, 10, size=(6, 2)), axis=1)
        b = np.sort(rng.uniform(0, 10, size=(4, 2)), axis=1)
        matrix = iou_matrix(a[:, 0], a[:, 1], b[:, 0], b[:, 1])
        for i in range(6):
            for j in range(4):
                assert matrix[i, j] == pytest.approx(iou(Interval(*a[i]), Interval(*b[j])))


class TestBuildGrid:
    def test_reference_grid(self):
        grid = build_grid(20.0, 1.0, 0.75)
        assert grid.step == 0.25
        assert grid.n_defaults == 80
        assert grid.centers[0] == 0.125
        assert grid.centers[1] == 0.375
        assert grid.centers[-1] == 19.875

    def test_single_cell(self):
        grid = build_grid(20.0, 20.0, 0.0)
        assert grid.n_defaults == 1
        assert grid.default(0) == (10.0, 20.0)

    def test_arousal_grid(self):
        grid = build_grid(120.0, 15.0, 0.5)
        assert grid.step == 7.5
        assert grid.n_defaults == 16

    @pytest.mark.parametrize("overlap", [1.0, -0.1])
    def test_invalid_overlap(self, overlap):
        with pytest.raises(InvalidOverlap):
            build_grid(20.0, 1.0, overlap)

    def test_non_positive_duration(self):
        with pytest.raises(NonPositiveDuration):
            build_grid(20.0, 0.0, 0.5)


class TestEncoding:
    def test_identity(self):
        assert encode((3.0, 1.5), (3.0, 1.5)) == (0.0, 0.0)

    def test_examples(self):
        u, v = encode((5.125, 1.0), (5.1, 1.0))
        assert u == pytest.approx(-0.025)
        assert v == 0.0
        u, v = encode((5.0, 1.0), (5.5, 2.0))
        assert u == pytest.approx(0.5)
        assert v == pytest.approx(math.log(2))

    def test_decode_example(self):
        start, end = decode((5.0, 1.0), (0.5, math.log(2)))
        assert start == pytest.approx(4.5)
        assert end == pytest.approx(6.5)

    def test_decode_zero_code(self):
        assert decode((5.0, 1.0), (0.0, 0.0)) == Interval(4.5, 5.5)

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        n = 10_000
        default_centers = rng.uniform(0, 20, n)
        default_durations = rng.uniform(0.1, 15, n)
        truth_centers = rng.uniform(0, 20, n)
        truth_durations = rng.uniform(0.1, 15, n)
        codes = encode_many(default_centers, default_durations, truth_centers, truth_durations)
        starts, ends = decode_many(default_centers, default_durations, codes)
        np.testing.assert_allclose(starts, truth_centers - truth_durations / 2, rtol=0, atol=1e-9)
        np.testing.assert_allclose(ends, truth_centers + truth_durations / 2, rtol=0, atol=1e-9)

    def test_non_positive(self):
        with pytest.raises(NonPositiveDuration):
            encode((1.0, 0.0), (1.0, 1.0))


def _brute_force_stage_one(grid, truths):
    taken = set()
    chosen = {}
    for j in sorted(range(len(truths)), key=lambda j: (truths[j].start, j)):
        best, best_iou = None, 0.0
        for i in range(grid.n_defaults):
            if i in taken:
                continue
            value = iou(Interval(grid.starts[i], grid.ends[i]), truths[j].interval)
            if value > best_iou:
                best, best_iou = i, value
        if best is not None:
            taken.add(best)
            chosen[best] = j
    return chosen


class TestMatch:
    grid = build_grid(20.0, 1.0, 0.75)

    def test_no_truths(self):
        matching = match(self.grid, [])
        assert len(matching) == 80
        assert matching.positives.size == 0

    def test_best_default(self):
        matching = match(self.grid, [Event(center=5.1, duration=1.0, label=1)])
        assert matching.truth_for(20) == 0
        ious = iou_matrix(self.grid.starts, self.grid.ends, [4.6], [5.6])[:, 0]
        assert ious[20] == pytest.approx(0.975 / 1.025)
        assert ious[19] == pytest.approx(0.6327, abs=1e-4)

    def test_tie_lowest_index(self):
        truth = Event(center=5.0, duration=1.0, label=1)
        ious = iou_matrix(self.grid.starts, self.grid.ends, [truth.start], [truth.end])[:, 0]
        assert ious[19] == ious[20] == pytest.approx(7 / 9)
        assert _brute_force_stage_one(self.grid, [truth]) == {19: 0}
        assert match(self.grid, [truth]).truth_for(19) == 0

    def test_random_instances(self):
        rng = np.random.default_rng(3)
        cfg = MatchConfig()
        for _ in range(1000):
            window = rng.uniform(5, 30)
            duration = rng.uniform(0.5, 3)
            grid = build_grid(window, duration, rng.choice([0.0, 0.5, 0.75]))
            if grid.n_defaults > 100:
                continue
            truths = [
                Event(center=rng.uniform(0, window), duration=rng.uniform(0.2, 4), label=int(rng.integers(1, 3)))
                for _ in range(int(rng.integers(0, 11)))
            ]
            matching = match(grid, truths, cfg)
            stage_one = _brute_force_stage_one(grid, truths)
            for i, j in stage_one.items():
                assert matching.assignment[i] == j
            for i in matching.positives:
                if i in stage_one:
                    continue
                j = matching.assignment[i]
                assert iou(Interval(grid.starts[i], grid.ends[i]), truths[j].interval) > cfg.eta
            assert set(np.flatnonzero(matching.assignment >= 0)) >= set(stage_one)


class TestNMS:
    def test_single(self):
        events = [(Interval(0.0, 1.0), 0.5)]
        assert nms(events, 0.4) == events

    def test_overlapping_suppressed(self):
        kept = nms([(Interval(0, 2), 0.9), (Interval(0.5, 2.5), 0.8)], 0.4)
        assert kept == [(Interval(0, 2), 0.9)]

    def test_low_overlap_kept(self):
        assert len(nms([(Interval(0, 2), 0.9), (Interval(1.5, 3.5), 0.8)], 0.4)) == 2

    def test_properties(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            n = int(rng.integers(0, 15))
            starts = rng.uniform(0, 10, n)
            ends = starts + rng.uniform(0.1, 3, n)
            scores = rng.uniform(0, 1, n)
            keep = nms_indices(starts, ends, scores, 0.4)
            assert np.all(np.diff(starts[keep]) >= 0)
            matrix = iou_matrix(starts[keep], ends[keep], starts[keep], ends[keep])
            np.fill_diagonal(matrix, 0.0)
            assert np.all(matrix < 0.4)
            again = nms_indices(starts[keep], ends[keep], scores[keep], 0.4)
            np.testing.assert_array_equal(again, np.arange(len(keep)))
            if n:
                assert np.argmax(scores) in keep
