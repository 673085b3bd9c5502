import numpy as np
import pytest

from sleepevents.models.models import Annotation, Event
from sleepevents.services.consensus import binary_to_events, consensus_events, events_to_binary
from sleepevents.utils.errors import OutOfRange

from conftest import make_annotation


def steps(annotation, label=1, n_steps=20, resolution=0.5):
    return events_to_binary(annotation.for_label(label), n_steps, resolution)


class TestEventsToBinary:
    def test_no_events(self):
        assert not events_to_binary([], 6, 0.5).any()

    def test_whole_span(self):
        np.testing.assert_array_equal(events_to_binary([Event.from_bounds(0.0, 3.0, 1)], 6, 0.5), np.ones(6))

    def test_midpoint_membership(self):
        y = events_to_binary([Event.from_bounds(1.0, 2.0, 1)], 6, 0.5)
        np.testing.assert_array_equal(y, [0, 0, 1, 1, 0, 0])

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            events_to_binary([Event.from_bounds(2.0, 4.0, 1)], 6, 0.5)

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            y = (rng.random(40) < 0.3).astype(np.int8)
            np.testing.assert_array_equal(events_to_binary(binary_to_events(y, 0.25), 40, 0.25), y)


def test_runs_become_events():
    events = binary_to_events(np.array([0, 1, 1, 0, 1]), 0.5, label=2)
    assert [(e.start, e.end, e.label) for e in events] == [(0.5, 1.5, 2), (2.0, 2.5, 2)]


class TestConsensus:
    @pytest.fixture
    def scorers(self):
        # step 4 (2.0-2.5 s) is marked by exactly two of five scorers
        return [
            make_annotation([(0.0, 1.0), (2.0, 2.5)]),
            make_annotation([(0.5, 1.0), (2.0, 3.0)]),
            make_annotation([(0.0, 1.5)]),
            make_annotation([(0.0, 1.0)]),
            make_annotation([(6.0, 7.0)]),
        ]

    def test_union(self, scorers):
        union = consensus_events(scorers, 0.2, 20, 0.5)
        expected = np.clip(sum(steps(a) for a in scorers), 0, 1)
        np.testing.assert_array_equal(steps(union), expected)

    def test_intersection(self, scorers):
        assert consensus_events(scorers, 1.0, 20, 0.5).events == []
        together = consensus_events(scorers[:4], 1.0, 20, 0.5)
        assert [(e.start, e.end) for e in together.events] == [(0.5, 1.0)]

    def test_two_of_five(self, scorers):
        assert steps(consensus_events(scorers, 0.4, 20, 0.5))[4] == 1
        assert steps(consensus_events(scorers, 0.6, 20, 0.5))[4] == 0

    def test_monotone_in_kappa(self):
        rng = np.random.default_rng(1)
        kappas = [0.2, 0.4, 0.6, 0.8, 1.0]
        for _ in range(100):
            scorers = []
            for _ in range(5):
                y = (rng.random(30) < 0.4).astype(np.int8)
                scorers.append(Annotation(record_id="rec", events=binary_to_events(y, 1.0)))
            masks = [events_to_binary(consensus_events(scorers, k, 30, 1.0).events, 30, 1.0) for k in kappas]
            for looser, stricter in zip(masks, masks[1:]):
                assert np.all(stricter <= looser)

    @pytest.mark.parametrize("kappa", [0.1, 0.5, 1.0])
    def test_single_scorer(self, kappa):
        scorer = make_annotation([(0.3, 1.2), (4.0, 5.0)])
        result = consensus_events([scorer], kappa, 20, 0.5)
        np.testing.assert_array_equal(steps(result), steps(scorer))

    def test_labels_are_independent(self):
        first = Annotation(record_id="rec", events=[Event.from_bounds(0.0, 1.0, 1), Event.from_bounds(2.0, 3.0, 2)])
        second = Annotation(record_id="rec", events=[Event.from_bounds(0.0, 1.0, 2), Event.from_bounds(2.0, 3.0, 2)])
        result = consensus_events([first, second], 1.0, 10, 0.5)
        assert [(e.start, e.end, e.label) for e in result.events] == [(2.0, 3.0, 2)]

    def test_record_id(self, scorers):
        assert consensus_events(scorers, 0.5, 20, 0.5).record_id == "rec"
        assert consensus_events(scorers, 0.5, 20, 0.5, record_id="merged").record_id == "merged"

    @pytest.mark.parametrize("kappa", [0.0, 1.5])
    def test_invalid_kappa(self, scorers, kappa):
        with pytest.raises(ValueError):
            consensus_events(scorers, kappa, 20, 0.5)

    def test_no_scorers(self):
        with pytest.raises(ValueError):
            consensus_events([], 0.5, 20, 0.5)
