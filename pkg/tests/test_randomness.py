import json

import numpy as np
import pytest
from scipy import stats

from core.errors import InvalidInputError, InvalidParameterError
from core.services.randomness import EventStream, StreamLabel, restrict_view


def take(stream, n):
    return [stream.next_event() for _ in range(n)]


class TestEventStream:
    def test_same_seed_same_events(self):
        assert take(EventStream(7, 10), 500) == take(EventStream(7, 10), 500)

    def test_different_seed_differs(self):
        assert take(EventStream(7, 10), 50) != take(EventStream(8, 10), 50)

    def test_events_are_well_formed(self):
        events = take(EventStream(1, 5, batch_size=64), 1000)
        times = [e.time for e in events]
        assert all(b > a for a, b in zip(times, times[1:]))
        assert {e.site for e in events} <= set(range(5))
        assert {e.coin for e in events} <= {-1, 1}

    def test_batch_size_does_not_split_batches_inconsistently(self):
        stream = EventStream(3, 4, batch_size=16)
        events = take(stream, 40)
        assert stream.consumed == 40
        assert len(events) == 40

    def test_next_before_does_not_consume(self):
        stream = EventStream(2, 3)
        t = stream.peek_time()
        assert stream.next_before(t / 2) is None
        assert stream.consumed == 0
        assert stream.next_before(t).time == t

    def test_state_round_trip_through_json(self):
        stream = EventStream(11, 6, batch_size=32)
        take(stream, 45)
        saved = json.loads(json.dumps(stream.get_state()))
        resumed = EventStream.from_state(saved)
        assert take(resumed, 100) == take(stream, 100)
        assert resumed.consumed == stream.consumed

    def test_clone_is_independent(self):
        stream = EventStream(5, 3)
        take(stream, 10)
        copy = stream.clone()
        first = take(stream, 20)
        assert take(copy, 20) == first

    def test_bad_state(self):
        with pytest.raises(InvalidInputError):
            EventStream.from_state({"seed": 1})

    @pytest.mark.parametrize("seed,size", [(-1, 3), (2 ** 64, 3), (0, 0)])
    def test_invalid_parameters(self, seed, size):
        with pytest.raises(InvalidParameterError):
            EventStream(seed, size)

    def test_site_rates_are_uniform(self):
        events = take(EventStream(42, 8), 16_000)
        counts = np.bincount([e.site for e in events], minlength=8)
        assert stats.chisquare(counts).pvalue > 1e-3

    @pytest.mark.parametrize("size", [1, 8, 10, 1000])
    def test_gaps_are_exponential_with_rate_n(self, size):
        events = take(EventStream(43, size), 5_000)
        gaps = np.diff([0.0] + [e.time for e in events])
        assert stats.kstest(gaps, "expon", args=(0, 1 / size)).pvalue > 1e-3

    def test_single_site_mean_gap_is_one(self):
        events = take(EventStream(44, 1), 10_000)
        gaps = np.diff([0.0] + [e.time for e in events])
        assert {e.site for e in events} == {0}
        assert abs(gaps.mean() - 1.0) < 0.04


class TestStreamLabel:
    def test_deterministic(self):
        label = StreamLabel("d2:L8", 3)
        assert label.derive_seed(1) == label.derive_seed(1)

    def test_labels_separate_streams(self):
        seeds = {StreamLabel("c", r).derive_seed(0) for r in range(100)}
        assert len(seeds) == 100
        assert StreamLabel("c", 0).derive_seed(0) != StreamLabel("c", 0, "envelope").derive_seed(0)

    def test_range(self):
        assert 0 <= StreamLabel("x", 0).derive_seed(123) < 2 ** 64


class TestRestrictedStream:
    def test_view_matches_filtered_parent(self):
        parent = EventStream(9, 6, batch_size=32)
        mask = np.array([True, False, True, False, False, True])
        view = restrict_view(parent, mask)
        expected = [e for e in take(parent.clone(), 400) if mask[e.site]]
        got = [view.next_event() for _ in range(len(expected))]
        assert got == expected

    def test_reindex(self):
        parent = EventStream(9, 4)
        mask = np.array([False, True, False, True])
        reindex = np.array([-1, 0, -1, 1])
        view = restrict_view(parent, mask, reindex)
        assert view.size == 2
        events = [view.next_event() for _ in range(50)]
        assert {e.site for e in events} <= {0, 1}

    def test_empty_mask(self):
        view = restrict_view(EventStream(1, 3), np.zeros(3, dtype=bool))
        assert view.next_event() is None
        assert view.peek_time() == float("inf")

    def test_mask_length_checked(self):
        with pytest.raises(InvalidInputError):
            restrict_view(EventStream(1, 3), np.ones(2, dtype=bool))

    def test_complementary_views_partition_parent(self):
        parent = EventStream(12, 7, batch_size=16)
        mask = np.array([True, False, False, True, True, False, True])
        expected = take(parent.clone(), 600)
        inside, outside = restrict_view(parent, mask), restrict_view(parent, ~mask)
        got_inside = [inside.next_event() for _ in range(sum(mask[e.site] for e in expected))]
        got_outside = [outside.next_event() for _ in range(sum(not mask[e.site] for e in expected))]
        assert {e.site for e in got_inside}.isdisjoint({e.site for e in got_outside})
        assert sorted(got_inside + got_outside, key=lambda e: e.time) == expected
