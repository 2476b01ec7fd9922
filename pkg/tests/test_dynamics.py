from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import InvalidInputError, InvalidModeError, InvalidParameterError
from core.logic.dynamics import (
    ClearanceWatch,
    DynamicsState,
    FlipRecorder,
    RejectionFreeEngine,
    UpdateFilter,
    apply_event,
    engine_rejection_free,
    local_rule,
    run_to_absorption,
    run_until,
)
from core.logic.geometry import hypercube, plus_boundary
from core.models.enums import Engine
from core.models.lattice import BoundaryCondition
from core.models.spin_field import SpinField
from core.services.randomness import Event, EventStream, StreamLabel


def make_state(L=2, d=2, spin=-1, engine=Engine.GRAPHICAL, filters=(), audit=False):
    region = hypercube(L, d)
    return DynamicsState(SpinField.uniform(region, spin), plus_boundary(region), filters=filters,
                         engine=engine, audit=audit)


def exact_mean_hitting_time(L, d):
    """全状態の連続時間マルコフ連鎖を解いて全マイナスからの平均到達時間を求める"""
    state = make_state(L, d)
    n = state.region.size
    configs = list(product([-1, 1], repeat=n))
    index = {c: k for k, c in enumerate(configs)}
    absorbing = index[(1,) * n]
    Q = np.zeros((len(configs), len(configs)))
    for c in configs:
        for site in range(n):
            state.field.spins[:] = c
            neighbors = state.neighbor_spins(site)
            for coin in (-1, 1):
                new = local_rule(neighbors, coin, d)
                if new != c[site]:
                    target = list(c)
                    target[site] = new
                    Q[index[c], index[tuple(target)]] += 0.5
    np.fill_diagonal(Q, -Q.sum(axis=1))
    keep = [k for k in range(len(configs)) if k != absorbing]
    h = np.linalg.solve(Q[np.ix_(keep, keep)], -np.ones(len(keep)))
    return float(h[keep.index(index[(-1,) * n])])


def sample_hitting_times(engine, samples, L=2, d=2, base_seed=0):
    values = []
    for r in range(samples):
        state = make_state(L, d, engine=engine)
        seed = StreamLabel(f"oracle:{engine}", r).derive_seed(base_seed)
        record = run_to_absorption(state, EventStream(seed, state.region.size), 1e6, replica=r)
        values.append(record.t_plus)
    return np.array(values)


class TestLocalRule:
    def test_strict_majority_plus(self):
        assert local_rule([1, 1, 1, -1], -1, 2) == 1

    def test_tie_uses_coin(self):
        assert local_rule([1, 1, -1, -1], -1, 2) == -1
        assert local_rule([1, 1, -1, -1], 1, 2) == 1

    def test_d4_majority(self):
        assert local_rule([1] * 5 + [-1] * 3, -1, 4) == 1

    def test_wrong_count(self):
        with pytest.raises(InvalidInputError):
            local_rule([1, 1, 1], 1, 2)


class TestApplyEvent:
    def test_absorbing_state_never_changes(self):
        state = make_state(3, 2, spin=1)
        stream = EventStream(1, state.region.size)
        for _ in range(2000):
            assert apply_event(state, stream.next_event()) is None
        assert state.field.is_all_plus()

    def test_frozen_site_ignores_events(self):
        state = make_state(1, 2, filters=[UpdateFilter.freeze_region([0], 5.0)])
        assert apply_event(state, Event(1.0, 0, 1)) is None
        assert state.field.get(0) == -1
        record = apply_event(state, Event(6.0, 0, 1))
        assert record is not None and record.new == 1

    def test_block_minus_outside_cancels(self):
        region = hypercube(1, 2)
        state = DynamicsState(SpinField.uniform(region, 1), BoundaryCondition.uniform(region, -1),
                              filters=[UpdateFilter.block_minus_outside([])])
        assert apply_event(state, Event(0.5, 0, 1)) is None
        assert state.field.get(0) == 1
        assert state.cancellations == 1
        assert state.first_cancel_time == 0.5

    def test_time_cannot_go_back(self):
        state = make_state()
        apply_event(state, Event(2.0, 0, 1))
        with pytest.raises(InvalidInputError):
            apply_event(state, Event(1.0, 0, 1))

    def test_site_out_of_range(self):
        with pytest.raises(InvalidInputError):
            apply_event(make_state(), Event(1.0, 99, 1))

    def test_negative_freeze_time(self):
        with pytest.raises(InvalidParameterError):
            UpdateFilter.freeze_region([0], -1.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32), st.floats(0.0, 5.0), st.sets(st.integers(0, 8)),
           st.sets(st.integers(0, 8)))
    def test_filter_order_does_not_matter(self, seed, until, frozen, protected):
        freeze = UpdateFilter.freeze_region(frozen, until)
        block = UpdateFilter.block_minus_outside(protected)
        region = hypercube(3, 2)
        xi = np.where(np.random.default_rng(seed).random(region.size) < 0.5, -1, 1)
        bc = BoundaryCondition.uniform(region, -1)
        a = DynamicsState(SpinField(region, xi), bc, filters=[freeze, block])
        b = DynamicsState(SpinField(region, xi), bc, filters=[block, freeze])
        stream = EventStream(seed, region.size)
        for _ in range(300):
            event = stream.next_event()
            assert apply_event(a, event) == apply_event(b, event)
        assert np.array_equal(a.field.spins, b.field.spins)


class TestRunUntil:
    def test_no_events_when_t_max_is_clock(self):
        state = make_state()
        result = run_until(state, EventStream(0, 4), 0.0)
        assert result.events == 0
        assert state.field.minus_count == 4

    def test_t_max_before_clock(self):
        state = make_state()
        state.clock = 3.0
        with pytest.raises(InvalidParameterError):
            run_until(state, EventStream(0, 4), 1.0)

    def test_single_site_absorbs_on_first_event(self):
        state = make_state(1, 2)
        stream = EventStream(4, 1)
        first = stream.peek_time()
        record = run_to_absorption(state, stream, 100.0)
        assert record.t_plus == first
        assert record.events == 1

    def test_already_plus(self):
        record = run_to_absorption(make_state(spin=1), EventStream(0, 4), 10.0)
        assert record.t_plus == 0.0
        assert not record.timeout

    def test_timeout_is_recorded(self):
        state = make_state(4, 2)
        record = run_to_absorption(state, EventStream(0, 16), 1e-6)
        assert record.timeout
        assert record.t_plus is None

    def test_deterministic(self):
        a = run_until(make_state(3, 2), EventStream(5, 9), 20.0)
        b = run_until(make_state(3, 2), EventStream(5, 9), 20.0)
        assert np.array_equal(a.state.field.spins, b.state.field.spins)
        assert a.events == b.events

    def test_flip_recorder_and_absorption(self):
        recorder = FlipRecorder()
        state = make_state(2, 2)
        result = run_until(state, EventStream(8, 4), 1e4, [recorder], stop_on_absorption=True)
        assert result.absorbed_at == recorder.absorbed_at
        assert recorder.flips[-1].new == 1
        assert state.field.is_all_plus()

    def test_absorption_is_permanent(self):
        state = make_state(4, 2)
        stream = EventStream(12, 16)
        result = run_until(state, stream, 1e5, stop_on_absorption=True)
        assert result.absorbed_at is not None
        run_until(state, stream, state.clock + 5_000.0)
        assert state.field.is_all_plus()

    def test_audit_mode(self):
        state = make_state(4, 2, audit=True)
        run_until(state, EventStream(3, 16), 50.0)
        state.audit_counts()

    def test_clearance_watch(self):
        watch = ClearanceWatch(np.ones(4, dtype=bool), since=0.0)
        run_until(make_state(2, 2), EventStream(1, 4), 1.0, [watch])
        assert watch.at_since is True
        assert watch.first_violation == 0.0


class TestRejectionFree:
    def test_single_minus_rates(self):
        region = hypercube(3, 2)
        spins = np.ones(region.size, dtype=np.int8)
        center = region.index_of((2, 2))
        spins[center] = -1
        state = DynamicsState(SpinField(region, spins), plus_boundary(region), engine=Engine.REJECTION_FREE)
        engine = RejectionFreeEngine(state, np.random.default_rng(0))
        assert engine.rate(center) == 1.0
        assert all(engine.rate(x) == 0.0 for x in range(region.size) if x != center)
        assert engine.total_rate() == 1.0

    def test_all_plus_jumps_to_t_max(self):
        state = make_state(3, 2, spin=1, engine=Engine.REJECTION_FREE)
        result = run_until(state, EventStream(0, 9), 1e3)
        assert result.flips == 0
        assert state.clock == 1e3

    def test_incremental_table_matches_rescan(self):
        state = make_state(5, 2, engine=Engine.REJECTION_FREE, audit=True)
        run_until(state, EventStream(21, 25), 30.0)
        state._rf_engine.audit()

    def test_layer_freeze_respected(self):
        region = hypercube(3, 2)
        frozen = [x for x in range(region.size) if region.coords[x, -1] == 3]
        state = DynamicsState(SpinField.uniform(region, -1), plus_boundary(region),
                              filters=[UpdateFilter.freeze_region(frozen, 50.0)], engine=Engine.REJECTION_FREE)
        run_until(state, EventStream(2, 9), 49.0)
        assert all(state.field.get(x) == -1 for x in frozen)

    def test_coupled_state_rejected(self):
        state = make_state()
        state.coupled = True
        with pytest.raises(InvalidModeError):
            engine_rejection_free(state)

    def test_rejection_free_switch(self):
        state = engine_rejection_free(make_state())
        assert state.engine is Engine.REJECTION_FREE


class TestExactOracle:
    def test_two_by_two_mean_matches_linear_solve(self):
        expected = exact_mean_hitting_time(2, 2)
        values = sample_hitting_times(Engine.GRAPHICAL, 2000)
        sem = values.std(ddof=1) / np.sqrt(len(values))
        assert abs(values.mean() - expected) < 5 * sem

    def test_rejection_free_matches_linear_solve(self):
        expected = exact_mean_hitting_time(2, 2)
        values = sample_hitting_times(Engine.REJECTION_FREE, 2000)
        sem = values.std(ddof=1) / np.sqrt(len(values))
        assert abs(values.mean() - expected) < 5 * sem

    @pytest.mark.slow
    def test_eight_by_eight_finite(self):
        values = sample_hitting_times(Engine.REJECTION_FREE, 200, L=8)
        assert np.isfinite(values).all()
        assert values.mean() < 1e4
