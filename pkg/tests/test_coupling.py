import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import InvalidInputError, InvalidModeError, VerificationError
from core.logic.coupling import (
    BoundarySwitch,
    CoupledRun,
    SliceMap,
    censoring_domination,
    censoring_trials,
    coupled_run,
    first_layer_check,
    order_fault_hook,
    ordered_coupling_trials,
    slice_decoupling_check,
)
from core.logic.dynamics import DynamicsState, run_until
from core.logic.geometry import cylinder, discrete_ball3, eta0, hypercube, plus_boundary, shell_between, shrunk_set
from core.models.enums import Engine
from core.models.lattice import BoundaryCondition, GeometryParams
from core.models.spin_field import SpinField
from core.services.randomness import EventStream


def pair_states(L=3, d=2, lower=-1, upper=1):
    region = hypercube(L, d)
    a = DynamicsState(SpinField.uniform(region, lower), BoundaryCondition.uniform(region, -1))
    b = DynamicsState(SpinField.uniform(region, upper), BoundaryCondition.uniform(region, 1))
    return region, a, b


class TestCoupledRun:
    def test_ordered_pair_stays_ordered(self):
        region, a, b = pair_states()
        report = coupled_run(CoupledRun([a, b], EventStream(1, region.size), [(0, 1)]), 20.0)
        assert report.events > 0
        assert report.checks == report.events
        assert a.field.dominated_by(b.field)

    def test_identical_copies(self):
        region = hypercube(3, 2)
        states = [DynamicsState(SpinField.uniform(region, -1), plus_boundary(region)) for _ in range(2)]
        report = coupled_run(CoupledRun(states, EventStream(2, region.size), [(0, 1)]), 10.0)
        assert report.identical
        assert np.array_equal(states[0].field.spins, states[1].field.spins)

    def test_unordered_initial_data_rejected(self):
        region, a, b = pair_states(lower=1, upper=-1)
        with pytest.raises(InvalidInputError):
            coupled_run(CoupledRun([a, b], EventStream(1, region.size), [(0, 1)]), 5.0)

    def test_unordered_boundaries_rejected(self):
        region, a, b = pair_states()
        with pytest.raises(InvalidInputError):
            coupled_run(CoupledRun([b, a], EventStream(1, region.size), [(0, 1)]), 5.0)

    def test_rejection_free_state_rejected(self):
        region, a, b = pair_states()
        b.engine = Engine.REJECTION_FREE
        with pytest.raises(InvalidModeError):
            CoupledRun([a, b], EventStream(1, region.size))

    def test_stream_size_must_match(self):
        region, a, b = pair_states()
        with pytest.raises(InvalidInputError):
            CoupledRun([a, b], EventStream(1, region.size + 1))

    def test_coupled_state_cannot_use_rejection_free(self):
        region, a, b = pair_states()
        CoupledRun([a, b], EventStream(1, region.size))
        a.engine = Engine.REJECTION_FREE
        with pytest.raises(InvalidModeError):
            run_until(a, EventStream(1, region.size), 1.0)

    def test_boundary_switch(self):
        region, a, b = pair_states()
        schedule = [BoundarySwitch(2.0, 0, BoundaryCondition.uniform(region, 1))]
        report = coupled_run(CoupledRun([a, b], EventStream(4, region.size), [(0, 1)], schedule), 10.0)
        assert report.switches == 1
        assert (a.bc.spins == 1).all()

    def test_fault_injection_gives_witness(self):
        region, a, b = pair_states()
        run = CoupledRun([a, b], EventStream(5, region.size), [(0, 1)])
        with pytest.raises(VerificationError) as info:
            coupled_run(run, 10.0, order_fault_hook(at_event=3))
        witness = info.value.witness
        assert witness["event_index"] == 3
        assert witness["pair"] == [0, 1]
        assert witness["seed"] == 5
        assert "coords" in witness


class TestRandomizedTrials:
    @settings(max_examples=10, deadline=None)
    @given(st.integers(2, 4), st.integers(1, 4), st.integers(0, 2 ** 32))
    def test_order_is_preserved(self, d, L, seed):
        summary = ordered_coupling_trials(d, L, runs=3, seed=seed)
        assert summary["violations"] == 0
        assert summary["switches"] == 3

    def test_injected_fault_is_caught(self):
        with pytest.raises(VerificationError):
            ordered_coupling_trials(2, 3, runs=1, fault_at=1)

    def test_censoring_trials(self):
        summary = censoring_trials(2, 4, runs=10, seed=3)
        assert summary["violations"] == 0
        assert summary["runs"] == 10

    @pytest.mark.slow
    @pytest.mark.parametrize("d,L", [(2, 8), (3, 6), (4, 4)])
    def test_many_ordered_runs(self, d, L):
        assert ordered_coupling_trials(d, L, runs=300, seed=17)["violations"] == 0

    @pytest.mark.slow
    def test_many_censored_runs(self):
        assert censoring_trials(3, 5, runs=200, seed=19)["violations"] == 0


class TestCensoring:
    def test_full_protection_never_cancels(self):
        region = hypercube(3, 2)
        state = DynamicsState(SpinField.uniform(region, -1), plus_boundary(region))
        report = censoring_domination(state, range(region.size), 20.0, EventStream(6, region.size))
        assert report.cancellations == 0
        assert report.first_cancel_time is None

    def test_no_protection_on_minus_boundary(self):
        region = hypercube(3, 2)
        state = DynamicsState(SpinField.uniform(region, 1), BoundaryCondition.uniform(region, -1))
        report = censoring_domination(state, [], 20.0, EventStream(7, region.size))
        assert report.cancellations > 0
        assert report.first_cancel_time is not None
        assert state.field.minus_count == 0

    def test_protected_region_outside_rejected(self):
        region = hypercube(2, 2)
        state = DynamicsState(SpinField.uniform(region, -1), plus_boundary(region))
        with pytest.raises(InvalidInputError):
            censoring_domination(state, hypercube(3, 2), 1.0, EventStream(1, region.size))

    @pytest.mark.slow
    def test_cylinder_with_shrunk_set_protected(self, gp3):
        region = cylinder(gp3)
        protected = shrunk_set(gp3, 1)
        bc = eta0(gp3)
        cancelled = 0
        for seed in range(100):
            xi = np.where(np.random.default_rng(seed).random(region.size) < 0.5, -1, 1).astype(np.int8)
            state = DynamicsState(SpinField(region, xi), bc)
            report = censoring_domination(state, protected, 0.02, EventStream(seed, region.size))
            assert report.protected_size == protected.size < report.region_size
            cancelled += report.first_cancel_time is not None
        assert cancelled > 0


class TestSliceDecoupling:
    def test_slice_map_rejects_non_bijection(self):
        shell, shell_bc = shell_between(3.0, 1.0)
        other, _ = shell_between(3.0, 2.0)
        with pytest.raises(VerificationError):
            SliceMap.build(other, BoundaryCondition.uniform(other, 1), (), np.arange(other.size), shell, shell_bc)

    @pytest.mark.parametrize("i", [0, 2])
    def test_slab_matches_shells(self, i):
        gp = GeometryParams(L=3, d=4)
        report = slice_decoupling_check(gp, i, min_events=3_000)
        assert report.events == 3_000
        assert sum(s["flips"] for s in report.slices) == report.flips
        assert sum(s["sites"] for s in report.slices) == report.slab_size

    def test_first_layer_matches_ball(self):
        gp = GeometryParams(L=3, d=4)
        report = first_layer_check(gp, min_events=3_000)
        assert report.i is None
        assert report.slices[0]["sites"] == discrete_ball3(report.slices[0]["outer"]).size

    @pytest.mark.slow
    @pytest.mark.parametrize("L", [3, 4, 6])
    @pytest.mark.parametrize("i", [0, 1, 2, 4])
    def test_d4_acceptance(self, L, i):
        report = slice_decoupling_check(GeometryParams(L=L, d=4), i)
        assert report.events >= 10_000

    @pytest.mark.slow
    def test_d5_instance(self):
        report = slice_decoupling_check(GeometryParams(L=3, d=5), 2)
        assert report.events >= 10_000
