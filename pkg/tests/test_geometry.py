import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import InvalidInputError, InvalidParameterError
from core.logic.geometry import (
    ball_radius,
    boundary,
    cylinder,
    discrete_ball3,
    eta0,
    eta_slab,
    first_layer,
    geometry_report,
    hypercube,
    inner_boundary,
    max_shrink_index,
    minus_face_boundary,
    radius_index,
    shell3,
    shrunk_set,
    slab_partition,
)
from core.models.lattice import BoundaryCondition, GeometryParams, Region, unit_offsets


def brute_boundary(sites, d):
    found = set()
    for s in sites:
        for off in unit_offsets(d).tolist():
            y = tuple(a + b for a, b in zip(s, off))
            if y not in sites:
                found.add(y)
    return found


def brute_ball(r):
    R = int(math.floor(r)) + 1
    return {z for z in product(range(-R, R + 1), repeat=3) if z[0] ** 2 + z[1] ** 2 + z[2] ** 2 <= r * r}


class TestHypercube:
    def test_size_and_order(self):
        cube = hypercube(3, 2)
        assert cube.size == 9
        assert cube.site(0) == (1, 1)
        assert cube.site(8) == (3, 3)

    def test_single_site(self):
        cube = hypercube(1, 2)
        assert cube.size == 1
        assert boundary(cube).size == 4

    def test_boundary_counts_face_neighbors_only(self):
        assert boundary(hypercube(5, 3)).size == 150

    @pytest.mark.parametrize("L,d", [(0, 2), (3, 0)])
    def test_invalid(self, L, d):
        with pytest.raises(InvalidParameterError):
            hypercube(L, d)

    @given(st.integers(1, 4), st.integers(1, 3))
    def test_boundary_matches_enumeration(self, L, d):
        cube = hypercube(L, d)
        expected = brute_boundary(set(cube.sites()), d)
        assert set(boundary(cube).sites()) == expected


class TestDiscreteBall:
    def test_small_balls(self):
        assert discrete_ball3(0).size == 1
        assert discrete_ball3(1).size == 7
        assert discrete_ball3(2).size == 33

    def test_boundary_of_unit_ball(self):
        assert boundary(discrete_ball3(1)).size == 18

    def test_inner_boundary_of_radius_two(self):
        inner = inner_boundary(discrete_ball3(2))
        assert inner.size == 26
        norms = {sum(v * v for v in s) for s in inner.sites()}
        assert norms == {2, 3, 4}

    def test_negative_radius(self):
        with pytest.raises(InvalidParameterError):
            discrete_ball3(-1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 6.5, allow_nan=False))
    def test_matches_enumeration(self, r):
        assert set(discrete_ball3(r).sites()) == brute_ball(r)


class TestRegion:
    def test_duplicates_rejected(self):
        with pytest.raises(InvalidInputError):
            Region([[0, 0], [0, 0]], 2)

    def test_lookup_outside_is_negative(self):
        cube = hypercube(2, 2)
        idx = cube.lookup(np.array([[1, 1], [2, 2], [3, 3], [0, 1]]))
        assert idx.tolist() == [0, 3, -1, -1]

    @settings(max_examples=30, deadline=None)
    @given(st.sets(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), min_size=1, max_size=20))
    def test_set_operations_match_python_sets(self, sites):
        region = Region.from_sites(sites, 2)
        other = hypercube(2, 2)
        cube_sites = set(other.sites())
        assert set(region.union(other).sites()) == sites | cube_sites
        assert set(region.difference(other).sites()) == sites - cube_sites
        assert set(region.intersection(other).sites()) == sites & cube_sites
        assert set(boundary(region).sites()) == brute_boundary(sites, 2)

    def test_group_by_tail(self):
        cube = hypercube(2, 4)
        groups = cube.group_by_tail(3)
        assert sorted(groups) == [(1,), (2,)]
        assert all(len(idx) == 8 for idx in groups.values())


class TestBoundaryConditions:
    def test_domain_must_match(self):
        cube = hypercube(2, 2)
        with pytest.raises(InvalidInputError):
            BoundaryCondition(cube, np.ones(3))

    def test_minus_face(self):
        cube = hypercube(3, 2)
        bc = minus_face_boundary(cube, 3)
        assert int((bc.spins < 0).sum()) == 3
        assert bc.spin_at((1, 4)) == -1
        assert bc.spin_at((1, 0)) == 1

    def test_domination(self):
        cube = hypercube(2, 2)
        low = BoundaryCondition.uniform(cube, -1)
        high = BoundaryCondition.uniform(cube, 1)
        assert low.is_dominated_by(high)
        assert not high.is_dominated_by(low)

    def test_shell3(self):
        region, bc = shell3(3.0, 1.0)
        assert region == discrete_ball3(3.0).difference(discrete_ball3(2.0))
        inner = discrete_ball3(2.0)
        minus = bc.sites.coords[bc.spins < 0]
        assert inner.contains_coords(minus).all()
        assert not inner.contains_coords(bc.sites.coords[bc.spins > 0]).any()

    def test_shell3_invalid(self):
        with pytest.raises(InvalidParameterError):
            shell3(2.0, 3.0)


class TestCylinder:
    def test_requires_d4_and_l3(self):
        with pytest.raises(InvalidParameterError):
            cylinder(GeometryParams(L=3, d=3))
        with pytest.raises(InvalidParameterError):
            cylinder(GeometryParams(L=2, d=4))

    def test_radius_index(self, gp3):
        assert radius_index(gp3, 0, 1) == 0
        assert radius_index(gp3, 4, 1) == 4
        assert radius_index(gp3, 4, 3) == 0
        assert max_shrink_index(gp3) == 12

    def test_cylinder_equals_zeroth_shrunk_set(self, gp3):
        assert shrunk_set(gp3, 0) == cylinder(gp3)
        ball = discrete_ball3(ball_radius(gp3, 0))
        assert cylinder(gp3).size == 3 * ball.size

    def test_shrunk_sets_are_nested(self, gp3):
        previous = shrunk_set(gp3, 0)
        for i in (1, 2, 5, 9, 12):
            current = shrunk_set(gp3, i)
            assert current.issubset(previous)
            previous = current

    def test_shrunk_set_out_of_range(self, gp3):
        with pytest.raises(InvalidParameterError):
            shrunk_set(gp3, 13)

    def test_eta0_minus_on_top_only(self, gp3):
        bc = eta0(gp3)
        top = bc.sites.coords[:, 3] == 4
        assert (bc.spins[top] == -1).all()
        assert (bc.spins[~top] == 1).all()
        assert int(top.sum()) == discrete_ball3(ball_radius(gp3, 0)).size
        assert (eta0(gp3, all_plus=True).spins == 1).all()

    def test_first_layer(self, gp3):
        region, bc = first_layer(gp3)
        assert region.size == discrete_ball3(ball_radius(gp3, 0)).size
        assert int((bc.spins < 0).sum()) == region.size


class TestSlabPartition:
    @pytest.mark.parametrize("i", [0, 1, 2, 4])
    def test_partition_covers_boundary(self, gp3, i):
        partition = slab_partition(gp3, i)
        summary = partition.summary()
        assert sum(summary["parts"].values()) == summary["boundary_size"]
        assert set(summary["parts"]) == {"plus_side", "minus_side", "inner_rim", "outer_rest"}

    def test_eta_slab_minus_parts(self, gp3):
        partition = slab_partition(gp3, 2)
        region, bc = eta_slab(gp3, 2)
        assert region == partition.slab
        minus = partition.parts["minus_side"].size + partition.parts["inner_rim"].size
        assert int((bc.spins < 0).sum()) == minus

    def test_slab_sites_lose_height_neighbors(self, gp3):
        slab = slab_partition(gp3, 4).slab
        up = slab.coords + np.array([0, 0, 0, 1])
        down = slab.coords - np.array([0, 0, 0, 1])
        assert not slab.contains_coords(up).any()
        assert not slab.contains_coords(down).any()

    def test_out_of_range(self, gp3):
        with pytest.raises(InvalidParameterError):
            slab_partition(gp3, 11)

    def test_report_with_bdecop(self, gp3):
        report = geometry_report(gp3, check_bdecop=True, indices=[0, 3])
        assert [entry["i"] for entry in report["bdecop"]] == [0, 3]
        assert all(entry["partition"] for entry in report["bdecop"])
        assert report["cylinder"]["slices"] == 3

    def test_report_low_dimension(self):
        report = geometry_report(GeometryParams(L=5, d=3))
        assert report["hypercube"]["boundary"] == 150
        assert "cylinder" not in report

    @pytest.mark.slow
    @pytest.mark.parametrize("L", [3, 4, 5])
    def test_every_index(self, L):
        gp = GeometryParams(L=L, d=4)
        for i in range(max_shrink_index(gp) - 1):
            summary = slab_partition(gp, i).summary()
            assert sum(summary["parts"].values()) == summary["boundary_size"]
