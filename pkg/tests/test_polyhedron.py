import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ensemblemoments.constraints.polyhedron import (
    MomentBandConstraint,
    Polyhedron,
    member_violation,
    moment_polyhedron_bands,
)
from ensemblemoments.core.ensemble import EnsembleGrid, MemberTrajectory, ParameterInterval
from ensemblemoments.core.legendre import signed_part_integrals
from ensemblemoments.core.moments import forward_transform


class TestPolyhedron:
    def test_box(self):
        box = Polyhedron.box(-0.5, 3.5, -0.5, 2.5, name="box")
        assert box.num_rows == 2
        assert box.contains([1.0, 1.0])
        assert not box.contains([4.0, 1.0])
        assert len(box.vertices()) == 4
        assert_allclose(box.center, [1.5, 1.0])

    def test_violation_in_meters(self):
        poly = Polyhedron([[3.0, 4.0]], [0.0], [5.0])
        assert_allclose(poly.violation([[3.0, 4.0]]), [[20.0]])
        assert_allclose(poly.violation([[3.0, 4.0]], normalized=True), [[4.0]])
        assert_allclose(poly.violation([[0.6, 0.8]]), [[0.0]])

    def test_shrunk(self):
        box = Polyhedron.box(0.0, 4.0, 0.0, 1.0).shrunk(0.25)
        assert_allclose(box.lower, [0.25, 0.25])
        assert_allclose(box.upper, [3.75, 0.75])

    def test_shrunk_collapses_thin_slabs(self):
        box = Polyhedron.box(0.0, 4.0, 0.0, 0.2).shrunk(0.25)
        assert box.lower[1] == pytest.approx(0.1)
        assert box.upper[1] == pytest.approx(0.1)

    def test_shrunk_per_bound(self):
        slab = Polyhedron([[3.0, 4.0], [0.0, 1.0]], [0.0, -1.0], [10.0, 1.0])
        shrunk = slab.shrunk([[0.0, 0.2], [0.1, 0.0]])
        # margins are in meters, bounds scale with the row norm 5
        assert_allclose(shrunk.lower, [0.0, -0.9])
        assert_allclose(shrunk.upper, [9.0, 1.0])

    def test_side_violations(self):
        box = Polyhedron.box(0.0, 1.0, 0.0, 1.0)
        sides = box.side_violations([[1.5, -0.25], [0.5, 0.5]])
        assert sides.shape == (2, 2, 2)
        assert_allclose(sides[0], [[0.0, 0.5], [0.25, 0.0]])
        assert_allclose(sides[1], np.zeros((2, 2)))
        assert_allclose(
            np.max(sides, axis=-1), box.violation([[1.5, -0.25], [0.5, 0.5]], normalized=True)
        )

    def test_serialize_parameters(self):
        slabs = Polyhedron([[2, 1], [0, 1]], [-1, -2], [13, 2], name="slabs")
        params = slabs.serialize_parameters()
        assert params == {
            "name": "slabs",
            "A": [[2.0, 1.0], [0.0, 1.0]],
            "lower": [-1.0, -2.0],
            "upper": [13.0, 2.0],
        }

    def test_member_violation(self):
        box = Polyhedron.box(0.0, 1.0, 0.0, 1.0)
        states = np.array([[0.5, 0.5, 1.0, 0.0], [1.5, 0.5, 1.0, 0.0]])
        violation = member_violation(box, MemberTrajectory(1.0, 0.1, states), normalized=True)
        assert violation.shape == (2, 2)
        assert_allclose(violation, [[0.0, 0.0], [0.5, 0.0]])


class TestMomentPolyhedronBands:
    def test_second_order_bands(self):
        poly = Polyhedron([[2, 1], [0, 1]], [-1, -2], [13, 2])
        bands = moment_polyhedron_bands(poly, signed_part_integrals(2), [2])
        assert len(bands) == 2
        assert [band.lo for band in bands] == pytest.approx([-8.52, -2.43], abs=0.05)
        assert [band.hi for band in bands] == pytest.approx([8.52, 2.43], abs=0.05)
        assert bands[0].lo == pytest.approx(-14 * 0.60858, abs=1e-4)

    def test_zeroth_order_bands_bound_the_mean(self):
        box = Polyhedron.box(-0.5, 3.5, -0.5, 2.5)
        bands = moment_polyhedron_bands(box, signed_part_integrals(2), [0])
        assert [band.lo for band in bands] == pytest.approx(
            [-0.5 * math.sqrt(2.0), -0.5 * math.sqrt(2.0)]
        )
        assert [band.hi for band in bands] == pytest.approx(
            [3.5 * math.sqrt(2.0), 2.5 * math.sqrt(2.0)]
        )

    def test_orders_are_sorted_and_unique(self):
        box = Polyhedron.box(0, 1, 0, 1)
        bands = moment_polyhedron_bands(box, signed_part_integrals(3), [2, 0, 2])
        assert [band.order for band in bands] == [0, 0, 2, 2]

    def test_order_above_table(self):
        with pytest.raises(ValueError):
            moment_polyhedron_bands(Polyhedron.box(0, 1, 0, 1), signed_part_integrals(2), [3])

    def test_band_residuals(self):
        band = MomentBandConstraint(0, [1.0, 0.0], -1.0, 1.0)
        positions = np.zeros((3, 2))
        positions[0] = [2.0, 5.0]
        assert_allclose(band.residuals(positions), [-3.0, 1.0])
        assert not band.is_satisfied(positions)

    def test_bands_hold_for_profiles_inside(self):
        poly = Polyhedron(
            [[3.0, 2.0], [-3.0, 2.0], [0.0, 1.0]], [-0.5, -6.0, -0.1], [14.0, 1.0, 2.1]
        )
        table = signed_part_integrals(6)
        bands = moment_polyhedron_bands(poly, table, range(7))
        grid = EnsembleGrid.gauss(ParameterInterval(0.9, 1.1), 64)
        mu = grid.normalized_samples
        rng = np.random.default_rng(7)
        for _ in range(20):
            phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
            frequency = rng.uniform(0.5, 4.0, size=2)
            x = 1.5 + 0.3 * np.sin(frequency[0] * mu + phase[0])
            y = 1.0 + 0.9 * np.cos(frequency[1] * mu + phase[1])
            profile = np.column_stack([x, y, np.ones_like(x), np.zeros_like(x)])
            assert np.all(poly.contains(profile[:, :2]))
            positions = forward_transform(grid, profile, 6).position
            for band in bands:
                assert band.is_satisfied(positions, tolerance=1e-8)
