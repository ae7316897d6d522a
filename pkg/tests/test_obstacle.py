import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ensemblemoments.constraints.obstacle import (
    DEFAULT_BIG_M,
    DisjunctiveMomentConstraint,
    ObstacleSpec,
    obstacle_disjunction,
    validate_big_m,
)
from ensemblemoments.core.exceptions import ConstructionError
from ensemblemoments.core.legendre import signed_part_integrals


def square():
    return ObstacleSpec.box(2.0, 6.0, 1.0, 3.0, big_m=20.0, name="square")


def position_moments(point, order=0):
    positions = np.zeros((order + 1, 2))
    positions[0] = math.sqrt(2.0) * np.asarray(point)
    return positions


class TestObstacleSpec:
    def test_box_matrix(self):
        obstacle = square()
        assert_allclose(obstacle.A, [[1, 0], [0, -1], [-1, 0], [0, 1]])
        assert_allclose(obstacle.b, [2, -3, -6, 1])
        assert obstacle.big_m == DEFAULT_BIG_M

    def test_penetration_depth(self):
        obstacle = square()
        assert obstacle.violation([4.0, 2.0]) == pytest.approx(1.0)
        assert obstacle.violation([4.0, 2.0]) > 0
        assert obstacle.violation([0.0, 0.0]) == 0.0
        assert obstacle.contains([4.0, 2.0])
        assert not obstacle.contains([6.5, 2.0])

    def test_penetration_of_many_points(self):
        depths = square().penetration_depth(np.array([[4.0, 2.0], [2.5, 2.0], [7.0, 7.0]]))
        assert_allclose(depths, [1.0, 0.5, 0.0])

    def test_inflated(self):
        obstacle = ObstacleSpec.box(2.0, 6.0, 1.0, 3.0, clearance=0.5)
        grown = obstacle.inflated()
        assert grown.clearance == 0.0
        assert grown.contains([1.7, 2.0])
        assert not obstacle.contains([1.7, 2.0])
        vertices = grown.vertices()
        assert_allclose(vertices.min(axis=0), [1.5, 0.5])
        assert_allclose(vertices.max(axis=0), [6.5, 3.5])

    def test_empty_obstacle(self):
        obstacle = ObstacleSpec([[1, 0], [-1, 0], [0, 1], [0, -1]], [2, -1, 0, -1])
        with pytest.raises(ConstructionError, match="empty"):
            obstacle.validate()

    def test_unbounded_obstacle(self):
        with pytest.raises(ConstructionError, match="unbounded"):
            obstacle_disjunction(ObstacleSpec([[1, 0]], [0]), signed_part_integrals(0))


class TestValidateBigM:
    def test_large_enough(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert validate_big_m(square(), (0.0, 8.0, 0.0, 4.0))

    def test_too_small(self):
        obstacle = ObstacleSpec.box(2.0, 6.0, 1.0, 3.0, big_m=5.0, name="square")
        with pytest.warns(UserWarning, match="big_m=5.0 is too small"):
            assert not validate_big_m(obstacle, (0.0, 8.0, 0.0, 4.0))


class TestObstacleDisjunction:
    def test_square_obstacle_bands(self):
        disjunction = obstacle_disjunction(square(), signed_part_integrals(4))
        assert_allclose(disjunction.lo, [-28.28] * 4, atol=0.05)
        assert_allclose(disjunction.hi, [31.11, 24.04, 19.80, 29.70], atol=0.05)
        assert disjunction.binary_coefficient == pytest.approx(20.0 * math.sqrt(2.0))
        assert disjunction.num_residuals() == 8

    def test_active_facet_keeps_point_outside(self):
        disjunction = obstacle_disjunction(square(), signed_part_integrals(2))
        left_of_square = position_moments([1.0, 2.0], 2)
        assert np.all(disjunction.residuals(left_of_square, [1, 0, 0, 0]) <= 0)
        # x = 1 is not right of the square
        assert np.any(disjunction.residuals(left_of_square, [0, 0, 1, 0]) > 0)

    def test_no_facet_holds_inside(self):
        disjunction = obstacle_disjunction(square(), signed_part_integrals(0))
        inside = position_moments([4.0, 2.0])
        for facet in range(4):
            z = np.zeros(4)
            z[facet] = 1
            assert np.max(disjunction.residuals(inside, z)) > 0

    def test_inactive_facets_are_slack(self):
        disjunction = obstacle_disjunction(square(), signed_part_integrals(0))
        far_away = position_moments([-5.0, 8.0])
        assert np.all(disjunction.residuals(far_away, [0, 0, 0, 0]) <= 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_validated_big_m_leaves_inactive_facets_slack(self, seed):
        rng = np.random.default_rng(seed)
        workspace = (-10.0, 10.0, -10.0, 10.0)
        angles = rng.uniform(0.0, 2.0 * math.pi) + np.arange(3) * 2.0 * math.pi / 3.0
        normals = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        center = rng.uniform(-5.0, 5.0, size=2)
        # a triangle around the center; inside means a . x > b for every facet
        triangle = ObstacleSpec(-normals, -(normals @ center + 1.0), big_m=30.0, name="tri")
        for obstacle in (triangle, square()):
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                assert validate_big_m(obstacle, workspace)
            disjunction = obstacle_disjunction(obstacle, signed_part_integrals(0))
            points = rng.uniform(-10.0, 10.0, size=(500, 2))
            positions = math.sqrt(2.0) * points[:, np.newaxis, :]
            inactive = np.zeros(obstacle.num_facets)
            assert np.all(disjunction.residuals(positions, inactive) <= 0)

    def test_small_big_m_binds_at_a_workspace_corner(self):
        obstacle = ObstacleSpec.box(2.0, 6.0, 1.0, 3.0, big_m=5.0)
        with pytest.warns(UserWarning):
            assert not validate_big_m(obstacle, (0.0, 8.0, 0.0, 4.0))
        disjunction = obstacle_disjunction(obstacle, signed_part_integrals(0))
        corner = position_moments([8.0, 4.0])
        assert np.max(disjunction.residuals(corner, np.zeros(4))) > 0

    def test_selection(self):
        assert DisjunctiveMomentConstraint.selection_satisfied([[1, 0], [0, 1]])
        assert not DisjunctiveMomentConstraint.selection_satisfied([[1, 0], [0, 0]])

    def test_serialize_parameters(self):
        params = obstacle_disjunction(square(), signed_part_integrals(0)).serialize_parameters()
        assert params["kind"] == "disjunction"
        assert params["name"] == "square"
        assert params["big_m"] == 20.0
        assert len(params["hi"]) == 4
