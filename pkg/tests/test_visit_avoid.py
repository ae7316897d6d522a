import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from ensemblemoments.constraints.obstacle import ObstacleSpec
from ensemblemoments.core.ensemble import ControlSequence, ParameterInterval
from ensemblemoments.core.moments import MomentTrajectory
from ensemblemoments.optimization.ocp import SolveReport
from ensemblemoments.optimization.solver import SolverOptions
from ensemblemoments.optimization.visit_avoid import (
    assign_binaries,
    segment_bounds,
    solve_exhaustive,
    solve_spec,
    solve_visit_avoid,
)
from tests.utils import small_problem

FAST = dict(max_outer=4, max_inner=40, restarts=0)


def mean_trajectory(points, order=2):
    array = np.zeros((len(points), order + 1, 4))
    array[:, 0, :2] = math.sqrt(2.0) * np.asarray(points, dtype=np.float64)
    array[:, 0, 2] = math.sqrt(2.0)
    return MomentTrajectory(0.25, array, ParameterInterval(0.9, 1.1))


def beside_the_wall():
    """Drive 4 m along +y with an obstacle 1 m to the right of the path."""
    wall = ObstacleSpec.box(1.0, 3.0, -1.0, 5.0, name="wall")
    return small_problem(target=(0.0, 4.0), horizon=4.0, obstacles=[wall])


class TestAssignBinaries:
    def test_deepest_facet(self):
        spec = small_problem(obstacles=[ObstacleSpec.box(2.0, 6.0, 1.0, 3.0)])
        (z,) = assign_binaries(spec, mean_trajectory([[0.0, 2.0], [4.0, 5.0], [4.0, 2.0]]))
        # left of, above and inside the obstacle; the inside tie goes to the lower index
        assert_array_equal(z, [[1, 0, 0, 0], [0, 1, 0, 0], [0, 1, 0, 0]])

    def test_uses_inflated_obstacles(self):
        obstacle = ObstacleSpec.box(2.0, 6.0, 1.0, 3.0, clearance=1.0)
        spec = small_problem(obstacles=[obstacle])
        (z,) = assign_binaries(spec, mean_trajectory([[1.5, 3.2]]))
        # against the inflated box, 1.5 is 0.5 inside the left face and 3.2 is 0.8 inside the top
        assert_array_equal(z, [[1, 0, 0, 0]])

    def test_needs_obstacles(self):
        with pytest.raises(AssertionError):
            assign_binaries(small_problem(), mean_trajectory([[0.0, 0.0]]))


class TestSegmentBounds:
    def test_even_split(self):
        assert segment_bounds(7, 2) == [(0, 4), (4, 8)]

    @pytest.mark.parametrize("knots,segments", [(8, 1), (8, 3), (40, 8)])
    def test_cover_every_knot(self, knots, segments):
        bounds = segment_bounds(knots, segments)
        assert len(bounds) == segments
        assert bounds[0][0] == 0
        assert bounds[-1][1] == knots + 1
        for (_, hi), (lo, _) in zip(bounds[:-1], bounds[1:]):
            assert hi == lo


class TestSolveExhaustive:
    def test_obstacle_count(self):
        with pytest.raises(ValueError):
            solve_exhaustive(small_problem())
        boxes = [ObstacleSpec.box(x, x + 1.0, 5.0, 6.0) for x in (0.0, 2.0, 4.0)]
        with pytest.raises(ValueError):
            solve_exhaustive(small_problem(obstacles=boxes))

    @pytest.mark.parametrize("segments", [0, 9])
    def test_segment_count(self, segments):
        with pytest.raises(ValueError):
            solve_exhaustive(beside_the_wall(), segments=segments)

    def test_combination_cap(self):
        boxes = [ObstacleSpec.box(x, x + 1.0, 5.0, 6.0) for x in (0.0, 2.0)]
        with pytest.raises(ValueError, match="exceed"):
            solve_exhaustive(small_problem(obstacles=boxes), segments=3)

    def test_single_segment(self):
        report = solve_exhaustive(beside_the_wall(), segments=1, options=SolverOptions(**FAST))
        assert report.converged
        # only "left of the wall" can hold from the first knot on
        assert np.all(report.binaries[0][:, 0] == 1)
        assert report.verification["max_penetration"] == 0.0


class TestSolveVisitAvoid:
    def test_needs_a_task(self):
        with pytest.raises(AssertionError):
            solve_visit_avoid(small_problem())

    def test_beside_the_wall(self):
        report = solve_visit_avoid(beside_the_wall(), SolverOptions(**FAST))
        assert report.converged
        assert report.alternations == 1
        assert report.terminal_mean_error <= 0.1
        assert report.verification["passed"]

    def test_solve_spec_dispatch(self):
        exploration = solve_spec(small_problem(target=(0.0, 0.0)), SolverOptions(**FAST))
        assert exploration.alternations == 0
        avoid = solve_spec(beside_the_wall(), SolverOptions(**FAST))
        assert avoid.alternations >= 1

    def test_returns_the_best_alternation(self, monkeypatch):
        def report(converged, objective):
            return SolveReport(
                converged=converged,
                message="",
                objective=objective,
                robustness=None,
                terminal_error=0.0,
                terminal_mean_error=0.0,
                max_constraint_violation=0.0 if converged else 0.5,
                controls=ControlSequence(0.5, np.zeros((8, 2))),
                trajectory=None,
                verification={"passed": converged},
            )

        reports = iter(
            [report(False, 1.0), report(True, 5.0), report(True, 3.0), report(True, 4.0)]
        )
        # four distinct activations, then the first one again
        activations = iter([[np.full((9, 4), k)] for k in (0, 1, 2, 3, 0)])
        module = "ensemblemoments.optimization.visit_avoid"
        monkeypatch.setattr(module + ".solve_continuous", lambda *args: next(reports))
        monkeypatch.setattr(module + ".assign_binaries", lambda *args: next(activations))
        best = solve_visit_avoid(beside_the_wall(), SolverOptions(**FAST))
        assert best.converged
        assert best.objective == 3.0
        assert best.alternations == 4


def facet_sequence(binaries):
    """The active facets of a single obstacle in order of use, repeats collapsed."""
    (z,) = binaries
    return [int(facet) for facet, _ in itertools.groupby(np.argmax(z, axis=1))]


class TestAlternationAgainstExhaustive:
    @pytest.mark.parametrize(
        "segments",
        [
            2,
            pytest.param(3, marks=pytest.mark.acceptance),
            pytest.param(4, marks=pytest.mark.acceptance),
        ],
    )
    def test_beside_the_wall(self, segments):
        spec = beside_the_wall()
        options = SolverOptions(restarts=0, max_tightenings=0)
        alternation = solve_visit_avoid(spec, options)
        oracle = solve_exhaustive(spec, segments=segments, options=options)
        assert alternation.converged
        assert oracle.converged
        same_route = facet_sequence(alternation.binaries) == facet_sequence(oracle.binaries)
        close = abs(alternation.objective - oracle.objective) <= 0.05 * abs(oracle.objective)
        assert same_route or close
