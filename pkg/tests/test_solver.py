import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ensemblemoments.constraints.obstacle import ObstacleSpec
from ensemblemoments.constraints.polyhedron import Polyhedron
from ensemblemoments.core.ensemble import ControlSequence, EnsembleGrid, rollout_member
from ensemblemoments.optimization.ocp import DecisionVector, SolveReport
from ensemblemoments.optimization.solver import (
    ShootingProblem,
    SolverOptions,
    augmented_merit,
    finite_difference_gradient,
    initial_guess,
    objective,
    plan_route,
    ranking,
    route_controls,
    shoot,
    solve_exploration,
    tightened_insets,
)
from ensemblemoments.optimization.verification import verify_rollout
from ensemblemoments.scenarios.scenario import parse_scenario
from tests.utils import scenario_path, small_problem

FAST = dict(max_outer=6, max_inner=60, restarts=0)


class TestFiniteDifferenceGradient:
    def test_quadratic(self):
        x = np.array([0.5, -2.0, 3.0])

        def fun_batch(batch):
            return np.sum(batch ** 2, axis=1) + batch[:, 0] * batch[:, 1]

        f, g = finite_difference_gradient(fun_batch, x)
        assert f == pytest.approx(0.25 + 4.0 + 9.0 - 1.0)
        assert_allclose(g, [2 * 0.5 - 2.0, 2 * -2.0 + 0.5, 6.0], atol=1e-6)

    @pytest.mark.parametrize("seed", range(20))
    def test_shooting_objective(self, seed):
        spec = small_problem(target=(1.0, 1.0))
        problem = ShootingProblem(spec)
        scale = np.array([spec.v_max, spec.omega_max] * spec.knots)
        x = np.random.default_rng(seed).uniform(-1.0, 1.0, spec.num_controls) * scale

        def values(batch):
            return problem.evaluate(batch)[0]

        gradient = finite_difference_gradient(values, x)[1]
        # five-point stencil with a large step as the reference
        h = 1e-3
        steps = h * np.eye(len(x))
        reference = (
            -values(x + 2 * steps)
            + 8 * values(x + steps)
            - 8 * values(x - steps)
            + values(x - 2 * steps)
        ) / (12 * h)
        error = np.linalg.norm(gradient - reference) / np.linalg.norm(reference)
        assert error <= 1e-4


class TestShootingProblem:
    def test_objective_at_rest(self):
        spec = small_problem(target=(1.0, 1.0))
        # sqrt(2) * (1, 1) away from the target on order 0, nothing else moves
        assert objective(spec, DecisionVector(np.zeros((8, 2)))) == pytest.approx(-4.0)

    def test_control_energy(self):
        spec = small_problem(target=(0.0, 0.0), weights=(1.0, 0.0, 1.0))
        controls = np.tile([0.0, 1.0], (8, 1))
        assert objective(spec, DecisionVector(controls)) == pytest.approx(-8 * 0.25)

    def test_batched_evaluation(self):
        spec = small_problem(regions=[Polyhedron.box(-1, 2, -1, 2)])
        problem = ShootingProblem(spec)
        batch = np.random.default_rng(0).uniform(-1, 1, size=(3, spec.num_controls))
        values, residuals = problem.evaluate(batch)
        assert values.shape == (3,)
        # 2 rows, 3 orders, two sides, 8 knots
        assert residuals.shape == (3, 2 * 3 * 2 * 8)
        single_value, single_residuals = problem.evaluate(batch[1])
        assert single_value == pytest.approx(values[1])
        assert_allclose(single_residuals, residuals[1])

    def test_unconstrained_residuals(self):
        values, residuals = ShootingProblem(small_problem()).evaluate(np.zeros((2, 16)))
        assert residuals.shape == (2, 0)

    def test_shoot_checks_knots(self):
        with pytest.raises(AssertionError):
            shoot(small_problem(), DecisionVector(np.zeros((5, 2))))

    def test_shoot(self):
        spec = small_problem()
        trajectory = shoot(spec, initial_guess(spec))
        assert len(trajectory) == spec.knots + 1
        assert trajectory.dt == pytest.approx(spec.knot_dt)


class TestAugmentedMerit:
    def test_inactive_constraints(self):
        merit = augmented_merit(2.0, np.array([-1.0, -3.0]), np.zeros(2), 10.0)
        assert merit == pytest.approx(-2.0)

    def test_violated_constraint(self):
        merit = augmented_merit(0.0, np.array([0.5]), np.array([1.0]), 10.0)
        assert merit == pytest.approx((6.0 ** 2 - 1.0) / 20.0)


class TestRoute:
    def test_clear_line(self):
        route = plan_route([0.0, 0.0], [3.0, 4.0], [])
        assert len(route) == 2

    def test_around_obstacle(self):
        square = ObstacleSpec.box(2.0, 6.0, 1.0, 3.0)
        route = plan_route([0.0, 2.0], [8.0, 2.0], [square])
        assert len(route) >= 3
        assert_allclose(route[0], [0.0, 2.0])
        assert_allclose(route[-1], [8.0, 2.0])
        for p, q in zip(route[:-1], route[1:]):
            points = p + np.linspace(0, 1, 200)[:, np.newaxis] * (q - p)
            assert np.all(square.violation(points) == 0.0)

    def test_straight_controls(self):
        pairs = route_controls([np.zeros(2), np.array([0.0, 1.0])], 0.0, 4, 0.5, 2.0, 2.0)
        assert_allclose(pairs, np.tile([0.5, 0.0], (4, 1)))

    def test_turn_then_drive(self):
        pairs = route_controls([np.zeros(2), np.array([1.0, 0.0])], 0.0, 4, 0.5, 2.0, 2.0)
        assert_allclose(pairs[:2], [[0.0, math.pi / 2], [0.0, math.pi / 2]])
        assert_allclose(pairs[2:], [[1.0, 0.0], [1.0, 0.0]])
        controls = DecisionVector(pairs).control_sequence(0.5).expand(0.01)
        final = rollout_member([0.0, 0.0, 1.0, 0.0], 1.0, controls).final
        assert final.px == pytest.approx(1.0, abs=1e-6)
        assert final.py == pytest.approx(0.0, abs=1e-6)

    def test_too_few_knots(self):
        with pytest.warns(UserWarning, match="stands still"):
            pairs = route_controls([np.zeros(2), np.array([1.0, 0.0])], 0.0, 1, 0.5, 2.0, 2.0)
        assert np.all(pairs == 0.0)

    def test_speed_is_clipped(self):
        with pytest.warns(UserWarning, match="clipping"):
            pairs = route_controls([np.zeros(2), np.array([0.0, 4.0])], 0.0, 4, 0.5, 1.0, 2.0)
        assert np.max(pairs[:, 0]) == 1.0


class TestInitialGuess:
    def test_box_scenario(self):
        spec = parse_scenario(scenario_path("box")).build_spec()
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            guess = initial_guess(spec)
        assert guess.controls.shape == (spec.knots, 2)
        assert np.all(np.abs(guess.controls[:, 0]) <= spec.v_max)
        assert np.all(np.abs(guess.controls[:, 1]) <= spec.omega_max)

    def test_reaches_target_on_average(self):
        spec = small_problem(target=(1.0, 1.0))
        trajectory = shoot(spec, initial_guess(spec))
        assert_allclose(trajectory.final.mean_position, [1.0, 1.0], atol=0.05)


class TestSolveExploration:
    def test_target_at_start(self):
        spec = small_problem(target=(0.0, 0.0))
        report = solve_exploration(spec, SolverOptions(**FAST))
        assert report.converged
        assert np.max(np.abs(report.controls.pairs)) <= 1e-3

    @pytest.mark.parametrize("inner", ["lbfgsb", "gradient_descent"])
    def test_small_problem(self, inner):
        spec = small_problem(target=(1.0, 1.0), regions=[Polyhedron.box(-0.5, 1.5, -0.5, 1.5)])
        guess = initial_guess(spec)
        report = solve_exploration(spec, SolverOptions(inner=inner, **FAST))
        assert report.objective >= objective(spec, guess) - 1e-9
        assert report.terminal_mean_error <= spec.goal_tolerance
        assert report.max_constraint_violation <= spec.feasibility_tolerance
        assert report.converged
        assert report.kkt_residual <= SolverOptions().kkt_tolerance
        assert report.history
        assert report.verification["num_members"] == 50

    def test_stationarity_is_required(self):
        spec = small_problem(target=(1.0, 1.0))
        report = solve_exploration(spec, SolverOptions(kkt_tolerance=1e-300, **FAST))
        assert report.max_constraint_violation <= spec.feasibility_tolerance
        assert report.terminal_mean_error <= spec.goal_tolerance
        assert not report.converged
        assert "KKT residual" in report.message
        assert len(report.history) == FAST["max_outer"]
        assert all("kkt_residual" in entry for entry in report.history)

    def test_report_to_dict(self):
        report = solve_exploration(small_problem(target=(0.0, 0.0)), SolverOptions(**FAST))
        record = report.to_dict()
        assert record["knots"] == 8
        assert record["robustness"] is None
        assert record["verification"]["passed"]

    def test_rejects_obstacles(self):
        spec = small_problem(obstacles=[ObstacleSpec.box(2.0, 3.0, 2.0, 3.0)])
        with pytest.raises(AssertionError):
            solve_exploration(spec)

    def test_options_validation(self):
        with pytest.raises(AssertionError):
            SolverOptions(inner="newton")
        with pytest.raises(AssertionError):
            SolverOptions(penalty_growth=1.0)
        with pytest.raises(AssertionError):
            SolverOptions(kkt_tolerance=0.0)
        with pytest.raises(AssertionError):
            SolverOptions(tightening_margin=1.0)
        with pytest.raises(AssertionError):
            SolverOptions(max_alternations=0)


class TestVerifyRollout:
    def test_region_violation_is_measured(self):
        spec = small_problem(target=(0.0, 2.0), regions=[Polyhedron.box(-1.0, 1.0, -1.0, 1.0)])
        straight = DecisionVector(np.tile([1.0, 0.0], (8, 1))).control_sequence(spec.knot_dt)
        result = verify_rollout(spec, straight, EnsembleGrid.uniform(spec.interval, 5))
        # the fastest member travels 2.2 m along +y
        assert result["max_region_violation"] == pytest.approx(1.2, abs=1e-6)
        assert not result["passed"]
        assert result["terminal_mean_error"] == pytest.approx(0.0, abs=1e-6)

    def test_inside_region(self):
        spec = small_problem(target=(0.0, 0.5), regions=[Polyhedron.box(-1.0, 1.0, -1.0, 1.0)])
        slow = DecisionVector(np.tile([0.25, 0.0], (8, 1))).control_sequence(spec.knot_dt)
        result = verify_rollout(spec, slow, EnsembleGrid.uniform(spec.interval, 5))
        assert result["passed"]
        assert result["max_penetration"] == 0.0
        assert result["min_member_robustness"] is None


class TestRegionTightening:
    def setup_method(self):
        # straight along +y to the top edge: the fastest member ends 0.1 m beyond it
        self.spec = small_problem(
            target=(0.0, 1.0), regions=[Polyhedron.box(-1.0, 1.0, -1.0, 1.0)]
        )

    def test_tightened_insets(self):
        verification = {"region_side_violations": [[[0.0, 0.01], [0.0, 0.1]]]}
        insets = tightened_insets(self.spec, verification, SolverOptions())
        # only the upper y bound was crossed beyond 0.05
        assert_allclose(insets[0], [[0.0, 0.0], [0.0, 0.1 - 0.025]])
        within = {"region_side_violations": [[[0.0, 0.01], [0.0, 0.04]]]}
        assert tightened_insets(self.spec, within, SolverOptions()) is None

    def test_insets_accumulate(self):
        spec = self.spec.copy(region_insets=[0.2])
        verification = {"region_side_violations": [[[0.06, 0.0], [0.0, 0.0]]]}
        insets = tightened_insets(spec, verification, SolverOptions(tightening_margin=0.0))
        assert_allclose(insets[0], [[0.21, 0.2], [0.2, 0.2]])

    def test_without_tightening(self):
        report = solve_exploration(self.spec, SolverOptions(restarts=0, max_tightenings=0))
        assert report.converged
        assert report.verification["region_side_violations"][0][1][1] > 0.05
        assert not report.verified
        assert report.tightenings == 0

    def test_rollout_is_brought_inside(self):
        with pytest.warns(UserWarning, match="tightened bounds"):
            report = solve_exploration(self.spec, SolverOptions(restarts=0))
        assert report.converged
        assert report.verified
        assert report.tightenings >= 1
        assert report.verification["max_region_violation"] <= 0.05
        inset = np.asarray(report.region_insets[0])
        assert inset.shape == (2, 2)
        assert inset[1, 1] > 0.05
        assert_allclose(inset[0], [0.0, 0.0])
        assert report.to_dict()["tightenings"] == report.tightenings


def attempt(converged, objective, violation=0.0, passed=True):
    return SolveReport(
        converged=converged,
        message="",
        objective=objective,
        robustness=None,
        terminal_error=0.0,
        terminal_mean_error=0.0,
        max_constraint_violation=violation,
        controls=ControlSequence(0.25, np.zeros((8, 2))),
        trajectory=None,
        verification={"passed": passed},
    )


class TestRanking:
    def test_lower_objective_wins(self):
        assert ranking(attempt(True, 1.0)) > ranking(attempt(True, 2.0))

    def test_convergence_before_objective(self):
        assert ranking(attempt(True, 9.0)) > ranking(attempt(False, 1.0))

    def test_verification_before_objective(self):
        assert ranking(attempt(True, 9.0)) > ranking(attempt(True, 1.0, passed=False))

    def test_smaller_violation_wins(self):
        assert ranking(attempt(False, 9.0, 0.01)) > ranking(attempt(False, 1.0, 0.1))

    def test_best_of_several(self):
        attempts = [attempt(False, 0.5, 0.2), attempt(True, 3.0), attempt(True, 2.0)]
        assert max(attempts, key=ranking) is attempts[2]
