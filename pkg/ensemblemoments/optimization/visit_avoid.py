import itertools
import math
import time
from typing import List, Optional

import numpy as np

from ensemblemoments.core.ensemble import EnsembleGrid
from ensemblemoments.core.moments import MomentTrajectory
from ensemblemoments.optimization.ocp import DecisionVector, OcpSpec, SolveReport
from ensemblemoments.optimization.solver import (
    SolverOptions,
    initial_guess,
    ranking,
    shoot,
    solve_continuous,
    solve_exploration,
)


def assign_binaries(spec: OcpSpec, trajectory: MomentTrajectory) -> List[np.ndarray]:
    """
    For every knot and obstacle activate the single facet whose half-space the mean position
    satisfies most deeply (largest slack b_i - a_i . x). Inside an obstacle this is the
    facet with the least violation. Ties go to the lowest facet index.
    """
    assert spec.obstacles, "assign_binaries needs obstacles"
    mean_positions = trajectory.array[:, 0, :2] / math.sqrt(2.0)
    binaries = []
    for obstacle in spec.solver_obstacles:
        slacks = obstacle.slacks(mean_positions)
        z = np.zeros(slacks.shape, dtype=np.int64)
        z[np.arange(len(z)), np.argmax(slacks, axis=1)] = 1
        binaries.append(z)
    return binaries


def _same(a: List[np.ndarray], b: List[np.ndarray]):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def solve_visit_avoid(
    spec: OcpSpec,
    options: Optional[SolverOptions] = None,
    x0=None,
    grid: Optional[EnsembleGrid] = None,
) -> SolveReport:
    """
    Alternate between a continuous solve with fixed facet activations and re-assigning the
    activations from the new mean trajectory, until the activations repeat or the
    alternation cap is reached. The best alternation by ranking is returned, with
    `alternations` set to the number of alternations run. Without obstacles this is a single
    continuous solve.
    """
    assert spec.formula is not None or spec.obstacles, "Nothing to visit or avoid"
    options = options or SolverOptions()
    started = time.perf_counter()
    if x0 is None:
        x0 = initial_guess(spec).flat()
    if not spec.obstacles:
        report = solve_continuous(spec, None, x0, options, grid)
        report.wall_time = time.perf_counter() - started
        return report

    decision_trajectory = shoot(spec, DecisionVector.from_flat(x0))
    binaries = assign_binaries(spec, decision_trajectory)
    best = None
    seen = []
    for alternation in range(1, options.max_alternations + 1):
        report = solve_continuous(spec, binaries, x0, options, grid)
        if best is None or ranking(report) > ranking(best):
            best = report
        seen.append(binaries)
        new_binaries = assign_binaries(spec, report.trajectory)
        if any(_same(new_binaries, previous) for previous in seen):
            break
        binaries = new_binaries
        x0 = report.controls.pairs.ravel()
    best.alternations = alternation
    best.wall_time = time.perf_counter() - started
    return best


def segment_bounds(knots: int, segments: int):
    """Split knots 0 .. K into `segments` contiguous, nearly equal groups."""
    edges = np.linspace(0, knots + 1, segments + 1).round().astype(int)
    return list(zip(edges[:-1], edges[1:]))


def solve_exhaustive(
    spec: OcpSpec,
    segments: int = 2,
    options: Optional[SolverOptions] = None,
    max_combinations: int = 256,
    grid: Optional[EnsembleGrid] = None,
) -> SolveReport:
    """
    Oracle for small instances: try every segment-wise facet choice for every obstacle, solve
    each continuous problem and keep the best one (see ranking).
    Limited to at most 2 obstacles and 8 segments.
    """
    if len(spec.obstacles) == 0 or len(spec.obstacles) > 2:
        raise ValueError("The exhaustive oracle handles 1 or 2 obstacles")
    if not 1 <= segments <= 8:
        raise ValueError("The exhaustive oracle handles 1 to 8 segments")
    facet_counts = [o.num_facets for o in spec.solver_obstacles]
    num_combinations = int(np.prod([d ** segments for d in facet_counts]))
    if num_combinations > max_combinations:
        raise ValueError(
            "{} facet combinations exceed the cap of {}".format(
                num_combinations, max_combinations
            )
        )
    options = options or SolverOptions()
    started = time.perf_counter()
    bounds = segment_bounds(spec.knots, segments)
    x0 = initial_guess(spec).flat()
    choices = [itertools.product(range(d), repeat=segments) for d in facet_counts]
    best = None
    for combination in itertools.product(*choices):
        binaries = []
        for obstacle_choice, d in zip(combination, facet_counts):
            z = np.zeros((spec.knots + 1, d), dtype=np.int64)
            for (lo, hi), facet in zip(bounds, obstacle_choice):
                z[lo:hi, facet] = 1
            binaries.append(z)
        report = solve_continuous(spec, binaries, x0, options, grid)
        if best is None or ranking(report) > ranking(best):
            best = report
    best.wall_time = time.perf_counter() - started
    return best


def solve_spec(
    spec: OcpSpec,
    options: Optional[SolverOptions] = None,
    x0=None,
    grid: Optional[EnsembleGrid] = None,
) -> SolveReport:
    """Exploration solve for plain problems, visit-avoid otherwise."""
    if spec.formula is None and not spec.obstacles:
        return solve_exploration(spec, options, x0=x0, grid=grid)
    return solve_visit_avoid(spec, options, x0=x0, grid=grid)
