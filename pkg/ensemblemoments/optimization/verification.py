import math
from typing import List, Optional

import numpy as np

from ensemblemoments.core.ensemble import (
    ControlSequence,
    EnsembleGrid,
    MemberTrajectory,
    ensemble_states,
    rollout_ensemble,
)
from ensemblemoments.stl.formula import robustness_batch

DEFAULT_VERIFY_TOLERANCE = 0.05


def member_robustness(formula, trajectories: List[MemberTrajectory], order: int, knot_dt: float):
    """
    Exact robustness of every member, each treated as a point-mass population: its moment
    signal has m~_0 = sqrt(2) x(t) and zero higher orders. Evaluated on the knot grid.
    """
    states = ensemble_states(trajectories)
    stride = int(round(knot_dt / trajectories[0].dt))
    positions = np.zeros((states.shape[1], len(states[::stride]), order + 1, 2))
    positions[:, :, 0, :] = math.sqrt(2.0) * np.swapaxes(states[::stride, :, :2], 0, 1)
    return robustness_batch(formula, positions, knot_dt)


def verify_rollout(
    spec,
    controls: ControlSequence,
    grid: EnsembleGrid,
    tolerance: float = DEFAULT_VERIFY_TOLERANCE,
    trajectories: Optional[List[MemberTrajectory]] = None,
) -> dict:
    """
    Roll the controls out on every grid member at the integration step spec.dt and measure
    the true constraint satisfaction: region violations (as distances, overall and per
    region), obstacle penetration depths, per-member robustness and the terminal mean
    position.
    """
    if trajectories is None:
        trajectories = rollout_ensemble(grid, spec.start, controls.expand(spec.dt))
    states = ensemble_states(trajectories)
    positions = states[:, :, :2]

    # (r, 2) per region: the worst distance beyond each lower and upper bound
    side_violations = [
        np.max(region.side_violations(positions), axis=(0, 1)) for region in spec.regions
    ]
    region_violations = [float(np.max(sides)) for sides in side_violations]
    max_region_violation = max(region_violations + [0.0])
    max_penetration = 0.0
    for obstacle in spec.obstacles:
        max_penetration = max(
            max_penetration, float(np.max(obstacle.violation(positions)))
        )
    min_member_robustness = None
    if spec.formula is not None:
        min_member_robustness = float(
            np.min(member_robustness(spec.formula, trajectories, spec.order, controls.dt))
        )

    terminal_mean = positions[-1].mean(axis=0)
    terminal_mean_error = float(np.max(np.abs(terminal_mean - spec.target)))
    max_member_violation = max(max_region_violation, max_penetration)
    return {
        "num_members": len(grid),
        "dt": spec.dt,
        "max_member_violation": max_member_violation,
        "max_region_violation": max_region_violation,
        "region_violations": region_violations,
        "region_side_violations": [sides.tolist() for sides in side_violations],
        "max_penetration": max_penetration,
        "min_member_robustness": min_member_robustness,
        "terminal_mean_position": [float(x) for x in terminal_mean],
        "terminal_mean_error": terminal_mean_error,
        "tolerance": tolerance,
        "passed": bool(max_member_violation <= tolerance),
    }
