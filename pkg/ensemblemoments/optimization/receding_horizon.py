import warnings
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from ensemblemoments.core.ensemble import (
    ControlSequence,
    EnsembleGrid,
    LiftedState,
    MemberTrajectory,
    ensemble_states,
    lift,
    measured_state,
    rollout_ensemble,
)
from ensemblemoments.core.exceptions import SolverNotConvergedError
from ensemblemoments.core.moments import point_mass_moments
from ensemblemoments.optimization.ocp import OcpSpec, SolveReport
from ensemblemoments.optimization.solver import SolverOptions
from ensemblemoments.optimization.visit_avoid import solve_spec


class RecedingHorizonResult:
    """
    Closed-loop outcome: the plant trajectories over the whole horizon, the control that was
    actually applied (on the knot grid) and one SolveReport per re-plan.
    """

    def __init__(
        self,
        trajectories: List[MemberTrajectory],
        applied: ControlSequence,
        reports: List[SolveReport],
        target,
    ):
        self.trajectories = trajectories
        self.applied = applied
        self.reports = reports
        self.target = np.asarray(target, dtype=np.float64)

    @property
    def terminal_mean_position(self):
        return ensemble_states(self.trajectories)[-1, :, :2].mean(axis=0)

    @property
    def terminal_error(self):
        """Distance between the plant's terminal mean position and the target."""
        return float(np.linalg.norm(self.terminal_mean_position - self.target))

    @property
    def converged(self):
        return all(report.converged for report in self.reports)

    def to_dict(self):
        return {
            "loops": len(self.reports),
            "converged": self.converged,
            "terminal_mean_position": self.terminal_mean_position.tolist(),
            "terminal_error": self.terminal_error,
            "reports": [report.to_dict() for report in self.reports],
        }


def _plant_grid(spec: OcpSpec, plant) -> EnsembleGrid:
    if isinstance(plant, EnsembleGrid):
        return plant
    return EnsembleGrid.single(spec.interval, float(plant))


def _stitch(pieces: List[List[MemberTrajectory]]) -> List[MemberTrajectory]:
    stitched = []
    for member in range(len(pieces[0])):
        states = [pieces[0][member].states]
        for piece in pieces[1:]:
            states.append(piece[member].states[1:])
        first = pieces[0][member]
        stitched.append(MemberTrajectory(first.beta, first.dt, np.concatenate(states)))
    return stitched


def broadcast_open_loop(
    spec: OcpSpec, controls: ControlSequence, plant, z0: Optional[LiftedState] = None
) -> List[MemberTrajectory]:
    """Apply a fixed control sequence to the plant without feedback."""
    grid = _plant_grid(spec, plant)
    return rollout_ensemble(grid, spec.start if z0 is None else z0, controls.expand(spec.dt))


def receding_horizon_run(
    spec: OcpSpec,
    plant,
    replan_every: Optional[int] = None,
    apply: int = 10,
    options: Optional[SolverOptions] = None,
    strict: bool = False,
    progress: bool = True,
) -> RecedingHorizonResult:
    """
    Shrinking-horizon closed loop on a simulated plant. Every cycle measures the plant, seeds
    the problem with a point-mass profile at the measured pose, solves, applies the first
    `apply` knots of the plan and holds still for the rest of the cycle.

    :param plant: An EnsembleGrid, or a single traction value for a one-member plant
    :param replan_every: Cycle length in knots, by default equal to apply
    :param apply: Number of knots of each fresh plan sent to the plant
    :param strict: Raise SolverNotConvergedError instead of warning on non-convergence
    """
    replan_every = apply if replan_every is None else replan_every
    assert 1 <= apply <= replan_every <= spec.knots, "Need 1 <= apply <= replan_every <= knots"
    options = options or SolverOptions()
    grid = _plant_grid(spec, plant)
    current = [
        MemberTrajectory(beta, spec.dt, spec.start.as_array()[np.newaxis]) for beta in grid.samples
    ]
    reports = []
    applied = []
    pieces = []
    warm_start = None
    loop_starts = list(range(0, spec.knots, replan_every))
    for loop_index, elapsed in enumerate(tqdm(loop_starts, disable=not progress)):
        pose = lift(measured_state(current))
        initial = point_mass_moments(pose, spec.order, spec.interval)
        sub_spec = spec if elapsed == 0 else spec.shrink(elapsed, initial, pose)
        report = solve_spec(sub_spec, options, x0=warm_start)
        reports.append(report)
        if not report.converged:
            message = "Receding-horizon loop {} did not converge: {}".format(
                loop_index, report.message
            )
            if strict:
                raise SolverNotConvergedError(message, loop_index=loop_index, report=report)
            warnings.warn(message)

        cycle = min(replan_every, spec.knots - elapsed)
        chunk = np.zeros((cycle, 2))
        count = min(apply, cycle)
        chunk[:count] = report.controls.pairs[:count]
        applied.append(chunk)
        states = ensemble_states(current)[-1]
        current = rollout_ensemble(
            grid, states, ControlSequence(spec.knot_dt, chunk).expand(spec.dt)
        )
        pieces.append(current)
        # the unused tail of this plan seeds the next, shorter problem
        warm_start = report.controls.pairs[cycle:].ravel()

    return RecedingHorizonResult(
        trajectories=_stitch(pieces),
        applied=ControlSequence(spec.knot_dt, np.concatenate(applied)),
        reports=reports,
        target=spec.target,
    )
