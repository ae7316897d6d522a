import math
from typing import List, Optional, Sequence

import numpy as np

from ensemblemoments.constraints.obstacle import ObstacleSpec, obstacle_disjunction
from ensemblemoments.constraints.polyhedron import Polyhedron, moment_polyhedron_bands
from ensemblemoments.core.composition import ConstraintSet
from ensemblemoments.core.ensemble import ControlSequence, LiftedState
from ensemblemoments.core.legendre import signed_part_integrals
from ensemblemoments.core.moments import MomentTrajectory, MomentVector
from ensemblemoments.stl.formula import DEFAULT_SHARPNESS, StlFormula


class OcpSpec:
    """
    A transcribed optimal control problem in moment space: piecewise-constant shared
    controls on `knots` intervals of the horizon, moment constraints enforced at the knots,
    and the objective w_rho * rho~ - w_T * |m~(T) - m~_F|^2 - w_u * dt * sum(v^2 + omega^2).
    """

    def __init__(
        self,
        initial: MomentVector,
        target,
        horizon: float,
        knots: int = 32,
        v_max: float = 2.0,
        omega_max: float = 2.0,
        regions: Sequence[Polyhedron] = (),
        region_insets: Optional[Sequence] = None,
        band_orders: int = 2,
        obstacles: Sequence[ObstacleSpec] = (),
        formula: Optional[StlFormula] = None,
        weights=(1.0, 1.0, 0.01),
        sharpness: float = DEFAULT_SHARPNESS,
        goal_tolerance: float = 0.1,
        feasibility_tolerance: float = 1e-4,
        dt: float = 0.01,
        start: Optional[LiftedState] = None,
    ):
        """
        :param initial: Initial moment vector; its order and interval define the model
        :param target: Target mean position (x, y); m~_F is the moments of a point mass there
        :param horizon: Horizon T in seconds
        :param knots: Number of control intervals
        :param v_max: Bound on |v| in m/s
        :param omega_max: Bound on |omega| in rad/s
        :param regions: Polyhedra every member has to stay in
        :param region_insets: Per-region margin in meters applied to the optimizer's copy,
            a single value or an (r, 2) array of lower and upper bound margins
        :param band_orders: Highest order K_c of the region bands (capped at N)
        :param obstacles: Obstacles to avoid; the optimizer uses them inflated by clearance
        :param formula: Optional STL task over the position moments
        :param weights: (w_rho, w_T, w_u)
        :param sharpness: Log-Sum-Exp K used inside the optimization
        :param goal_tolerance: Largest per-axis error of the terminal mean position that
            counts as reaching the target, for problems without a formula
        :param feasibility_tolerance: Largest moment constraint violation accepted
        :param dt: Integration step of verification rollouts in seconds
        :param start: Common initial lifted state of verification rollouts. Defaults to the
            mean state of the initial moments
        """
        assert horizon > 0 and knots >= 1
        assert v_max > 0 and omega_max > 0
        assert len(weights) == 3 and all(w >= 0 for w in weights)
        assert band_orders >= 0
        self.initial = initial
        self.target = np.asarray(target, dtype=np.float64)
        assert self.target.shape == (2,)
        self.horizon = float(horizon)
        self.knots = int(knots)
        self.v_max = float(v_max)
        self.omega_max = float(omega_max)
        self.regions = list(regions)
        self.region_insets = (
            [0.0] * len(self.regions) if region_insets is None else list(region_insets)
        )
        assert len(self.region_insets) == len(self.regions)
        self.band_orders = int(band_orders)
        self.obstacles = list(obstacles)
        self.formula = formula
        self.weights = tuple(float(w) for w in weights)
        self.sharpness = float(sharpness)
        self.goal_tolerance = float(goal_tolerance)
        self.feasibility_tolerance = float(feasibility_tolerance)
        self.dt = float(dt)
        if start is None:
            mean = initial.blocks[0] / math.sqrt(2.0)
            start = LiftedState(*(float(x) for x in mean))
        self.start = start

        self.table = signed_part_integrals(self.order)
        orders = range(min(self.order, self.band_orders) + 1)
        bands = []
        for region, inset in zip(self.regions, self.region_insets):
            bands.extend(moment_polyhedron_bands(region.shrunk(inset), self.table, orders))
        self.solver_obstacles = [obstacle.inflated() for obstacle in self.obstacles]
        self.constraints = ConstraintSet(
            bands=bands,
            disjunctions=[obstacle_disjunction(o, self.table) for o in self.solver_obstacles],
        )

    @property
    def order(self):
        return self.initial.order

    @property
    def interval(self):
        return self.initial.interval

    @property
    def knot_dt(self):
        return self.horizon / self.knots

    @property
    def target_moments(self):
        """Position moments of a point mass at the target, shape (N + 1, 2)."""
        moments = np.zeros((self.order + 1, 2))
        moments[0] = math.sqrt(2.0) * self.target
        return moments

    @property
    def num_controls(self):
        return 2 * self.knots

    def bounds(self):
        return [(-self.v_max, self.v_max), (-self.omega_max, self.omega_max)] * self.knots

    def copy(self, **changes) -> "OcpSpec":
        arguments = dict(
            initial=self.initial,
            target=self.target,
            horizon=self.horizon,
            knots=self.knots,
            v_max=self.v_max,
            omega_max=self.omega_max,
            regions=self.regions,
            region_insets=self.region_insets,
            band_orders=self.band_orders,
            obstacles=self.obstacles,
            formula=self.formula,
            weights=self.weights,
            sharpness=self.sharpness,
            goal_tolerance=self.goal_tolerance,
            feasibility_tolerance=self.feasibility_tolerance,
            dt=self.dt,
            start=self.start,
        )
        arguments.update(changes)
        return OcpSpec(**arguments)

    def shrink(self, elapsed_knots: int, initial: MomentVector, start: LiftedState) -> "OcpSpec":
        """
        The remaining problem after elapsed_knots control intervals, started from `initial`.
        Temporal windows that ended before the elapsed time are settled and leave the formula.
        """
        assert 0 <= elapsed_knots < self.knots
        elapsed = elapsed_knots * self.knot_dt
        return self.copy(
            initial=initial,
            start=start,
            horizon=self.horizon - elapsed,
            knots=self.knots - elapsed_knots,
            formula=None if self.formula is None else self.formula.shifted(elapsed),
        )

    def serialize_parameters(self):
        return {
            "order": self.order,
            "interval": self.interval.serialize_parameters(),
            "target": self.target.tolist(),
            "horizon": self.horizon,
            "knots": self.knots,
            "v_max": self.v_max,
            "omega_max": self.omega_max,
            "weights": list(self.weights),
            "sharpness": self.sharpness,
            "goal_tolerance": self.goal_tolerance,
            "feasibility_tolerance": self.feasibility_tolerance,
            "constraints": self.constraints.serialize_parameters(),
            "formula": None if self.formula is None else repr(self.formula),
        }


class DecisionVector:
    """
    Controls (knots, 2) and, when obstacles are present, one (knots + 1, d) array of facet
    activations per obstacle.
    """

    def __init__(self, controls, binaries: Optional[List[np.ndarray]] = None):
        self.controls = np.array(controls, dtype=np.float64).reshape(-1, 2)
        self.binaries = [np.asarray(z, dtype=np.int64) for z in (binaries or [])]
        for z in self.binaries:
            assert z.shape[0] == len(self.controls) + 1
            assert np.all(np.sum(z, axis=1) >= 1), "Every step needs an active facet"

    @classmethod
    def from_flat(cls, x, binaries=None):
        return cls(np.asarray(x).reshape(-1, 2), binaries)

    def flat(self):
        return self.controls.ravel().copy()

    def control_sequence(self, knot_dt) -> ControlSequence:
        return ControlSequence(knot_dt, self.controls)


class SolveReport:
    """Outcome of a solve, including the rollout verification of the solved controls."""

    def __init__(
        self,
        converged: bool,
        message: str,
        objective: float,
        robustness: Optional[float],
        terminal_error: float,
        terminal_mean_error: float,
        max_constraint_violation: float,
        controls: ControlSequence,
        trajectory: MomentTrajectory,
        binaries: Optional[List[np.ndarray]] = None,
        history: Optional[List[dict]] = None,
        kkt_residual: Optional[float] = None,
        verification: Optional[dict] = None,
        wall_time: float = 0.0,
        restarts: int = 0,
        alternations: int = 0,
        region_insets: Optional[list] = None,
        tightenings: int = 0,
    ):
        self.converged = converged
        self.message = message
        self.objective = objective
        self.robustness = robustness
        self.terminal_error = terminal_error
        self.terminal_mean_error = terminal_mean_error
        self.max_constraint_violation = max_constraint_violation
        self.controls = controls
        self.trajectory = trajectory
        self.binaries = binaries or []
        self.history = history or []
        self.kkt_residual = kkt_residual
        self.verification = verification
        self.wall_time = wall_time
        self.restarts = restarts
        self.alternations = alternations
        self.region_insets = list(region_insets or [])
        self.tightenings = tightenings

    @property
    def decision(self) -> DecisionVector:
        return DecisionVector(self.controls.pairs, self.binaries)

    @property
    def verified(self) -> bool:
        return bool(self.verification is not None and self.verification["passed"])

    def to_dict(self):
        return {
            "converged": bool(self.converged),
            "message": self.message,
            "objective": float(self.objective),
            "robustness": None if self.robustness is None else float(self.robustness),
            "terminal_error": float(self.terminal_error),
            "terminal_mean_error": float(self.terminal_mean_error),
            "max_constraint_violation": float(self.max_constraint_violation),
            "kkt_residual": None if self.kkt_residual is None else float(self.kkt_residual),
            "knots": int(self.controls.num_steps),
            "knot_dt": float(self.controls.dt),
            "binaries": [z.tolist() for z in self.binaries],
            "history": self.history,
            "verification": self.verification,
            "wall_time": float(self.wall_time),
            "restarts": int(self.restarts),
            "alternations": int(self.alternations),
            "region_insets": [np.asarray(inset).tolist() for inset in self.region_insets],
            "tightenings": int(self.tightenings),
        }
