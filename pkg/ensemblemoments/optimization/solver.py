import math
import time
import warnings
from typing import List, Optional

import numpy as np
from scipy.optimize import OptimizeResult, minimize
from scipy.sparse.csgraph import csgraph_from_dense, dijkstra

from ensemblemoments.core.ensemble import ControlSequence, EnsembleGrid
from ensemblemoments.core.moments import (
    MomentTrajectory,
    SpectralPropagator,
    integrate_moments,
)
from ensemblemoments.optimization.ocp import DecisionVector, OcpSpec, SolveReport
from ensemblemoments.optimization.verification import (
    DEFAULT_VERIFY_TOLERANCE,
    verify_rollout,
)
from ensemblemoments.stl.formula import robustness_exact

INNER_SOLVERS = ("lbfgsb", "gradient_descent")
DEFAULT_KKT_TOLERANCE = 1e-4


class SolverOptions:
    """
    Settings of the augmented Lagrangian solver.

    :param inner: "lbfgsb" (scipy L-BFGS-B with bounds) or "gradient_descent" (projected
        gradient descent with Armijo backtracking)
    :param max_outer: Cap on outer (multiplier) iterations
    :param max_inner: Cap on inner iterations per outer iteration
    :param penalty0: Initial penalty rho
    :param penalty_growth: Factor applied to rho when the violation does not shrink enough
    :param max_penalty: Cap on rho
    :param fd_step: Relative finite-difference step
    :param restarts: Number of seeded random restarts after a non-converged solve
    :param seed: Seed of the restart generator
    :param max_alternations: Cap on binary re-assignment rounds in visit-avoid problems
    :param grid_size: Members of the uniform verification grid
    :param verify_tolerance: Largest member violation (meters) that passes verification
    :param kkt_tolerance: Largest projected gradient of the augmented merit at the final
        iterate that counts as stationary
    :param max_tightenings: Re-solves with shrunk exploration regions after a converged
        solve whose rollout still leaves a region
    :param tightening_margin: Fraction of verify_tolerance a tightened region aims to stay
        below the tolerance by
    """

    def __init__(
        self,
        inner: str = "lbfgsb",
        max_outer: int = 20,
        max_inner: int = 200,
        penalty0: float = 10.0,
        penalty_growth: float = 10.0,
        max_penalty: float = 1e8,
        fd_step: float = 1e-6,
        restarts: int = 2,
        seed: int = 0,
        max_alternations: int = 6,
        grid_size: int = 50,
        verify_tolerance: float = DEFAULT_VERIFY_TOLERANCE,
        kkt_tolerance: float = DEFAULT_KKT_TOLERANCE,
        max_tightenings: int = 4,
        tightening_margin: float = 0.5,
    ):
        assert inner in INNER_SOLVERS, "inner must be one of {}".format(INNER_SOLVERS)
        assert max_outer >= 1 and max_inner >= 1 and max_alternations >= 1
        assert penalty0 > 0 and penalty_growth > 1
        assert fd_step > 0
        assert restarts >= 0
        assert kkt_tolerance > 0
        assert max_tightenings >= 0 and 0 <= tightening_margin < 1
        self.inner = inner
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.penalty0 = penalty0
        self.penalty_growth = penalty_growth
        self.max_penalty = max_penalty
        self.fd_step = fd_step
        self.restarts = restarts
        self.seed = seed
        self.max_alternations = max_alternations
        self.grid_size = grid_size
        self.verify_tolerance = verify_tolerance
        self.kkt_tolerance = kkt_tolerance
        self.max_tightenings = max_tightenings
        self.tightening_margin = tightening_margin

    def serialize_parameters(self):
        return dict(self.__dict__)


class ShootingProblem:
    """
    Batched single shooting of an OcpSpec with fixed facet activations. Every evaluation
    takes a batch of flat control vectors and propagates them all at once with the exact
    spectral propagator.
    """

    def __init__(self, spec: OcpSpec, binaries: Optional[List[np.ndarray]] = None):
        self.spec = spec
        self.binaries = binaries or []
        if spec.constraints.has_disjunctions:
            assert len(self.binaries) == len(spec.constraints.disjunctions)
        self.propagator = SpectralPropagator(spec.order, spec.interval)
        self.nodes0 = self.propagator.to_nodes(spec.initial.blocks)
        self.target_moments = spec.target_moments

    def moments(self, x):
        """Moment arrays of shape (..., knots + 1, N + 1, 4) for flat controls x."""
        x = np.asarray(x, dtype=np.float64)
        pairs = x.reshape(x.shape[:-1] + (self.spec.knots, 2))
        nodes = self.propagator.propagate_nodes(self.nodes0, pairs, self.spec.knot_dt)
        return self.propagator.from_nodes(nodes)

    def evaluate(self, x, sharpness="spec"):
        """
        :return: (objective, residuals) with shapes (...,) and (..., num_residuals). The
            residuals cover knots 1 .. K; h <= 0 means satisfied.
        """
        spec = self.spec
        x = np.asarray(x, dtype=np.float64)
        positions = self.moments(x)[..., :2]
        pairs = x.reshape(x.shape[:-1] + (spec.knots, 2))
        w_rho, w_terminal, w_control = spec.weights
        terminal = np.sum((positions[..., -1, :, :] - self.target_moments) ** 2, axis=(-2, -1))
        energy = spec.knot_dt * np.sum(pairs ** 2, axis=(-2, -1))
        value = -w_terminal * terminal - w_control * energy
        if spec.formula is not None and w_rho > 0:
            k = spec.sharpness if sharpness == "spec" else sharpness
            value = value + w_rho * spec.formula.trace(positions, spec.knot_dt, k)[..., 0]
        binaries = [z[1:] for z in self.binaries]
        residuals = spec.constraints.residuals(positions[..., 1:, :, :], binaries)
        flat_size = residuals.shape[-2] * residuals.shape[-1]
        return value, residuals.reshape(residuals.shape[:-2] + (flat_size,))


def shoot(spec: OcpSpec, d: DecisionVector, method: str = "exact") -> MomentTrajectory:
    """Integrate the moment system from spec.initial under the decision's controls."""
    assert d.controls.shape == (spec.knots, 2), "The decision does not match the problem"
    return integrate_moments(spec.initial, d.control_sequence(spec.knot_dt), method=method)


def objective(spec: OcpSpec, d: DecisionVector) -> float:
    """w_rho * rho~ - w_T * |m~(T) - m~_F|^2 - w_u * dt * sum(v^2 + omega^2)."""
    value, _ = ShootingProblem(spec, d.binaries or None).evaluate(d.flat())
    return float(value)


def augmented_merit(value, residuals, multipliers, penalty):
    """
    -objective plus the augmented Lagrangian term for h <= 0:
    sum((max(0, lambda + rho h)^2 - lambda^2) / (2 rho)).
    """
    shifted = np.maximum(0.0, multipliers + penalty * residuals)
    return -value + np.sum(shifted ** 2 - multipliers ** 2, axis=-1) / (2.0 * penalty)


def finite_difference_gradient(fun_batch, x, relative_step=1e-6):
    """
    Central finite differences with all 2n perturbed points evaluated in one batch.

    :param fun_batch: Maps an array (batch, n) to values (batch,)
    :return: (f(x), gradient)
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    steps = relative_step * np.maximum(1.0, np.abs(x))
    perturbation = np.diag(steps)
    batch = np.vstack([x[np.newaxis], x + perturbation, x - perturbation])
    values = fun_batch(batch)
    gradient = (values[1 : n + 1] - values[n + 1 :]) / (2.0 * steps)
    return float(values[0]), gradient


def _projected_gradient_descent(fun, x0, bounds, max_iterations):
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])
    x = np.clip(x0, lower, upper)
    f, g = fun(x)
    step = 1.0
    success = False
    message = "Iteration cap reached"
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        while True:
            candidate = np.clip(x - step * g, lower, upper)
            f_candidate, g_candidate = fun(candidate)
            decrease = g @ (x - candidate)
            if f_candidate <= f - 1e-4 * decrease or step < 1e-12:
                break
            step *= 0.5
        if np.max(np.abs(candidate - x)) < 1e-10:
            success = True
            message = "Projected step below tolerance"
            break
        x, f, g = candidate, f_candidate, g_candidate
        step = min(1.0, step * 2.0)
    return OptimizeResult(
        x=x, fun=f, jac=g, success=success, message=message, nit=iteration
    )


def _projected_gradient_norm(x, g, bounds):
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])
    return float(np.max(np.abs(x - np.clip(x - g, lower, upper)))) if len(x) else 0.0


def augmented_lagrangian(problem: ShootingProblem, x0, options: SolverOptions):
    """
    Maximize the objective subject to residuals <= 0 and the control bounds.

    Each outer iteration minimizes the augmented merit for fixed multipliers, then updates
    lambda <- max(0, lambda + rho h). The penalty grows when the violation did not fall
    below a quarter of its previous value. An outer iterate is only accepted when its
    violation does not exceed max(previous violation, feasibility tolerance); otherwise the
    penalty grows and the iteration is repeated from the last accepted point.

    The loop stops once the accepted iterate is feasible, its objective has settled and its
    KKT residual (the projected gradient of the augmented merit, which is the gradient of
    the Lagrangian at the updated multipliers) is at most options.kkt_tolerance.
    """
    spec = problem.spec
    bounds = spec.bounds()
    tolerance = spec.feasibility_tolerance
    x = np.clip(np.asarray(x0, dtype=np.float64), [b[0] for b in bounds], [b[1] for b in bounds])
    value, residuals = problem.evaluate(x)
    value = float(value)
    multipliers = np.zeros(residuals.shape[-1])
    penalty = options.penalty0
    violation = float(max(0.0, np.max(residuals))) if residuals.size else 0.0
    history = []
    inner_result = None
    kkt = None

    for outer in range(options.max_outer):

        def merit(batch, multipliers=multipliers, penalty=penalty):
            values, h = problem.evaluate(batch)
            return augmented_merit(values, h, multipliers, penalty)

        def fun(z):
            return finite_difference_gradient(merit, z, options.fd_step)

        if options.inner == "lbfgsb":
            inner_result = minimize(
                fun,
                x,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": options.max_inner, "ftol": 1e-12, "gtol": 1e-8},
            )
        else:
            inner_result = _projected_gradient_descent(fun, x, bounds, options.max_inner)

        new_value, new_residuals = problem.evaluate(inner_result.x)
        new_value = float(new_value)
        new_violation = (
            float(max(0.0, np.max(new_residuals))) if new_residuals.size else 0.0
        )
        accepted = new_violation <= max(violation, tolerance) + 1e-12
        new_kkt = _projected_gradient_norm(inner_result.x, inner_result.jac, bounds)
        history.append(
            {
                "outer": outer,
                "objective": new_value,
                "max_violation": new_violation,
                "penalty": penalty,
                "inner_iterations": int(getattr(inner_result, "nit", 0)),
                "inner_success": bool(inner_result.success),
                "accepted": bool(accepted),
                "kkt_residual": new_kkt,
            }
        )
        if not accepted:
            penalty = min(penalty * options.penalty_growth, options.max_penalty)
            continue

        change = abs(new_value - value)
        multipliers = np.maximum(0.0, multipliers + penalty * new_residuals)
        if new_violation > tolerance and new_violation > 0.25 * violation:
            penalty = min(penalty * options.penalty_growth, options.max_penalty)
        x, value, violation, kkt = inner_result.x, new_value, new_violation, new_kkt
        settled = residuals.size == 0 or change <= 1e-6 * max(1.0, abs(value))
        if violation <= tolerance and settled and kkt <= options.kkt_tolerance:
            break

    return x, {
        "objective": value,
        "max_violation": violation,
        "history": history,
        "kkt_residual": kkt,
        "inner_message": str(getattr(inner_result, "message", "")),
    }


def _wrap_angle(angle):
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _segment_is_clear(p, q, obstacles, num_points=60):
    points = p + np.linspace(0.0, 1.0, num_points)[:, np.newaxis] * (q - p)
    return all(np.all(o.violation(points) <= 0.0) for o in obstacles)


def plan_route(start, goal, obstacles, corner_margin=0.25):
    """
    Shortest polyline from start to goal through a visibility graph on the (slightly pushed
    out) obstacle corners. Returns [start, goal] when nothing is in the way.
    """
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    if _segment_is_clear(start, goal, obstacles):
        return [start, goal]
    nodes = [start, goal]
    for obstacle in obstacles:
        vertices = obstacle.vertices()
        centroid = vertices.mean(axis=0)
        for vertex in vertices:
            direction = vertex - centroid
            candidate = vertex + corner_margin * direction / np.linalg.norm(direction)
            if all(o.violation(candidate) <= 0.0 for o in obstacles):
                nodes.append(candidate)
    n = len(nodes)
    weights = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            if _segment_is_clear(nodes[i], nodes[j], obstacles):
                weights[i, j] = weights[j, i] = np.linalg.norm(nodes[j] - nodes[i])
    distances, predecessors = dijkstra(
        csgraph_from_dense(weights, null_value=np.inf), indices=0, return_predecessors=True
    )
    if not np.isfinite(distances[1]):
        warnings.warn("No obstacle-free route found; falling back to a straight line")
        return [start, goal]
    path = [1]
    while path[-1] != 0:
        path.append(int(predecessors[path[-1]]))
    return [nodes[i] for i in reversed(path)]


def route_controls(route, heading0, knots, knot_dt, v_max, omega_max):
    """
    Turn in place towards each route segment at 0.8 * omega_max, then drive it at constant
    speed. Driving knots are shared between segments in proportion to their lengths.
    """
    segments = []
    heading = heading0
    for p, q in zip(route[:-1], route[1:]):
        delta = q - p
        length = float(np.linalg.norm(delta))
        if length < 1e-9:
            continue
        # heading 0 drives along +y
        bearing = math.atan2(delta[0], delta[1])
        turn = _wrap_angle(bearing - heading)
        heading = bearing
        turn_knots = int(math.ceil(abs(turn) / (0.8 * omega_max * knot_dt) - 1e-9))
        segments.append((length, turn, turn_knots))
    pairs = np.zeros((knots, 2))
    if not segments:
        return pairs
    drive_knots = knots - sum(s[2] for s in segments)
    if drive_knots < len(segments):
        if len(route) > 2:
            warnings.warn("Too few knots to follow the route, using a straight line instead")
            return route_controls(
                [route[0], route[-1]], heading0, knots, knot_dt, v_max, omega_max
            )
        warnings.warn("Too few knots to turn and drive, the initial guess stands still")
        return pairs
    lengths = np.array([s[0] for s in segments])
    shares = lengths / lengths.sum() * drive_knots
    allocation = np.maximum(1, np.floor(shares).astype(int))
    while allocation.sum() > drive_knots:
        allocation[np.argmax(allocation)] -= 1
    remainders = shares - allocation
    for i in np.argsort(-remainders)[: drive_knots - allocation.sum()]:
        allocation[i] += 1
    index = 0
    for (length, turn, turn_knots), drive in zip(segments, allocation):
        if turn_knots > 0:
            pairs[index : index + turn_knots, 1] = turn / (turn_knots * knot_dt)
            index += turn_knots
        speed = length / (drive * knot_dt)
        if speed > v_max:
            warnings.warn(
                "The initial guess needs {:.3g} m/s, clipping to v_max={}".format(speed, v_max)
            )
            speed = v_max
        pairs[index : index + drive, 0] = speed
        index += drive
    return pairs


def initial_guess(spec: OcpSpec) -> DecisionVector:
    """
    Straight-line heuristic: rotate in place to the goal bearing, then drive at
    distance / remaining time with omega = 0. With obstacles the line becomes the shortest
    route around the (inflated) obstacles.
    """
    mean = spec.initial.blocks[0] / math.sqrt(2.0)
    heading0 = math.atan2(mean[3], mean[2]) if math.hypot(mean[2], mean[3]) > 1e-9 else 0.0
    route = plan_route(mean[:2], spec.target, spec.solver_obstacles)
    pairs = route_controls(
        route, heading0, spec.knots, spec.knot_dt, spec.v_max, spec.omega_max
    )
    return DecisionVector(pairs)


def terminal_mean_error(trajectory: MomentTrajectory, target) -> float:
    """Largest per-axis distance between the terminal mean position and the target."""
    return float(np.max(np.abs(trajectory.final.mean_position - np.asarray(target))))


def build_report(
    spec: OcpSpec,
    x,
    info: dict,
    binaries=None,
    grid: Optional[EnsembleGrid] = None,
    options: Optional[SolverOptions] = None,
    started: Optional[float] = None,
    restarts: int = 0,
    alternations: int = 0,
) -> SolveReport:
    """Evaluate a solution exactly, decide convergence and run rollout verification."""
    options = options or SolverOptions()
    decision = DecisionVector.from_flat(x, binaries)
    controls = decision.control_sequence(spec.knot_dt)
    trajectory = shoot(spec, decision)
    problem = ShootingProblem(spec, binaries)
    value, residuals = problem.evaluate(decision.flat())
    violation = float(max(0.0, np.max(residuals))) if residuals.size else 0.0
    terminal = float(np.sum((trajectory.final.position - spec.target_moments) ** 2))
    mean_error = terminal_mean_error(trajectory, spec.target)

    robustness = None
    feasible = violation <= spec.feasibility_tolerance
    if spec.formula is not None:
        robustness = robustness_exact(spec.formula, trajectory, 0)
        task_met = robustness > 0
        task_message = "robustness {:.4g}".format(robustness)
    else:
        task_met = mean_error <= spec.goal_tolerance
        task_message = "terminal mean error {:.4g}".format(mean_error)
    kkt = info.get("kkt_residual")
    stationary = kkt is not None and kkt <= options.kkt_tolerance
    converged = bool(feasible and stationary and task_met)
    if converged:
        message = "Converged: max violation {:.3g}, {}".format(violation, task_message)
    elif not feasible:
        message = "Not converged: max violation {:.3g} above {:.3g}".format(
            violation, spec.feasibility_tolerance
        )
    elif not stationary:
        message = "Not converged: KKT residual {} above {:.3g}".format(
            "unknown" if kkt is None else "{:.3g}".format(kkt), options.kkt_tolerance
        )
    else:
        message = "Not converged: task not met ({})".format(task_message)

    if grid is None:
        grid = EnsembleGrid.uniform(spec.interval, options.grid_size)
    verification = verify_rollout(spec, controls, grid, options.verify_tolerance)
    return SolveReport(
        converged=converged,
        message=message,
        objective=float(value),
        robustness=robustness,
        terminal_error=terminal,
        terminal_mean_error=mean_error,
        max_constraint_violation=violation,
        controls=controls,
        trajectory=trajectory,
        binaries=binaries,
        history=info.get("history", []),
        kkt_residual=kkt,
        verification=verification,
        wall_time=0.0 if started is None else time.perf_counter() - started,
        restarts=restarts,
        alternations=alternations,
        region_insets=spec.region_insets,
    )


def ranking(report: SolveReport):
    """Sort key of solve attempts, larger is better. Lower objectives win the last tie."""
    return (
        report.converged and report.verified,
        report.converged,
        -report.max_constraint_violation,
        -report.objective,
    )


def _solve_with_restarts(spec, binaries, x0, options, grid, started):
    problem = ShootingProblem(spec, binaries)
    rng = np.random.default_rng(options.seed)
    scale = np.array([spec.v_max, spec.omega_max] * spec.knots)
    best = None
    start = np.asarray(x0, dtype=np.float64)
    for attempt in range(options.restarts + 1):
        x, info = augmented_lagrangian(problem, start, options)
        report = build_report(
            spec, x, info, binaries, grid, options, started, restarts=attempt
        )
        if best is None or ranking(report) > ranking(best):
            best = report
        if best.converged:
            break
        start = np.asarray(x0) + 0.1 * scale * rng.standard_normal(len(scale))
    return best


def tightened_insets(spec: OcpSpec, verification: dict, options: SolverOptions):
    """
    Region insets for a re-solve after a rollout left some region by more than
    verify_tolerance. Every bound that was crossed by more than the tolerance moves inward by
    its excess plus tightening_margin times the tolerance; the other bounds keep their inset.
    The new insets have shape (r, 2) per region. None when no bound is to blame.
    """
    tolerance = options.verify_tolerance
    insets = list(spec.region_insets)
    changed = False
    sides = verification.get("region_side_violations", [])
    for index, crossed in enumerate(sides):
        crossed = np.asarray(crossed, dtype=np.float64)
        excess = np.where(
            crossed > tolerance, crossed - (1.0 - options.tightening_margin) * tolerance, 0.0
        )
        if np.any(excess > 0.0):
            insets[index] = np.broadcast_to(insets[index], crossed.shape) + excess
            changed = True
    return insets if changed else None


def solve_continuous(
    spec: OcpSpec,
    binaries=None,
    x0=None,
    options: Optional[SolverOptions] = None,
    grid: Optional[EnsembleGrid] = None,
) -> SolveReport:
    """
    Solve with fixed facet activations, retrying from seeded perturbations of the starting
    point while the result is not converged.

    A converged solve whose member rollout still leaves an exploration region is solved
    again, warm-started, with the crossed bounds moved inward by the measured excess (see
    tightened_insets), at most options.max_tightenings times. The best attempt is returned;
    its region_insets hold the insets the optimizer used.
    """
    options = options or SolverOptions()
    started = time.perf_counter()
    if x0 is None:
        x0 = initial_guess(spec).flat()
    best = _solve_with_restarts(spec, binaries, x0, options, grid, started)
    current = best
    for tightening in range(1, options.max_tightenings + 1):
        if not current.converged or current.verified:
            break
        insets = tightened_insets(spec, current.verification, options)
        if insets is None:
            break
        warnings.warn(
            "The rollout leaves a region by {:.3g}, solving again with tightened bounds"
            " ({} of {})".format(
                current.verification["max_region_violation"], tightening, options.max_tightenings
            )
        )
        spec = spec.copy(region_insets=insets)
        current = _solve_with_restarts(
            spec, binaries, current.controls.pairs.ravel(), options, grid, started
        )
        current.tightenings = tightening
        if ranking(current) > ranking(best):
            best = current
    best.wall_time = time.perf_counter() - started
    return best


def solve_exploration(
    spec: OcpSpec,
    options: Optional[SolverOptions] = None,
    x0=None,
    grid: Optional[EnsembleGrid] = None,
) -> SolveReport:
    """
    Drive the population mean to the target while the moment bands of the exploration
    regions hold at every knot. Non-convergence is reported, not raised.
    """
    assert spec.formula is None, "Use solve_visit_avoid for problems with a formula"
    assert not spec.obstacles, "Use solve_visit_avoid for problems with obstacles"
    return solve_continuous(spec, None, x0, options, grid)
