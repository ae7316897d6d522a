from .constraints.obstacle import (
    DisjunctiveMomentConstraint,
    ObstacleSpec,
    obstacle_disjunction,
    validate_big_m,
)
from .constraints.polyhedron import (
    MomentBandConstraint,
    Polyhedron,
    member_violation,
    moment_polyhedron_bands,
)
from .core.composition import ConstraintSet
from .core.ensemble import (
    ControlSequence,
    EnsembleGrid,
    LiftedState,
    MemberTrajectory,
    ParameterInterval,
    UnicycleState,
    lift,
    measured_state,
    rollout_ensemble,
    rollout_member,
    unlift,
)
from .core.exceptions import (
    ConstructionError,
    DomainError,
    EvaluationError,
    IntegrationDivergedError,
    InvalidStateError,
    ResolutionError,
    ScenarioValidationError,
    SolverNotConvergedError,
)
from .core.legendre import OrthonormalBasis, polynomial_roots, signed_part_integrals
from .core.moments import (
    MomentTrajectory,
    MomentVector,
    SpectralPropagator,
    forward_transform,
    integrate_moments,
    point_mass_moments,
    reconstruct,
    transform_trajectories,
)
from .optimization.ocp import DecisionVector, OcpSpec, SolveReport
from .optimization.receding_horizon import broadcast_open_loop, receding_horizon_run
from .optimization.solver import SolverOptions, objective, shoot, solve_exploration
from .optimization.visit_avoid import (
    assign_binaries,
    solve_exhaustive,
    solve_spec,
    solve_visit_avoid,
)
from .stl.formula import (
    Always,
    And,
    Eventually,
    Not,
    Or,
    Predicate,
    RobustnessConfig,
    robustness_exact,
    robustness_smooth,
    waypoint_formula,
)

__version__ = "0.1.0"
