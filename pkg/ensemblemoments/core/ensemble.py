import math
import warnings
from typing import List, NamedTuple, Optional

import numpy as np

from ensemblemoments.core.exceptions import (
    DomainError,
    IntegrationDivergedError,
    InvalidStateError,
)
from ensemblemoments.core.utils import trapezoid_weights


class UnicycleState(NamedTuple):
    px: float
    py: float
    theta: float


class LiftedState(NamedTuple):
    """Bilinear coordinates (px, py, cos(theta), sin(theta)) of a unicycle."""

    px: float
    py: float
    c: float
    s: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.c, self.s], dtype=np.float64)


def lift(x: UnicycleState) -> LiftedState:
    return LiftedState(float(x.px), float(x.py), math.cos(x.theta), math.sin(x.theta))


def unlift(z: LiftedState, tolerance: float = 1e-6) -> UnicycleState:
    """
    Recover (px, py, theta) with theta = atan2(s, c). The heading is undefined when (c, s) is
    (nearly) the origin.
    """
    norm = math.hypot(z.c, z.s)
    if norm < tolerance:
        raise InvalidStateError(
            "Cannot recover a heading from degenerate (c, s) = ({}, {})".format(z.c, z.s)
        )
    return UnicycleState(float(z.px), float(z.py), math.atan2(z.s, z.c))


class ParameterInterval:
    """
    The traction parameter range [lo, hi]. Raw values beta map to mu in [-1, 1] through
    beta = tau + sigma * mu with sigma = (hi - lo) / 2 and tau = (hi + lo) / 2.
    """

    def __init__(self, lo: float = -1.0, hi: float = 1.0):
        assert lo < hi, "The interval must satisfy lo < hi"
        self.lo = float(lo)
        self.hi = float(hi)

    @property
    def sigma(self):
        return 0.5 * (self.hi - self.lo)

    @property
    def tau(self):
        return 0.5 * (self.hi + self.lo)

    @property
    def length(self):
        return self.hi - self.lo

    def contains(self, beta, tolerance: float = 1e-12) -> bool:
        beta = np.asarray(beta)
        return bool(
            np.all(beta >= self.lo - tolerance) and np.all(beta <= self.hi + tolerance)
        )

    def to_normalized(self, beta):
        if not self.contains(beta):
            raise DomainError(
                "beta {} is outside the interval [{}, {}]".format(beta, self.lo, self.hi)
            )
        return np.clip((np.asarray(beta, dtype=np.float64) - self.tau) / self.sigma, -1.0, 1.0)

    def from_normalized(self, mu):
        return self.tau + self.sigma * np.asarray(mu, dtype=np.float64)

    def serialize_parameters(self):
        return {"lo": self.lo, "hi": self.hi}

    def __eq__(self, other):
        return (
            isinstance(other, ParameterInterval)
            and self.lo == other.lo
            and self.hi == other.hi
        )

    def __repr__(self):
        return "ParameterInterval(lo={}, hi={})".format(self.lo, self.hi)


class EnsembleGrid:
    """
    A finite set of ensemble members. The weights integrate functions of beta over the
    interval, so they sum to hi - lo.
    """

    def __init__(self, interval: ParameterInterval, samples, weights):
        samples = np.asarray(samples, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        assert samples.ndim == 1 and samples.shape == weights.shape
        assert len(samples) >= 1
        assert np.all(np.diff(samples) > 0), "Samples must be strictly increasing"
        if not interval.contains(samples):
            raise DomainError("Every grid sample must lie inside {}".format(interval))
        self.interval = interval
        self.samples = samples
        self.weights = weights
        self.samples.setflags(write=False)
        self.weights.setflags(write=False)

    @classmethod
    def uniform(cls, interval: ParameterInterval, num_samples: int = 50):
        """Evenly spaced samples including both endpoints, with trapezoid weights."""
        assert num_samples >= 2
        samples = np.linspace(interval.lo, interval.hi, num_samples)
        return cls(interval, samples, trapezoid_weights(samples))

    @classmethod
    def gauss(cls, interval: ParameterInterval, num_samples: int = 64):
        """Gauss-Legendre samples, exact for polynomial integrands up to degree 2n - 1."""
        nodes, weights = np.polynomial.legendre.leggauss(num_samples)
        return cls(interval, interval.from_normalized(nodes), interval.sigma * weights)

    @classmethod
    def single(cls, interval: ParameterInterval, beta: float):
        """A one-member grid, e.g. a plant with one known traction value."""
        return cls(interval, [beta], [interval.length])

    @property
    def normalized_samples(self):
        return self.interval.to_normalized(self.samples)

    def __len__(self):
        return len(self.samples)

    def __repr__(self):
        return "EnsembleGrid(num_samples={}, interval={})".format(
            len(self.samples), self.interval
        )


class ControlSequence:
    """
    Piecewise-constant shared control (v, omega) held for dt seconds per step.

    :param dt: Duration of each step in seconds
    :param pairs: An array-like of shape (steps, 2) with columns v (m/s) and omega (rad/s)
    """

    def __init__(self, dt: float, pairs):
        pairs = np.array(pairs, dtype=np.float64).reshape(-1, 2)
        assert dt > 0
        if not np.all(np.isfinite(pairs)):
            raise ValueError("Control values must be finite")
        self.dt = float(dt)
        self.pairs = pairs
        self.pairs.setflags(write=False)

    @property
    def v(self):
        return self.pairs[:, 0]

    @property
    def omega(self):
        return self.pairs[:, 1]

    @property
    def num_steps(self):
        return len(self.pairs)

    @property
    def duration(self):
        return self.num_steps * self.dt

    def times(self):
        return self.dt * np.arange(self.num_steps + 1)

    def expand(self, dt: float) -> "ControlSequence":
        """Hold each step for an integer number of finer steps of length dt."""
        ratio = self.dt / dt
        repeats = int(round(ratio))
        if repeats < 1 or abs(ratio - repeats) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                "The control step {} is not an integer multiple of dt = {}".format(
                    self.dt, dt
                )
            )
        if repeats == 1:
            return self
        return ControlSequence(dt, np.repeat(self.pairs, repeats, axis=0))

    def __len__(self):
        return self.num_steps


class MemberTrajectory:
    """The lifted state of one ensemble member sampled at times dt * (0 .. steps)."""

    def __init__(self, beta: float, dt: float, states: np.ndarray):
        assert states.ndim == 2 and states.shape[1] == 4
        self.beta = float(beta)
        self.dt = float(dt)
        self.states = states

    @property
    def times(self):
        return self.dt * np.arange(len(self.states))

    @property
    def positions(self):
        return self.states[:, :2]

    @property
    def final(self) -> LiftedState:
        return LiftedState(*(float(x) for x in self.states[-1]))

    def headings(self):
        """Unwrapped heading angles along the trajectory."""
        return np.unwrap(np.arctan2(self.states[:, 3], self.states[:, 2]))

    def __len__(self):
        return len(self.states)


def lifted_rhs(states, beta, v, omega):
    """
    Vectorized right-hand side beta * (v * B1 + omega * B2) z over the last axis of states.
    With the sin/cos placement used throughout this package a member heading theta = 0
    drives along +y.
    """
    px_dot = beta * v * states[..., 3]
    py_dot = beta * v * states[..., 2]
    c_dot = -beta * omega * states[..., 3]
    s_dot = beta * omega * states[..., 2]
    return np.stack([px_dot, py_dot, c_dot, s_dot], axis=-1)


def member_rhs(
    z: LiftedState,
    beta_raw: float,
    v: float,
    omega: float,
    interval: Optional[ParameterInterval] = None,
) -> np.ndarray:
    """
    Time derivative of one member's lifted state under the shared control (v, omega).

    :param interval: The traction range beta_raw must lie in, by default [-1, 1]
    :raises DomainError: beta_raw is outside the interval or not finite
    :raises InvalidStateError: z is not a finite lifted state
    """
    interval = interval or ParameterInterval()
    if not interval.contains(beta_raw):
        raise DomainError(
            "beta {} is outside the interval [{}, {}]".format(beta_raw, interval.lo, interval.hi)
        )
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (4,) or not np.all(np.isfinite(z)):
        raise InvalidStateError("Expected a finite lifted state (px, py, c, s), got {}".format(z))
    return lifted_rhs(z, beta_raw, v, omega)


def rk4_step(rhs, states, dt):
    k1 = rhs(states)
    k2 = rhs(states + 0.5 * dt * k1)
    k3 = rhs(states + 0.5 * dt * k2)
    k4 = rhs(states + dt * k3)
    return states + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _initial_states(z0, num_members):
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.ndim == 1:
        assert z0.shape == (4,)
        return np.tile(z0, (num_members, 1))
    assert z0.shape == (num_members, 4)
    return z0.copy()


def _rollout(betas, z0, controls: ControlSequence, renormalize: bool):
    betas = np.asarray(betas, dtype=np.float64)
    states = _initial_states(z0, len(betas))
    history = np.empty((controls.num_steps + 1, len(betas), 4))
    history[0] = states
    for step, (v, omega) in enumerate(controls.pairs):

        def rhs(x):
            return lifted_rhs(x, betas, v, omega)

        states = rk4_step(rhs, states, controls.dt)
        if renormalize:
            states[:, 2:] /= np.linalg.norm(states[:, 2:], axis=1, keepdims=True)
        finite = np.all(np.isfinite(states), axis=1)
        if not np.all(finite):
            bad = int(np.argmin(finite))
            raise IntegrationDivergedError(
                "Member with beta={} diverged at step {}".format(betas[bad], step + 1),
                beta=float(betas[bad]),
                step=step + 1,
            )
        history[step + 1] = states
    return history


def rollout_member(
    z0, beta: float, controls: ControlSequence, renormalize: bool = False
) -> MemberTrajectory:
    """
    Integrate one member with classical RK4 at the control step dt.

    :param renormalize: If True, project (c, s) back onto the unit circle after every step
    """
    assert controls.num_steps > 0, "controls must not be empty"
    history = _rollout([beta], z0, controls, renormalize)
    return MemberTrajectory(beta, controls.dt, history[:, 0, :])


def rollout_ensemble(
    grid: EnsembleGrid,
    z0,
    controls: ControlSequence,
    renormalize: bool = False,
) -> List[MemberTrajectory]:
    """
    Drive every grid member with the same control sequence from a common initial state.

    All members advance together as one array; each row only ever touches its own values,
    so the result for a member does not depend on where it sits in the grid.
    """
    assert controls.num_steps > 0, "controls must not be empty"
    history = _rollout(grid.samples, z0, controls, renormalize)
    return [
        MemberTrajectory(beta, controls.dt, history[:, i, :])
        for i, beta in enumerate(grid.samples)
    ]


def ensemble_states(trajectories: List[MemberTrajectory]) -> np.ndarray:
    """Stack member trajectories into an array of shape (steps + 1, members, 4)."""
    return np.stack([t.states for t in trajectories], axis=1)


def mean_position(trajectories: List[MemberTrajectory], weights: Optional[np.ndarray] = None):
    states = ensemble_states(trajectories)
    if weights is None:
        return states[:, :, :2].mean(axis=1)
    weights = np.asarray(weights) / np.sum(weights)
    return np.einsum("tmi,m->ti", states[:, :, :2], weights)


def measured_state(trajectories: List[MemberTrajectory]) -> UnicycleState:
    """
    Summarize the final population state as one unicycle pose: the mean position and the
    heading of the mean (c, s).
    """
    final = ensemble_states(trajectories)[-1]
    mean = final.mean(axis=0)
    if math.hypot(mean[2], mean[3]) < 1e-6:
        warnings.warn("Population headings cancel out, using heading 0")
        return UnicycleState(float(mean[0]), float(mean[1]), 0.0)
    return unlift(LiftedState(*mean))
