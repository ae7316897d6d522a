import math
from typing import Callable, List, Union

import numpy as np

from ensemblemoments.core.ensemble import (
    ControlSequence,
    EnsembleGrid,
    LiftedState,
    MemberTrajectory,
    ParameterInterval,
    ensemble_states,
    lifted_rhs,
    rk4_step,
)
from ensemblemoments.core.exceptions import IntegrationDivergedError, ResolutionError
from ensemblemoments.core.legendre import evaluate_all, jacobi_matrix


class MomentVector:
    """
    Truncated moment sequence m_0 .. m_N of a lifted ensemble profile. Each block m_k is the
    4-vector of moments of (px, py, c, s) against phi_k.
    """

    def __init__(self, blocks, interval: ParameterInterval):
        blocks = np.array(blocks, dtype=np.float64)
        assert blocks.ndim == 2 and blocks.shape[1] == 4, "blocks must have shape (N + 1, 4)"
        self.blocks = blocks
        self.interval = interval

    @property
    def order(self):
        return len(self.blocks) - 1

    @property
    def position(self):
        """The position sub-sequence, i.e. the first two components of every block."""
        return self.blocks[:, :2]

    @property
    def mean_position(self):
        """Population mean position, m_0 / sqrt(2) restricted to (px, py)."""
        return self.blocks[0, :2] / math.sqrt(2.0)

    def parseval_norm(self):
        return parseval_norm(self)

    def heading_energy(self):
        """Sum of squared c and s moments. It cannot exceed 2 since c^2 + s^2 = 1 pointwise."""
        return float(np.sum(self.blocks[:, 2:] ** 2))

    def __repr__(self):
        return "MomentVector(order={}, interval={})".format(self.order, self.interval)


class MomentTrajectory:
    """
    Moment vectors sampled every dt seconds. The array has shape (steps + 1, N + 1, 4).
    The same object serves as the signal that temporal logic formulas are evaluated on.
    """

    def __init__(self, dt: float, array, interval: ParameterInterval):
        array = np.asarray(array, dtype=np.float64)
        assert array.ndim == 3 and array.shape[2] == 4
        assert dt > 0
        self.dt = float(dt)
        self.array = array
        self.interval = interval

    @property
    def order(self):
        return self.array.shape[1] - 1

    @property
    def states(self) -> List[MomentVector]:
        return [MomentVector(blocks, self.interval) for blocks in self.array]

    @property
    def times(self):
        return self.dt * np.arange(len(self.array))

    @property
    def positions(self):
        """Position moments of every sample, shape (steps + 1, N + 1, 2)."""
        return self.array[:, :, :2]

    @property
    def final(self) -> MomentVector:
        return MomentVector(self.array[-1], self.interval)

    def __getitem__(self, index) -> MomentVector:
        return MomentVector(self.array[index], self.interval)

    def __len__(self):
        return len(self.array)


TimedMomentSignal = MomentTrajectory


def _profile_values(grid: EnsembleGrid, profile):
    if callable(profile):
        values = np.array([np.asarray(profile(beta), dtype=np.float64) for beta in grid.samples])
    else:
        values = np.asarray(profile, dtype=np.float64)
    assert values.shape[-2:] == (len(grid), 4), "Expected one lifted state per grid sample"
    return values


def _transform_matrix(grid: EnsembleGrid, max_order: int):
    if len(grid) < 2 * (max_order + 1):
        raise ResolutionError(
            "A grid with {} samples is too coarse for order {}; at least {} are needed".format(
                len(grid), max_order, 2 * (max_order + 1)
            )
        )
    phi = evaluate_all(max_order, grid.normalized_samples)
    # dmu = dbeta / sigma
    return phi * (grid.weights / grid.interval.sigma)


def forward_transform(
    grid: EnsembleGrid, profile: Union[Callable, np.ndarray], max_order: int
) -> MomentVector:
    """
    Project an ensemble profile onto phi_0 .. phi_N by quadrature over the grid.

    :param grid: The sampled ensemble and its quadrature weights
    :param profile: Either a callable beta -> lifted state, or an array of shape (members, 4)
    :param max_order: The truncation order N
    """
    values = _profile_values(grid, profile)
    assert values.ndim == 2
    return MomentVector(_transform_matrix(grid, max_order) @ values, grid.interval)


def transform_trajectories(
    grid: EnsembleGrid, trajectories: List[MemberTrajectory], max_order: int
) -> MomentTrajectory:
    """Forward-transform an ensemble rollout at every time step."""
    states = ensemble_states(trajectories)
    matrix = _transform_matrix(grid, max_order)
    array = np.einsum("km,tmi->tki", matrix, states)
    return MomentTrajectory(trajectories[0].dt, array, grid.interval)


def reconstruct(m: MomentVector, beta: float) -> LiftedState:
    """Truncated Fourier-Legendre synthesis of the profile at beta."""
    phi = evaluate_all(m.order, m.interval.to_normalized(beta))
    return LiftedState(*(float(x) for x in phi @ m.blocks))


def parseval_norm(m: MomentVector) -> float:
    """Sum of squared moments, equal to the integral of |z|^2 over mu for band-limited profiles."""
    return float(np.sum(m.blocks ** 2))


def point_mass_moments(
    z: LiftedState, max_order: int, interval: ParameterInterval
) -> MomentVector:
    """Moments of the profile that puts every member at the same lifted state z."""
    blocks = np.zeros((max_order + 1, 4))
    blocks[0] = math.sqrt(2.0) * np.asarray(z, dtype=np.float64)
    return MomentVector(blocks, interval)


def generator_matrix(max_order: int, interval: ParameterInterval) -> np.ndarray:
    """
    sigma * J + tau * I, where J is the truncated Jacobi matrix. It is the action of the
    multiplication by beta on the first N + 1 moments, with m_{N+1} closed to zero.
    """
    return interval.sigma * jacobi_matrix(max_order + 1) + interval.tau * np.eye(max_order + 1)


def _moment_rhs_blocks(blocks, generator, v, omega):
    return lifted_rhs(generator @ blocks, 1.0, v, omega)


def moment_rhs(m: MomentVector, v: float, omega: float) -> MomentVector:
    """
    dm_k/dt = (v B1 + omega B2)(sigma (a_k m_{k+1} + c_k m_{k-1}) + tau m_k) with
    m_{-1} = m_{N+1} = 0.
    """
    generator = generator_matrix(m.order, m.interval)
    return MomentVector(_moment_rhs_blocks(m.blocks, generator, v, omega), m.interval)


class SpectralPropagator:
    """
    Exact propagation of the truncated moment system under piecewise-constant controls.

    The generator matrix is symmetric, so it diagonalizes as Q diag(lambda) Q^T. The rows of
    Q^T m then evolve as independent unicycles whose traction values are the eigenvalues
    (the Gauss nodes of order N + 1 mapped onto the interval), and a constant control over a
    step moves each of them along a closed-form arc.
    """

    def __init__(self, max_order: int, interval: ParameterInterval):
        self.max_order = max_order
        self.interval = interval
        self.node_betas, self.eigenvectors = np.linalg.eigh(
            generator_matrix(max_order, interval)
        )

    def to_nodes(self, blocks):
        return np.einsum("kj,...ki->...ji", self.eigenvectors, blocks)

    def from_nodes(self, nodes):
        return np.einsum("kj,...ji->...ki", self.eigenvectors, nodes)

    def propagate_nodes(self, nodes0, pairs, dt):
        """
        :param nodes0: Node states of shape (N + 1, 4)
        :param pairs: Controls of shape (..., steps, 2)
        :param dt: Duration of each control step
        :return: Node states of shape (..., steps + 1, N + 1, 4)
        """
        pairs = np.asarray(pairs, dtype=np.float64)
        batch_shape = pairs.shape[:-2]
        num_steps = pairs.shape[-2]
        out = np.empty(batch_shape + (num_steps + 1,) + nodes0.shape)
        current = np.broadcast_to(nodes0, batch_shape + nodes0.shape).copy()
        out[..., 0, :, :] = current
        lam = self.node_betas
        for step in range(num_steps):
            v = pairs[..., step, 0][..., np.newaxis]
            omega = pairs[..., step, 1][..., np.newaxis]
            phi = lam * omega * dt
            s1 = np.sinc(phi / np.pi)
            c1 = np.sin(0.5 * phi) * np.sinc(phi / (2.0 * np.pi))
            cos_phi = np.cos(phi)
            sin_phi = np.sin(phi)
            travel = lam * v * dt
            px, py, c, s = (current[..., i] for i in range(4))
            current = np.stack(
                [
                    px + travel * (c1 * c + s1 * s),
                    py + travel * (s1 * c - c1 * s),
                    c * cos_phi - s * sin_phi,
                    s * cos_phi + c * sin_phi,
                ],
                axis=-1,
            )
            out[..., step + 1, :, :] = current
        return out

    def propagate(self, m0: MomentVector, pairs, dt):
        """Moment arrays of shape (..., steps + 1, N + 1, 4) for a batch of control sequences."""
        return self.from_nodes(self.propagate_nodes(self.to_nodes(m0.blocks), pairs, dt))


def integrate_moments(
    m0: MomentVector, controls: ControlSequence, method: str = "rk4"
) -> MomentTrajectory:
    """
    Integrate the truncated moment dynamics with one sample per control step.

    :param method: "rk4" for classical Runge-Kutta at the control step, or "exact" for the
        closed-form propagation of SpectralPropagator
    """
    assert controls.num_steps > 0, "controls must not be empty"
    if method == "exact":
        array = SpectralPropagator(m0.order, m0.interval).propagate(
            m0, controls.pairs, controls.dt
        )
        if not np.all(np.isfinite(array)):
            raise IntegrationDivergedError("The moment system diverged")
        return MomentTrajectory(controls.dt, array, m0.interval)
    if method != "rk4":
        raise ValueError('method must be "rk4" or "exact", got "{}"'.format(method))

    generator = generator_matrix(m0.order, m0.interval)
    array = np.empty((controls.num_steps + 1,) + m0.blocks.shape)
    array[0] = m0.blocks
    blocks = m0.blocks
    for step, (v, omega) in enumerate(controls.pairs):
        blocks = rk4_step(
            lambda x: _moment_rhs_blocks(x, generator, v, omega), blocks, controls.dt
        )
        if not np.all(np.isfinite(blocks)):
            raise IntegrationDivergedError(
                "The moment system diverged at step {}".format(step + 1), step=step + 1
            )
        array[step + 1] = blocks
    return MomentTrajectory(controls.dt, array, m0.interval)
