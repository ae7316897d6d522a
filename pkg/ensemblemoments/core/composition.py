from typing import List, Optional, Sequence

import numpy as np

from ensemblemoments.constraints.obstacle import DisjunctiveMomentConstraint
from ensemblemoments.constraints.polyhedron import MomentBandConstraint


class ConstraintSet:
    """
    ConstraintSet groups the moment-space constraints of a problem and evaluates all of their
    residuals on a (batch of) moment trajectories in one call.

    Usage example:

    ```
    constraints = ConstraintSet(
        bands=moment_polyhedron_bands(box, table, orders=[0, 1, 2]),
        disjunctions=[obstacle_disjunction(square, table)],
    )
    h = constraints.residuals(positions, binaries=[z_square])
    feasible = np.all(h <= 1e-6)
    ```
    """

    def __init__(
        self,
        bands: Optional[Sequence[MomentBandConstraint]] = None,
        disjunctions: Optional[Sequence[DisjunctiveMomentConstraint]] = None,
    ):
        self.bands = list(bands or [])
        self.disjunctions = list(disjunctions or [])
        if self.bands:
            self._orders = np.array([band.order for band in self.bands])
            self._rows = np.array([band.row for band in self.bands])
            self._lo = np.array([band.lo for band in self.bands])
            self._hi = np.array([band.hi for band in self.bands])

    def __len__(self):
        return len(self.bands) + len(self.disjunctions)

    @property
    def has_disjunctions(self):
        return len(self.disjunctions) > 0

    @property
    def max_order(self):
        return max([band.order for band in self.bands] + [0])

    def residuals(self, positions, binaries: Optional[List] = None):
        """
        :param positions: Position moments, shape (..., steps, N + 1, 2)
        :param binaries: One (steps, d) activation array per disjunction
        :return: Residuals h with shape (..., steps, num_residuals); h <= 0 means satisfied
        """
        positions = np.asarray(positions)
        parts = []
        if self.bands:
            values = np.einsum(
                "...bi,bi->...b", positions[..., self._orders, :], self._rows
            )
            parts.append(self._lo - values)
            parts.append(values - self._hi)
        if self.disjunctions:
            assert binaries is not None and len(binaries) == len(self.disjunctions)
            for disjunction, z in zip(self.disjunctions, binaries):
                parts.append(disjunction.residuals(positions, z))
        if not parts:
            return np.zeros(positions.shape[:-2] + (0,))
        return np.concatenate(parts, axis=-1)

    def max_violation(self, positions, binaries=None) -> float:
        h = self.residuals(positions, binaries)
        if h.size == 0:
            return 0.0
        return float(max(0.0, np.max(h)))

    def serialize_parameters(self):
        return [c.serialize_parameters() for c in self.bands + self.disjunctions]
