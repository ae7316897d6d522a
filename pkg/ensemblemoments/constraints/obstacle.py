import warnings

import numpy as np
from scipy.optimize import linprog

from ensemblemoments.core.constraint_interface import (
    BaseConstraint,
    BaseMomentConstraint,
    to_array,
)
from ensemblemoments.core.exceptions import ConstructionError
from ensemblemoments.core.legendre import SignedPartTable
from ensemblemoments.core.utils import halfspace_vertices

DEFAULT_BIG_M = 20.0


class ObstacleSpec(BaseConstraint):
    """
    A polyhedral obstacle O = {x : A x >= b}. Being outside means that at least one facet
    inequality a_i . x <= b_i holds.

    Usage example, the square 2 <= x1 <= 6, 1 <= x2 <= 3:

    ```
    obstacle = ObstacleSpec(
        A=[[1, 0], [0, -1], [-1, 0], [0, 1]],
        b=[2, -3, -6, 1],
        big_m=20,
    )
    ```
    """

    def __init__(self, A, b, big_m: float = DEFAULT_BIG_M, clearance: float = 0.0, name=None):
        """
        :param A: d x 2 matrix of facet normals pointing into the obstacle
        :param b: d facet offsets
        :param big_m: The relaxation constant of the disjunction
        :param clearance: Margin in meters by which the optimizer's copy of the obstacle is
            inflated. Verification always uses the obstacle itself.
        :param name: Optional name
        """
        super().__init__(name)
        self.A = to_array(A)
        assert self.A.ndim == 2 and self.A.shape[1] == 2 and self.A.shape[0] >= 1
        self.b = to_array(b, (self.A.shape[0],))
        assert big_m > 0
        assert clearance >= 0
        self.big_m = float(big_m)
        self.clearance = float(clearance)
        self.parameters = {
            "name": name,
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "big_m": self.big_m,
            "clearance": self.clearance,
        }

    @classmethod
    def box(cls, x_min, x_max, y_min, y_max, **kwargs):
        return cls(
            A=[[1, 0], [0, -1], [-1, 0], [0, 1]],
            b=[x_min, -y_max, -x_max, y_min],
            **kwargs
        )

    @property
    def num_facets(self):
        return self.A.shape[0]

    @property
    def row_norms(self):
        return np.linalg.norm(self.A, axis=1)

    def inflated(self, margin=None) -> "ObstacleSpec":
        """The obstacle grown by margin meters (by default its clearance), with zero clearance."""
        margin = self.clearance if margin is None else margin
        return ObstacleSpec(
            self.A, self.b - margin * self.row_norms, big_m=self.big_m, name=self.name
        )

    def _extreme_point(self, direction):
        return linprog(
            c=direction,
            A_ub=-self.A,
            b_ub=-self.b,
            bounds=[(None, None), (None, None)],
            method="highs",
        )

    def validate(self):
        """Raise ConstructionError unless the obstacle is nonempty and bounded."""
        feasibility = self._extreme_point([0, 0])
        if feasibility.status != 0:
            raise ConstructionError("Obstacle {!r} is empty".format(self.name))
        for direction in ([1, 0], [-1, 0], [0, 1], [0, -1]):
            result = self._extreme_point(direction)
            # the obstacle is nonempty here, so status 4 also means unbounded
            if result.status in (3, 4):
                raise ConstructionError("Obstacle {!r} is unbounded".format(self.name))
            if result.status != 0:
                raise ConstructionError(
                    "Could not check obstacle {!r}: {}".format(self.name, result.message)
                )
        if len(self.vertices()) < 3:
            raise ConstructionError("Obstacle {!r} has an empty interior".format(self.name))

    def slacks(self, points):
        """b_i - a_i . x for every facet, shape (..., d). Positive means facet i separates x."""
        return self.b - np.asarray(points, dtype=np.float64) @ self.A.T

    def violation(self, points, normalized=True):
        """
        Penetration depth: the distance to the nearest facet for points strictly inside all
        facets, 0 otherwise. Shape (...,).
        """
        depths = -self.slacks(points)
        if normalized:
            depths = depths / self.row_norms
        inside = np.all(depths > 0, axis=-1)
        return np.where(inside, np.min(depths, axis=-1), 0.0)

    penetration_depth = violation

    def contains(self, points):
        return np.all(self.slacks(points) < 0, axis=-1)

    def vertices(self):
        return halfspace_vertices(-self.A, -self.b)


def validate_big_m(obstacle: ObstacleSpec, workspace) -> bool:
    """
    Check that |a_i . x| + |b_i| < M at every corner of the workspace box
    (x_min, x_max, y_min, y_max), which makes every relaxed facet slack. Warns and returns
    False otherwise.
    """
    x_min, x_max, y_min, y_max = workspace
    corners = np.array(
        [[x_min, y_min], [x_min, y_max], [x_max, y_min], [x_max, y_max]], dtype=np.float64
    )
    worst = np.max(np.abs(corners @ obstacle.A.T) + np.abs(obstacle.b))
    if worst >= obstacle.big_m:
        warnings.warn(
            "big_m={} is too small for obstacle {!r} over the workspace {}; it should exceed"
            " {:.4g}".format(obstacle.big_m, obstacle.name, tuple(workspace), worst)
        )
        return False
    return True


class DisjunctiveMomentConstraint(BaseMomentConstraint):
    """
    Big-M encoding of "stay outside the obstacle" on the order-0 position moments:

    lo <= a_i . m~_0 + binary_coefficient * z_i <= hi_i  for every facet i,
    sum_i z_i >= 1 at every step.

    With z_i = 1 the upper band reduces to a_i . m~_0 <= sqrt(2) b_i; with z_i = 0 it is
    slack by M.
    """

    def __init__(self, rows, lo, hi, binary_coefficient, big_m, name=None):
        self.rows = to_array(rows)
        self.lo = to_array(lo, (self.rows.shape[0],))
        self.hi = to_array(hi, (self.rows.shape[0],))
        assert np.all(self.lo <= self.hi)
        self.binary_coefficient = float(binary_coefficient)
        self.big_m = float(big_m)
        self.name = name

    @property
    def num_facets(self):
        return self.rows.shape[0]

    def value(self, positions, binaries):
        binaries = np.asarray(binaries, dtype=np.float64)
        return (
            np.asarray(positions)[..., 0, :] @ self.rows.T
            + self.binary_coefficient * binaries
        )

    def residuals(self, positions, binaries=None):
        assert binaries is not None, "A disjunctive constraint needs facet activations"
        value = self.value(positions, binaries)
        return np.concatenate([self.lo - value, value - self.hi], axis=-1)

    def num_residuals(self):
        return 2 * self.num_facets

    @staticmethod
    def selection_satisfied(binaries):
        return bool(np.all(np.sum(np.asarray(binaries), axis=-1) >= 1))

    def serialize_parameters(self):
        return {
            "kind": "disjunction",
            "name": self.name,
            "rows": self.rows.tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "binary_coefficient": self.binary_coefficient,
            "big_m": self.big_m,
        }


def obstacle_disjunction(obs: ObstacleSpec, table: SignedPartTable) -> DisjunctiveMomentConstraint:
    """Order-0 big-M bands of an obstacle. The obstacle is validated first."""
    obs.validate()
    m = obs.big_m
    m_plus = table.m_plus[0]
    m_minus = table.m_minus[0]
    lo = np.full(obs.num_facets, -m * m_plus) - (obs.b + m) * m_minus
    hi = (obs.b + m) * m_plus + m * m_minus
    return DisjunctiveMomentConstraint(
        rows=obs.A,
        lo=lo,
        hi=hi,
        binary_coefficient=m * (m_plus - m_minus),
        big_m=m,
        name=obs.name,
    )
