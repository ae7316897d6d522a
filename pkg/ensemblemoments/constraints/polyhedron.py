from typing import Iterable, List

import numpy as np

from ensemblemoments.core.constraint_interface import (
    BaseConstraint,
    BaseMomentConstraint,
    to_array,
)
from ensemblemoments.core.ensemble import MemberTrajectory
from ensemblemoments.core.legendre import SignedPartTable
from ensemblemoments.core.utils import halfspace_vertices


class Polyhedron(BaseConstraint):
    """
    A 2D position region {x : lower <= A x <= upper}, i.e. an intersection of slabs. Used
    both for exploration regions that members must stay in and for waypoints.
    """

    def __init__(self, A, lower, upper, name=None):
        """
        :param A: r x 2 matrix of constraint normals
        :param lower: r lower bounds (meters times the row scale)
        :param upper: r upper bounds
        :param name: Optional name, e.g. the waypoint name referenced by formulas
        """
        super().__init__(name)
        self.A = to_array(A)
        assert self.A.ndim == 2 and self.A.shape[1] == 2 and self.A.shape[0] >= 1
        self.lower = to_array(lower, (self.A.shape[0],))
        self.upper = to_array(upper, (self.A.shape[0],))
        assert np.all(self.lower <= self.upper), "lower must not exceed upper"
        self.parameters = {
            "name": name,
            "A": self.A.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }

    @classmethod
    def box(cls, x_min, x_max, y_min, y_max, name=None):
        return cls([[1, 0], [0, 1]], [x_min, y_min], [x_max, y_max], name=name)

    @property
    def num_rows(self):
        return self.A.shape[0]

    @property
    def row_norms(self):
        return np.linalg.norm(self.A, axis=1)

    def shrunk(self, margin) -> "Polyhedron":
        """
        Move every bound inward by margin meters. A negative margin inflates the region.
        Slabs thinner than the two margins collapse onto their mid-plane.

        :param margin: A single margin, or an array of shape (r, 2) with the margins of the
            lower and the upper bound of every row
        """
        margins = np.broadcast_to(np.asarray(margin, dtype=np.float64), (self.num_rows, 2))
        lower = self.lower + margins[:, 0] * self.row_norms
        upper = self.upper - margins[:, 1] * self.row_norms
        middle = 0.5 * (self.lower + self.upper)
        collapsed = lower > upper
        lower = np.where(collapsed, middle, lower)
        upper = np.where(collapsed, middle, upper)
        return Polyhedron(self.A, lower, upper, name=self.name)

    def violation(self, points, normalized=False):
        """Per-row violation max(0, lower - A x, A x - upper), shape (..., r)."""
        values = np.asarray(points, dtype=np.float64) @ self.A.T
        violation = np.maximum(0.0, np.maximum(self.lower - values, values - self.upper))
        if normalized:
            violation = violation / self.row_norms
        return violation

    def side_violations(self, points):
        """Distance in meters beyond the lower and the upper bound of every row, (..., r, 2)."""
        values = np.asarray(points, dtype=np.float64) @ self.A.T
        below = np.maximum(0.0, self.lower - values)
        above = np.maximum(0.0, values - self.upper)
        return np.stack([below, above], axis=-1) / self.row_norms[:, np.newaxis]

    def contains(self, points, tolerance=0.0):
        return np.all(self.violation(points, normalized=True) <= tolerance, axis=-1)

    def vertices(self):
        return halfspace_vertices(
            np.vstack([self.A, -self.A]), np.concatenate([self.upper, -self.lower])
        )

    @property
    def center(self):
        vertices = self.vertices()
        if len(vertices) == 0:
            return None
        return vertices.mean(axis=0)


class MomentBandConstraint(BaseMomentConstraint):
    """The two-sided inequality lo <= row . m~_k <= hi on one order of the position moments."""

    def __init__(self, order: int, row, lo: float, hi: float, name=None):
        assert order >= 0
        assert lo <= hi + 1e-12, "lo must not exceed hi"
        self.order = order
        self.row = to_array(row, (2,))
        self.lo = float(lo)
        self.hi = float(hi)
        self.name = name

    def value(self, positions):
        return np.asarray(positions)[..., self.order, :] @ self.row

    def residuals(self, positions, binaries=None):
        value = self.value(positions)
        return np.stack([self.lo - value, value - self.hi], axis=-1)

    def num_residuals(self):
        return 2

    def is_satisfied(self, positions, tolerance=1e-9):
        return bool(np.all(self.residuals(positions) <= tolerance))

    def serialize_parameters(self):
        return {
            "kind": "band",
            "name": self.name,
            "order": self.order,
            "row": self.row.tolist(),
            "lo": self.lo,
            "hi": self.hi,
        }

    def __repr__(self):
        return "MomentBandConstraint(order={}, row={}, lo={:.5g}, hi={:.5g})".format(
            self.order, self.row.tolist(), self.lo, self.hi
        )


def moment_polyhedron_bands(
    poly: Polyhedron, table: SignedPartTable, orders: Iterable[int]
) -> List[MomentBandConstraint]:
    """
    Necessary conditions in moment space for every member to lie in the polyhedron. Row j at
    order k gives lo = b_j m_k^+ - c_j m_k^- and hi = c_j m_k^+ - b_j m_k^-.
    """
    bands = []
    for k in sorted(set(orders)):
        if not 0 <= k <= table.max_order:
            raise ValueError(
                "Band order {} is outside 0..{}".format(k, table.max_order)
            )
        m_plus = table.m_plus[k]
        m_minus = table.m_minus[k]
        for row, b, c in zip(poly.A, poly.lower, poly.upper):
            bands.append(
                MomentBandConstraint(
                    order=k,
                    row=row,
                    lo=b * m_plus - c * m_minus,
                    hi=c * m_plus - b * m_minus,
                    name=poly.name,
                )
            )
    return bands


def member_violation(constraint: BaseConstraint, trajectory: MemberTrajectory, **kwargs):
    """
    Ground-truth violation along one member trajectory. For a Polyhedron this is an array of
    shape (steps + 1, r); for an ObstacleSpec it is the penetration depth, shape (steps + 1,).
    """
    return constraint.violation(trajectory.positions, **kwargs)
