"""Signal temporal logic over moment trajectories, with exact and Log-Sum-Exp robustness."""
import math
from abc import ABC, abstractmethod
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp

from ensemblemoments.constraints.polyhedron import Polyhedron, moment_polyhedron_bands
from ensemblemoments.core.exceptions import EvaluationError
from ensemblemoments.core.legendre import SignedPartTable
from ensemblemoments.core.moments import MomentTrajectory

DEFAULT_SHARPNESS = 10.0


class RobustnessConfig:
    def __init__(self, sharpness: float = DEFAULT_SHARPNESS):
        """
        :param sharpness: K in the Log-Sum-Exp approximation; the error of one smoothed
            max or min over n values is at most ln(n) / K
        """
        assert 0 < sharpness < math.inf
        self.sharpness = float(sharpness)


def smooth_max(values, sharpness, axis=-1):
    """(1 / K) log sum exp(K a). Never below the max, and at most ln(n) / K above it."""
    return logsumexp(sharpness * np.asarray(values), axis=axis) / sharpness


def smooth_min(values, sharpness, axis=-1):
    return -logsumexp(-sharpness * np.asarray(values), axis=axis) / sharpness


def _reduce(values, kind, sharpness, axis=-1):
    if sharpness is None:
        return np.max(values, axis=axis) if kind == "max" else np.min(values, axis=axis)
    if kind == "max":
        return smooth_max(values, sharpness, axis=axis)
    return smooth_min(values, sharpness, axis=axis)


def window_indices(window: Tuple[float, float], dt: float) -> Tuple[int, int]:
    """Convert a window in seconds to sample offsets, rounding both ends inward."""
    ta, tb = window
    ia = int(math.ceil(ta / dt - 1e-9))
    ib = int(math.floor(tb / dt + 1e-9))
    if ia > ib:
        raise EvaluationError(
            "Window [{}, {}] contains no sample at dt = {}".format(ta, tb, dt)
        )
    return ia, ib


class StlFormula(ABC):
    """
    A node of a formula tree. trace() returns the robustness of the formula at every
    sample of the signal. Samples where a temporal window lies entirely beyond the end of
    the signal are NaN.
    """

    children: List["StlFormula"] = []

    @abstractmethod
    def trace(self, positions, dt, sharpness=None):
        """
        :param positions: Position moments, shape (..., steps + 1, N + 1, 2)
        :param dt: Sample spacing in seconds
        :param sharpness: None for exact min/max semantics, else the Log-Sum-Exp K
        :return: Robustness trace of shape (..., steps + 1)
        """
        raise NotImplementedError

    @abstractmethod
    def shifted(self, t0: float) -> Optional["StlFormula"]:
        """
        The obligation that remains t0 seconds later: every window moves t0 seconds earlier
        and starts no earlier than 0. A temporal node whose window ended before t0 is settled
        and dropped, and so is a connective or negation left without operands. Returns None
        when nothing remains.
        """
        raise NotImplementedError

    def horizon(self) -> float:
        """The latest time, relative to the evaluation time, that the formula looks at."""
        return max([child.horizon() for child in self.children] + [0.0])

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()

    def count(self, node_type) -> int:
        return sum(1 for node in self.walk() if isinstance(node, node_type))

    def __and__(self, other):
        return And([self, other])

    def __or__(self, other):
        return Or([self, other])

    def __invert__(self):
        return Not(self)


class Predicate(StlFormula):
    """row . m~_order + offset, i.e. satisfied when the affine functional is positive."""

    def __init__(self, order: int, row, offset: float, name=None):
        assert order >= 0
        self.order = order
        self.row = np.asarray(row, dtype=np.float64)
        assert self.row.shape == (2,)
        self.offset = float(offset)
        self.name = name
        self.children = []

    def trace(self, positions, dt, sharpness=None):
        return np.asarray(positions)[..., self.order, :] @ self.row + self.offset

    def shifted(self, t0):
        return self

    def __repr__(self):
        return "Predicate({} . m~_{} + {:.5g})".format(self.row.tolist(), self.order, self.offset)


class Not(StlFormula):
    def __init__(self, child: StlFormula):
        self.child = child
        self.children = [child]

    def trace(self, positions, dt, sharpness=None):
        return -self.child.trace(positions, dt, sharpness)

    def shifted(self, t0):
        child = self.child.shifted(t0)
        return None if child is None else Not(child)

    def __repr__(self):
        return "Not({!r})".format(self.child)


class _Connective(StlFormula):
    kind = None

    def __init__(self, children: Sequence[StlFormula]):
        assert len(children) >= 1, "A connective needs at least one child"
        self.children = list(children)

    def trace(self, positions, dt, sharpness=None):
        traces = np.stack([c.trace(positions, dt, sharpness) for c in self.children], axis=-1)
        if len(self.children) == 1:
            return traces[..., 0]
        return _reduce(traces, self.kind, sharpness)

    def shifted(self, t0):
        children = [c.shifted(t0) for c in self.children]
        children = [c for c in children if c is not None]
        return type(self)(children) if children else None

    def __repr__(self):
        return "{}({})".format(type(self).__name__, ", ".join(repr(c) for c in self.children))


class And(_Connective):
    kind = "min"


class Or(_Connective):
    kind = "max"


class _Temporal(StlFormula):
    kind = None

    def __init__(self, window: Tuple[float, float], child: StlFormula):
        ta, tb = float(window[0]), float(window[1])
        assert 0 <= ta <= tb, "A window [ta, tb] must satisfy 0 <= ta <= tb"
        self.window = (ta, tb)
        self.child = child
        self.children = [child]

    def horizon(self):
        return self.window[1] + self.child.horizon()

    def trace(self, positions, dt, sharpness=None):
        child = self.child.trace(positions, dt, sharpness)
        ia, ib = window_indices(self.window, dt)
        length = child.shape[-1]
        padded = np.concatenate(
            [child, np.full(child.shape[:-1] + (ib,), np.nan)], axis=-1
        )
        windows = sliding_window_view(padded, ib - ia + 1, axis=-1)[..., ia : ia + length, :]
        missing = np.isnan(windows)
        undefined = np.all(missing, axis=-1)
        fill = -np.inf if self.kind == "max" else np.inf
        windows = np.where(missing, fill, windows)
        windows = np.where(undefined[..., np.newaxis], 0.0, windows)
        if ib == ia:
            result = windows[..., 0]
        else:
            result = _reduce(windows, self.kind, sharpness)
        return np.where(undefined, np.nan, result)

    def shifted(self, t0):
        ta, tb = self.window
        if tb < t0 - 1e-9:
            return None
        return type(self)((max(0.0, ta - t0), max(0.0, tb - t0)), self.child)

    def __repr__(self):
        return "{}[{:g}, {:g}]({!r})".format(
            type(self).__name__, self.window[0], self.window[1], self.child
        )


class Eventually(_Temporal):
    kind = "max"


class Always(_Temporal):
    kind = "min"


def _evaluate(f: StlFormula, sig: MomentTrajectory, t: int, sharpness):
    if not 0 <= t < len(sig):
        raise EvaluationError("Step {} is outside a signal of length {}".format(t, len(sig)))
    value = f.trace(sig.positions, sig.dt, sharpness)[t]
    if np.isnan(value):
        raise EvaluationError(
            "A temporal window of {!r} lies entirely outside the signal at step {}".format(f, t)
        )
    return float(value)


def robustness_exact(f: StlFormula, sig: MomentTrajectory, t: int = 0) -> float:
    """Quantitative min/max semantics on the sampled signal. Positive means satisfied."""
    return _evaluate(f, sig, t, None)


def robustness_smooth(
    f: StlFormula, sig: MomentTrajectory, t: int = 0, cfg: Optional[RobustnessConfig] = None
) -> float:
    """Robustness with every min and max replaced by its Log-Sum-Exp approximation."""
    cfg = cfg or RobustnessConfig()
    return _evaluate(f, sig, t, cfg.sharpness)


def robustness_batch(f: StlFormula, positions, dt, sharpness=None, t: int = 0):
    """Robustness at step t for a batch of position-moment trajectories."""
    return f.trace(positions, dt, sharpness)[..., t]


def region_predicates(poly: Polyhedron, table: SignedPartTable, order: int = 0) -> List[Predicate]:
    """Both one-sided predicates of every band the region induces at the given order."""
    predicates = []
    for band in moment_polyhedron_bands(poly, table, [order]):
        predicates.append(Predicate(order, band.row, -band.lo, name=poly.name))
        predicates.append(Predicate(order, -band.row, band.hi, name=poly.name))
    return predicates


def waypoint_formula(
    waypoints: Sequence[Tuple[Polyhedron, Tuple[float, float]]],
    table: SignedPartTable,
    order: int = 0,
    horizon: Optional[float] = None,
) -> StlFormula:
    """
    Visit every waypoint region within its window: the conjunction over waypoints of
    Eventually(window, And(band predicates)).
    """
    if len(waypoints) == 0:
        raise ValueError("waypoint_formula needs at least one waypoint")
    parts = []
    for poly, window in waypoints:
        if horizon is not None and window[1] > horizon + 1e-9:
            raise ValueError(
                "The window {} of waypoint {!r} ends after the horizon {}".format(
                    window, poly.name, horizon
                )
            )
        parts.append(Eventually(window, And(region_predicates(poly, table, order))))
    return And(parts)
