import numpy as np


class BaseConstraint:
    """
    Base class of the state-space constraints. A constraint knows how to measure how badly
    member positions violate it and how to express itself in moment space.
    """

    def __init__(self, name=None):
        self.name = name
        self.parameters = {}

    def serialize_parameters(self):
        """Return the parameters as a JSON-serializable dict."""
        return self.parameters

    def violation(self, points, normalized=False):
        """
        :param points: Positions with shape (..., 2)
        :param normalized: If True, express violations as Euclidean distances
        """
        raise NotImplementedError

    def vertices(self):
        """Polygon vertices used for plotting, counter-clockwise."""
        raise NotImplementedError

    def __repr__(self):
        return "{}(name={!r})".format(type(self).__name__, self.name)


class BaseMomentConstraint:
    """
    A linear inequality family in moment space. residuals() returns values h with the
    convention h <= 0 when satisfied.
    """

    def residuals(self, positions, binaries=None):
        """
        :param positions: Position moments with shape (..., steps, N + 1, 2)
        :param binaries: Facet activations with shape (steps, d), for disjunctions only
        :return: An array with shape (..., steps, num_residuals)
        """
        raise NotImplementedError

    def num_residuals(self):
        raise NotImplementedError

    def serialize_parameters(self):
        raise NotImplementedError


def to_array(values, shape=None):
    array = np.asarray(values, dtype=np.float64)
    if shape is not None:
        assert array.shape == shape, "Expected shape {}, got {}".format(shape, array.shape)
    return array
