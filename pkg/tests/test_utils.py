import numpy as np
import pytest
from numpy.testing import assert_allclose

from ensemblemoments.core.utils import format_float, halfspace_vertices, trapezoid_weights


class TestUtils:
    def test_trapezoid_weights(self):
        weights = trapezoid_weights([0.0, 1.0, 3.0])
        assert_allclose(weights, [0.5, 1.5, 1.0])
        assert np.sum(trapezoid_weights(np.linspace(0.9, 1.1, 50))) == pytest.approx(0.2)

    def test_trapezoid_single_sample(self):
        assert_allclose(trapezoid_weights([1.0]), [0.0])

    def test_format_float(self):
        assert format_float(0.1 + 0.2) == "0.3"
        assert format_float(np.float32(1.5)) == "1.5"
        assert format_float(1e-20) == "1e-20"

    def test_square_vertices(self):
        A = [[1, 0], [-1, 0], [0, 1], [0, -1]]
        vertices = halfspace_vertices(A, [1, 0, 2, 0])
        assert vertices.shape == (4, 2)
        assert {tuple(v) for v in np.round(vertices, 9)} == {(0, 0), (1, 0), (1, 2), (0, 2)}
        # counter-clockwise: positive signed area
        x, y = vertices[:, 0], vertices[:, 1]
        area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert area == pytest.approx(2.0)

    def test_triangle_vertices(self):
        vertices = halfspace_vertices([[-1, 0], [0, -1], [1, 1]], [0, 0, 1])
        assert len(vertices) == 3

    def test_empty_set(self):
        vertices = halfspace_vertices([[1, 0], [-1, 0]], [0, -1])
        assert vertices.shape == (0, 2)
