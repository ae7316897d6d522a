import itertools

import numpy as np


def trapezoid_weights(samples):
    """Return trapezoid-rule weights for the (sorted) sample locations."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) == 1:
        return np.zeros(1)
    spacing = np.diff(samples)
    weights = np.zeros(len(samples))
    weights[:-1] += 0.5 * spacing
    weights[1:] += 0.5 * spacing
    return weights


def format_float(value):
    """Format a float for CSV output. Twelve significant digits keep reruns byte-identical."""
    return "{:.12g}".format(float(value))


def halfspace_vertices(A, b, tolerance=1e-9):
    """
    Return the vertices of the 2D polygon {x : A x <= b}, sorted counter-clockwise around
    their centroid. Vertices are found by intersecting every pair of boundary lines and
    keeping the points that satisfy all inequalities. An empty array means the set is empty
    or has no vertices.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    assert A.ndim == 2 and A.shape[1] == 2
    assert b.shape == (A.shape[0],)
    points = []
    for i, j in itertools.combinations(range(len(b)), 2):
        pair = A[[i, j]]
        if abs(np.linalg.det(pair)) < 1e-12:
            continue
        x = np.linalg.solve(pair, b[[i, j]])
        if np.all(A @ x <= b + tolerance * (1.0 + np.abs(b))):
            if not any(np.allclose(x, p, atol=1e-9) for p in points):
                points.append(x)
    if not points:
        return np.zeros((0, 2))
    points = np.array(points)
    centroid = points.mean(axis=0)
    angles = np.arctan2(points[:, 1] - centroid[1], points[:, 0] - centroid[0])
    return points[np.argsort(angles)]
