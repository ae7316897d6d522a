import math
from typing import List, NamedTuple

import numpy as np
from numpy.polynomial import Legendre
from scipy.linalg import eigh_tridiagonal

from ensemblemoments.core.exceptions import DomainError

# Tolerance when checking that mu lies in [-1, 1]
MU_TOLERANCE = 1e-12


class RecurrenceCoefficients(NamedTuple):
    """
    Coefficients of the three-term identity mu * phi_k = a_k * phi_{k+1} + c_k * phi_{k-1}
    for the orthonormal Legendre basis. Both arrays have length N + 1.
    """

    a: np.ndarray
    c: np.ndarray


class SignedPartTable(NamedTuple):
    """Integrals of the positive and negative parts of phi_k over [-1, 1]."""

    m_plus: np.ndarray
    m_minus: np.ndarray

    @property
    def max_order(self):
        return len(self.m_plus) - 1


def recurrence_coefficients(max_order: int) -> RecurrenceCoefficients:
    assert max_order >= 0
    k = np.arange(max_order + 1, dtype=np.float64)
    a = (k + 1) / np.sqrt((2 * k + 1) * (2 * k + 3))
    c = np.zeros(max_order + 1)
    c[1:] = k[1:] / np.sqrt(4 * k[1:] ** 2 - 1)
    a.setflags(write=False)
    c.setflags(write=False)
    return RecurrenceCoefficients(a=a, c=c)


def _check_mu(mu):
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(np.abs(mu) > 1.0 + MU_TOLERANCE) or not np.all(np.isfinite(mu)):
        raise DomainError("mu must lie in [-1, 1], got {}".format(mu))
    return mu


def evaluate_all(max_order: int, mu):
    """
    Evaluate phi_0 .. phi_N at mu with the three-term recurrence.

    :param max_order: Highest degree N
    :param mu: A scalar or an array of points in [-1, 1]
    :return: An array of shape (N + 1,) + np.shape(mu)
    """
    if max_order < 0:
        raise DomainError("The basis order must be non-negative, got {}".format(max_order))
    mu = _check_mu(mu)
    coefficients = recurrence_coefficients(max_order)
    values = np.empty((max_order + 1,) + mu.shape)
    values[0] = 1.0 / math.sqrt(2.0)
    previous = np.zeros(mu.shape)
    for k in range(max_order):
        values[k + 1] = (mu * values[k] - coefficients.c[k] * previous) / coefficients.a[k]
        previous = values[k]
    return values


def evaluate(k: int, mu):
    """Return phi_k(mu), where phi_k = sqrt((2k+1)/2) * P_k is orthonormal on [-1, 1]."""
    if k < 0:
        raise DomainError("The basis order must be non-negative, got {}".format(k))
    values = evaluate_all(k, mu)[k]
    if values.ndim == 0:
        return float(values)
    return values


def jacobi_matrix(size: int) -> np.ndarray:
    """
    Symmetric tridiagonal matrix whose (k, k+1) and (k+1, k) entries are a_k. It represents
    multiplication by mu on span(phi_0 .. phi_{size-1}) with the highest mode truncated.
    """
    assert size >= 1
    a = recurrence_coefficients(size - 1).a
    return np.diag(a[: size - 1], 1) + np.diag(a[: size - 1], -1)


def polynomial_roots(k: int) -> List[float]:
    """
    Return the k roots of phi_k in ascending order. phi_0 is a nonzero constant and has no
    roots, so k = 0 gives an empty list.
    """
    if k < 0:
        raise DomainError("The basis order must be non-negative, got {}".format(k))
    if k == 0:
        return []
    if k == 1:
        return [0.0]
    a = recurrence_coefficients(k - 1).a
    roots = eigh_tridiagonal(np.zeros(k), a[: k - 1], eigvals_only=True)
    return sorted(float(r) for r in roots)


def signed_part_integrals(max_order: int) -> SignedPartTable:
    """
    Integrate max(phi_k, 0) and max(-phi_k, 0) over [-1, 1] for k = 0 .. N. The sign of phi_k
    is constant between consecutive roots, so each piece is integrated exactly with the
    antiderivative of P_k.
    """
    assert max_order >= 0
    m_plus = np.zeros(max_order + 1)
    m_minus = np.zeros(max_order + 1)
    for k in range(max_order + 1):
        scale = math.sqrt((2 * k + 1) / 2.0)
        antiderivative = Legendre.basis(k).integ()
        breakpoints = [-1.0] + polynomial_roots(k) + [1.0]
        for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
            piece = scale * (antiderivative(hi) - antiderivative(lo))
            if evaluate(k, 0.5 * (lo + hi)) >= 0.0:
                m_plus[k] += abs(piece)
            else:
                m_minus[k] += abs(piece)
    m_plus.setflags(write=False)
    m_minus.setflags(write=False)
    return SignedPartTable(m_plus=m_plus, m_minus=m_minus)


def gauss_legendre(num_nodes: int):
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    assert num_nodes >= 1
    return np.polynomial.legendre.leggauss(num_nodes)


class OrthonormalBasis:
    """
    The orthonormal Legendre basis phi_0 .. phi_N on [-1, 1] with the plain Lebesgue measure.

    phi_k = sqrt((2k + 1) / 2) * P_k, so phi_0 is the constant 1 / sqrt(2). Recurrence
    coefficients, roots and signed-part integrals are computed once on construction and
    shared read-only afterwards.
    """

    def __init__(self, max_order: int):
        """
        :param max_order: The truncation order N, i.e. the highest polynomial degree kept
        """
        if max_order < 0:
            raise DomainError("max_order must be non-negative, got {}".format(max_order))
        self.max_order = max_order
        self.coefficients = recurrence_coefficients(max_order)
        self.signed_parts = signed_part_integrals(max_order)

    def __repr__(self):
        return "OrthonormalBasis(max_order={})".format(self.max_order)

    def evaluate(self, k: int, mu):
        if not 0 <= k <= self.max_order:
            raise DomainError(
                "Order {} is outside 0..{}".format(k, self.max_order)
            )
        return evaluate(k, mu)

    def evaluate_all(self, mu):
        return evaluate_all(self.max_order, mu)

    def roots(self, k: int) -> List[float]:
        if not 0 <= k <= self.max_order:
            raise DomainError(
                "Order {} is outside 0..{}".format(k, self.max_order)
            )
        return polynomial_roots(k)

    def gram_matrix(self, num_nodes: int = 64) -> np.ndarray:
        nodes, weights = gauss_legendre(num_nodes)
        values = self.evaluate_all(nodes)
        return (values * weights) @ values.T

    def table_rows(self):
        """One dict per order with a_k, c_k, m_plus, m_minus and the roots, for inspection."""
        rows = []
        for k in range(self.max_order + 1):
            rows.append(
                {
                    "k": k,
                    "a_k": float(self.coefficients.a[k]),
                    "c_k": float(self.coefficients.c[k]),
                    "m_plus": float(self.signed_parts.m_plus[k]),
                    "m_minus": float(self.signed_parts.m_minus[k]),
                    "roots": polynomial_roots(k),
                }
            )
        return rows
