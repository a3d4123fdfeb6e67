"""Product quadrature on the unit sphere.

Gauss-Legendre nodes in ``z = cos(theta)`` combined with a uniform
trapezoid rule in the azimuth.  With ``n_z`` Legendre nodes and ``n_phi``
azimuthal nodes the rule integrates every spherical polynomial of degree
``<= min(2*n_z - 1, n_phi - 1)`` exactly.
"""

from dataclasses import dataclass

import numpy as np


class ConvergenceError(RuntimeError):
    """Raised when an iterative numerical procedure fails to settle."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class QuadratureRule:
    n_z: int
    n_phi: int
    theta: np.ndarray  # polar angle of each node, in the rule's own frame
    phi: np.ndarray
    nodes: np.ndarray  # (N, 3) unit vectors in the lab frame
    weights: np.ndarray  # sum to 4*pi
    axis: np.ndarray  # lab direction of the rule's polar axis

    @property
    def degree(self):
        """Highest spherical-polynomial degree integrated exactly."""
        return min(2 * self.n_z - 1, self.n_phi - 1)

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        """Weighted sum over nodes; ``values`` has the node index first."""
        values = np.asarray(values)
        return np.tensordot(self.weights, values, axes=(0, 0))


def frame_rotation(axis):
    """Proper rotation taking (0, 0, 1) to ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    z = np.array([0.0, 0.0, 1.0])
    c = float(axis @ z)
    v = np.cross(z, axis)
    s = np.linalg.norm(v)
    if s < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * K @ K


def _legendre_and_derivative(n, x):
    p0 = np.ones_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (p0 - x * p1) / ((1 - x) * (1 + x))
    return p1, dp


def gauss_legendre(n):
    """Gauss-Legendre nodes and weights on [-1, 1].

    numpy's ``leggauss`` weights carry relative errors near 1e-11 at a few
    hundred nodes; one Newton step on the nodes and weights recomputed from
    the three-term recurrence bring them to near machine precision.
    """
    x, _ = np.polynomial.legendre.leggauss(int(n))
    if n == 1:
        return x, np.array([2.0])
    p, dp = _legendre_and_derivative(int(n), x)
    x = x - p / dp
    _, dp = _legendre_and_derivative(int(n), x)
    w = 2.0 / ((1 - x) * (1 + x) * dp**2)
    return x, w


def product_rule(n_z, n_phi, axis=(0.0, 0.0, 1.0)):
    """Gauss-Legendre(``n_z``) x trapezoid(``n_phi``) rule with polar axis ``axis``."""
    if n_z < 1 or n_phi < 1:
        raise ValueError("quadrature needs at least one node per dimension")
    z, wz = gauss_legendre(int(n_z))
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    wphi = np.full(n_phi, 2 * np.pi / n_phi)
    Z, PHI = np.meshgrid(z, phi, indexing="ij")
    W = np.outer(wz, wphi)
    theta = np.arccos(Z).ravel()
    phi_flat = PHI.ravel()
    st = np.sqrt(1 - Z**2).ravel()
    local = np.stack([st * np.cos(phi_flat), st * np.sin(phi_flat), Z.ravel()], axis=1)
    R = frame_rotation(axis)
    return QuadratureRule(
        n_z=int(n_z),
        n_phi=int(n_phi),
        theta=theta,
        phi=phi_flat,
        nodes=local @ R.T,
        weights=W.ravel(),
        axis=R[:, 2].copy(),
    )


def rule_for_degree(degree, axis=(0.0, 0.0, 1.0)):
    """Smallest product rule exact for spherical polynomials of ``degree``."""
    degree = int(np.ceil(degree))
    return product_rule(degree // 2 + 1, degree + 1, axis=axis)


def integrate_until_converged(integrate, n_phi, n_z_start=8, tol=1e-12,
                              max_n_z=8192, axis=(0.0, 0.0, 1.0), rtol=None):
    """Integrate a non-polynomial integrand by doubling the Legendre order.

    ``integrate(rule)`` returns the integral under ``rule``.  The
    azimuthal order is held at ``n_phi``; the polar order doubles until two
    successive results differ by less than ``tol`` (max norm), or by less
    than ``rtol`` times the max norm of the result when ``rtol`` is given.

    Returns ``(value, rule)`` for the last rule used.
    """
    n_z = int(n_z_start)
    rule = product_rule(n_z, n_phi, axis=axis)
    prev = np.asarray(integrate(rule))
    diff = np.inf
    while True:
        n_z *= 2
        if n_z > max_n_z:
            raise ConvergenceError(
                f"quadrature did not converge by n_z={max_n_z}", residual=diff
            )
        rule = product_rule(n_z, n_phi, axis=axis)
        cur = np.asarray(integrate(rule))
        diff = float(np.max(np.abs(cur - prev)))
        bound = tol if rtol is None else max(tol, rtol * float(np.max(np.abs(cur))))
        if diff < bound:
            return cur, rule
        prev = cur
