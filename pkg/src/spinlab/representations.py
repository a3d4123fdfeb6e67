"""P- and Q-functions of the spin thermal operator exp(-beta t.s).

The thermal operator is kept in its unnormalized form (so that
<j,m|rho|j,m'> = exp(-beta m) delta_mm' on the thermal axis); normalized
copies are available from :meth:`DensityMatrix.normalized_view`.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .quadrature import ConvergenceError, integrate_until_converged
from .spin_algebra import (
    as_half_integer,
    build_spin_system,
    coherent_amplitudes_from_axis,
    projector_integral,
    unit_vector,
)


@dataclass(frozen=True)
class ThermalSpec:
    beta: float
    axis: np.ndarray = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError(f"beta={self.beta} must be finite and nonnegative")
        object.__setattr__(self, "axis", unit_vector(self.axis))


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.conj().T)) > 1e-12 * scale:
            raise ValueError("density matrix is not Hermitian")
        if np.trace(m).real <= 0:
            raise ValueError("density matrix must have positive trace")
        object.__setattr__(self, "matrix", m)

    @property
    def trace(self):
        return float(np.trace(self.matrix).real)

    def normalized_view(self):
        return DensityMatrix(self.matrix / self.trace, normalized=True)

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)


def trace_distance(a, b):
    """Half the trace norm of the difference of the normalized operators."""
    a = a.normalized_view().matrix if isinstance(a, DensityMatrix) else a / np.trace(a)
    b = b.normalized_view().matrix if isinstance(b, DensityMatrix) else b / np.trace(b)
    d = a - b
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh((d + d.conj().T) / 2))))


def thermal_operator(system, spec):
    """exp(-beta t.s), unnormalized."""
    return DensityMatrix(expm(-spec.beta * system.dot(spec.axis)))


def q_value(j, spec, x):
    """Q_j(x) = (cosh(beta/2) - x.t sinh(beta/2))^(2j)."""
    j = as_half_integer(j)
    z = np.asarray(x, dtype=float) @ spec.axis
    b = spec.beta / 2
    # same value as cosh(b) - z sinh(b), without cancellation near z = 1
    return (0.5 * (1 - z) * np.exp(b) + 0.5 * (1 + z) * np.exp(-b)) ** (2 * j)


def c_normalization(j, spec):
    """Normalization of the P-function from the trace condition.

    Evaluates 2 sinh((j+1/2) beta) / (1/Q_{j+1/2}(t) - 1/Q_{j+1/2}(-t)); the
    beta -> 0 limit is 1.
    """
    j = as_half_integer(j)
    if spec.beta == 0:
        return 1.0
    t = spec.axis
    num = 2 * np.sinh((j + 0.5) * spec.beta)
    den = 1 / q_value(j + 0.5, spec, t) - 1 / q_value(j + 0.5, spec, -t)
    return float(num / den)


def p_value(j, spec, x):
    """Positive P-function c_j / Q_{j+1}(-x) of the thermal operator."""
    j = as_half_integer(j)
    return c_normalization(j, spec) / q_value(j + 1, spec, -np.asarray(x, dtype=float))


def reconstruct_rho_from_p(system, spec, tol=1e-12, rtol=1e-12, max_n_z=8192):
    """(2j+1)/(4 pi) times the sphere integral of P_j(x) |x><x|.

    The quadrature's polar axis is aligned with the thermal axis, so only
    the Legendre order needs refining; it doubles until two successive
    results agree to ``tol`` (or ``rtol`` relative to the largest entry).
    Raises :class:`ConvergenceError` if that never happens.
    """
    n_phi = int(round(4 * system.j)) + 2
    integral, _ = integrate_until_converged(
        lambda rule: projector_integral(system, rule, p_value(system.j, spec, rule.nodes)),
        n_phi=n_phi, axis=spec.axis,
        tol=tol, rtol=rtol, max_n_z=max_n_z,
    )
    rho = system.dim / (4 * np.pi) * integral
    return DensityMatrix((rho + rho.conj().T) / 2)


def matrix_element_check(system, spec, m, mp, tol=1e-12):
    """|exp(-beta m) delta_mm' - (2j+1)/(4 pi) int P <m|x><x|m'>| on the z axis."""
    if not np.allclose(spec.axis, [0, 0, 1], atol=1e-12):
        raise ValueError("matrix_element_check requires the thermal axis (0, 0, 1)")
    i = system.basis_state(m).argmax()
    k = system.basis_state(mp).argmax()

    def integrate(rule):
        amps = coherent_amplitudes_from_axis(system.j, rule.nodes)
        return rule.integrate(p_value(system.j, spec, rule.nodes) * amps[:, i] * amps[:, k].conj())

    n_phi = int(round(4 * system.j)) + 2
    value, _ = integrate_until_converged(integrate, n_phi=n_phi, tol=tol, rtol=1e-12)
    rhs = system.dim / (4 * np.pi) * value
    lhs = np.exp(-spec.beta * m) * (i == k)
    return float(abs(lhs - rhs))


def hypergeometric_2f1(a, b, c, z, tol=1e-16, max_terms=200000):
    """Gauss series for 2F1(a, b; c; z), valid for |z| < 1.

    For z < 0 the series alternates and loses digits to cancellation, so
    the Pfaff form (1 - z)^(-a) 2F1(a, c - b; c; z/(z - 1)) is summed
    instead; its argument lies in (0, 1/2).
    """
    if abs(z) >= 1:
        raise ConvergenceError(f"2F1 series diverges for |z|={abs(z)} >= 1")
    if z < 0:
        return (1 - z) ** (-a) * _gauss_series(a, c - b, c, z / (z - 1), tol, max_terms)
    return _gauss_series(a, b, c, z, tol, max_terms)


def _gauss_series(a, b, c, z, tol, max_terms):
    term = 1.0
    total = 1.0
    for n in range(max_terms):
        term *= (a + n) * (b + n) / ((c + n) * (n + 1)) * z
        total += term
        if abs(term) < tol * abs(total):
            return total
    raise ConvergenceError(f"2F1 series not converged after {max_terms} terms",
                           residual=abs(term))


def hypergeometric_identity_check(j, m, z):
    """|2F1(2+2j, 1+j+m; 2+2j; z) - (1-z)^-(j+m+1)|."""
    j = as_half_integer(j)
    lhs = hypergeometric_2f1(2 + 2 * j, 1 + j + m, 2 + 2 * j, z)
    return abs(lhs - (1 - z) ** (-(j + m + 1)))


def verify_reconstruction(j, beta, axis=(0.0, 0.0, 1.0)):
    """Max-norm distance between the P-reconstruction and exp(-beta t.s)."""
    system = build_spin_system(j)
    spec = ThermalSpec(beta, axis)
    rho = reconstruct_rho_from_p(system, spec).matrix
    return float(np.max(np.abs(rho - thermal_operator(system, spec).matrix)))
