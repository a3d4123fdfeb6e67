"""Spin-j operator algebra, rotations and SU(2) coherent states.

Units have hbar = 1.  The basis is ordered m = +j, j-1, ..., -j throughout the
package, so ``s3`` is diagonal and descending.
"""

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln, sph_harm_y

from .quadrature import rule_for_degree

LEVI_CIVITA = np.zeros((3, 3, 3))
LEVI_CIVITA[0, 1, 2] = LEVI_CIVITA[1, 2, 0] = LEVI_CIVITA[2, 0, 1] = 1.0
LEVI_CIVITA[0, 2, 1] = LEVI_CIVITA[2, 1, 0] = LEVI_CIVITA[1, 0, 2] = -1.0


def as_half_integer(j):
    """Validate a spin quantum number and return it as a float.

    Accepts ints, floats, ``Fraction`` and strings such as ``"5/2"``.
    """
    try:
        f = Fraction(j) if not isinstance(j, float) else Fraction(j).limit_denominator(1000)
    except (ValueError, TypeError, ZeroDivisionError):
        raise ValueError(f"spin j={j!r} is not a number") from None
    if f < 0 or (2 * f).denominator != 1:
        raise ValueError(f"spin j={j!r} must be a nonnegative half-integer")
    if isinstance(j, float) and abs(float(f) - j) > 1e-12:
        raise ValueError(f"spin j={j!r} must be a nonnegative half-integer")
    return float(f)


@dataclass(frozen=True)
class SpinSystem:
    j: float
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray

    @property
    def dim(self):
        return int(round(2 * self.j + 1))

    @property
    def m(self):
        """Magnetic quantum numbers in basis order."""
        return self.j - np.arange(self.dim)

    @property
    def ops(self):
        return (self.s1, self.s2, self.s3)

    @property
    def s_plus(self):
        """(s1 + i s2)/sqrt(2)."""
        return (self.s1 + 1j * self.s2) / np.sqrt(2)

    @property
    def s_minus(self):
        """(s1 - i s2)/sqrt(2)."""
        return (self.s1 - 1j * self.s2) / np.sqrt(2)

    def dot(self, v):
        """The operator v . s for a real 3-vector v."""
        return v[0] * self.s1 + v[1] * self.s2 + v[2] * self.s3

    def basis_state(self, m):
        """The eigenvector |j, m> of s3."""
        idx = int(round(self.j - m))
        if not 0 <= idx < self.dim or abs(self.j - m - idx) > 1e-9:
            raise ValueError(f"m={m} is not a valid projection for j={self.j}")
        v = np.zeros(self.dim, dtype=complex)
        v[idx] = 1.0
        return v

    def expectation(self, psi):
        """<psi|s|psi> as a real 3-vector."""
        return np.array([np.vdot(psi, s @ psi).real for s in self.ops])

    def spin_vector(self, psi):
        """x = <psi|s|psi>/j (zero vector for j = 0)."""
        if self.j == 0:
            return np.zeros(3)
        return self.expectation(psi) / self.j


def build_spin_system(j):
    """Spin-j matrices s1, s2, s3 in the m = +j ... -j basis."""
    j = as_half_integer(j)
    dim = int(round(2 * j + 1))
    m = j - np.arange(dim)
    sp = np.zeros((dim, dim), dtype=complex)
    # s+ |m> = sqrt(j(j+1) - m(m+1)) |m+1>, and m+1 sits one row up
    sp[np.arange(dim - 1), np.arange(1, dim)] = np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1))
    sm = sp.conj().T
    s1 = (sp + sm) / 2
    s2 = (sp - sm) / 2j
    s3 = np.diag(m).astype(complex)
    return SpinSystem(j=j, s1=s1, s2=s2, s3=s3)


def rotation(system, phi, theta, psi):
    """D(phi, theta, psi) = exp(-i phi s3) exp(-i theta s2) exp(-i psi s3)."""
    m = system.m
    return (
        np.diag(np.exp(-1j * phi * m))
        @ expm(-1j * theta * system.s2)
        @ np.diag(np.exp(-1j * psi * m))
    )


def normalize(psi):
    psi = np.asarray(psi, dtype=complex)
    n = np.linalg.norm(psi)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return psi / n


def unit_vector(x, tol=None):
    """Return x/|x|, rejecting the zero vector (and, with ``tol``, far-from-unit input)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (3,) or not np.all(np.isfinite(x)):
        raise ValueError("axis must be a finite 3-vector")
    n = np.linalg.norm(x)
    if n == 0:
        raise ValueError("axis must be nonzero")
    if tol is not None and abs(n - 1) > tol:
        raise ValueError(f"axis has norm {n}, expected 1 within {tol}")
    return x / n


def polar_angles(x):
    """(theta, phi) of unit vector(s) x; ``x`` may have shape (3,) or (N, 3)."""
    x = np.asarray(x, dtype=float)
    theta = np.arccos(np.clip(x[..., 2], -1.0, 1.0))
    phi = np.arctan2(x[..., 1], x[..., 0])
    return theta, phi


def _log_binomial_sqrt(j, m):
    two_j = int(round(2 * j))
    k = np.rint(j - m).astype(int)
    return 0.5 * (gammaln(two_j + 1) - gammaln(k + 1) - gammaln(two_j - k + 1))


def _amplitudes_from_half_angles(j, c, s, phase):
    m = j - np.arange(int(round(2 * j + 1)))
    if j <= 15:
        two_j = int(round(2 * j))
        binom = np.array([math.comb(two_j, k) for k in np.rint(j - m).astype(int)], dtype=float)
        mag = np.sqrt(binom) * c ** (j + m) * s ** (j - m)
    else:
        # log space keeps the binomials finite; c, s >= 0 here
        with np.errstate(divide="ignore"):
            logmag = _log_binomial_sqrt(j, m) + (j + m) * np.log(c) + (j - m) * np.log(s)
        mag = np.exp(logmag)
    return mag * phase ** m


def coherent_amplitudes(j, theta, phi):
    """<j,m|x> for the coherent state at polar angles (theta, phi).

    Closed form binom(2j, j-m)^(1/2) e^(-i m phi) cos^(j+m)(theta/2)
    sin^(j-m)(theta/2).  Vectorized: ``theta`` and ``phi`` broadcast and the
    basis index is appended as the last axis.
    """
    j = as_half_integer(j)
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    m = j - np.arange(int(round(2 * j + 1)))
    amps = _amplitudes_from_half_angles(j, np.abs(np.cos(theta / 2)), np.abs(np.sin(theta / 2)), 1.0)
    return amps * np.exp(-1j * m * phi)


def coherent_amplitudes_from_axis(j, x):
    """Same as :func:`coherent_amplitudes` but from unit vector(s) ``x``.

    Half-angle factors come from sqrt((1 +- z)/2), which stays accurate near
    the poles where the arccos route loses digits.
    """
    j = as_half_integer(j)
    x = np.asarray(x, dtype=float)
    z = np.clip(x[..., 2], -1.0, 1.0)[..., None]
    c = np.sqrt(0.5 * (1 + z))
    s = np.sqrt(0.5 * (1 - z))
    rho = np.hypot(x[..., 0], x[..., 1])[..., None]
    with np.errstate(invalid="ignore", divide="ignore"):
        phase = np.where(rho > 0, (x[..., 0:1] - 1j * x[..., 1:2]) / rho, 1.0)
    m = j - np.arange(int(round(2 * j + 1)))
    mag = _amplitudes_from_half_angles(j, c, s, 1.0)
    # e^{-i m phi} for half-integer m: use e^{-i phi/2} raised to 2m
    half = np.sqrt(phase)
    half = np.where(np.real(half) < 0, -half, half)
    return mag * half ** np.rint(2 * m).astype(int)


@dataclass(frozen=True)
class CoherentState:
    axis: np.ndarray
    state: np.ndarray


def coherent_state(system, x):
    """Coherent state |x> with <x|s|x> = j x."""
    x = unit_vector(x, tol=1e-9)
    theta, phi = polar_angles(x)
    return CoherentState(axis=x, state=coherent_amplitudes(system.j, theta, phi))


def coherent_second_moment(state, k, l, j=None):
    """<x|s_k s_l|x> on a coherent state from the closed form.

    (1/2) j delta_kl + j (j - 1/2) x_k x_l + (i/2) j eps_klm x_m.
    Axis indices are 1-based, matching s1, s2, s3.
    """
    for idx in (k, l):
        if idx not in (1, 2, 3):
            raise ValueError(f"axis index {idx!r} must be 1, 2 or 3")
    if j is None:
        dim = len(state.state)
        j = (dim - 1) / 2
    x = state.axis
    a, b = k - 1, l - 1
    return (0.5 * j * (a == b) + j * (j - 0.5) * x[a] * x[b]
            + 0.5j * j * (LEVI_CIVITA[a, b] @ x))


def projector_integral(system, rule, weight=None):
    """Quadrature of weight(x) |x><x| over the sphere; weight defaults to 1."""
    amps = coherent_amplitudes_from_axis(system.j, rule.nodes)
    w = rule.weights if weight is None else rule.weights * weight
    return np.einsum("n,ni,nk->ik", w, amps, amps.conj())


def resolution_of_identity_check(system, rule=None):
    """Max-norm residual of (2j+1)/(4 pi) sum w |x><x| - I."""
    if rule is None:
        rule = rule_for_degree(4 * system.j + 2)
    integral = projector_integral(system, rule)
    return float(np.max(np.abs(system.dim / (4 * np.pi) * integral - np.eye(system.dim))))


def spherical_harmonic_null_check(system, l, m, rule=None):
    """Max-norm of the sphere integral of Y_l^m(x) |x><x|; vanishes for l > 2j."""
    if l <= 2 * system.j:
        raise ValueError(f"l={l} must exceed 2j={2 * system.j}")
    if abs(m) > l:
        raise ValueError(f"|m|={abs(m)} exceeds l={l}")
    if rule is None:
        rule = rule_for_degree(l + 2 * system.j)
    y = sph_harm_y(l, m, rule.theta, rule.phi)
    return float(np.max(np.abs(projector_integral(system, rule, weight=y))))


def coherent_rotation_check(system, x):
    """max |closed-form amplitudes - D(phi, theta, 0)|j, j>| for unit vector x."""
    x = unit_vector(x, tol=1e-9)
    theta, phi = polar_angles(x)
    rotated = rotation(system, phi, theta, 0.0)[:, 0]
    return float(np.max(np.abs(coherent_amplitudes(system.j, theta, phi) - rotated)))


def coherent_moment_check(system, x):
    """max over k, l of |<x|s_k s_l|x> - closed form|."""
    state = coherent_state(system, x)
    worst = 0.0
    for k in range(3):
        for l in range(3):
            direct = np.vdot(state.state, system.ops[k] @ system.ops[l] @ state.state)
            worst = max(worst, abs(direct - coherent_second_moment(state, k + 1, l + 1, system.j)))
    return float(worst)
