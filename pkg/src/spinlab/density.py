"""Ensemble-averaged dynamics of closed-loop triaxial spinometers.

The ensemble map sums the three feedback-dressed Kraus pairs,

    delta rho = sum_k (A_k rho A_k^dag + B_k rho B_k^dag - rho),

whose fixed point is the thermal operator exp(-beta t.s) when
alpha = -tanh(beta/4).  To second order in theta it is the Lindblad
generator

    theta^2 [(1 - alpha)^2 D[s-] + (1 + alpha)^2 D[s+] + D[s3]]

with D[L] rho = L rho L^dag - {L^dag L, rho}/2 and s+- = (s1 +- i s2)/sqrt(2)
(for t along z).
"""

from dataclasses import dataclass

import numpy as np

from .quadrature import ConvergenceError
from .representations import DensityMatrix, ThermalSpec, thermal_operator, trace_distance
from .spinometer import SpinometerConfig, closed_loop_operators, completeness_residual
from .quadrature import frame_rotation


@dataclass(frozen=True)
class EnsembleMap:
    """Kraus pairs of one closed-loop triaxial macro-step.

    ``ordering="kraus"`` applies A rho A^dag (the ensemble average of the
    trajectory map); ``"adjoint"`` applies A^dag rho A instead and is kept
    only as a diagnostic, since it does not preserve the trace.
    """

    theta: float
    alpha: float
    axis: tuple
    pairs: tuple
    ordering: str = "kraus"

    @property
    def dim(self):
        return self.pairs[0][0].shape[0]


def ensemble_map(system, theta, alpha, axis=(0.0, 0.0, 1.0), ordering="kraus"):
    if ordering not in ("kraus", "adjoint"):
        raise ValueError("ordering must be 'kraus' or 'adjoint'")
    config = SpinometerConfig(theta=theta, alpha=alpha, axis=axis, mode="closed_loop_triaxial")
    pairs = tuple(closed_loop_operators(system, config, k) for k in range(3))
    for a, b in pairs:
        r = completeness_residual(a, b)
        if r > 1e-12:
            raise ArithmeticError(f"Kraus pair incomplete (residual {r:.3g})")
    return EnsembleMap(theta=theta, alpha=alpha, axis=config.axis, pairs=pairs, ordering=ordering)


def _as_matrix(rho):
    return rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def density_increment(rho, emap, check=True):
    """One-step change of the ensemble density matrix."""
    r = _as_matrix(rho)
    out = -3 * r
    for a, b in emap.pairs:
        if emap.ordering == "kraus":
            out = out + a @ r @ a.conj().T + b @ r @ b.conj().T
        else:
            out = out + a.conj().T @ r @ a + b.conj().T @ r @ b
    if check and emap.ordering == "kraus":
        scale = max(1.0, float(np.max(np.abs(r))))
        tr = abs(np.trace(out))
        if tr > 1e-12 * scale * len(r):
            raise ArithmeticError(f"trace not preserved: |tr delta rho| = {tr:.3g}")
    return out


def superoperator(emap):
    """Matrix of rho -> rho + delta rho acting on row-major vec(rho)."""
    d = emap.dim
    sup = np.zeros((d * d, d * d), dtype=complex)
    for a, b in emap.pairs:
        for op in (a, b):
            if emap.ordering == "kraus":
                sup += np.kron(op, op.conj())
            else:
                sup += np.kron(op.conj().T, op.T)
    return sup - 2 * np.eye(d * d)


def alpha_from_beta(beta):
    """Feedback strength alpha = -tanh(beta/4) (the |alpha| <= 1 branch)."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return -np.tanh(beta / 4)


def alpha_from_beta_reciprocal(beta):
    """The other root, 1/alpha = -tanh(beta/4), for probing only (|alpha| >= 1)."""
    if beta <= 0:
        raise ValueError("the reciprocal branch needs beta > 0")
    return -1.0 / np.tanh(beta / 4)


@dataclass(frozen=True)
class LindbladParams:
    """Rates of the second-order generator.

    gamma * (nu + 1) multiplies D[s-] and gamma * nu multiplies D[s+];
    ``dephasing`` multiplies D[s3].  With the default convention
    gamma = -4 alpha theta^2 and nu = -(1 + alpha)^2 / (4 alpha), which
    reproduces the discrete map.  ``convention="printed"`` uses
    gamma = -4 alpha^2 theta^2 instead (same nu), for comparison.
    """

    gamma: float
    nu: float
    dephasing: float
    alpha: float
    theta: float

    @classmethod
    def from_feedback(cls, alpha, theta, convention="matched"):
        if alpha == 0:
            raise ValueError("alpha = 0 has no finite occupation number")
        if convention == "matched":
            gamma = -4 * alpha * theta**2
        elif convention == "printed":
            gamma = -4 * alpha**2 * theta**2
        else:
            raise ValueError("convention must be 'matched' or 'printed'")
        nu = -((1 + alpha) ** 2) / (4 * alpha)
        return cls(gamma=gamma, nu=nu, dephasing=theta**2, alpha=alpha, theta=theta)

    @property
    def rate_down(self):
        return self.gamma * (self.nu + 1)

    @property
    def rate_up(self):
        return self.gamma * self.nu

    def detailed_balance_ratio(self):
        """(nu + 1)/nu; equals e^beta when alpha = -tanh(beta/4)."""
        return (self.nu + 1) / self.nu


def dissipator(op, rho):
    """D[L] rho = L rho L^dag - (L^dag L rho + rho L^dag L)/2."""
    ld = op.conj().T
    return op @ rho @ ld - 0.5 * (ld @ op @ rho + rho @ ld @ op)


def ladder_operators(system, axis=(0.0, 0.0, 1.0)):
    """(s+, s-, s_t) for a frame whose third axis is ``axis``."""
    rot = frame_rotation(axis)
    e1, e2, e3 = rot[:, 0], rot[:, 1], rot[:, 2]
    a1, a2, a3 = system.dot(e1), system.dot(e2), system.dot(e3)
    return (a1 + 1j * a2) / np.sqrt(2), (a1 - 1j * a2) / np.sqrt(2), a3


def lindblad_increment(rho, params, system, axis=(0.0, 0.0, 1.0)):
    """Second-order generator with standard dissipators.

    For a thermal axis other than z the ladder operators are taken in a
    frame whose third axis is ``axis``.
    """
    r = _as_matrix(rho)
    sp, sm, st = ladder_operators(system, axis)
    return (params.rate_down * dissipator(sm, r) + params.rate_up * dissipator(sp, r)
            + params.dephasing * dissipator(st, r))


@dataclass
class StationaryResult:
    rho: DensityMatrix
    iterations: int
    residual: float
    trace_distance_to_thermal: float = None


def evolve_to_stationary(rho0, emap, tolerance=1e-10, max_iters=2_000_000, thermal=None,
                         check_every=64):
    """Relax rho <- rho + delta rho until max|delta rho| < ``tolerance``.

    The iteration is carried out on vec(rho) with the superoperator matrix,
    which is the same relaxation in a faster form.  Raises
    :class:`ConvergenceError` with the last residual when ``max_iters`` is
    exhausted.  If ``thermal`` (a :class:`DensityMatrix`) is given the trace
    distance to it is reported.
    """
    r = _as_matrix(rho0)
    d = len(r)
    if d != emap.dim:
        raise ValueError("rho0 dimension does not match the map")
    sup = superoperator(emap)
    v = (r / np.trace(r).real).reshape(-1)
    min_eig = np.inf
    # squaring the one-step matrix speeds the relaxation without changing its fixed point
    block = np.linalg.matrix_power(sup, check_every)
    it = 0
    while it < max_iters:
        nv = sup @ v
        resid = float(np.max(np.abs(nv - v)))
        if resid < tolerance:
            v = nv
            it += 1
            break
        v = block @ v
        it += check_every
        rho = v.reshape(d, d)
        min_eig = min(min_eig, float(np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0]))
    else:
        raise ConvergenceError(f"no fixed point after {max_iters} iterations", residual=resid)
    rho = v.reshape(d, d)
    rho = (rho + rho.conj().T) / 2
    if min_eig < -1e-10:
        raise ArithmeticError(f"iterate lost positivity (min eigenvalue {min_eig:.3g})")
    out = StationaryResult(rho=DensityMatrix(rho), iterations=it, residual=resid)
    if thermal is not None:
        out.trace_distance_to_thermal = trace_distance(out.rho, thermal)
    return out


def thermal_residual(system, theta, beta, axis=(0.0, 0.0, 1.0), alpha=None):
    """max|delta rho| at the normalized thermal operator."""
    if alpha is None:
        alpha = alpha_from_beta(beta)
    rho = thermal_operator(system, ThermalSpec(beta, axis)).normalized_view()
    emap = ensemble_map(system, theta, alpha, axis)
    return float(np.max(np.abs(density_increment(rho, emap))))


def random_density_matrix(dim, generator):
    """Full-rank random density matrix from a numpy Generator (Ginibre ensemble)."""
    x = generator.normal(size=(dim, dim)) + 1j * generator.normal(size=(dim, dim))
    rho = x @ x.conj().T
    return rho / np.trace(rho).real


def uniqueness_probe(system, theta, beta, n_starts=10, seed=0, tolerance=1e-12,
                     axis=(0.0, 0.0, 1.0), alpha=None):
    """Relax from ``n_starts`` random states; return the fixed points and the
    largest pairwise trace distance between them."""
    if alpha is None:
        alpha = alpha_from_beta(beta)
    emap = ensemble_map(system, theta, alpha, axis)
    thermal = thermal_operator(system, ThermalSpec(beta, axis))
    gen = np.random.default_rng(seed)
    results = [evolve_to_stationary(random_density_matrix(system.dim, gen), emap,
                                    tolerance=tolerance, thermal=thermal)
               for _ in range(n_starts)]
    worst = 0.0
    for i in range(n_starts):
        for k in range(i + 1, n_starts):
            worst = max(worst, trace_distance(results[i].rho, results[k].rho))
    return results, worst
