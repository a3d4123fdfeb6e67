"""Continuum limit of the closed-loop spinometer on the unit sphere.

The coherent-state label x moves by the Ito increment

    delta x = g^2 a(x) + g b(x) . W,        g = 2 theta,

    a(x) = x [alpha (1 - 2j) x.t - (1 + alpha^2/2)] / 4
           + t [alpha (1 + 2j) - alpha^2 x.t / 2] / 4
    b(x) = [I - x x^T + alpha (t x^T - (x.t) I)] / 2

and the stationary density of z = x.t solves

    0 = -d/dz[F P] + (1/2) d^2/dz^2[G P],
    F = alpha (1 + z^2) + 2 j alpha (1 - z^2) - z (1 + alpha^2),
    G = (1 - z^2)(1 - 2 alpha z + alpha^2),

with solution P(z) = [(1 - alpha^2)/(1 - 2 alpha z + alpha^2)]^(2j+2).
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng
from .moments import Moments
from .parallel import chunk_bounds, map_ordered
from .quadrature import frame_rotation, gauss_legendre
from .representations import ThermalSpec, p_value
from .spin_algebra import as_half_integer, build_spin_system, coherent_amplitudes_from_axis, unit_vector
from .spinometer import SpinometerConfig, _batch_expectations, macro_step, operator_pairs


@dataclass(frozen=True)
class DriftDiffusionModel:
    j: float
    alpha: float
    theta: float = 0.05
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "j", as_half_integer(self.j))
        object.__setattr__(self, "axis", tuple(unit_vector(self.axis, tol=1e-9)))
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.theta <= 0:
            raise ValueError("theta must be positive")

    @property
    def g_s(self):
        """Sensor gain 2 theta."""
        return 2 * self.theta

    @property
    def t(self):
        return np.asarray(self.axis)


def drift(model, x):
    """a(x); ``x`` has shape (3,) or (N, 3)."""
    x = np.asarray(x, dtype=float)
    a, j, t = model.alpha, model.j, model.t
    z = (x @ t)[..., None]
    return (0.25 * x * (a * (1 - 2 * j) * z - (1 + 0.5 * a * a))
            + 0.25 * t * (a * (1 + 2 * j) - 0.5 * a * a * z))


def diffusion_matrix(model, x):
    """b(x); shape (3, 3) or (N, 3, 3)."""
    x = np.asarray(x, dtype=float)
    a, t = model.alpha, model.t
    z = (x @ t)[..., None, None]
    eye = np.eye(3)
    outer_xx = x[..., :, None] * x[..., None, :]
    outer_tx = t[:, None] * x[..., None, :]
    return 0.5 * (eye - outer_xx + a * (outer_tx - z * eye))


def radial_moment_increment(model, x, m):
    """Ito increment of |x|^m per g^2, divided by |x|^(m-4).

    m(m-2)/2 x.bb^T.x + m |x|^2 [tr(bb^T)/2 + x.a]; zero on the unit sphere.
    """
    if m < 1:
        raise ValueError("moment order must be >= 1")
    x = np.asarray(x, dtype=float)
    b = diffusion_matrix(model, x)
    bbt = b @ np.swapaxes(b, -1, -2)
    quad = np.einsum("...i,...ij,...j->...", x, bbt, x)
    r2 = np.einsum("...i,...i->...", x, x)
    tr = np.trace(bbt, axis1=-2, axis2=-1)
    xa = np.einsum("...i,...i->...", x, drift(model, x))
    return 0.5 * m * (m - 2) * quad + m * r2 * (0.5 * tr + xa)


def sde_step(model, x, draws, dt_scale=1.0):
    """Euler-Maruyama step followed by projection onto the sphere.

    ``dt_scale`` multiplies the step (drift by dt_scale, noise by its
    square root); 1 is one spinometer macro-step.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(draws, dtype=float)
    g = model.g_s
    t = model.t
    xw = np.einsum("...i,...i->...", x, w)[..., None]
    z = (x @ t)[..., None]
    # b(x) . w without forming b
    bw = 0.5 * (w - x * xw + model.alpha * (t * xw - z * w))
    nxt = x + g * g * dt_scale * drift(model, x) + g * np.sqrt(dt_scale) * bw
    return nxt / np.linalg.norm(nxt, axis=-1, keepdims=True)


_COMPONENTS = np.arange(3)[None, :]


def _random_unit_vectors(seed, ids):
    w = rng.normal(seed, rng.STREAM_INITIAL, ids[:, None], 0, _COMPONENTS)
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def _sde_chunk(model, start, stop, n_steps, seed):
    ids = np.arange(start, stop)
    x = _random_unit_vectors(seed, ids)
    for n in range(n_steps):
        w = rng.normal(seed, rng.STREAM_SDE, ids[:, None], n, _COMPONENTS)
        x = sde_step(model, x, w)
    return x


def simulate_sde(model, n_trajectories, n_steps, seed, workers=1, chunk_size=1024):
    """Final points of independent SDE paths started uniformly on the sphere."""
    args = [(model, a, b, n_steps, seed) for a, b in chunk_bounds(n_trajectories, chunk_size)]
    return np.concatenate(map_ordered(_sde_chunk, args, workers))


def default_burn_in(theta):
    """20/theta^2 steps, several relaxation times of the einselection dynamics."""
    return int(np.ceil(20 / theta**2))


@dataclass(frozen=True)
class SphereDistribution:
    """Stationary density P(z) of z = x.t, with hand-coded derivatives.

    The weight convention is (2j+1)/(4 pi) int P d^2x = tr exp(-beta t.s)
    with beta = -4 artanh(alpha), i.e. the P-function of the unnormalized
    thermal operator.
    """

    j: float
    alpha: float
    z: np.ndarray
    values: np.ndarray

    @property
    def power(self):
        return 2 * self.j + 2

    def _u(self, z):
        a = self.alpha
        # 1 - 2 a z + a^2 written without cancellation for a -> +-1
        return 0.5 * (1 + z) * (1 - a) ** 2 + 0.5 * (1 - z) * (1 + a) ** 2

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        return ((1 - self.alpha**2) / self._u(z)) ** self.power

    def derivatives(self, z):
        """(P, dP/dz, d^2P/dz^2)."""
        z = np.asarray(z, dtype=float)
        a, n = self.alpha, self.power
        u = self._u(z)
        p = self.pdf(z)
        return p, 2 * a * n * p / u, 4 * a * a * n * (n + 1) * p / u**2

    @property
    def beta(self):
        return -4 * np.arctanh(self.alpha)

    def normalization(self, n_nodes=None):
        """(2j+1)/2 int_{-1}^{1} P(z) dz by Gauss-Legendre quadrature."""
        if n_nodes is None:
            n_nodes = 64 + int(40 * self.power * abs(self.alpha) / max(1e-3, 1 - abs(self.alpha)))
        zq, wq = gauss_legendre(min(n_nodes, 20000))
        return 0.5 * (2 * self.j + 1) * float(wq @ self.pdf(zq))

    def expected_normalization(self):
        """tr exp(-beta s3) = sinh((2j+1) beta/2) / sinh(beta/2)."""
        b = self.beta
        if b == 0:
            return 2 * self.j + 1
        m = self.j - np.arange(int(round(2 * self.j + 1)))
        return float(np.sum(np.exp(-b * m)))

    def bin_probabilities(self, edges):
        """Probability mass of z-bins [edges[i], edges[i+1]] (normalized)."""
        zq, wq = gauss_legendre(64)
        masses = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            masses.append(half * float(wq @ self.pdf(lo + half * (zq + 1))))
        masses = np.array(masses)
        return masses / masses.sum()


def stationary_density(j, alpha, n_grid=512):
    j = as_half_integer(j)
    if not abs(alpha) < 1:
        raise ValueError(f"|alpha| = {abs(alpha)} must be < 1 for a normalizable density")
    z = np.linspace(-1, 1, n_grid)
    dist = SphereDistribution(j=j, alpha=float(alpha), z=z, values=None)
    object.__setattr__(dist, "values", dist.pdf(z))
    return dist


def _fp_terms(j, alpha, z, p, dp, d2p):
    a = alpha
    u = 1 - 2 * a * z + a * a
    f = a * (1 + z * z) + 2 * j * a * (1 - z * z) - z * (1 + a * a)
    df = 2 * a * z - 4 * j * a * z - (1 + a * a)
    g = (1 - z * z) * u
    dg = -2 * z * u - 2 * a * (1 - z * z)
    d2g = -2 * u + 8 * a * z
    return np.stack([-df * p, -f * dp, 0.5 * d2g * p, dg * dp, 0.5 * g * d2p])


def fp_residual(j, alpha, P, z, relative=True):
    """Residual of the stationary equation at ``z``.

    ``P`` is a :class:`SphereDistribution` or a callable returning
    ``(P, P', P'')``.  With ``relative=True`` the residual is divided by the
    sum of the absolute values of its terms, since P itself can span many
    orders of magnitude.
    """
    j = as_half_integer(j)
    z = np.asarray(z, dtype=float)
    if np.any(np.abs(z) >= 1):
        raise ValueError("z must lie strictly inside (-1, 1)")
    p, dp, d2p = P.derivatives(z) if isinstance(P, SphereDistribution) else P(z)
    terms = _fp_terms(j, alpha, z, p, dp, d2p)
    res = terms.sum(axis=0)
    if relative:
        res = res / np.abs(terms).sum(axis=0)
    return np.abs(res)


def fp_residual_finite_difference(j, alpha, pdf, z, h=1e-4):
    """Same residual with P' and P'' from central differences (cross-check only)."""
    z = np.asarray(z, dtype=float)

    def triple(zz):
        p0, pp, pm = pdf(zz), pdf(zz + h), pdf(zz - h)
        return p0, (pp - pm) / (2 * h), (pp - 2 * p0 + pm) / h**2

    return fp_residual(j, alpha, triple, z)


def theorem_form(j, beta, z):
    """P as c_j / Q_{j+1}(-x) with c_j from the trace condition (for comparison)."""
    z = np.asarray(z, dtype=float)
    x = np.stack([np.sqrt(np.clip(1 - z * z, 0, None)), np.zeros_like(z), z], axis=-1)
    return p_value(j, ThermalSpec(beta), x)


def z_histogram_test(points, j, alpha, axis=(0.0, 0.0, 1.0), n_bins=20):
    """Pearson chi-square of the z = x.t histogram against the stationary density.

    Returns ``(statistic, p_value, counts, expected)``.
    """
    z = np.asarray(points) @ unit_vector(axis)
    edges = np.linspace(-1, 1, n_bins + 1)
    counts, _ = np.histogram(z, bins=edges)
    probs = stationary_density(j, alpha).bin_probabilities(edges)
    expected = probs * len(z)
    keep = expected >= 5
    if keep.sum() < 2:
        raise ValueError("too few populated bins for a chi-square test")
    # pool sparse bins into one
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    stat, pval = stats.chisquare(obs, exp)
    return float(stat), float(pval), counts, expected


def azimuth_uniformity_test(points, axis=(0.0, 0.0, 1.0), n_bins=16):
    """Chi-square p-value of the azimuth about ``axis`` against uniform."""
    local = np.asarray(points) @ frame_rotation(axis)
    phi = np.arctan2(local[:, 1], local[:, 0])
    counts, _ = np.histogram(phi, bins=np.linspace(-np.pi, np.pi, n_bins + 1))
    return float(stats.chisquare(counts).pvalue)


@dataclass
class BridgeEstimate:
    """One-macro-step statistics of the spinometer from a coherent state.

    ``drift`` ~ E[delta x]/g^2 and ``covariance`` ~ Cov[delta x]/g^2, to be
    compared with a(x) and b b^T.  ``w_second_moment`` is E[W W^T] with
    W = d - g j x0 (the data vector minus its mean).
    """

    x0: np.ndarray
    n_samples: int
    drift: np.ndarray
    drift_se: np.ndarray
    covariance: np.ndarray
    covariance_se: np.ndarray
    w_second_moment: np.ndarray
    w_se: np.ndarray


def _bridge_chunk(system, config, x0, start, stop, seed):
    n = stop - start
    psi = coherent_amplitudes_from_axis(system.j, x0)
    states = np.tile(psi, (n, 1))
    pairs = operator_pairs(system, config)
    states, data = macro_step(states, pairs, config, seed, np.arange(start, stop), 0)
    states /= np.linalg.norm(states, axis=1, keepdims=True)
    dx = _batch_expectations(states, system) / system.j - x0
    w = data - config.theta * 2 * system.j * x0
    dxx = (dx[:, :, None] * dx[:, None, :]).reshape(n, 9)
    ww = (w[:, :, None] * w[:, None, :]).reshape(n, 9)
    return Moments.of(dx), Moments.of(dxx), Moments.of(ww)


def mc_bridge(system, config, x0, n_samples, seed, workers=1, chunk_size=1 << 16):
    """Monte Carlo estimates of drift and diffusion from single macro-steps.

    Standard errors are the sample standard deviations of delta x and of
    the products delta x_k delta x_l, over sqrt(n).
    """
    x0 = unit_vector(x0, tol=1e-9)
    args = [(system, config, x0, a, b, seed) for a, b in chunk_bounds(n_samples, chunk_size)]
    parts = map_ordered(_bridge_chunk, args, workers)
    m_dx, m_dxx, m_ww = (Moments.merge_all([p[i] for p in parts]) for i in range(3))
    g2 = (2 * config.theta) ** 2
    mean = m_dx.mean
    return BridgeEstimate(
        x0=x0, n_samples=n_samples,
        drift=mean / g2, drift_se=m_dx.standard_error / g2,
        covariance=(m_dxx.mean.reshape(3, 3) - np.outer(mean, mean)) / g2,
        covariance_se=m_dxx.standard_error.reshape(3, 3) / g2,
        w_second_moment=m_ww.mean.reshape(3, 3), w_se=m_ww.standard_error.reshape(3, 3),
    )


def bridge_model(system, config):
    """The drift-diffusion model matching a closed-loop spinometer config."""
    return DriftDiffusionModel(j=system.j, alpha=config.feedback, theta=config.theta, axis=config.axis)


def bridge_check(j, alpha, theta, x0, n_samples, seed, axis=(0.0, 0.0, 1.0), workers=1):
    """Largest |estimate - model| / SE over drift and covariance entries."""
    system = build_spin_system(j)
    config = SpinometerConfig(theta=theta, alpha=alpha, axis=axis, mode="closed_loop_triaxial")
    est = mc_bridge(system, config, x0, n_samples, seed, workers=workers)
    model = bridge_model(system, config)
    a = drift(model, est.x0)
    b = diffusion_matrix(model, est.x0)
    z_drift = np.abs(est.drift - a) / est.drift_se
    cov_se = np.where(est.covariance_se > 0, est.covariance_se, np.inf)
    z_cov = np.abs(est.covariance - b @ b.T) / cov_se
    return est, float(z_drift.max()), float(z_cov.max())
