"""Harmonic-oscillator realization of the measured spin.

Near the thermal pole the coherent label (x, y) behaves like oscillator
coordinates q, p.  The measurement noise q^N and the back-action force f^N
obey, for two-sided spectral densities with

    S_qf(w) = int dtau exp(-i w tau) E[q^N(t) f^N(t + tau)],

the product rule S_qq S_ff = hbar^2/4 and the cross-spectrum
S_qf = (i hbar/2) sgn(w): f^N is a scaled Hilbert transform of q^N.

Sampling is at rate r (step dt = 1/r).  A white series with density S has
per-sample variance S r.  Angular frequencies are in rad per time unit.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window, hilbert

from . import rng
from .moments import Moments
from .quadrature import frame_rotation

# f^N = HILBERT_SIGN * (hbar / (2 S_qq)) * H[q^N], with H the discrete Hilbert
# transform of scipy.signal.hilbert (multiplier -i sgn w).  Fixed against the
# S_qf convention above by tests/test_oscillator.py.
HILBERT_SIGN = -1.0
MIN_SPECTRAL_LENGTH = 1 << 14


@dataclass(frozen=True)
class OscillatorParams:
    m: float = 1.0
    omega0: float = 1.0
    hbar: float = 1.0
    r: float = 8.0
    g_s: float = 0.1
    j: float = 1.0

    def __post_init__(self):
        for name in ("m", "omega0", "hbar", "r", "g_s", "j"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name}={v} must be finite and positive")

    @property
    def dt(self):
        return 1.0 / self.r

    @property
    def length_scale(self):
        """(j hbar / m w0)^(1/2): converts the spin label to a coordinate."""
        return np.sqrt(self.j * self.hbar / (self.m * self.omega0))

    @property
    def s_qq(self):
        """Two-sided measurement-noise density (j hbar/m w0)/(g_s^2 r)."""
        return self.length_scale**2 / (self.g_s**2 * self.r)

    @property
    def s_ff(self):
        """Back-action force density hbar^2 / (4 S_qq)."""
        return self.hbar**2 / (4 * self.s_qq)

    def check_sampling(self):
        """Require r > 10 w0 / (2 pi)."""
        if not self.r > 10 * self.omega0 / (2 * np.pi):
            raise ValueError(
                f"sampling rate r={self.r} must exceed 10 w0/(2 pi) = {10 * self.omega0 / (2 * np.pi):.4g}"
            )


@dataclass(frozen=True)
class NoisePair:
    q: np.ndarray
    f: np.ndarray
    r: float

    def __post_init__(self):
        if np.shape(self.q) != np.shape(self.f):
            raise ValueError("q and f must have the same length")


def white_noise_series(params, n_samples, seed, stream=rng.STREAM_NOISE_Q, scale=None):
    """Gaussian white series with per-sample variance ``scale``^2.

    The default scale 1/g_s gives the spin-label noise (density
    1/(g_s^2 r)).  Draw k of the series is a pure function of (seed, k).
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    sd = 1.0 / params.g_s if scale is None else scale
    return sd * rng.normal(seed, stream, np.arange(n_samples), 0)


def _hilbert_multiplier(n):
    """i sgn(w) on the FFT grid, zero at DC and at the Nyquist bin."""
    k = np.fft.fftfreq(n)
    h = 1j * np.sign(k)
    if n % 2 == 0:
        h[n // 2] = 0.0
    return h


def hilbert_force(q, params):
    """f = (hbar / (2 S_qq)) * IFFT[i sgn(w) FFT[q]] (real for real q)."""
    h = params.hbar / (2 * params.s_qq) * _hilbert_multiplier(len(q))
    return np.fft.ifft(h * np.fft.fft(q)).real


def synthesize_hilbert_pair(params, n_samples, seed, stream=rng.STREAM_NOISE_Q):
    """Measurement noise q^N (white, density S_qq) and its Hilbert-correlated force."""
    if n_samples < 2 or n_samples & (n_samples - 1):
        raise ValueError("n_samples must be a power of two")
    q = white_noise_series(params, n_samples, seed, stream, scale=np.sqrt(params.s_qq * params.r))
    return NoisePair(q=q, f=hilbert_force(q, params), r=params.r)


def hilbert_identity_residual(pair, params):
    """max |f - HILBERT_SIGN (hbar/2S_qq) H[q]| using scipy's analytic signal."""
    ref = HILBERT_SIGN * params.hbar / (2 * params.s_qq) * np.imag(hilbert(pair.q))
    return float(np.max(np.abs(pair.f - ref)))


def independent_force(params, n_samples, seed):
    """A force series with the same auto-spectrum as the Hilbert force but
    built from an independent white series."""
    other = synthesize_hilbert_pair(params, n_samples, seed, stream=rng.STREAM_NOISE_Q_INDEPENDENT)
    return other.f


def newtonian_evolve(params, f_ext, noise, q0=0.0, v0=0.0):
    """Undamped oscillator driven by impulsive forces.  Returns (q, q^M).

    With u = q + i v/w0 the free motion is u(t) = u(0) exp(-i w0 t), and the
    force sample f_k acting over one step adds i f_k dt/(m w0) to u at t_k.
    q_n is sampled at t_n = n dt before the n-th impulse.  Phases are
    evaluated directly, so there is no integrator drift.
    """
    params.check_sampling()
    f_ext = np.asarray(f_ext, dtype=float)
    if noise is not None and len(noise.q) != len(f_ext):
        raise ValueError("series lengths differ")
    force = f_ext if noise is None else f_ext + noise.f
    n = len(force)
    t = np.arange(n) * params.dt
    w0 = params.omega0
    kicks = 1j * force * params.dt / (params.m * w0) * np.exp(1j * w0 * t)
    acc = np.concatenate([[0.0], np.cumsum(kicks)[:-1]])
    u = np.exp(-1j * w0 * t) * (q0 + 1j * v0 / w0 + acc)
    q = u.real
    q_meas = q if noise is None else q + noise.q
    return q, q_meas


def oscillator_energy(params, q, v):
    return 0.5 * params.m * (np.asarray(v) ** 2 + params.omega0**2 * np.asarray(q) ** 2)


def free_evolution_state(params, n, q0=1.0, v0=0.0):
    """(q, v) of the force-free oscillator at t_n = n dt (exact phasor)."""
    t = np.asarray(n) * params.dt
    u = np.exp(-1j * params.omega0 * t) * (q0 + 1j * v0 / params.omega0)
    return u.real, params.omega0 * u.imag


@dataclass
class SpectralEstimate:
    """Two-sided Welch estimates on ascending angular frequencies.

    Error bands are standard errors from the scatter of the per-segment
    periodograms.  ``s_qf`` uses conj(Q) F, matching the cross-spectrum
    convention in the module docstring.
    """

    omega: np.ndarray
    s_qq: np.ndarray
    s_ff: np.ndarray
    s_qf: np.ndarray
    se_qq: np.ndarray
    se_ff: np.ndarray
    se_qf_real: np.ndarray
    se_qf_imag: np.ndarray
    n_segments: int
    segment_length: int

    def band(self, lo, hi):
        """Boolean mask of lo <= |w| <= hi."""
        a = np.abs(self.omega)
        return (a >= lo) & (a <= hi)


def _segments(x, length):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = x.shape[1] // length
    return x[:, : k * length].reshape(-1, length)


def estimate_spectra(q, f, r, segment_length=1024, min_length=MIN_SPECTRAL_LENGTH):
    """Averaged-periodogram (Welch) auto- and cross-spectra.

    Hann window, non-overlapping segments, no detrending.  ``q`` and ``f``
    may be 2-D (one realization per row); all segments are pooled.
    """
    q = np.atleast_2d(q)
    f = np.atleast_2d(f)
    if q.shape != f.shape:
        raise ValueError("q and f must have the same shape")
    if q.shape[1] < min_length:
        raise ValueError(f"series too short: {q.shape[1]} < {min_length} samples")
    if q.shape[1] < segment_length:
        raise ValueError("segment_length exceeds the series length")
    win = get_window("hann", segment_length)
    scale = 1.0 / (r * np.sum(win**2))
    qs = np.fft.fft(_segments(q, segment_length) * win, axis=1)
    fs = np.fft.fft(_segments(f, segment_length) * win, axis=1)
    pqq = scale * np.abs(qs) ** 2
    pff = scale * np.abs(fs) ** 2
    pqf = scale * np.conj(qs) * fs
    order = np.argsort(np.fft.fftfreq(segment_length))
    omega = 2 * np.pi * r * np.fft.fftfreq(segment_length)[order]
    mq, mf = Moments.of(pqq[:, order]), Moments.of(pff[:, order])
    mre, mim = Moments.of(pqf.real[:, order]), Moments.of(pqf.imag[:, order])
    return SpectralEstimate(
        omega=omega, s_qq=mq.mean, s_ff=mf.mean, s_qf=mre.mean + 1j * mim.mean,
        se_qq=mq.standard_error, se_ff=mf.standard_error,
        se_qf_real=mre.standard_error, se_qf_imag=mim.standard_error,
        n_segments=len(pqq), segment_length=segment_length,
    )


def sql_product(est, band):
    """Band average of S_qq S_ff."""
    return float(np.mean(est.s_qq[band] * est.s_ff[band]))


def hilbert_sign_check(est, n_se=3.0):
    """(all_ok, n_significant): sign(Im S_qf) == sign(w) wherever
    |S_qf| exceeds ``n_se`` times its standard error."""
    se = np.hypot(est.se_qf_real, est.se_qf_imag)
    sig = (np.abs(est.s_qf) > n_se * se) & (est.omega != 0)
    ok = np.sign(est.s_qf.imag[sig]) == np.sign(est.omega[sig])
    return bool(np.all(ok)), int(sig.sum())


def chirp(params, n_samples, w_lo, w_hi, period, amplitude=1.0):
    """Linear chirp from w_lo to w_hi, restarted every ``period`` samples."""
    t = (np.arange(n_samples) % period) * params.dt
    span = period * params.dt
    phase = w_lo * t + 0.5 * (w_hi - w_lo) * t**2 / span
    return amplitude * np.sin(phase)


@dataclass
class TransferComparison:
    """Transfer functions f_ext -> q^M in the two noise arms.

    ``h_correlated`` and ``h_independent`` are seed averages; ``diff_mean``
    and ``diff_se`` summarize the per-seed differences of |H| (standard
    error across seeds, which are independent).  ``output_spectra`` holds
    the q^M auto-spectra of both arms, reported but not tested.
    """

    omega: np.ndarray
    h_correlated: np.ndarray
    h_independent: np.ndarray
    diff_mean: np.ndarray
    diff_se: np.ndarray
    phase_diff_mean: np.ndarray
    phase_diff_se: np.ndarray
    output_spectra: tuple

    def max_z(self):
        z_mag = np.abs(self.diff_mean) / self.diff_se
        z_phase = np.abs(self.phase_diff_mean) / self.phase_diff_se
        return float(max(z_mag.max(), z_phase.max()))


def _transfer(f_ext, q_meas, length, r):
    win = get_window("hann", length)
    fe = np.fft.fft(_segments(f_ext, length) * win, axis=1)
    qm = np.fft.fft(_segments(q_meas, length) * win, axis=1)
    return (np.conj(fe) * qm).mean(axis=0) / (np.abs(fe) ** 2).mean(axis=0)


def classical_force_undetectability(params, f_ext, seeds, segment_length=256, band=None):
    """Compare the f_ext -> q^M response with Hilbert-correlated noise (a)
    and with independent noise of identical auto-spectra (b).

    Both arms share the measurement noise q^N and the external force; only
    the force noise differs.  Returns a :class:`TransferComparison` over the
    bins inside ``band`` (default [w0/2, 2 w0]).
    """
    params.check_sampling()
    f_ext = np.asarray(f_ext, dtype=float)
    n = len(f_ext)
    if band is None:
        band = (0.5 * params.omega0, 2.0 * params.omega0)
    freqs = 2 * np.pi * params.r * np.fft.fftfreq(segment_length)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    ha, hb, spec_a, spec_b = [], [], [], []
    for seed in seeds:
        pair = synthesize_hilbert_pair(params, n, seed)
        other = NoisePair(q=pair.q, f=independent_force(params, n, seed), r=params.r)
        _, qa = newtonian_evolve(params, f_ext, pair)
        _, qb = newtonian_evolve(params, f_ext, other)
        ha.append(_transfer(f_ext, qa, segment_length, params.r)[sel])
        hb.append(_transfer(f_ext, qb, segment_length, params.r)[sel])
        spec_a.append(qa)
        spec_b.append(qb)
    ha, hb = np.array(ha), np.array(hb)
    mag = Moments.of(np.abs(ha) - np.abs(hb))
    ph = Moments.of(np.angle(ha * np.conj(hb)))
    out_a = estimate_spectra(np.array(spec_a), np.array(spec_a), params.r, segment_length, min_length=1)
    out_b = estimate_spectra(np.array(spec_b), np.array(spec_b), params.r, segment_length, min_length=1)
    return TransferComparison(
        omega=freqs[sel], h_correlated=ha.mean(axis=0), h_independent=hb.mean(axis=0),
        diff_mean=mag.mean, diff_se=mag.standard_error,
        phase_diff_mean=ph.mean, phase_diff_se=ph.standard_error,
        output_spectra=(out_a, out_b),
    )


@dataclass(frozen=True)
class OscillatorCoordinates:
    q: float
    p: float
    commutator_proxy: float
    within_band: bool


def spin_to_oscillator_map(system, state, params, t, axis=(0.0, 0.0, 1.0), band=0.1):
    """Coherent-state coordinates of the oscillator at time ``t``.

    q = (j hbar/m w0)^(1/2) (y cos w0 t - x sin w0 t)
    p = (m w0 hbar j)^(1/2) (-y sin w0 t - x cos w0 t)

    The proxy <s3>/j = z measures how closely [q, p] approximates i hbar;
    ``within_band`` is |1 - z| <= ``band``.  Warns when z < 0.9.
    """
    x = np.asarray(state.axis, dtype=float)
    if not np.allclose(axis, (0.0, 0.0, 1.0)):
        x = frame_rotation(axis).T @ x
    z = float(x[2])
    if z < 0.9:
        warnings.warn(f"z = {z:.3f} is far from the pole; the oscillator map is only approximate",
                      stacklevel=2)
    c, s = np.cos(params.omega0 * t), np.sin(params.omega0 * t)
    q = np.sqrt(system.j * params.hbar / (params.m * params.omega0)) * (x[1] * c - x[0] * s)
    p = np.sqrt(params.m * params.omega0 * params.hbar * system.j) * (-x[1] * s - x[0] * c)
    return OscillatorCoordinates(q=float(q), p=float(p), commutator_proxy=z,
                                 within_band=abs(1 - z) <= band)


def oscillator_operators(system, params, t):
    """Operator forms of q and p; [q, p] = i hbar s3 / j."""
    c, s = np.cos(params.omega0 * t), np.sin(params.omega0 * t)
    j = system.j
    q = np.sqrt(params.hbar / (j * params.m * params.omega0)) * (system.s2 * c - system.s1 * s)
    p = np.sqrt(params.m * params.omega0 * params.hbar / j) * (-system.s2 * s - system.s1 * c)
    return q, p
