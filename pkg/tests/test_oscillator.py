import warnings

import numpy as np
import pytest

from spinlab.oscillator import (
    HILBERT_SIGN,
    NoisePair,
    OscillatorParams,
    chirp,
    classical_force_undetectability,
    estimate_spectra,
    free_evolution_state,
    hilbert_identity_residual,
    hilbert_sign_check,
    independent_force,
    newtonian_evolve,
    oscillator_energy,
    oscillator_operators,
    spin_to_oscillator_map,
    sql_product,
    synthesize_hilbert_pair,
    white_noise_series,
)
from spinlab.spin_algebra import build_spin_system, coherent_state

P = OscillatorParams()
N = 1 << 16


@pytest.fixture(scope="module")
def spectra():
    pairs = [synthesize_hilbert_pair(P, N, seed) for seed in range(4)]
    q = np.array([p.q for p in pairs])
    f = np.array([p.f for p in pairs])
    return pairs, estimate_spectra(q, f, P.r)


def test_params_validation():
    with pytest.raises(ValueError):
        OscillatorParams(m=0)
    with pytest.raises(ValueError):
        OscillatorParams(r=np.inf)
    with pytest.raises(ValueError):
        OscillatorParams(r=1.0).check_sampling()
    OscillatorParams(r=1.6).check_sampling()
    assert P.s_qq * P.s_ff == pytest.approx(P.hbar**2 / 4)


def test_white_noise_moments():
    x = white_noise_series(P, 200000, seed=1)
    n = len(x)
    var = x.var()
    assert abs(var - 1 / P.g_s**2) < 3 * var * np.sqrt(2 / n)
    assert abs(x.mean()) < 3 * np.sqrt(var / n)
    lag1 = np.mean(x[1:] * x[:-1]) / var
    assert abs(lag1) < 3 / np.sqrt(n)
    with pytest.raises(ValueError):
        white_noise_series(P, 0, seed=1)


def test_white_noise_is_flat():
    x = white_noise_series(P, N, seed=2)
    est = estimate_spectra(x, x, P.r)
    level = 1 / (P.g_s**2 * P.r)
    z = (est.s_qq - level) / est.se_qq
    assert np.mean(np.abs(z) < 3) > 0.98
    assert abs(np.mean(est.s_qq) / level - 1) < 0.01


def test_white_noise_is_keyed_by_index():
    a = white_noise_series(P, 100, seed=3)
    b = white_noise_series(P, 300, seed=3)
    assert np.array_equal(a, b[:100])


def test_synthesis_guards():
    with pytest.raises(ValueError):
        synthesize_hilbert_pair(P, 1000, seed=0)
    with pytest.raises(ValueError):
        NoisePair(q=np.zeros(4), f=np.zeros(5), r=1.0)


def test_sql_product(spectra):
    _, est = spectra
    band = est.band(0.5 * P.omega0, 2 * P.omega0)
    assert sql_product(est, band) == pytest.approx(P.hbar**2 / 4, rel=0.1)


def test_cross_spectrum_sign_and_size(spectra):
    _, est = spectra
    pos = est.omega > 0
    neg = est.omega < 0
    assert np.mean(est.s_qf.imag[pos]) == pytest.approx(P.hbar / 2, rel=0.1)
    assert np.mean(est.s_qf.imag[neg]) == pytest.approx(-P.hbar / 2, rel=0.1)
    z_re = est.s_qf.real / est.se_qf_real
    assert abs(np.mean(z_re)) < 3 / np.sqrt(len(z_re))
    ok, n_sig = hilbert_sign_check(est)
    assert ok and n_sig > 0.9 * len(est.omega)


def test_hilbert_sign_regression():
    # the +pi/2 / -pi/2 choice is frozen: with scipy's H (multiplier -i sgn w)
    # the force is -H[q] scaled, and Im S_qf is then positive for w > 0
    assert HILBERT_SIGN == -1.0
    pair = synthesize_hilbert_pair(P, 1 << 15, seed=5)
    est = estimate_spectra(pair.q, pair.f, P.r)
    assert np.mean(est.s_qf.imag[est.omega > 0]) > 0
    flipped = estimate_spectra(pair.q, -pair.f, P.r)
    assert np.mean(flipped.s_qf.imag[flipped.omega > 0]) < 0


def test_hilbert_identity(spectra):
    pairs, _ = spectra
    for pair in pairs:
        assert hilbert_identity_residual(pair, P) < 1e-10


def test_parseval(spectra):
    pairs, est = spectra
    var_q = np.mean([p.q.var() for p in pairs])
    var_f = np.mean([p.f.var() for p in pairs])
    dw = 2 * np.pi * P.r / est.segment_length
    assert np.sum(est.s_qq) * dw / (2 * np.pi) == pytest.approx(var_q, rel=0.02)
    assert np.sum(est.s_ff) * dw / (2 * np.pi) == pytest.approx(var_f, rel=0.02)


def test_cross_spectrum_hermitian_symmetry(spectra):
    _, est = spectra
    w = est.omega
    pos = np.where((w > 0) & (-w[::-1] < 0))[0]
    for i in pos[:50]:
        k = np.argmin(np.abs(w + w[i]))
        assert est.s_qf[k] == pytest.approx(np.conj(est.s_qf[i]), abs=1e-12)


def test_independent_force_shares_spectrum_but_not_phase():
    f_ind = independent_force(P, N, seed=1)
    pair = synthesize_hilbert_pair(P, N, seed=1)
    est = estimate_spectra(pair.q, f_ind, P.r)
    assert np.mean(est.s_ff) == pytest.approx(P.s_ff, rel=0.05)
    assert abs(np.mean(est.s_qf.imag[est.omega > 0])) < 0.05 * P.hbar / 2


def test_spectral_estimator_sinusoid():
    n = 1 << 16
    t = np.arange(n) / P.r
    noise = white_noise_series(P, n, seed=8, scale=1.0)
    x = 3.0 * np.sin(P.omega0 * t) + noise
    est = estimate_spectra(x, x, P.r)
    peak = est.omega[np.argmax(est.s_qq)]
    assert abs(abs(peak) - P.omega0) <= 2 * np.pi * P.r / est.segment_length
    floor = np.median(est.s_qq[np.abs(est.omega) > 3 * P.omega0])
    assert floor == pytest.approx(1.0 / P.r, rel=0.1)
    with pytest.raises(ValueError):
        estimate_spectra(x[:1000], x[:1000], P.r)


def test_free_oscillation_is_exact():
    n = 4096
    q, qm = newtonian_evolve(P, np.zeros(n), None, q0=1.0)
    t = np.arange(n) * P.dt
    assert np.max(np.abs(q - np.cos(P.omega0 * t))) < 1e-10
    assert np.array_equal(q, qm)


def test_energy_conserved_over_a_million_steps():
    n = np.arange(0, 1_000_001, 1000)
    q, v = free_evolution_state(P, n, q0=0.7, v0=-0.3)
    e = oscillator_energy(P, q, v)
    assert np.max(np.abs(e - e[0])) < 1e-12
    qn, _ = newtonian_evolve(P, np.zeros(1_000_001), None, q0=0.7, v0=-0.3)
    assert np.max(np.abs(qn[n] - q)) < 1e-10


def test_resonant_drive_grows_linearly():
    n = 1 << 15
    t = np.arange(n) * P.dt
    q, _ = newtonian_evolve(P, 0.01 * np.cos(P.omega0 * t), None)
    period = int(round(2 * np.pi / P.omega0 * P.r))
    envelope = np.array([np.max(np.abs(q[k:k + period])) for k in range(0, n - period, period)])
    centre = t[np.arange(0, n - period, period)] + 0.5 * period * P.dt
    slope, icpt = np.polyfit(centre, envelope, 1)
    assert slope == pytest.approx(0.01 / (2 * P.m * P.omega0), rel=0.05)
    fit = slope * centre + icpt
    assert np.max(np.abs(envelope - fit)[5:]) < 0.02 * envelope[-1]


def test_measured_coordinate_adds_noise():
    pair = synthesize_hilbert_pair(P, 1024, seed=3)
    q, qm = newtonian_evolve(P, np.zeros(1024), pair)
    assert np.max(np.abs(qm - q - pair.q)) < 1e-12 * np.max(np.abs(pair.q))
    with pytest.raises(ValueError):
        newtonian_evolve(P, np.zeros(10), pair)
    with pytest.raises(ValueError):
        newtonian_evolve(OscillatorParams(r=1.0), np.zeros(10), None)


def test_undetectability_chirp():
    n = 1 << 15
    f_ext = chirp(P, n, 0.5 * P.omega0, 2 * P.omega0, 256, amplitude=5.0)
    cmp_ = classical_force_undetectability(P, f_ext, seeds=range(8))
    assert len(cmp_.omega) > 0
    assert cmp_.max_z() < 3.5
    a, b = cmp_.output_spectra
    assert a.s_qq.shape == b.s_qq.shape


def test_undetectability_single_tone():
    n = 1 << 15
    t = np.arange(n) * P.dt
    f_ext = 5.0 * np.sin(P.omega0 * t)
    cmp_ = classical_force_undetectability(P, f_ext, seeds=range(8), band=(0.9, 1.1))
    assert cmp_.max_z() < 3.5


def test_spin_to_oscillator_map():
    s = build_spin_system(2)
    pole = spin_to_oscillator_map(s, coherent_state(s, (0, 0, 1)), P, t=0.3)
    assert pole.q == pytest.approx(0, abs=1e-15) and pole.p == pytest.approx(0, abs=1e-15)
    x = np.array([0.1, 0.2, np.sqrt(1 - 0.05)])
    c = spin_to_oscillator_map(s, coherent_state(s, x), P, t=0.0)
    assert c.q == pytest.approx(np.sqrt(s.j * P.hbar / (P.m * P.omega0)) * 0.2)
    tilt = np.array([np.sqrt(1 - 0.95**2), 0, 0.95])
    c = spin_to_oscillator_map(s, coherent_state(s, tilt), P, t=0.0)
    assert c.commutator_proxy == pytest.approx(0.95) and c.within_band
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        spin_to_oscillator_map(s, coherent_state(s, (1, 0, 0)), P, t=0.0)
    assert any("pole" in str(m.message) for m in w)


def test_operator_commutator():
    s = build_spin_system(3)
    q, p = oscillator_operators(s, P, 0.7)
    comm = q @ p - p @ q
    assert np.max(np.abs(comm - 1j * P.hbar * s.s3 / s.j)) < 1e-12
