"""Quantum-limited position sensing with Hilbert-correlated noise.

A pair of noise series (measurement noise on q, back-action force f) is
synthesized so that S_qq S_ff = hbar^2/4 and the cross spectrum is
(i hbar/2) sgn w.  A classical force then produces exactly the same
response as with uncorrelated force noise.

Run:  python demos/oscillator_noise.py
"""

import numpy as np

from spinlab.oscillator import (
    OscillatorParams,
    chirp,
    classical_force_undetectability,
    estimate_spectra,
    synthesize_hilbert_pair,
)

params = OscillatorParams()
pairs = [synthesize_hilbert_pair(params, 1 << 16, seed) for seed in range(4)]
est = estimate_spectra(np.array([p.q for p in pairs]), np.array([p.f for p in pairs]), params.r)

print("   omega     S_qq*S_ff   Im S_qf   (targets 0.25 and +/-0.5)")
for w in (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0):
    k = np.argmin(np.abs(est.omega - w))
    print(f"{est.omega[k]:8.3f}  {est.s_qq[k] * est.s_ff[k]:10.4f}  {est.s_qf[k].imag:8.4f}")

f_ext = chirp(params, 1 << 15, 0.5, 2.0, 256, amplitude=5.0)
cmp_ = classical_force_undetectability(params, f_ext, seeds=range(10))
print(f"\ntransfer function, correlated vs independent noise: max z = {cmp_.max_z():.2f}")
