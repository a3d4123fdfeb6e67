"""Diffusion limit of the closed-loop spinometer.

The coherent-state label x performs a diffusion on the unit sphere whose
stationary density in z = x.t is known in closed form.  This script
simulates the stochastic equation and compares the z histogram with it.

Run:  python demos/fokker_planck.py   (a few seconds)
"""

import numpy as np

from spinlab.density import alpha_from_beta
from spinlab.diffusion import (
    DriftDiffusionModel,
    default_burn_in,
    simulate_sde,
    stationary_density,
    z_histogram_test,
)

j, beta, theta = 1.0, 1.0, 0.1
alpha = alpha_from_beta(beta)
model = DriftDiffusionModel(j, alpha, theta=theta)
pts = simulate_sde(model, 5000, 2 * default_burn_in(theta), seed=5)
stat, p, counts, expected = z_histogram_test(pts, j, alpha, n_bins=10)

print(f"j = {j}, beta = {beta}, theta = {theta}: chi2 = {stat:.1f}, p = {p:.3f}")
edges = np.linspace(-1, 1, 11)
dist = stationary_density(j, alpha)
for lo, hi, c, e in zip(edges[:-1], edges[1:], counts, expected):
    bar = "#" * int(round(60 * c / counts.max()))
    print(f"[{lo:+.1f}, {hi:+.1f})  {int(c):5d}  expected {e:7.1f}  {bar}")
print(f"mean z: sampled {pts[:, 2].mean():+.4f}")
