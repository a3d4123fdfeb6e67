"""Feedback turns the measured spin into a thermometer at temperature 1/beta.

The ensemble map with feedback strength alpha = -tanh(beta/4) relaxes any
starting density matrix to a state that is thermal along the feedback axis,
up to corrections of order theta^2.  A Lindblad generator with matched
rates reproduces the same step to second order.

Run:  python demos/thermalization.py
"""

import numpy as np

from spinlab.density import (
    LindbladParams,
    alpha_from_beta,
    density_increment,
    ensemble_map,
    evolve_to_stationary,
    lindblad_increment,
    random_density_matrix,
)
from spinlab.representations import ThermalSpec, thermal_operator
from spinlab.spin_algebra import build_spin_system

beta = 1.0
alpha = alpha_from_beta(beta)
system = build_spin_system(1.5)
thermal = thermal_operator(system, ThermalSpec(beta))
print(f"j = 3/2, beta = {beta}, alpha = {alpha:.4f}")

print("\ntheta    iterations   trace distance to thermal")
for theta in (0.08, 0.04, 0.02):
    emap = ensemble_map(system, theta, alpha)
    rho0 = random_density_matrix(system.dim, np.random.default_rng(3))
    out = evolve_to_stationary(rho0, emap, thermal=thermal)
    print(f"{theta:5.2f}   {out.iterations:10d}   {out.trace_distance_to_thermal:.3e}")

print("\none-step change at the thermal state; Lindblad gap on a random state")
rho_th = thermal.normalized_view().matrix
rho = random_density_matrix(system.dim, np.random.default_rng(4))
for theta in (0.04, 0.02, 0.01):
    emap = ensemble_map(system, theta, alpha)
    step = density_increment(rho_th, emap)
    lind = lindblad_increment(rho, LindbladParams.from_feedback(alpha, theta), system)
    gap = density_increment(rho, emap) - lind
    print(f"theta = {theta:4.2f}   max|delta rho| = {np.max(np.abs(step)):.2e}"
          f"   max|delta rho - L rho| = {np.max(np.abs(gap)):.2e}")
