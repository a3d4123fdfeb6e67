"""Weak binary measurements drive a spin toward einselected states.

Under repeated measurement of s3 alone, a spin-1 state that starts along x
loses its s3 variance and settles into an eigenstate of s3.  With all three
generators measured (plus feedback), the state is driven onto a coherent
state instead, and the data record then tracks the spin direction.

Run:  python demos/einselection.py
"""

import numpy as np

from spinlab.spin_algebra import build_spin_system, coherent_state
from spinlab.spinometer import (
    SpinometerConfig,
    coherent_fidelity,
    run_ensemble,
    run_trajectory,
    uniaxial_exact_variance,
)

theta = 0.1
system = build_spin_system(1)
start = coherent_state(system, [1.0, 0.0, 0.0]).state

# uniaxial: ensemble mean of Var(s3) against exact enumeration over outcomes
uni = SpinometerConfig(theta=theta, alpha=0.0, mode="uniaxial")
n_steps = round(10 / theta**2)
summary = run_ensemble(uni, system, start, n_trajectories=2000, n_steps=n_steps, seed=1, stride=n_steps // 5)
exact = uniaxial_exact_variance(start, system, theta, summary.steps)
print("uniaxial, j = 1, theta = 0.1")
print(f"{'step':>6} {'MC mean':>11} {'+/-':>9} {'exact':>11}")
for n, m, se, e in zip(summary.steps, summary.einselection_mean, summary.einselection_se, exact):
    print(f"{n:6d} {m:11.5f} {se:9.5f} {e:11.5f}")

# one uniaxial trajectory ends near m = +1, 0 or -1
traj = run_trajectory(uni, system, start, n_steps, seed=1, stride=n_steps)
final = traj.states[-1]
print("final |amplitudes|^2 of one trajectory:", np.round(np.abs(final) ** 2, 4))

# triaxial closed loop: the state becomes coherent, wherever it points
tri = SpinometerConfig(theta=theta, alpha=-0.3, mode="closed_loop_triaxial")
traj = run_trajectory(tri, system, system.basis_state(0), 1000, seed=2, stride=250)
print("\ntriaxial closed loop, starting from |m=0>")
for n, x, e in zip(traj.steps, traj.x, traj.einselection):
    print(f"step {n:5d}  x = {np.array2string(x, precision=3):28s}  tr(sigma sigma*) = {e:.2e}")
print(f"coherent fidelity of the final state: {coherent_fidelity(traj.states[-1], system):.6f}")
