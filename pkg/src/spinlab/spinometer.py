"""Binary weak-measurement Markov chains on spin-j states.

A uniaxial spinometer measures one generator per step with the Kraus pair

    A = [cos(theta s) + sin(theta s)] / sqrt(2)   (outcome +1)
    B = [cos(theta s) - sin(theta s)] / sqrt(2)   (outcome -1)

A triaxial spinometer measures s1, s2, s3 in turn within one macro-step.  The
closed-loop variant follows each outcome with a small spin rotation about
t x e_k, by an angle -/+ alpha*theta, which drives the ensemble towards the
thermal state along t.

Trajectory ensembles are vectorized over trajectories; random draws come
from :mod:`spinlab.rng` keyed by (seed, trajectory, macro-step, generator).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

from . import rng
from .parallel import chunk_bounds, map_ordered
from .quadrature import frame_rotation
from .spin_algebra import LEVI_CIVITA, coherent_amplitudes_from_axis, unit_vector

MODES = ("uniaxial", "triaxial", "closed_loop_triaxial")
THETA_MAX = 0.5
DEFAULT_CHUNK = 1024


class DegenerateBranchError(ArithmeticError):
    """A measurement branch with vanishing probability was selected."""


@dataclass(frozen=True)
class SpinometerConfig:
    """Measurement strength, feedback strength and generator set.

    ``generator`` (1, 2 or 3) is only used in uniaxial mode.  ``alpha`` is
    ignored unless ``mode == "closed_loop_triaxial"``.
    """

    theta: float
    alpha: float = 0.0
    axis: tuple = (0.0, 0.0, 1.0)
    mode: str = "triaxial"
    generator: int = 3

    def __post_init__(self):
        if not (0 < self.theta <= THETA_MAX):
            raise ValueError(f"theta={self.theta} must lie in (0, {THETA_MAX}]")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.generator not in (1, 2, 3):
            raise ValueError("generator index must be 1, 2 or 3")
        object.__setattr__(self, "axis", tuple(unit_vector(self.axis, tol=1e-9)))

    @property
    def feedback(self):
        return self.alpha if self.mode == "closed_loop_triaxial" else 0.0

    @property
    def generators(self):
        """0-based indices of the generators measured in one macro-step."""
        return (self.generator - 1,) if self.mode == "uniaxial" else (0, 1, 2)


def _hermitian_function(h, f):
    w, v = np.linalg.eigh(h)
    return (v * f(w)) @ v.conj().T


def increment_operators(system, theta, generator):
    """Kraus pair (A, B) for a binary measurement of ``generator``."""
    g = np.asarray(generator, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(g))))
    if g.shape != (system.dim, system.dim) or np.max(np.abs(g - g.conj().T)) > 1e-12 * scale:
        raise ValueError("generator must be a Hermitian matrix of the system's dimension")
    c = _hermitian_function(g, lambda w: np.cos(theta * w))
    s = _hermitian_function(g, lambda w: np.sin(theta * w))
    return (c + s) / np.sqrt(2), (c - s) / np.sqrt(2)


def feedback_generator(system, axis, k):
    """(t x s)_k = sum_lm eps_klm t_l s_m for 0-based ``k``."""
    t = np.asarray(axis, dtype=float)
    v = np.einsum("lm,l->m", LEVI_CIVITA[k], t)
    return system.dot(v)


def closed_loop_operators(system, config, k):
    """Feedback-dressed Kraus pair for 0-based generator index ``k``.

    A^c = exp(-i alpha theta (t x s)_k) A,  B^c = exp(+i alpha theta (t x s)_k) B.
    """
    a, b = increment_operators(system, config.theta, system.ops[k])
    angle = config.feedback * config.theta
    if angle == 0.0:
        return a, b
    u = expm(-1j * angle * feedback_generator(system, config.axis, k))
    return u @ a, u.conj().T @ b


def operator_pairs(system, config):
    """Kraus pairs for every generator of one macro-step, in order."""
    return [closed_loop_operators(system, config, k) for k in config.generators]


def completeness_residual(a, b):
    """max |A^dag A + B^dag B - I|."""
    m = a.conj().T @ a + b.conj().T @ b
    return float(np.max(np.abs(m - np.eye(len(m)))))


def step(state, operators, draw):
    """One binary measurement.  Returns ``(next_state, outcome)``.

    The outcome is +1 when ``draw < P_A`` with P_A = <psi|A^dag A|psi>.
    """
    psi = np.asarray(state, dtype=complex)
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ValueError("state must be unit-norm")
    a, b = operators
    pa_vec, pb_vec = a @ psi, b @ psi
    pa = float(np.vdot(pa_vec, pa_vec).real)
    pb = float(np.vdot(pb_vec, pb_vec).real)
    if abs(pa + pb - 1) > 1e-12:
        raise ValueError(f"operator pair is not complete: P_A + P_B = {pa + pb}")
    if draw < pa:
        vec, p, outcome = pa_vec, pa, 1
    else:
        vec, p, outcome = pb_vec, pb, -1
    if p < 1e-300:
        raise DegenerateBranchError(f"selected branch has probability {p}")
    return vec / np.sqrt(p), outcome


def expectation(state, op):
    psi = np.asarray(state)
    return np.vdot(psi, op @ psi)


def variance(state, generator):
    """Delta(s) = <s^2> - <s>^2, clipped at 0 against round-off."""
    m1 = expectation(state, generator).real
    m2 = expectation(state, generator @ generator).real
    return max(m2 - m1 * m1, 0.0)


def variance_increment_exact(state, operators, generator):
    """Exact expected one-step change of Delta(generator)."""
    psi = np.asarray(state, dtype=complex)
    total = -variance(psi, generator)
    for op in operators:
        v = op @ psi
        p = float(np.vdot(v, v).real)
        if p > 0:
            total += p * variance(v / np.sqrt(p), generator)
    return total


def spin_covariance(state, system):
    """sigma_kl = <s_k s_l> - <s_k><s_l> (complex Hermitian 3x3)."""
    psi = np.asarray(state, dtype=complex)
    vecs = [s @ psi for s in system.ops]
    mean = np.array([np.vdot(psi, v).real for v in vecs])
    second = np.array([[np.vdot(vk, vl) for vl in vecs] for vk in vecs])
    return second - np.outer(mean, mean), mean


def trace_sigma(state, system):
    """tr sigma = sum of the three variances."""
    sigma, _ = spin_covariance(state, system)
    return float(np.trace(sigma).real)


@dataclass(frozen=True)
class CovarianceDiagnostics:
    """Spin covariance and its decomposition into nonnegative pieces.

    ``sigma_bar`` is the real symmetric part of the covariance.  The p-terms
    are evaluated in the frame where <s> = (0, 0, j x3) from the symmetrized
    second moments M_kl = <{s_k, s_l}>/2:

    ==== =====================================
    p_a  (M33 - (j x3)^2)^2
    p_b  M12^2 + M13^2 + M23^2
    p_c  (M11 - M22)^2
    p_d  (tr M - M33)^2 - (j(j+1) - M33)^2
    p_e  j^2 - M33
    p_f  j^2 (1 - x3^2)
    ==== =====================================

    With them

    tr sigma sigma^* = p_a + 2 p_b + p_c/2 + p_d/2 + j p_e + p_e^2/2 + p_f/2
    tr sigma_bar sigma_bar = j^2/2 + p_a + 2 p_b + p_c/2 + p_d/2 + j p_e + p_e^2/2

    p_d vanishes identically on physical states because tr M is the
    Casimir j(j+1).
    """

    sigma: np.ndarray
    sigma_bar: np.ndarray
    p_a: float
    p_b: float
    p_c: float
    p_d: float
    p_e: float
    p_f: float
    tr_sigma_sigma_conj: float
    tr_sigma_bar_sq: float
    j: float

    @property
    def p_terms(self):
        return np.array([self.p_a, self.p_b, self.p_c, self.p_d, self.p_e, self.p_f])

    def reassembled_tr_sigma_sigma_conj(self):
        return (self.p_a + 2 * self.p_b + 0.5 * self.p_c + 0.5 * self.p_d
                + self.j * self.p_e + 0.5 * self.p_e**2 + 0.5 * self.p_f)

    def reassembled_tr_sigma_bar_sq(self):
        return (0.5 * self.j**2 + self.p_a + 2 * self.p_b + 0.5 * self.p_c
                + 0.5 * self.p_d + self.j * self.p_e + 0.5 * self.p_e**2)

    def residuals(self):
        """Absolute reassembly errors of the two identities."""
        return (abs(self.tr_sigma_sigma_conj - self.reassembled_tr_sigma_sigma_conj()),
                abs(self.tr_sigma_bar_sq - self.reassembled_tr_sigma_bar_sq()))


def covariance_diagnostics(state, system, check=True, tol=1e-10):
    psi = np.asarray(state, dtype=complex)
    j = system.j
    sigma, mean = spin_covariance(psi, system)
    sigma_bar = sigma.real.copy()
    second = np.array([[np.vdot(psi, 0.5 * (a @ b + b @ a) @ psi).real for b in system.ops]
                       for a in system.ops])
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        rot = np.eye(3)
    else:
        rot = frame_rotation(mean / norm).T  # takes <s> to the +z axis
    m = rot @ second @ rot.T
    v3 = norm
    x3 = v3 / j if j > 0 else 0.0
    casimir = j * (j + 1)
    tr_m = np.trace(m)
    diag = CovarianceDiagnostics(
        sigma=sigma,
        sigma_bar=sigma_bar,
        p_a=(m[2, 2] - v3**2) ** 2,
        p_b=m[0, 1] ** 2 + m[0, 2] ** 2 + m[1, 2] ** 2,
        p_c=(m[0, 0] - m[1, 1]) ** 2,
        # difference of squares, factored to avoid cancellation
        p_d=(tr_m - casimir) * (tr_m + casimir - 2 * m[2, 2]),
        p_e=j**2 - m[2, 2],
        p_f=j**2 * (1 - x3**2),
        tr_sigma_sigma_conj=float(np.sum(sigma * sigma).real),
        tr_sigma_bar_sq=float(np.sum(sigma_bar * sigma_bar)),
        j=j,
    )
    if check:
        scale = max(1.0, j**4)
        r1, r2 = diag.residuals()
        if r1 > tol * scale or r2 > tol * scale:
            raise ArithmeticError(f"covariance decomposition residuals {r1:.3g}, {r2:.3g}")
    return diag


def tr_sigma_sigma_conj(state, system):
    sigma, _ = spin_covariance(state, system)
    return float(np.sum(sigma * sigma).real)


def triaxial_increment_exact(state, system, config):
    """Exact expected change of tr sigma, summed over the three generators.

    Each generator contributes its own two-branch expectation from the same
    input state (six branches in all); feedback rotations leave tr sigma and
    the branch probabilities unchanged.
    """
    psi = np.asarray(state, dtype=complex)
    base = trace_sigma(psi, system)
    total = 0.0
    for k in range(3):
        total -= base
        for op in closed_loop_operators(system, config, k):
            v = op @ psi
            p = float(np.vdot(v, v).real)
            if p > 0:
                total += p * trace_sigma(v / np.sqrt(p), system)
    return total


def uniaxial_decay_residual(state, system, theta, generator=3):
    """Exact one-step E[delta Delta] + 4 theta^2 Delta^2 for a uniaxial step.

    The leading-order decay law predicts zero; the residual is O(theta^4).
    """
    s = system.ops[generator - 1]
    ops = increment_operators(system, theta, s)
    return variance_increment_exact(state, ops, s) + 4 * theta**2 * variance(state, s) ** 2


def triaxial_decay_residual(state, system, config):
    """Exact E[delta tr sigma] + 4 theta^2 tr sigma sigma^*; O(theta^4)."""
    return (triaxial_increment_exact(state, system, config)
            + 4 * config.theta**2 * tr_sigma_sigma_conj(state, system))


def macro_step_expectation(state, pairs, measure):
    """Exact E[measure(state after one macro-step)] by enumerating every
    branch sequence of the generators applied in order (2^len(pairs) paths)."""
    paths = [(1.0, np.asarray(state, dtype=complex))]
    for a, b in pairs:
        nxt = []
        for p, psi in paths:
            for op in (a, b):
                v = op @ psi
                q = float(np.vdot(v, v).real)
                if q > 0:
                    nxt.append((p * q, v / np.sqrt(q)))
        paths = nxt
    return sum(p * measure(psi) for p, psi in paths)


def uniaxial_exact_variance(state, system, theta, steps, generator=3):
    """Exact E[Delta_n] of a uniaxial spinometer at each n in ``steps``.

    A and B are functions of the same generator, so the state after n steps
    depends only on the number k of +1 outcomes; the expectation is a sum
    over k with binomial multiplicities.
    """
    steps = np.atleast_1d(np.asarray(steps))
    if steps.dtype.kind not in "iu" or np.any(steps < 0):
        raise ValueError("steps must be nonnegative integers")
    g = system.ops[generator - 1]
    w, v = np.linalg.eigh(g)
    c2 = np.abs(v.conj().T @ np.asarray(state, dtype=complex)) ** 2
    s2 = np.sin(2 * theta * w)
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log((1 + s2) / 2), np.log((1 - s2) / 2)
        log_c = np.log(c2)
    out = np.empty(len(steps))
    for i, n in enumerate(steps):
        k = np.arange(n + 1)[:, None]
        logw = (gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
                + log_c + k * log_a + (n - k) * log_b)
        top = np.max(logw, axis=1, keepdims=True)
        q = np.exp(logw - top)
        p_k = q.sum(axis=1)
        m1 = (q @ w) / p_k
        m2 = (q @ w**2) / p_k
        weight = p_k * np.exp(top[:, 0] - np.max(top))
        out[i] = np.sum(weight * np.maximum(m2 - m1 * m1, 0.0)) / weight.sum()
    return out


def coherent_fidelity(state, system):
    """|<x|psi>|^2 for the coherent state x along <s> (the natural nearest one)."""
    psi = np.asarray(state, dtype=complex)
    mean = system.expectation(psi)
    n = np.linalg.norm(mean)
    x = mean / n if n > 1e-12 else np.array([0.0, 0.0, 1.0])
    ref = coherent_amplitudes_from_axis(system.j, x)
    return float(abs(np.vdot(ref, psi)) ** 2)


# vectorized ensemble machinery -------------------------------------------------

def _batch_expectations(states, system):
    """<s_k> for each row of ``states``; shape (N, 3)."""
    return np.stack([np.einsum("ni,ni->n", states.conj(), states @ s.T).real
                     for s in system.ops], axis=1)


def batch_variance(states, op):
    sv = states @ op.T
    m1 = np.einsum("ni,ni->n", states.conj(), sv).real
    m2 = np.einsum("ni,ni->n", sv.conj(), sv).real
    return np.maximum(m2 - m1 * m1, 0.0)


def batch_tr_sigma_sigma_conj(states, system):
    vecs = [states @ s.T for s in system.ops]
    mean = np.stack([np.einsum("ni,ni->n", states.conj(), v).real for v in vecs], axis=1)
    out = np.zeros(len(states))
    for k in range(3):
        for l in range(3):
            skl = np.einsum("ni,ni->n", vecs[k].conj(), vecs[l]) - mean[:, k] * mean[:, l]
            out += (skl * skl).real
    return out


def batch_step(states, operators, draws):
    """Vectorized :func:`step`: rows of ``states`` advanced with their own draws."""
    a, b = operators
    va = states @ a.T
    vb = states @ b.T
    pa = np.einsum("ni,ni->n", va.conj(), va).real
    pb = np.einsum("ni,ni->n", vb.conj(), vb).real
    plus = draws < pa
    p = np.where(plus, pa, pb)
    if np.any(p < 1e-300):
        raise DegenerateBranchError("selected branch has vanishing probability")
    nxt = np.where(plus[:, None], va, vb) / np.sqrt(p)[:, None]
    return nxt, np.where(plus, 1, -1).astype(np.int8)


def macro_step(states, pairs, config, seed, traj_ids, step_index):
    """Apply every generator of one macro-step.  Returns (states, data (N, n_gen))."""
    outs = []
    for pair, k in zip(pairs, config.generators):
        u = rng.uniform(seed, rng.STREAM_SPINOMETER, traj_ids, step_index, k)
        states, d = batch_step(states, pair, u)
        outs.append(d)
    return states, np.stack(outs, axis=1)


def _einselection_measure(states, system, config):
    if config.mode == "uniaxial":
        return batch_variance(states, system.ops[config.generator - 1])
    return batch_tr_sigma_sigma_conj(states, system)


@dataclass
class TrajectoryRecord:
    """One trajectory sampled every ``stride`` macro-steps.

    ``data`` holds every outcome (shape (n_steps, n_generators), values +-1);
    the other arrays are indexed by ``steps``.  ``einselection`` is Delta of
    the measured generator in uniaxial mode and tr sigma sigma^* otherwise.
    """

    config: SpinometerConfig
    seed: int
    trajectory: int
    steps: np.ndarray
    states: np.ndarray
    x: np.ndarray
    einselection: np.ndarray
    data: np.ndarray = field(repr=False)

    @property
    def diagnostic_name(self):
        return "variance" if self.config.mode == "uniaxial" else "tr_sigma_sigma_conj"


def _initial_batch(initial, n):
    psi = np.asarray(initial, dtype=complex)
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-10:
        raise ValueError("initial state must be unit-norm")
    return np.tile(psi, (n, 1))


def run_trajectory(config, system, initial, n_steps, seed, stride=1, trajectory=0):
    """Evolve one trajectory for ``n_steps`` macro-steps.

    The draws are those of trajectory id ``trajectory`` in an ensemble run
    with the same seed, so single runs and ensembles agree exactly.
    """
    if n_steps < 0 or stride < 1:
        raise ValueError("n_steps must be >= 0 and stride >= 1")
    pairs = operator_pairs(system, config)
    states = _initial_batch(initial, 1)
    ids = np.array([trajectory])
    rec_steps, rec_states, rec_x, rec_e = [], [], [], []
    data = np.zeros((n_steps, len(pairs)), dtype=np.int8)

    def record(n):
        rec_steps.append(n)
        rec_states.append(states[0].copy())
        rec_x.append(_batch_expectations(states, system)[0] / system.j)
        rec_e.append(_einselection_measure(states, system, config)[0])

    record(0)
    for n in range(n_steps):
        states, d = macro_step(states, pairs, config, seed, ids, n)
        states /= np.linalg.norm(states, axis=1, keepdims=True)
        data[n] = d[0]
        if (n + 1) % stride == 0:
            record(n + 1)
    return TrajectoryRecord(
        config=config, seed=seed, trajectory=trajectory,
        steps=np.array(rec_steps), states=np.array(rec_states),
        x=np.clip(np.array(rec_x), -1.0, 1.0), einselection=np.array(rec_e), data=data,
    )


@dataclass
class EnsembleSummary:
    """Ensemble means and standard errors at the recorded macro-steps.

    ``data_mean`` at index i averages the outcomes of macro-step steps[i]
    (the step leaving the state recorded at steps[i]); its last row is NaN.
    """

    steps: np.ndarray
    n_trajectories: int
    einselection_mean: np.ndarray
    einselection_se: np.ndarray
    x_mean: np.ndarray
    x_se: np.ndarray
    data_mean: np.ndarray
    data_se: np.ndarray
    final_states: np.ndarray = field(default=None, repr=False)
    rho_mean: np.ndarray = field(default=None, repr=False)


def _moments(values):
    v = np.asarray(values, dtype=float)
    return np.stack([v.sum(axis=0), (v * v).sum(axis=0)])


def _ensemble_chunk(config, system, initial, start, stop, n_steps, seed, stride, keep_final,
                    rho_from=None):
    pairs = operator_pairs(system, config)
    states = _initial_batch(initial, stop - start)
    ids = np.arange(start, stop)
    n_gen = len(pairs)
    rec = [n for n in range(0, n_steps + 1) if n % stride == 0 or n == n_steps]
    e_acc = np.zeros((len(rec), 2))
    x_acc = np.zeros((len(rec), 2, 3))
    d_acc = np.full((len(rec), 2, n_gen), np.nan)
    rho_acc = np.zeros((system.dim, system.dim), dtype=complex)
    i = 0
    for n in range(n_steps + 1):
        if n == rec[i]:
            e_acc[i] = _moments(_einselection_measure(states, system, config))
            x_acc[i] = _moments(_batch_expectations(states, system) / system.j)
            if rho_from is not None and n >= rho_from:
                rho_acc += states.T @ states.conj()
        if n == n_steps:
            break
        states, d = macro_step(states, pairs, config, seed, ids, n)
        states /= np.linalg.norm(states, axis=1, keepdims=True)
        if n == rec[i]:
            d_acc[i] = _moments(d)
            i += 1
    return e_acc, x_acc, d_acc, (states if keep_final else None), rho_acc


def _finish(total, count):
    mean = total[:, 0] / count
    var = np.maximum(total[:, 1] / count - mean**2, 0.0) * count / max(count - 1, 1)
    return mean, np.sqrt(var / count)


def run_ensemble(config, system, initial, n_trajectories, n_steps, seed, stride=1,
                 workers=1, chunk_size=DEFAULT_CHUNK, keep_final_states=False, rho_from=None):
    """Independent trajectories from a common initial state.

    Trajectories are processed in fixed chunks of ``chunk_size`` ids and the
    chunk sums are reduced in id order, so results do not depend on
    ``workers``.  With ``rho_from`` set, the ensemble density matrix is
    averaged over trajectories and over recorded steps >= ``rho_from``.
    """
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    args = [(config, system, initial, a, b, n_steps, seed, stride, keep_final_states, rho_from)
            for a, b in chunk_bounds(n_trajectories, chunk_size)]
    parts = map_ordered(_ensemble_chunk, args, workers)
    e_tot, x_tot, d_tot, finals = None, None, None, []
    rho_tot = 0
    for e_acc, x_acc, d_acc, fin, rho_acc in parts:
        rho_tot = rho_tot + rho_acc
        e_tot = e_acc if e_tot is None else e_tot + e_acc
        x_tot = x_acc if x_tot is None else x_tot + x_acc
        d_tot = d_acc if d_tot is None else d_tot + d_acc
        if fin is not None:
            finals.append(fin)
    steps = np.array([n for n in range(0, n_steps + 1) if n % stride == 0 or n == n_steps])
    rho_mean = None
    if rho_from is not None:
        n_rec = int(np.sum(steps >= rho_from))
        if n_rec == 0:
            raise ValueError("rho_from lies beyond the last recorded step")
        rho_mean = rho_tot / (n_rec * n_trajectories)
    e_mean, e_se = _finish(e_tot, n_trajectories)
    x_mean, x_se = _finish(x_tot, n_trajectories)
    d_mean, d_se = _finish(d_tot, n_trajectories)
    return EnsembleSummary(
        steps=steps, n_trajectories=n_trajectories,
        einselection_mean=e_mean, einselection_se=e_se,
        x_mean=x_mean, x_se=x_se, data_mean=d_mean, data_se=d_se,
        final_states=np.concatenate(finals) if finals else None,
        rho_mean=rho_mean,
    )
