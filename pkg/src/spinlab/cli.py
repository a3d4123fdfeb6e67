"""``spinometer``: batch verification driver.

Every subcommand evaluates a family of checks over a parameter grid and
writes one long-format table, one row per (check, parameter point):

    check   name of the quantity (see each subcommand's --help)
    j, beta, theta, alpha
            parameter point (nan where not applicable)
    param   extra qualifier (e.g. a probe point label or series field)
    index   integer qualifier (e.g. macro-step number)
    value   measured quantity
    op      comparison applied: value <op> bound; empty for info rows
    bound   tolerance or threshold
    status  pass, fail, info or nonconverged

Exit codes: 0 all pass, 1 some check failed, 2 usage or configuration
error, 3 numerical non-convergence.
"""

import argparse
import datetime
import json
import math
import platform
import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from functools import partial

import numpy as np
import scipy
from scipy.special import sph_harm_y

from . import __version__
from .density import (
    LindbladParams,
    alpha_from_beta,
    density_increment,
    ensemble_map,
    lindblad_increment,
    random_density_matrix,
    thermal_residual,
    uniqueness_probe,
)
from .diffusion import (
    DriftDiffusionModel,
    azimuth_uniformity_test,
    bridge_check,
    default_burn_in,
    fp_residual,
    radial_moment_increment,
    simulate_sde,
    stationary_density,
    z_histogram_test,
)
from .oscillator import (
    OscillatorParams,
    chirp,
    classical_force_undetectability,
    estimate_spectra,
    hilbert_identity_residual,
    hilbert_sign_check,
    synthesize_hilbert_pair,
)
from .parallel import WORKERS_ENV, default_workers, map_ordered
from .quadrature import ConvergenceError, integrate_until_converged
from .representations import (
    ThermalSpec,
    hypergeometric_identity_check,
    reconstruct_rho_from_p,
    p_value,
    thermal_operator,
    trace_distance,
)
from .results import Column, ResultTable
from .scaling import loglog_slope
from .spin_algebra import (
    as_half_integer,
    build_spin_system,
    coherent_moment_check,
    coherent_rotation_check,
    coherent_state,
    projector_integral,
    resolution_of_identity_check,
    spherical_harmonic_null_check,
    unit_vector,
)
from .spinometer import (
    SpinometerConfig,
    coherent_fidelity,
    covariance_diagnostics,
    macro_step_expectation,
    operator_pairs,
    run_ensemble,
    triaxial_decay_residual,
    uniaxial_decay_residual,
    uniaxial_exact_variance,
    variance,
)
from .spinometer import tr_sigma_sigma_conj as _tr_ss

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2, 3
DEFAULT_SEED = 20240611
NAN = float("nan")

COLUMNS = [
    Column("check", "str"),
    Column("j", "float", "hbar"),
    Column("beta", "float", "1/energy"),
    Column("theta", "float", "rad"),
    Column("alpha", "float"),
    Column("param", "str"),
    Column("index", "int"),
    Column("value", "float", "per check"),
    Column("op", "str"),
    Column("bound", "float", "per check"),
    Column("status", "str"),
]
SORT_KEYS = ("check", "j", "beta", "theta", "alpha", "param", "index")

# (default, strict) thresholds
TOLERANCES = {
    "identity": (1e-10, 1e-12),
    "hypergeometric": (1e-9, 1e-11),
    "reconstruction": (1e-8, 1e-10),
    "reconstruction_beta0": (1e-10, 1e-12),
    "decomposition": (1e-10, 1e-12),
    "slope": (2.9, 3.5),
    "decay_ratio": (1e-3, 1e-3),
    "coherence": (0.99, 0.999),
    "z": (3.0, 3.0),
    "uniqueness": (1e-6, 1e-8),
    "trace_distance": (0.01, 0.005),
    "detailed_balance": (1e-12, 1e-13),
    "fp_residual": (1e-8, 1e-11),
    "radial": (1e-10, 1e-12),
    "p_value": (1e-3, 1e-3),
    "sql": (0.1, 0.05),
}

COMMON_DEFAULTS = {
    "j": ["1/2", "1", "3/2", "2", "5/2"],
    "beta": [1.0],
    "theta": [0.05],
    "alpha": None,
    "axis": [0.0, 0.0, 1.0],
    "trajectories": 10000,
    "steps": None,
    "seed": DEFAULT_SEED,
    "workers": None,
    "tolerance_profile": "default",
    "quadrature": "auto",
    "format": "csv",
}

SUBCOMMAND_DEFAULTS = {
    "identities": {"random_states": 200, "probe_points": 8},
    "verify-p": {"beta": [0.0, 0.1, 1.0, 2.0, 4.0], "rotated_axis": [0.48, 0.6, 0.64],
                 "positivity_grid": 64},
    "einselect": {"j": ["1/2", "1"], "scaling_theta": [0.04, 0.02, 0.01], "scaling_states": 5,
                  "one_step_trajectories": 100000, "records": 20},
    "thermalize": {"j": ["1/2", "1"], "beta": [0.5, 1.0, 2.0], "theta": [0.04, 0.02, 0.01],
                   "uniqueness_theta": 0.02, "uniqueness_starts": 10, "mc_theta": 0.1,
                   "steps": 4000, "mc_from": None},
    "fokker-planck": {"j": ["1/2", "1", "2"], "theta": [0.1], "steps": 10000,
                      "fp_j": ["1/2", "1", "3/2", "2", "5/2", "3", "7/2", "4"],
                      "fp_alpha": [-0.9, -0.5, 0.0, 0.5, 0.9], "fp_grid": 512,
                      "radial_tuples": 200, "bins": 20, "bridge_j": "1", "bridge_alpha": -0.3,
                      "bridge_theta": 0.005, "bridge_samples": 1000000, "bridge_points": 6},
    "oscillator": {"j": ["1"], "samples": 1 << 18, "seeds": 10, "segment_length": 1024,
                   "m": 1.0, "omega0": 1.0, "hbar": 1.0, "r": 8.0, "g_s": 0.1,
                   "band": [0.5, 2.0], "chirp_period": 256, "transfer_segment": 256},
}

SUMMARY = {
    "identities": "coherent-state and quadrature identities",
    "verify-p": "P-function reconstruction of the thermal operator",
    "einselect": "einselection decay laws and Monte Carlo decay",
    "thermalize": "thermal fixed point, uniqueness and Lindblad limit",
    "fokker-planck": "stationary density, SDE histogram and Ito bridge",
    "oscillator": "noise spectra, SQL and classical-force undetectability",
}

HELP = {
    "identities": """checks (value units: absolute max-norm residual unless noted)
  resolution_of_identity    (2j+1)/4pi sum |x><x| - I
  harmonic_null             sphere integral of Y_lm |x><x|, l in {2j+1, 2j+2} (param l=..)
  coherent_rotation         closed-form coherent amplitudes vs rotated |j,j>
  coherent_second_moment    closed form vs direct <x|s_k s_l|x>
  hypergeometric            relative residual of the 2F1 identity over (m, z)
  decomposition             reassembly residual of tr sigma sigma* and tr sigma_bar^2
  decomposition_min_term    smallest p-term (>= -tol)
  sigma_bar_bound           min of tr sigma_bar^2 - j^2/2 over random states (>= -tol)
  sigma_bar_coherent        max |tr sigma_bar^2 - j^2/2| over coherent states
config-file keys: random_states, probe_points""",
    "verify-p": """checks
  reconstruction            max-norm of P-reconstruction - exp(-beta t.s)
  reconstruction_rotated    same with the thermal axis rotated_axis
  trace_cross_check         relative error of the reconstructed trace against
                            sinh((2j+1) beta/2)/sinh(beta/2)
  p_min                     smallest P on a polar grid (> 0)
--axis sets the main thermal axis.  config-file keys: rotated_axis, positivity_grid""",
    "einselect": """checks (theta list = Monte Carlo theta values)
  uniaxial_decay_slope      log-log slope of the one-step decay-law residual
  triaxial_decay_slope      same for tr sigma (j >= 1)
  uniaxial_one_step_z       |MC - exact| / SE of E[Delta] after one step
  triaxial_one_step_z       same for tr sigma sigma*
  uniaxial_decay_ratio      E[Delta] at the last step / initial value
  uniaxial_exact_ratio      info: the same ratio from exact enumeration
  uniaxial_final_z          |MC - exact| / SE of E[Delta] at the last step
  triaxial_decay_ratio      E[tr sigma sigma*] at the last step / initial value
  *_increases               increases of the recorded mean series beyond 3 SE
  triaxial_final_coherence  mean |<x|psi>|^2 of the final states
  *_series                  info rows (param mean/se, index = macro-step)
Steps default to ceil(10/theta^2).  alpha defaults to -tanh(beta/4).
config-file keys: scaling_theta, scaling_states, one_step_trajectories, records""",
    "thermalize": """checks (theta list = scaling values)
  thermal_residual          info: max|delta rho| at the thermal state per theta
  thermal_slope             log-log slope of that residual
  uniqueness_pairwise       largest pairwise trace distance of relaxed random starts
  uniqueness_thermal        largest trace distance of those fixed points to rho_th
  lindblad_slope            slope of max|delta rho - L rho| with gamma = -4 alpha theta^2
  lindblad_printed_slope    info: same with gamma = -4 alpha^2 theta^2
  detailed_balance          relative error of (nu+1)/nu against exp(beta)
  mc_thermal_distance       trace distance of the Monte Carlo ensemble to rho_th
config-file keys: uniqueness_theta, uniqueness_starts, mc_theta, mc_from""",
    "fokker-planck": """checks
  fp_residual               max relative residual of the stationary density (fp_j x fp_alpha)
  normalization             relative error of the density's normalization
  radial_bracket            max |radial moment increment| over random tuples, m = 1..6
  sde_chi2_p                chi-square p-value of the SDE z histogram (j x beta grid)
  sde_azimuth_p             chi-square p-value of the azimuth histogram
  bridge_drift_z            max |MC drift - a(x)| / SE at a probe point
  bridge_covariance_z       max |MC covariance - b b^T| / SE at a probe point
Steps must be at least the burn-in ceil(20/theta^2).  config-file keys: fp_j, fp_alpha,
fp_grid, radial_tuples, bins, bridge_j, bridge_alpha, bridge_theta, bridge_samples, bridge_points""",
    "oscillator": """checks (band = [band[0] w0, band[1] w0])
  sql_deviation             |<S_qq S_ff>_band / (hbar^2/4) - 1|
  im_sqf_ratio              info: <Im S_qf sgn w>_band / (hbar/2)
  re_sqf_z                  |mean of per-seed band-averaged Re S_qf| / SE
  hilbert_sign_mismatches   significant bins where sgn Im S_qf != sgn w
  hilbert_identity          max |f - scaled Hilbert transform of q|
  undetectability_z         max z of the transfer-function difference between arms
  output_spectrum_ratio     info: band-averaged S_qMqM, correlated arm / independent arm
config-file keys: samples, seeds, segment_length, m, omega0, hbar, r, g_s, band,
chirp_period, transfer_segment.  --j sets the spin (one value).""",
}


class ConfigError(ValueError):
    """Invalid command line or configuration file."""


@dataclass
class ExperimentConfig:
    subcommand: str
    params: dict
    out: str = None

    def tol(self, name):
        default, strict = TOLERANCES[name]
        return strict if self.params["tolerance_profile"] == "strict" else default

    def __getitem__(self, key):
        return self.params[key]


# -- row construction ---------------------------------------------------------

def _judge(value, op, bound):
    if not op:
        return "info"
    if not math.isfinite(value):
        return "fail"
    ok = {"<": value < bound, "<=": value <= bound, ">": value > bound, ">=": value >= bound}[op]
    return "pass" if ok else "fail"


def row(check, value, op="", bound=NAN, *, j=NAN, beta=NAN, theta=NAN, alpha=NAN, param="",
        index=0, status=None):
    value = float(value)
    return dict(check=check, j=float(j), beta=float(beta), theta=float(theta), alpha=float(alpha),
                param=str(param), index=int(index), value=value, op=op, bound=float(bound),
                status=status or _judge(value, op, bound))


def _sort_key(r):
    out = []
    for k in SORT_KEYS:
        v = r[k]
        if isinstance(v, float):
            out.append((0, -math.inf) if math.isnan(v) else (1, v))
        else:
            out.append(v)
    return tuple(out)


def _spin(j):
    return as_half_integer(j)


# -- identities ---------------------------------------------------------------

def _sphere_points(seed, n, tag):
    gen = np.random.default_rng([seed, tag, n])
    pts = gen.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return np.vstack([[0, 0, 1.0], [0, 0, -1.0], pts])


def _random_state(gen, dim):
    v = gen.normal(size=dim) + 1j * gen.normal(size=dim)
    return v / np.linalg.norm(v)


def _identity_rows(jstr, cfg):
    j = _spin(jstr)
    system = build_spin_system(j)
    tol = cfg.tol("identity")
    rows = []
    doubling = cfg["quadrature"] == "doubling"

    if doubling:
        n_phi = int(round(4 * j)) + 2
        integral, _ = integrate_until_converged(lambda rule: projector_integral(system, rule),
                                                n_phi=n_phi, tol=1e-14)
        res = float(np.max(np.abs(system.dim / (4 * np.pi) * integral - np.eye(system.dim))))
    else:
        res = resolution_of_identity_check(system)
    rows.append(row("resolution_of_identity", res, "<", tol, j=j))

    for l in (int(round(2 * j)) + 1, int(round(2 * j)) + 2):
        worst = 0.0
        for m in range(-l, l + 1):
            if doubling:
                def integ(rule, l=l, m=m):
                    y = sph_harm_y(l, m, rule.theta, rule.phi)
                    return projector_integral(system, rule, weight=y)

                val, _ = integrate_until_converged(integ, n_phi=l + int(round(2 * j)) + 2, tol=1e-14)
                worst = max(worst, float(np.max(np.abs(val))))
            else:
                worst = max(worst, spherical_harmonic_null_check(system, l, m))
        rows.append(row("harmonic_null", worst, "<", tol, j=j, param=f"l={l}"))

    pts = _sphere_points(cfg["seed"], cfg["probe_points"], 9)
    rows.append(row("coherent_rotation", max(coherent_rotation_check(system, x) for x in pts),
                    "<", tol, j=j))
    rows.append(row("coherent_second_moment", max(coherent_moment_check(system, x) for x in pts),
                    "<", tol, j=j))

    worst = 0.0
    for m in system.m:
        for z in (-0.9, -0.5, 0.0, 0.3, 0.6, 0.9):
            ref = (1 - z) ** (-(j + m + 1))
            worst = max(worst, hypergeometric_identity_check(j, m, z) / ref)
    rows.append(row("hypergeometric", worst, "<", cfg.tol("hypergeometric"), j=j))

    dtol = cfg.tol("decomposition")
    gen = np.random.default_rng([cfg["seed"], 19, int(round(2 * j))])
    res, min_term, bound_gap = 0.0, np.inf, np.inf
    for _ in range(cfg["random_states"]):
        d = covariance_diagnostics(_random_state(gen, system.dim), system, check=False)
        res = max(res, *d.residuals())
        min_term = min(min_term, float(d.p_terms.min()))
        bound_gap = min(bound_gap, d.tr_sigma_bar_sq - 0.5 * j * j)
    coh = 0.0
    for x in pts:
        d = covariance_diagnostics(coherent_state(system, x).state, system, check=False)
        coh = max(coh, abs(d.tr_sigma_bar_sq - 0.5 * j * j))
    rows += [
        row("decomposition", res, "<", dtol, j=j),
        row("decomposition_min_term", min_term, ">=", -dtol, j=j),
        row("sigma_bar_bound", bound_gap, ">=", -dtol, j=j),
        row("sigma_bar_coherent", coh, "<", dtol, j=j),
    ]
    return rows


def run_identities(cfg, workers=1):
    parts = map_ordered(_identity_rows, [(j, cfg) for j in cfg["j"]], workers)
    return [r for part in parts for r in part]


# -- verify-p -----------------------------------------------------------------

def _verify_p_rows(jstr, beta, cfg):
    j = _spin(jstr)
    system = build_spin_system(j)
    keys = dict(j=j, beta=beta)
    tol = cfg.tol("reconstruction_beta0" if beta == 0 else "reconstruction")
    rows = []
    for check, axis in (("reconstruction", cfg["axis"]), ("reconstruction_rotated", cfg["rotated_axis"])):
        spec = ThermalSpec(beta, axis)
        try:
            rho = reconstruct_rho_from_p(system, spec).matrix
        except ConvergenceError as exc:
            res = NAN if exc.residual is None else exc.residual
            rows.append(row(check, res, "<", tol, status="nonconverged", **keys))
            continue
        rows.append(row(check, np.max(np.abs(rho - thermal_operator(system, spec).matrix)),
                        "<", tol, **keys))
        if check == "reconstruction":
            exact = (np.sinh((2 * j + 1) * beta / 2) / np.sinh(beta / 2)) if beta > 0 else 2 * j + 1
            rows.append(row("trace_cross_check", abs(np.trace(rho).real / exact - 1), "<", tol, **keys))
    n = cfg["positivity_grid"]
    th = np.linspace(0, np.pi, n)
    ph = np.linspace(0, 2 * np.pi, n, endpoint=False)
    tt, pp = np.meshgrid(th, ph)
    x = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp), np.cos(tt)], -1).reshape(-1, 3)
    rows.append(row("p_min", np.min(p_value(j, ThermalSpec(beta, cfg["axis"]), x)), ">", 0.0, **keys))
    return rows


def run_verify_p(cfg, workers=1):
    args = [(j, b, cfg) for j in cfg["j"] for b in cfg["beta"]]
    return [r for part in map_ordered(_verify_p_rows, args, workers) for r in part]


# -- einselect ----------------------------------------------------------------

def _alpha_for(cfg, beta):
    return cfg["alpha"] if cfg["alpha"] is not None else float(alpha_from_beta(beta))


def _einselect_initial(system, mode):
    if mode == "uniaxial":
        return coherent_state(system, [1.0, 0.0, 0.0]).state
    return system.basis_state(0.0 if system.j == int(system.j) else 0.5)


def _scaling_rows(jstr, cfg, alpha):
    j = _spin(jstr)
    system = build_spin_system(j)
    gen = np.random.default_rng([cfg["seed"], 15, int(round(2 * j))])
    states = [_random_state(gen, system.dim) for _ in range(cfg["scaling_states"])]
    thetas = cfg["scaling_theta"]
    rows = []
    slopes = [loglog_slope(thetas, [uniaxial_decay_residual(s, system, th) for th in thetas])
              for s in states]
    rows.append(row("uniaxial_decay_slope", min(slopes), ">=", cfg.tol("slope"), j=j))
    if j >= 1:
        slopes = []
        for s in states:
            res = [triaxial_decay_residual(s, system, SpinometerConfig(
                theta=th, alpha=alpha, axis=cfg["axis"], mode="closed_loop_triaxial"))
                for th in thetas]
            slopes.append(loglog_slope(thetas, res))
        rows.append(row("triaxial_decay_slope", min(slopes), ">=", cfg.tol("slope"), j=j, alpha=alpha))
    return rows


def _series_rows(prefix, summary, keys):
    rows = []
    for i, n in enumerate(summary.steps):
        rows.append(row(f"{prefix}_series", summary.einselection_mean[i], param="mean", index=n, **keys))
        rows.append(row(f"{prefix}_series", summary.einselection_se[i], param="se", index=n, **keys))
    return rows


def _einselect_mc_rows(jstr, theta, beta, cfg, workers):
    j = _spin(jstr)
    system = build_spin_system(j)
    n_steps = cfg["steps"] or int(math.ceil(10 / theta**2))
    stride = max(1, n_steps // cfg["records"])
    rows = []
    modes = ["uniaxial"] + (["closed_loop_triaxial"] if j >= 1 else [])
    for mode in modes:
        alpha = _alpha_for(cfg, beta) if mode != "uniaxial" else 0.0
        config = SpinometerConfig(theta=theta, alpha=alpha, axis=cfg["axis"], mode=mode)
        prefix = "uniaxial" if mode == "uniaxial" else "triaxial"
        keys = dict(j=j, theta=theta, alpha=alpha, beta=beta if mode != "uniaxial" else NAN)
        initial = _einselect_initial(system, mode)

        # one-step oracle from a generic state, where both branches differ
        if mode == "uniaxial":
            measure = partial(variance, generator=system.s3)
        else:
            measure = partial(_tr_ss, system=system)
        generic = _random_state(np.random.default_rng([cfg["seed"], 16, int(round(2 * j))]), system.dim)
        exact = macro_step_expectation(generic, operator_pairs(system, config), measure)
        one = run_ensemble(config, system, generic, cfg["one_step_trajectories"], 1,
                           cfg["seed"] + 1, workers=workers)
        se = one.einselection_se[1]
        z = abs(one.einselection_mean[1] - exact) / se if se > 0 else (
            0.0 if abs(one.einselection_mean[1] - exact) < 1e-14 else math.inf)
        rows.append(row(f"{prefix}_one_step_z", z, "<=", cfg.tol("z"), **keys))

        summary = run_ensemble(config, system, initial, cfg["trajectories"], n_steps, cfg["seed"],
                               stride=stride, workers=workers,
                               keep_final_states=(mode != "uniaxial"))
        e = summary.einselection_mean
        rows += _series_rows(prefix, summary, keys)
        rows.append(row(f"{prefix}_decay_ratio", e[-1] / e[0], "<", cfg.tol("decay_ratio"),
                        index=n_steps, **keys))
        if mode == "uniaxial":
            exact_end = uniaxial_exact_variance(initial, system, theta, [n_steps])[0]
            rows.append(row("uniaxial_exact_ratio", exact_end / e[0], index=n_steps, **keys))
            se_end = summary.einselection_se[-1]
            rows.append(row("uniaxial_final_z", abs(e[-1] - exact_end) / se_end, "<=", cfg.tol("z"),
                            index=n_steps, **keys))
        se = summary.einselection_se
        rises = np.diff(e) > 3 * np.hypot(se[:-1], se[1:])
        rows.append(row(f"{prefix}_increases", int(np.sum(rises)), "<=", 0, **keys))
        if mode != "uniaxial":
            fid = np.mean([coherent_fidelity(s, system) for s in summary.final_states])
            rows.append(row("triaxial_final_coherence", fid, ">=", cfg.tol("coherence"), **keys))
    return rows


def run_einselect(cfg, workers=1):
    alpha = _alpha_for(cfg, cfg["beta"][0])
    rows = [r for part in map_ordered(_scaling_rows, [(j, cfg, alpha) for j in cfg["j"]], workers)
            for r in part]
    for jstr in cfg["j"]:
        for theta in cfg["theta"]:
            for beta in cfg["beta"]:
                rows += _einselect_mc_rows(jstr, theta, beta, cfg, workers)
    return rows


# -- thermalize ---------------------------------------------------------------

def _lindblad_gap(system, rho, alpha, theta, axis, convention):
    emap = ensemble_map(system, theta, alpha, axis)
    params = LindbladParams.from_feedback(alpha, theta, convention)
    return float(np.max(np.abs(density_increment(rho, emap) - lindblad_increment(rho, params, system, axis))))


def _thermalize_rows(jstr, beta, cfg):
    j = _spin(jstr)
    system = build_spin_system(j)
    alpha = _alpha_for(cfg, beta)
    axis = cfg["axis"]
    keys = dict(j=j, beta=beta, alpha=alpha)
    thetas = cfg["theta"]
    rows = []
    res = [thermal_residual(system, th, beta, axis, alpha) for th in thetas]
    rows += [row("thermal_residual", r, theta=th, **keys) for th, r in zip(thetas, res)]
    rows.append(row("thermal_slope", loglog_slope(thetas, res), ">=", cfg.tol("slope"), **keys))

    th_u = cfg["uniqueness_theta"]
    try:
        results, worst = uniqueness_probe(system, th_u, beta, n_starts=cfg["uniqueness_starts"],
                                          seed=cfg["seed"], axis=axis, alpha=alpha)
        rows.append(row("uniqueness_pairwise", worst, "<", cfg.tol("uniqueness"), theta=th_u, **keys))
        rows.append(row("uniqueness_thermal", max(r.trace_distance_to_thermal for r in results),
                        "<", cfg.tol("trace_distance"), theta=th_u, **keys))
    except ConvergenceError as exc:
        res = NAN if exc.residual is None else exc.residual
        rows.append(row("uniqueness_pairwise", res, "<", cfg.tol("uniqueness"),
                        theta=th_u, status="nonconverged", **keys))

    rho = random_density_matrix(system.dim, np.random.default_rng([cfg["seed"], 22, int(2 * j)]))
    for conv, check, op in (("matched", "lindblad_slope", ">="), ("printed", "lindblad_printed_slope", "")):
        gaps = [_lindblad_gap(system, rho, alpha, th, axis, conv) for th in thetas]
        rows.append(row(check, loglog_slope(thetas, gaps), op, cfg.tol("slope") if op else NAN, **keys))
    if alpha != 0:
        params = LindbladParams.from_feedback(alpha, thetas[0])
        rel = abs(params.detailed_balance_ratio() / np.exp(beta) - 1)
        rows.append(row("detailed_balance", rel, "<", cfg.tol("detailed_balance"), **keys))
    return rows


def run_thermalize(cfg, workers=1):
    args = [(j, b, cfg) for j in cfg["j"] for b in cfg["beta"]]
    rows = [r for part in map_ordered(_thermalize_rows, args, workers) for r in part]
    theta = cfg["mc_theta"]
    n_steps = cfg["steps"]
    mc_from = cfg["mc_from"] if cfg["mc_from"] is not None else n_steps // 2
    if cfg["trajectories"] > 0:
        for jstr in cfg["j"]:
            j = _spin(jstr)
            system = build_spin_system(j)
            for beta in cfg["beta"]:
                alpha = _alpha_for(cfg, beta)
                config = SpinometerConfig(theta=theta, alpha=alpha, axis=cfg["axis"],
                                          mode="closed_loop_triaxial")
                # start on the pole opposite to the thermal ground state
                initial = coherent_state(system, cfg["axis"]).state
                summary = run_ensemble(config, system, initial, cfg["trajectories"], n_steps,
                                       cfg["seed"], stride=1, workers=workers, rho_from=mc_from)
                dist = trace_distance(summary.rho_mean,
                                      thermal_operator(system, ThermalSpec(beta, cfg["axis"])).matrix)
                rows.append(row("mc_thermal_distance", dist, "<", cfg.tol("trace_distance"),
                                j=j, beta=beta, theta=theta, alpha=alpha))
    return rows


# -- fokker-planck ------------------------------------------------------------

def _fp_rows(jstr, alpha, cfg):
    j = _spin(jstr)
    dist = stationary_density(j, alpha, n_grid=cfg["fp_grid"])
    z = np.linspace(-1, 1, cfg["fp_grid"] + 2)[1:-1]
    return [
        row("fp_residual", np.max(fp_residual(j, alpha, dist, z)), "<", cfg.tol("fp_residual"),
            j=j, alpha=alpha),
        row("normalization", abs(dist.normalization() / dist.expected_normalization() - 1), "<",
            cfg.tol("fp_residual"), j=j, alpha=alpha),
    ]


def _radial_rows(cfg):
    gen = np.random.default_rng([cfg["seed"], 30])
    worst = 0.0
    for _ in range(cfg["radial_tuples"]):
        alpha = gen.uniform(-1, 1)
        j = gen.integers(1, 9) / 2
        axis = gen.normal(size=3)
        x = gen.normal(size=3)
        model = DriftDiffusionModel(j, alpha, axis=axis / np.linalg.norm(axis))
        x /= np.linalg.norm(x)
        for m in range(1, 7):
            worst = max(worst, abs(float(radial_moment_increment(model, x, m))))
    return [row("radial_bracket", worst, "<", cfg.tol("radial"))]


def _bridge_points(seed, n):
    # generic points: on the coordinate axes some increments are nearly
    # deterministic and their standard errors degenerate
    pts = np.random.default_rng([seed, 31]).normal(size=(n, 3))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def run_fokker_planck(cfg, workers=1):
    args = [(j, a, cfg) for j in cfg["fp_j"] for a in cfg["fp_alpha"]]
    rows = [r for part in map_ordered(_fp_rows, args, workers) for r in part]
    rows += _radial_rows(cfg)
    p_tol = cfg.tol("p_value")
    if cfg["trajectories"] > 0:
        for jstr in cfg["j"]:
            j = _spin(jstr)
            for theta in cfg["theta"]:
                if cfg["steps"] < default_burn_in(theta):
                    raise ConfigError(f"steps={cfg['steps']} is shorter than the burn-in "
                                      f"{default_burn_in(theta)} for theta={theta}")
                for beta in cfg["beta"]:
                    alpha = _alpha_for(cfg, beta)
                    model = DriftDiffusionModel(j, alpha, theta=theta, axis=cfg["axis"])
                    pts = simulate_sde(model, cfg["trajectories"], cfg["steps"], cfg["seed"],
                                       workers=workers)
                    _, p, _, _ = z_histogram_test(pts, j, alpha, cfg["axis"], n_bins=cfg["bins"])
                    keys = dict(j=j, beta=beta, theta=theta, alpha=alpha)
                    rows.append(row("sde_chi2_p", p, ">", p_tol, **keys))
                    rows.append(row("sde_azimuth_p", azimuth_uniformity_test(pts, cfg["axis"]), ">",
                                    p_tol, **keys))
    if cfg["bridge_samples"] > 0:
        j = _spin(cfg["bridge_j"])
        keys = dict(j=j, theta=cfg["bridge_theta"], alpha=cfg["bridge_alpha"])
        for i, x0 in enumerate(_bridge_points(cfg["seed"], cfg["bridge_points"])):
            _, zd, zc = bridge_check(j, cfg["bridge_alpha"], cfg["bridge_theta"], x0,
                                     cfg["bridge_samples"], cfg["seed"] + i, axis=cfg["axis"],
                                     workers=workers)
            label = "x=" + ":".join(f"{c:.4f}" for c in x0)
            rows.append(row("bridge_drift_z", zd, "<=", cfg.tol("z"), param=label, index=i, **keys))
            rows.append(row("bridge_covariance_z", zc, "<=", cfg.tol("z"), param=label, index=i, **keys))
    return rows


# -- oscillator ---------------------------------------------------------------

def _oscillator_params(cfg):
    return OscillatorParams(m=cfg["m"], omega0=cfg["omega0"], hbar=cfg["hbar"], r=cfg["r"],
                            g_s=cfg["g_s"], j=_spin(cfg["j"][0]))


def _oscillator_seed(params, seed, cfg):
    pair = synthesize_hilbert_pair(params, cfg["samples"], seed)
    est = estimate_spectra(pair.q, pair.f, params.r, cfg["segment_length"])
    band = est.band(cfg["band"][0] * params.omega0, cfg["band"][1] * params.omega0)
    nonzero = est.omega != 0
    return dict(
        sql=float(np.mean(est.s_qq[band] * est.s_ff[band])),
        im=float(np.mean(est.s_qf.imag[band] * np.sign(est.omega[band]))),
        re=float(np.mean(est.s_qf.real[nonzero])),
        hilbert=hilbert_identity_residual(pair, params),
        q=pair.q, f=pair.f,
    )


def run_oscillator(cfg, workers=1):
    params = _oscillator_params(cfg)
    seeds = [cfg["seed"] + k for k in range(cfg["seeds"])]
    parts = map_ordered(_oscillator_seed, [(params, s, cfg) for s in seeds], workers)
    hb = params.hbar
    keys = dict(j=params.j)
    sql = np.array([p["sql"] for p in parts]) / (hb * hb / 4)
    im = np.array([p["im"] for p in parts]) / (hb / 2)
    re = np.array([p["re"] for p in parts])
    rows = [row("sql_deviation", abs(sql.mean() - 1), "<", cfg.tol("sql"), **keys),
            row("im_sqf_ratio", im.mean(), **keys)]
    if len(seeds) > 1:
        se = re.std(ddof=1) / np.sqrt(len(re))
        rows.append(row("re_sqf_z", abs(re.mean()) / se if se > 0 else math.inf, "<=", cfg.tol("z"),
                        **keys))
    pooled = estimate_spectra(np.array([p["q"] for p in parts]), np.array([p["f"] for p in parts]),
                              params.r, cfg["segment_length"])
    ok, n_sig = hilbert_sign_check(pooled)
    se = np.hypot(pooled.se_qf_real, pooled.se_qf_imag)
    sig = (np.abs(pooled.s_qf) > 3 * se) & (pooled.omega != 0)
    mismatches = int(np.sum(np.sign(pooled.s_qf.imag[sig]) != np.sign(pooled.omega[sig])))
    rows.append(row("hilbert_sign_mismatches", mismatches, "<=", 0, param=f"significant={n_sig}", **keys))
    rows.append(row("hilbert_identity", max(p["hilbert"] for p in parts), "<", cfg.tol("identity"),
                    **keys))
    f_ext = chirp(params, cfg["samples"], cfg["band"][0] * params.omega0,
                  cfg["band"][1] * params.omega0, cfg["chirp_period"])
    cmp_ = classical_force_undetectability(params, f_ext, seeds, segment_length=cfg["transfer_segment"],
                                           band=(cfg["band"][0] * params.omega0,
                                                 cfg["band"][1] * params.omega0))
    rows.append(row("undetectability_z", cmp_.max_z(), "<=", cfg.tol("z"), **keys))
    out_a, out_b = cmp_.output_spectra
    in_band = out_a.band(cfg["band"][0] * params.omega0, cfg["band"][1] * params.omega0)
    rows.append(row("output_spectrum_ratio", np.mean(out_a.s_qq[in_band]) / np.mean(out_b.s_qq[in_band]),
                    **keys))
    return rows


RUNNERS = {
    "identities": run_identities,
    "verify-p": run_verify_p,
    "einselect": run_einselect,
    "thermalize": run_thermalize,
    "fokker-planck": run_fokker_planck,
    "oscillator": run_oscillator,
}


# -- configuration ------------------------------------------------------------

def _split(text):
    return [s.strip() for s in str(text).split(",") if s.strip()]


def _number(s):
    """Float from '0.5' or '1/2'."""
    return float(Fraction(s)) if "/" in s else float(s)


def _floats(text):
    try:
        return [_number(s) for s in _split(text)]
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _j_list(text):
    vals = _split(text)
    for v in vals:
        try:
            as_half_integer(v)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return vals


def _axis(text):
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("--axis needs three comma-separated components")
    return vals


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("expected a nonnegative integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("parameters (defaults < --config file < flags)")
    g.add_argument("--j", type=_j_list, help="spin values, e.g. 1/2,1,5/2")
    g.add_argument("--beta", type=_floats, help="inverse temperatures, comma-separated")
    g.add_argument("--theta", type=_floats, help="measurement strengths, comma-separated")
    g.add_argument("--alpha", type=float, help="feedback strength (default -tanh(beta/4))")
    g.add_argument("--axis", type=_axis, help="thermal axis X,Y,Z (normalized)")
    g.add_argument("--trajectories", type=_positive_int, help="Monte Carlo trajectories (0 skips)")
    g.add_argument("--steps", type=_positive_int, help="macro-steps per trajectory")
    g.add_argument("--seed", type=_positive_int, help=f"master seed (default {DEFAULT_SEED})")
    g.add_argument("--workers", type=_positive_int,
                   help=f"worker processes (default ${WORKERS_ENV} or the CPU count)")
    g.add_argument("--config", help="JSON file of parameter overrides")
    g.add_argument("--out", help="output path (default: stdout)")
    g.add_argument("--tolerance-profile", choices=("strict", "default"))
    g.add_argument("--quadrature", choices=("auto", "doubling"),
                   help="exact-degree rules or Legendre-order doubling (identities)")
    g.add_argument("--format", choices=("csv", "tsv"))

    parser = argparse.ArgumentParser(
        prog="spinometer", description="Verification suites for spin measurement models.",
        epilog="Output columns: " + ", ".join(f"{c.name}[{c.unit}]" if c.unit else c.name
                                              for c in COLUMNS)
        + ".  Exit codes: 0 pass, 1 check failed, 2 usage error, 3 non-convergence.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="subcommand")
    for name in RUNNERS:
        sub.add_parser(name, parents=[common], help=SUMMARY[name], description=HELP[name],
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def _check_keys(cmd, data, source):
    allowed = set(COMMON_DEFAULTS) | set(SUBCOMMAND_DEFAULTS[cmd])
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) for {cmd}: {', '.join(sorted(unknown))}")


def _as_list(v):
    return v if isinstance(v, list) else [v]


def resolve_config(args):
    """Merge defaults, the optional JSON file and explicit flags, then validate."""
    cmd = args.subcommand
    params = dict(COMMON_DEFAULTS)
    params.update(SUBCOMMAND_DEFAULTS[cmd])
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        data.pop("subcommand", None)
        _check_keys(cmd, data, args.config)
        params.update(data)
    for key in COMMON_DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    return ExperimentConfig(cmd, _validate(cmd, params), out=args.out)


def _validate(cmd, p):
    p = dict(p)
    try:
        for key in ("j", "fp_j"):
            if key in p:
                p[key] = [str(v) for v in _as_list(p[key])]
                for v in p[key]:
                    if as_half_integer(v) == 0:
                        raise ValueError(f"{key} values must be positive")
        if "bridge_j" in p and as_half_integer(str(p["bridge_j"])) == 0:
            raise ValueError("bridge_j must be positive")
        for key in ("beta", "theta", "scaling_theta", "fp_alpha"):
            if key in p:
                p[key] = [_number(str(v)) for v in _as_list(p[key])]
                if not p[key]:
                    raise ValueError(f"{key} must not be empty")
        if not p["j"]:
            raise ValueError("j must not be empty")
        if any(not math.isfinite(b) or b < 0 for b in p["beta"]):
            raise ValueError("beta values must be finite and nonnegative")
        for key in ("theta", "scaling_theta"):
            if key in p and any(not 0 < t <= 0.5 for t in p[key]):
                raise ValueError(f"{key} values must lie in (0, 0.5]")
        for key in ("uniqueness_theta", "mc_theta", "bridge_theta"):
            if key in p and not 0 < float(p[key]) <= 0.5:
                raise ValueError(f"{key} must lie in (0, 0.5]")
        if p["alpha"] is not None:
            p["alpha"] = float(p["alpha"])
            if not math.isfinite(p["alpha"]):
                raise ValueError("alpha must be finite")
        p["axis"] = [float(c) for c in unit_vector(p["axis"])]
        if "rotated_axis" in p:
            p["rotated_axis"] = [float(c) for c in unit_vector(p["rotated_axis"])]
        for key in ("trajectories", "seed", "random_states", "probe_points", "scaling_states",
                    "one_step_trajectories", "records", "uniqueness_starts", "fp_grid",
                    "radial_tuples", "bins", "bridge_samples", "bridge_points", "samples", "seeds",
                    "segment_length", "chirp_period", "transfer_segment"):
            if key in p:
                if isinstance(p[key], bool) or int(p[key]) != p[key] or p[key] < 0:
                    raise ValueError(f"{key} must be a nonnegative integer")
                p[key] = int(p[key])
        for key in ("steps", "mc_from"):
            if p.get(key) is not None:
                if int(p[key]) != p[key] or p[key] < 0:
                    raise ValueError(f"{key} must be a nonnegative integer")
                p[key] = int(p[key])
        if p["workers"] is not None and (int(p["workers"]) != p["workers"] or p["workers"] < 1):
            raise ValueError("workers must be a positive integer")
        if p["tolerance_profile"] not in ("strict", "default"):
            raise ValueError("tolerance_profile must be 'strict' or 'default'")
        if p["quadrature"] not in ("auto", "doubling"):
            raise ValueError("quadrature must be 'auto' or 'doubling'")
        if p["format"] not in ("csv", "tsv"):
            raise ValueError("format must be 'csv' or 'tsv'")
        if cmd in ("fokker-planck", "thermalize") and p["steps"] is None:
            raise ValueError("steps must be given")
        if cmd == "thermalize" and p["trajectories"] > 0:
            mc_from = p["mc_from"] if p["mc_from"] is not None else p["steps"] // 2
            if mc_from > p["steps"]:
                raise ValueError("mc_from exceeds steps")
        if cmd == "thermalize" and len(p["theta"]) < 2:
            raise ValueError("thermalize needs at least two theta values for the scaling fit")
        if cmd == "fokker-planck":
            if any(abs(a) >= 1 for a in p["fp_alpha"]):
                raise ValueError("fp_alpha values must satisfy |alpha| < 1")
            if p["bridge_points"] < 1 and p["bridge_samples"] > 0:
                raise ValueError("bridge_points must be positive")
        if cmd == "oscillator":
            if len(p["j"]) != 1:
                raise ValueError("oscillator takes a single j")
            n = p["samples"]
            if n < 2 or n & (n - 1):
                raise ValueError("samples must be a power of two")
            if len(p["band"]) != 2 or not 0 < p["band"][0] < p["band"][1]:
                raise ValueError("band must be [lo, hi] with 0 < lo < hi")
            for key in ("segment_length", "transfer_segment", "chirp_period"):
                if not 2 <= p[key] <= n:
                    raise ValueError(f"{key} must lie between 2 and samples")
            params = OscillatorParams(m=p["m"], omega0=p["omega0"], hbar=p["hbar"], r=p["r"],
                                      g_s=p["g_s"], j=as_half_integer(p["j"][0]))
            params.check_sampling()
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return p


# -- entry point --------------------------------------------------------------

def make_table(cfg, rows, started, wall):
    table = ResultTable(columns=COLUMNS, fmt=cfg["format"])
    for r in sorted(rows, key=_sort_key):
        table.add(**r)
    counts = {s: sum(1 for r in rows if r["status"] == s) for s in ("pass", "fail", "info", "nonconverged")}
    table.metadata = {
        "command": f"spinometer {cfg.subcommand}",
        "config": {k: cfg.params[k] for k in sorted(cfg.params)},
        "versions": {"spinlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "started": started,
        "wall_time_s": round(wall, 3),
        "status_counts": counts,
    }
    return table


def exit_code(rows):
    statuses = {r["status"] for r in rows}
    if "nonconverged" in statuses:
        return EXIT_NONCONVERGED
    if "fail" in statuses:
        return EXIT_FAIL
    return EXIT_PASS


def execute(cfg):
    """Run a resolved config; returns (table, exit code)."""
    workers = cfg["workers"] or default_workers()
    started = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    rows = RUNNERS[cfg.subcommand](cfg, workers=workers)
    table = make_table(cfg, rows, started, time.perf_counter() - t0)
    return table, exit_code(rows)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        cfg = resolve_config(args)
        table, code = execute(cfg)
    except ConfigError as exc:
        print(f"spinometer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"spinometer: non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    if cfg.out:
        try:
            table.write(cfg.out)
        except OSError as exc:
            print(f"spinometer: error: cannot write {cfg.out}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        counts = table.metadata["status_counts"]
        print(f"{cfg.subcommand}: {counts['pass']} pass, {counts['fail']} fail, "
              f"{counts['nonconverged']} nonconverged -> {cfg.out}", file=sys.stderr)
    else:
        sys.stdout.write(table.to_text())
    return code


if __name__ == "__main__":
    sys.exit(main())
