import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinlab.density import alpha_from_beta
from spinlab.diffusion import (
    DriftDiffusionModel,
    SphereDistribution,
    azimuth_uniformity_test,
    bridge_check,
    default_burn_in,
    diffusion_matrix,
    drift,
    fp_residual,
    fp_residual_finite_difference,
    mc_bridge,
    radial_moment_increment,
    sde_step,
    simulate_sde,
    stationary_density,
    theorem_form,
    z_histogram_test,
)
from spinlab.spin_algebra import build_spin_system
from spinlab.spinometer import SpinometerConfig

from conftest import random_unit

Z_GRID = np.linspace(-1, 1, 514)[1:-1]


def test_model_validation():
    with pytest.raises(ValueError):
        DriftDiffusionModel(j=0.3, alpha=0.1)
    with pytest.raises(ValueError):
        DriftDiffusionModel(j=1, alpha=np.nan)
    with pytest.raises(ValueError):
        DriftDiffusionModel(j=1, alpha=0.1, theta=0)
    assert DriftDiffusionModel(j=1, alpha=0.1, theta=0.05).g_s == pytest.approx(0.1)


def test_drift_examples(gen):
    m0 = DriftDiffusionModel(j=2, alpha=0.0)
    for x in random_unit(gen, 5):
        assert np.allclose(drift(m0, x), -x / 4, atol=1e-15)
    t = random_unit(gen)
    m = DriftDiffusionModel(j=1.5, alpha=-0.4, axis=t)
    a = drift(m, t)
    assert np.max(np.abs(a - (a @ t) * t)) < 1e-15


def test_drift_vectorized(gen):
    m = DriftDiffusionModel(j=1, alpha=0.3, axis=(0.48, 0.6, 0.64))
    xs = random_unit(gen, 7)
    assert np.allclose(drift(m, xs), np.array([drift(m, x) for x in xs]))
    assert np.allclose(diffusion_matrix(m, xs), np.array([diffusion_matrix(m, x) for x in xs]))


def test_diffusion_examples(gen):
    m0 = DriftDiffusionModel(j=1, alpha=0.0)
    assert np.allclose(diffusion_matrix(m0, (0, 0, 1)), np.diag([0.5, 0.5, 0.0]))
    x = random_unit(gen)
    b0 = diffusion_matrix(m0, x)
    assert np.allclose(b0, b0.T)
    t = np.array([0.48, 0.6, 0.64])
    m = DriftDiffusionModel(j=1, alpha=0.7, axis=t)
    b = diffusion_matrix(m, x)
    assert np.allclose(b - b.T, 0.35 * (np.outer(t, x) - np.outer(x, t)))
    assert np.trace(b) == pytest.approx(0.5 * (3 - 1 + 0.7 * (x @ t) - 3 * 0.7 * (x @ t)))


def test_radial_examples(gen):
    x = random_unit(gen)
    assert abs(radial_moment_increment(DriftDiffusionModel(j=1, alpha=0.5), x, 2)) < 1e-10
    assert abs(radial_moment_increment(DriftDiffusionModel(j=2, alpha=-0.3), x, 4)) < 1e-10
    off = radial_moment_increment(DriftDiffusionModel(j=2, alpha=-0.3), 0.5 * x, 4)
    assert abs(off) > 1e-3
    with pytest.raises(ValueError):
        radial_moment_increment(DriftDiffusionModel(j=1, alpha=0.0), x, 0)


def test_radial_conservation_random_tuples(gen):
    for _ in range(200):
        m = DriftDiffusionModel(j=gen.integers(1, 9) / 2, alpha=gen.uniform(-1, 1),
                                axis=random_unit(gen))
        x = random_unit(gen)
        for order in range(1, 7):
            assert abs(radial_moment_increment(m, x, order)) < 1e-10


def test_sde_step_examples(gen):
    m = DriftDiffusionModel(j=1, alpha=0.0, theta=0.1)
    x = random_unit(gen)
    assert np.allclose(sde_step(m, x, np.zeros(3)), x, atol=1e-15)
    xs = random_unit(gen, 50)
    out = sde_step(DriftDiffusionModel(j=1, alpha=-0.6, theta=0.3), xs, gen.normal(size=(50, 3)))
    assert np.allclose(np.linalg.norm(out, axis=1), 1, atol=1e-15)


def test_sde_step_moments(gen):
    # mean displacement / g^2 -> a(x) and covariance / g^2 -> b b^T
    m = DriftDiffusionModel(j=1.5, alpha=-0.4, theta=0.05, axis=(0.48, 0.6, 0.64))
    x = random_unit(gen)
    n = 400000
    dx = sde_step(m, np.tile(x, (n, 1)), gen.normal(size=(n, 3))) - x
    g2 = m.g_s**2
    mean = dx.mean(axis=0) / g2
    se = dx.std(axis=0) / np.sqrt(n) / g2
    assert np.all(np.abs(mean - drift(m, x)) < 3.5 * se)
    b = diffusion_matrix(m, x)
    cov = np.cov(dx.T) / g2
    prod = (dx[:, :, None] * dx[:, None, :]).reshape(n, 9)
    cov_se = (prod.std(axis=0) / np.sqrt(n)).reshape(3, 3) / g2
    assert np.all(np.abs(cov - b @ b.T) < 3.5 * cov_se + 1e-3)


@pytest.mark.parametrize("j", [0.5, 1, 2, 3, 4])
@pytest.mark.parametrize("alpha", [-0.9, -0.5, 0.0, 0.5, 0.9])
def test_fp_residual_of_stationary_density(j, alpha):
    dist = stationary_density(j, alpha)
    assert np.max(fp_residual(j, alpha, dist, Z_GRID)) < 1e-8
    assert dist.normalization() / dist.expected_normalization() == pytest.approx(1, abs=1e-8)


def test_fp_residual_controls():
    # uniform density is stationary without feedback
    const = lambda z: (np.ones_like(z), np.zeros_like(z), np.zeros_like(z))
    assert np.max(fp_residual(1.5, 0.0, const, Z_GRID, relative=False)) < 1e-15
    # wrong sign of alpha
    wrong = stationary_density(1.5, 0.4)
    assert np.max(fp_residual(1.5, -0.4, wrong, Z_GRID)) > 0.1
    with pytest.raises(ValueError):
        fp_residual(1, 0.2, wrong, np.array([1.0]))


def test_finite_difference_cross_check():
    dist = stationary_density(2, -0.5)
    z = np.linspace(-0.95, 0.95, 40)
    assert np.max(fp_residual_finite_difference(2, -0.5, dist.pdf, z)) < 1e-5


def test_stationary_density_examples():
    assert np.allclose(stationary_density(2, 0.0).values, 1.0)
    for bad in (1.0, -1.2):
        with pytest.raises(ValueError):
            stationary_density(1, bad)
    for j in (0.5, 2, 4):
        for beta in (0.5, 2.0, 6.0):
            d = stationary_density(j, alpha_from_beta(beta))
            assert d.beta == pytest.approx(beta)
            ref = theorem_form(j, beta, Z_GRID)
            assert np.max(np.abs(d.pdf(Z_GRID) - ref) / ref) < 1e-12


def test_bin_probabilities_sum_to_one():
    probs = stationary_density(1, -0.3).bin_probabilities(np.linspace(-1, 1, 11))
    assert probs.sum() == pytest.approx(1.0)
    assert np.all(np.diff(probs) < 0)  # alpha < 0 favours z = -1


def _exact_samples(j, alpha, n, gen):
    # inverse-CDF sampling from the stationary density as an oracle source
    zq = np.linspace(-1, 1, 20001)
    pdf = stationary_density(j, alpha).pdf(zq)
    cdf = np.concatenate([[0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(zq))])
    z = np.interp(gen.uniform(size=n), cdf / cdf[-1], zq)
    phi = gen.uniform(0, 2 * np.pi, n)
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def test_histogram_machinery(gen):
    pts = _exact_samples(1, -0.3, 50000, gen)
    assert z_histogram_test(pts, 1, -0.3)[1] > 1e-3
    assert azimuth_uniformity_test(pts) > 1e-3
    assert z_histogram_test(pts, 1, 0.3)[1] < 1e-10
    biased = pts.copy()
    biased[:, 0] = np.abs(biased[:, 0])
    assert azimuth_uniformity_test(biased) < 1e-10


def test_burn_in():
    assert default_burn_in(0.1) == 2000
    assert default_burn_in(0.05) == 8000


def test_simulate_sde_reproducible():
    m = DriftDiffusionModel(j=1, alpha=-0.2, theta=0.1)
    a = simulate_sde(m, 50, 20, seed=4, chunk_size=16)
    b = simulate_sde(m, 50, 20, seed=4, chunk_size=16, workers=2)
    assert np.array_equal(a, b)
    c = simulate_sde(m, 50, 20, seed=4, chunk_size=7)
    assert np.array_equal(a, c)


def test_short_sde_run_is_stationary():
    j, alpha = 1, alpha_from_beta(1.0)
    m = DriftDiffusionModel(j=j, alpha=alpha, theta=0.1)
    pts = simulate_sde(m, 3000, default_burn_in(0.1), seed=11)
    assert z_histogram_test(pts, j, alpha)[1] > 1e-3


def test_bridge_w_moments():
    j, theta = 1, 0.02
    s = build_spin_system(j)
    cfg = SpinometerConfig(theta=theta, alpha=-0.3, mode="closed_loop_triaxial")
    x0 = np.array([0.6, 0.0, 0.8])
    est = mc_bridge(s, cfg, x0, 200000, seed=3)
    # W = d - g j x0 has E[W W^T] = I minus (g j x)(g j x)^T at leading order
    allowance = 4 * theta**2 * j**2
    assert np.all(np.abs(est.w_second_moment - np.eye(3)) <= 3 * est.w_se + allowance)


def test_bridge_generic_point():
    _, zd, zc = bridge_check(1, -0.3, 0.005, np.array([0.3, -0.5, 0.81]) / np.linalg.norm([0.3, -0.5, 0.81]),
                          200000, seed=8)
    assert zd <= 3 and zc <= 3


def test_bridge_independent_of_workers():
    s = build_spin_system(1)
    cfg = SpinometerConfig(theta=0.05, alpha=-0.3, mode="closed_loop_triaxial")
    a = mc_bridge(s, cfg, (0, 0.6, 0.8), 3000, seed=1, chunk_size=1000)
    b = mc_bridge(s, cfg, (0, 0.6, 0.8), 3000, seed=1, chunk_size=1000, workers=2)
    assert np.array_equal(a.drift, b.drift) and np.array_equal(a.covariance, b.covariance)


@pytest.mark.xfail(strict=True, raises=AssertionError, reason="O(theta^2) bias exceeds the 3 SE band at the pole for theta=0.05, n=1e6")
def test_bridge_pole_example():
    _, zd, zc = bridge_check(1, 0.0, 0.05, (0, 0, 1), 1_000_000, seed=20240611)
    assert zd <= 3 and zc <= 3


@settings(max_examples=50, deadline=None)
@given(two_j=st.integers(1, 12), alpha=st.floats(-0.95, 0.95), seed=st.integers(0, 2**31))
def test_radial_property(two_j, alpha, seed):
    g = np.random.default_rng(seed)
    m = DriftDiffusionModel(j=two_j / 2, alpha=alpha, axis=random_unit(g))
    x = random_unit(g)
    for order in (1, 2, 3, 5):
        assert abs(radial_moment_increment(m, x, order)) < 1e-10
