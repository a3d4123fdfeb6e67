from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinlab.quadrature import product_rule
from spinlab.spin_algebra import (
    LEVI_CIVITA,
    as_half_integer,
    build_spin_system,
    coherent_amplitudes,
    coherent_amplitudes_from_axis,
    coherent_moment_check,
    coherent_rotation_check,
    coherent_second_moment,
    coherent_state,
    resolution_of_identity_check,
    rotation,
    spherical_harmonic_null_check,
)

from conftest import HALF_INTEGERS, random_unit

ALL_J = [k / 2 for k in range(0, 26)]


def test_as_half_integer_accepts_common_spellings():
    assert as_half_integer("5/2") == 2.5
    assert as_half_integer(Fraction(3, 2)) == 1.5
    assert as_half_integer(2) == 2.0
    for bad in (-0.5, 0.3, "1/3", "x", None):
        with pytest.raises(ValueError):
            as_half_integer(bad)


@pytest.mark.parametrize("j", ALL_J)
def test_commutators_casimir_and_diagonal(j):
    s = build_spin_system(j)
    ops = s.ops
    for k in range(3):
        for l in range(3):
            comm = ops[k] @ ops[l] - ops[l] @ ops[k]
            rhs = 1j * sum(LEVI_CIVITA[k, l, m] * ops[m] for m in range(3))
            assert np.max(np.abs(comm - rhs)) < 1e-12 * max(1, j)
    cas = sum(o @ o for o in ops)
    assert np.max(np.abs(cas - j * (j + 1) * np.eye(s.dim))) < 1e-12 * max(1, j * j)
    assert np.allclose(np.diag(s.s3).real, j - np.arange(s.dim))
    assert np.count_nonzero(s.s3 - np.diag(np.diag(s.s3))) == 0


def test_spin_half_conventions():
    s = build_spin_system(0.5)
    assert np.allclose(s.s3, np.diag([0.5, -0.5]))
    assert np.allclose(s.s1, [[0, 0.5], [0.5, 0]])
    s1 = build_spin_system(1)
    assert np.allclose(sum(o @ o for o in s1.ops), 2 * np.eye(3))


def test_rotation_identity_and_unitarity(gen):
    s = build_spin_system(2)
    assert np.allclose(rotation(s, 0, 0, 0), np.eye(5), atol=1e-15)
    d = rotation(s, *gen.uniform(0, 2 * np.pi, 3))
    assert np.max(np.abs(d.conj().T @ d - np.eye(5))) < 1e-12


def test_rotation_by_pi_flips_spin_half():
    # exp(-i pi sigma_y / 2) = -i sigma_y = [[0, -1], [1, 0]]
    d = rotation(build_spin_system(0.5), 0.0, np.pi, 0.0)
    out = d @ np.array([1, 0])
    assert abs(abs(out[1]) - 1) < 1e-12 and abs(out[0]) < 1e-12


@pytest.mark.parametrize("j", [k / 2 for k in range(1, 10)])
def test_closed_form_matches_rotation(j, gen):
    s = build_spin_system(j)
    for x in random_unit(gen, 20):
        assert coherent_rotation_check(s, x) < 1e-10


def test_coherent_state_examples():
    s = build_spin_system(1.5)
    north = coherent_state(s, (0, 0, 1)).state
    assert np.allclose(north, s.basis_state(1.5))
    half = coherent_state(build_spin_system(0.5), (1, 0, 0)).state
    assert np.allclose(half, [2**-0.5, 2**-0.5])
    with pytest.raises(ValueError):
        coherent_state(s, (0, 0, 0))


@pytest.mark.parametrize("j", HALF_INTEGERS + [3, 4.5])
def test_coherent_state_mean_spin(j, gen):
    s = build_spin_system(j)
    xs = random_unit(gen, 1000)
    amps = coherent_amplitudes_from_axis(j, xs)
    assert np.allclose(np.linalg.norm(amps, axis=1), 1, atol=1e-12)
    for x, psi in zip(xs[:200], amps[:200]):
        assert np.max(np.abs(s.expectation(psi) - j * x)) < 1e-10


def test_axis_and_angle_paths_agree(gen):
    for x in random_unit(gen, 20):
        th, ph = np.arccos(x[2]), np.arctan2(x[1], x[0])
        assert np.max(np.abs(coherent_amplitudes(2.5, th, ph) - coherent_amplitudes_from_axis(2.5, x))) < 1e-12


def test_large_j_log_space_binomials(gen):
    # j > 15 switches to log-space binomials; norm and mean must still hold
    j = 40
    s = build_spin_system(j)
    x = random_unit(gen)
    psi = coherent_amplitudes_from_axis(j, x)
    assert abs(np.linalg.norm(psi) - 1) < 1e-12
    assert np.max(np.abs(s.expectation(psi) - j * x)) < 1e-9


def test_second_moment_examples():
    st_half = coherent_state(build_spin_system(0.5), (0, 0, 1))
    assert abs(coherent_second_moment(st_half, 3, 3) - 0.25) < 1e-15
    s1 = build_spin_system(1)
    north = coherent_state(s1, (0, 0, 1))
    direct = np.vdot(north.state, s1.s1 @ s1.s2 @ north.state)
    assert abs(coherent_second_moment(north, 1, 2) - direct) < 1e-12
    assert abs(direct - 0.5j) < 1e-12
    with pytest.raises(ValueError):
        coherent_second_moment(north, 0, 1)


@pytest.mark.parametrize("j", HALF_INTEGERS + [3])
def test_second_moment_closed_form(j, gen):
    s = build_spin_system(j)
    for x in random_unit(gen, 25):
        assert coherent_moment_check(s, x) < 1e-10
        st_ = coherent_state(s, x)
        total = sum(coherent_second_moment(st_, k, k, j) for k in (1, 2, 3))
        assert abs(total - j * (j + 1)) < 1e-10


def test_printed_index_variant_is_wrong(gen):
    # the x_k x_j reading (x_k times x_k for the diagonal-free case) breaks symmetry
    s = build_spin_system(2)
    x = random_unit(gen)
    st_ = coherent_state(s, x)
    direct = np.vdot(st_.state, s.s1 @ s.s2 @ st_.state)
    wrong = s.j * (s.j - 0.5) * x[0] * x[0] + 0.5j * s.j * x[2]
    assert abs(direct - wrong) > 1e-3


@pytest.mark.parametrize("j", [k / 2 for k in range(1, 10)])
def test_resolution_of_identity(j):
    assert resolution_of_identity_check(build_spin_system(j)) < 1e-12


def test_explicit_rule_and_aliasing():
    assert resolution_of_identity_check(build_spin_system(0.5), product_rule(8, 8)) < 1e-12
    assert resolution_of_identity_check(build_spin_system(2), product_rule(8, 12)) < 1e-12
    assert resolution_of_identity_check(build_spin_system(1), product_rule(8, 2)) > 1e-6


@pytest.mark.parametrize("j", HALF_INTEGERS)
def test_harmonic_null(j):
    s = build_spin_system(j)
    for l in (int(2 * j) + 1, int(2 * j) + 2):
        for m in range(-l, l + 1):
            assert spherical_harmonic_null_check(s, l, m) < 1e-10


def test_harmonic_null_examples_and_guard():
    assert spherical_harmonic_null_check(build_spin_system(0.5), 2, 0) < 1e-10
    assert spherical_harmonic_null_check(build_spin_system(1), 3, 1) < 1e-10
    with pytest.raises(ValueError):
        spherical_harmonic_null_check(build_spin_system(0.5), 1, 0)
    # below the threshold the integral does not vanish
    rule = product_rule(8, 8)
    from spinlab.spin_algebra import projector_integral
    from scipy.special import sph_harm_y
    s = build_spin_system(1)
    val = projector_integral(s, rule, weight=sph_harm_y(2, 0, rule.theta, rule.phi))
    assert np.max(np.abs(val)) > 1e-3


@settings(max_examples=60, deadline=None)
@given(two_j=st.integers(1, 12), theta=st.floats(0, np.pi), phi=st.floats(-np.pi, np.pi))
def test_coherent_property(two_j, theta, phi):
    j = two_j / 2
    s = build_spin_system(j)
    psi = coherent_amplitudes(j, theta, phi)
    x = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    assert abs(np.linalg.norm(psi) - 1) < 1e-12
    assert np.max(np.abs(s.expectation(psi) - j * x)) < 1e-10
