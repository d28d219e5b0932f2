import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import TWO_PI
from modwave.model import get_model
from modwave.profile import (FamilyInterpolant, family_identities, check_profile,
                             initial_guess, profile_residual, solve_profile)
from modwave.spectral import derivative, evaluate_periodic, resample, to_coeffs, to_grid


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.floats(-2, 2), st.floats(-2, 2))
def test_fourier_round_trip_and_derivative(j, a, b):
    N = 32
    y = np.arange(N) / N
    u = a * np.cos(TWO_PI * j * y) + b * np.sin(TWO_PI * j * y)
    np.testing.assert_allclose(to_grid(to_coeffs(u, 10), N), u, atol=1e-12)
    du = TWO_PI * j * (-a * np.sin(TWO_PI * j * y) + b * np.cos(TWO_PI * j * y))
    np.testing.assert_allclose(derivative(u), du, atol=1e-9)
    np.testing.assert_allclose(resample(resample(u, 64), N), u, atol=1e-12)


def test_swift_hohenberg_roll(sh_wave):
    assert sh_wave.residual_norm <= 1e-9
    assert check_profile(sh_wave, 1e-9)["ok"]
    # weakly nonlinear amplitude 2 eps / sqrt(3)
    assert sh_wave.amplitude() == pytest.approx(2 * 0.2 / np.sqrt(3), rel=0.05)
    assert abs(sh_wave.c) < 1e-10


def test_profile_residual_vanishes_on_solution(ks_wave):
    res = profile_residual(ks_wave.model, ks_wave.U, ks_wave.k, ks_wave.c)
    assert np.max(np.abs(res)) < 1e-8
    assert ks_wave.M == pytest.approx([0.0], abs=1e-12)


def test_ks_speed_equals_mean():
    m = get_model("kuramoto_sivashinsky")
    p = solve_profile(m, initial_guess(m, 0.8 / TWO_PI, 2.0, N=64, M=[0.3], shape="sin"))
    assert p.c == pytest.approx(0.3, abs=1e-8)


def test_viscoelastic_seed_is_standing(ve_wave):
    assert abs(ve_wave.c) < 1e-12
    assert ve_wave.residual_norm < 1e-9
    assert check_profile(ve_wave, 1e-9)["ok"]


def test_family_identities_viscoelastic(ve_family):
    ids = family_identities(ve_family)
    for key in ("L0_Uprime", "L0_dM", "mean_dM", "mean_dk", "L0_dk"):
        assert ids[key] < 1e-6, key


def test_interpolant_reproduces_nodes(ks_family):
    interp = FamilyInterpolant(ks_family)
    y = np.linspace(0, 1, 17)
    j = np.arange(-interp.K, interp.K + 1)
    for off in ks_family.offsets():
        node = ks_family.nodes[off]
        params = ks_family.node_params(off)
        assert interp.in_patch(params, slack=1 + 1e-9)
        assert interp.speed(params) == pytest.approx(node.c, abs=1e-9)
        shift = ks_family.normalization_shift * (node.k - ks_family.anchor.k)
        coef = to_coeffs(node.U, interp.K) * np.exp(2j * np.pi * j * shift)
        np.testing.assert_allclose(interp.evaluate(params, y), evaluate_periodic(coef, y), atol=1e-8)


def test_constant_guess_returns_constant_state():
    m = get_model("swift_hohenberg", r=0.04)
    p = solve_profile(m, initial_guess(m, 1 / TWO_PI, 0.0, N=32))
    assert p.is_constant
    assert p.residual_norm == pytest.approx(0.0, abs=1e-14)


def test_odd_grid_is_rejected():
    m = get_model("swift_hohenberg", r=0.04)
    with pytest.raises(ValueError):
        solve_profile(m, initial_guess(m, 1 / TWO_PI, 0.2, N=33))


def test_family_parameters(ks_family):
    assert ks_family.n_params == 2
    assert len(ks_family.nodes) == 25
    a = ks_family.anchor
    np.testing.assert_allclose(a.params(), [0.0, 0.8 / TWO_PI], atol=1e-12)
