import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modwave.bloch import (bloch_indices, bloch_norm_sq, bloch_transform, check_diffusive_stability,
                           conjugate_symmetry_gap, contour_count, default_xi_grid, inverse_bloch_transform,
                           propagate_linear, raised_cosine, riesz_projector)
from modwave.errors import ModwaveError
from modwave.evolve import integrate_linear


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2 ** 31 - 1))
def test_bloch_round_trip_and_parseval(W, seed):
    N, K = 16, 7
    rng = np.random.default_rng(seed)
    # band-limit so that nothing sits at the Nyquist index
    ghat = np.zeros((2, W * N), complex)
    ghat[:, : W * K + 1] = rng.normal(size=(2, W * K + 1)) + 1j * rng.normal(size=(2, W * K + 1))
    g = np.fft.irfft(ghat[:, : W * N // 2 + 1], W * N, axis=-1)
    xis, gc = bloch_transform(g, W, K)
    assert gc.shape == (W, 2, 2 * K + 1)
    assert np.all(np.abs(xis) <= np.pi + 1e-12)
    np.testing.assert_allclose(inverse_bloch_transform(gc, W, N), g, atol=1e-12)
    # ||g||^2 over W periods equals 2 pi times the Bloch norm
    assert np.sum(g ** 2) / N == pytest.approx(2 * np.pi * bloch_norm_sq(gc, W), rel=1e-10)


def test_bloch_indices_cover_residues():
    for W in (1, 2, 7, 8):
        r = bloch_indices(W)
        assert len(r) == W
        assert sorted(np.mod(r, W)) == list(range(W))


def test_noncommensurate_grid_rejected():
    with pytest.raises(ModwaveError) as err:
        bloch_transform(np.zeros((1, 30)), 7, 3)
    assert err.value.code == "domain-not-commensurate"


def test_raised_cosine_shape():
    xi = np.linspace(-2, 2, 401)
    w = raised_cosine(xi, 1.0)
    assert np.all(w[np.abs(xi) <= 0.5] == 1)
    assert np.all(w[np.abs(xi) >= 1.0] == 0)
    assert np.all(np.diff(w[xi >= 0]) <= 1e-15)


def test_xi_grid_symmetric_and_contains_zero():
    g = default_xi_grid(33, 0.1, 21)
    assert 0.0 in g
    np.testing.assert_allclose(np.sort(g), np.sort(-g), atol=1e-15)


def test_riesz_projector_counts_inner_eigenvalues():
    rng = np.random.default_rng(3)
    V = rng.normal(size=(4, 4))
    A = V @ np.diag([0.01, -0.02, 1.0, -2.0]) @ np.linalg.inv(V)
    P = riesz_projector(A, 0.5)
    np.testing.assert_allclose(P @ P, P, atol=1e-10)
    assert contour_count(A, 0.5) == pytest.approx(2.0, abs=1e-10)


def test_ks_spectrum_is_diffusively_stable(ks_spectrum):
    rep = check_diffusive_stability(ks_spectrum)
    assert rep.stable
    assert conjugate_symmetry_gap(ks_spectrum) < 1e-8


def test_propagator_matches_time_stepping(sh_wave):
    W, N = 4, 64
    y = np.arange(W * N) / N
    g = np.exp(-((y - W / 2) ** 2))[None, :]
    synth = propagate_linear(sh_wave, g, 1.0, W, N_f=24)
    traj = integrate_linear(sh_wave, g, 1.0, 0.01, W, N)
    np.testing.assert_allclose(synth, traj.snapshots[-1], atol=1e-7)


def test_propagator_rejects_wrong_length(sh_wave):
    with pytest.raises(ModwaveError):
        propagate_linear(sh_wave, np.zeros((1, 4 * 64)), 1.0, 4, N_f=24, length=4.5 * 2 * np.pi)
