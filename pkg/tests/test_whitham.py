import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modwave.errors import ModwaveError
from modwave.evolve import decoupled_gamma
from modwave.whitham import (PeriodicInterpolant, canonical_diffusion, center_phase, classify_coupling,
                             first_order_matrix, frequency, whitham_data, invert_phase)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.8, 0.8), st.integers(1, 4), st.floats(0, 1))
def test_invert_phase_property(amp, mode, offset):
    L, N = 10.0, 128
    y = np.arange(N) * L / N
    slope = abs(amp) * 2 * np.pi * mode / L
    psi = amp * np.sin(2 * np.pi * mode * y / L + offset)
    if slope >= 1:
        with pytest.raises(ModwaveError):
            invert_phase(psi, y, L)
        return
    z = invert_phase(psi, y, L)
    back = z - amp * np.sin(2 * np.pi * mode * z / L + offset)
    np.testing.assert_allclose(back, y, atol=1e-10)


def test_periodic_interpolant_is_exact_for_trig():
    L, N = 3.0, 32
    y = np.arange(N) * L / N
    f = np.cos(2 * np.pi * y / L) + 0.3 * np.sin(6 * np.pi * y / L)
    interp = PeriodicInterpolant(f, L)
    x = np.linspace(0, L, 57)
    np.testing.assert_allclose(interp(x), np.cos(2 * np.pi * x / L) + 0.3 * np.sin(6 * np.pi * x / L), atol=1e-12)
    df = -2 * np.pi / L * np.sin(2 * np.pi * x / L) + 0.3 * 6 * np.pi / L * np.cos(6 * np.pi * x / L)
    np.testing.assert_allclose(interp(x, 1), df, atol=1e-11)


def test_center_phase_removes_far_field():
    h, shift = center_phase(np.array([2.0, 5.0, 4.0]))
    assert shift == 3.0
    assert h[0] + h[-1] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_decoupled_gamma_projection(seed):
    rng = np.random.default_rng(seed)
    p = 3
    R = rng.normal(size=(p, p)) + 3 * np.eye(p)
    L = np.linalg.inv(R)  # rows l_j with l_i . r_j = delta_ij
    G = rng.normal(size=(p, p, p))
    G = 0.5 * (G + G.transpose(0, 2, 1))
    Gt = decoupled_gamma(G, R, L)
    for j in range(p):
        rj = R[:, j]
        # self-interactions agree after projection onto the mode
        assert L[j] @ np.einsum("iab,a,b->i", Gt, rj, rj) == pytest.approx(
            L[j] @ np.einsum("iab,a,b->i", G, rj, rj), abs=1e-9)
        for m in range(p):
            if m != j:
                np.testing.assert_allclose(np.einsum("iab,a,b->i", Gt, rj, R[:, m]), 0, atol=1e-9)
    # idempotent
    np.testing.assert_allclose(decoupled_gamma(Gt, R, L), Gt, atol=1e-9)


def test_canonical_diffusion_diagonal_in_modes():
    rng = np.random.default_rng(1)
    V = rng.normal(size=(2, 2)) + 2 * np.eye(2)
    B = V @ np.diag([1.5, 0.7]) @ np.linalg.inv(V)
    Bt, b = canonical_diffusion(B, V)
    np.testing.assert_allclose(np.sort(b), [0.7, 1.5], atol=1e-12)


def test_ks_first_order_data(ks_family):
    data = first_order_matrix(ks_family)
    assert data.p == 2
    # frequency omega = k c for the travelling wave
    assert frequency(ks_family.anchor) == pytest.approx(ks_family.anchor.k * ks_family.anchor.c, abs=1e-12)
    assert np.all(np.isreal(data.a))
    np.testing.assert_allclose(data.Vt.T @ data.V, np.eye(2), atol=1e-10)


def test_ks_is_generic(ks_family):
    assert classify_coupling(ks_family)[0] == "generic"


def test_ks_whitham_routes_agree(ks_family, ks_spectrum):
    data = whitham_data(ks_family, ks_spectrum.fits)
    assert data.b is not None and np.all(data.b > 0)
    assert data.Gamma.shape == (2, 2, 2)
    np.testing.assert_allclose(data.Gamma, data.Gamma.transpose(0, 2, 1), atol=1e-8)
