import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modwave.errors import ModwaveError
from modwave.evolve import (FieldState, decay_rate, integrate_pde, lp_norms, modulated_initial_data, tile)
from modwave.model import get_model


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 4), st.floats(0.2, 2.0), st.sampled_from(["etd2", "etd4"]))
def test_heat_exact_mode(mode, nu, scheme):
    W, N = 8, 16
    m = get_model("heat", viscosity=nu)
    y = np.arange(W * N) / N
    q = 2 * np.pi * mode / W
    u0 = FieldState(np.cos(q * y)[None, :], 0.0, W, N)
    traj = integrate_pde(m, u0, 1.0, 0.05, scheme=scheme)
    np.testing.assert_allclose(traj.snapshots[-1, 0], np.exp(-nu * q ** 2) * np.cos(q * y), atol=1e-12)


@pytest.mark.parametrize("scheme, order", [("etd2", 2), ("etd4", 4)])
def test_advection_diffusion_convergence_order(scheme, order):
    # advection enters through the explicit flux, so the time error is visible
    W, N = 6, 32
    m = get_model("heat", advection=0.7, viscosity=0.3)
    y = np.arange(W * N) / N
    q = 2 * np.pi / W
    u0 = FieldState(np.sin(q * y)[None, :], 0.0, W, N)
    exact = np.exp(-0.3 * q ** 2 * 2) * np.sin(q * (y - 0.7 * 2))
    errs = [np.max(np.abs(integrate_pde(m, u0, 2.0, dt, scheme=scheme).snapshots[-1, 0] - exact))
            for dt in (0.2, 0.1)]
    assert np.log2(errs[0] / errs[1]) == pytest.approx(order, abs=0.3)


def test_burgers_mass_and_decay():
    W, N = 512, 4
    m = get_model("burgers")
    y = np.arange(W * N) / N
    u0 = np.exp(-((y - W / 2) ** 2) / 4) / np.sqrt(4 * np.pi)
    traj = integrate_pde(m, FieldState(u0[None, :], 0.0, W, N), 400.0, 0.1, norm_every=10)
    np.testing.assert_allclose(traj.masses[:, 0], traj.masses[0, 0], atol=1e-10)
    rate, err = decay_rate(traj.norm_times, traj.norms["v"][2], window=(50, 400))
    assert rate == pytest.approx(-0.25, abs=0.02)


def test_tiled_wave_is_equilibrium(sh_wave):
    W, N = 4, 64
    u0 = FieldState(tile(sh_wave, W, N), 0.0, W, N)
    traj = integrate_pde(sh_wave.model, u0, 5.0, 0.05, k=sh_wave.k, frame_speed=sh_wave.c, scheme="etd4")
    assert np.max(np.abs(traj.snapshots[-1] - u0.u)) < 1e-8


def test_modulated_data_without_phase_is_tiled(sh_wave):
    W, N = 3, 64
    u0 = modulated_initial_data(sh_wave, np.zeros(W * N), 0.0, W, N)
    np.testing.assert_allclose(u0.u, tile(sh_wave, W, N), atol=1e-12)


def test_blow_up_detected():
    W, N = 4, 16
    m = get_model("swift_hohenberg", r=0.04)
    u0 = FieldState(np.full((1, W * N), 1.0), 0.0, W, N)
    with pytest.raises(ModwaveError) as err:
        integrate_pde(m, u0, 1.0, 0.1, ceiling=0.5)
    assert err.value.code == "blow-up"


def test_lp_norms_and_rate_helpers():
    v = np.array([[3.0, -4.0]])
    n = lp_norms(v, 0.5)
    assert n[1] == 3.5 and n[np.inf] == 4.0 and n[2] == pytest.approx(np.sqrt(12.5))
    t = np.linspace(0, 500, 200)
    assert decay_rate(t, (1 + t) ** -0.75)[0] == pytest.approx(-0.75, abs=1e-12)
    with pytest.raises(ValueError):
        decay_rate(t, -np.ones_like(t))
