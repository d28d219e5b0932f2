import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modwave.diffwave import (Solution, burgers_diffusion_wave, burgers_residual, constant_state_system,
                              diffusion_wave_superposition, eigenbases, equivalence_gap, first_moment_shifts,
                              forced_scalar_run, heat_kernel, integrate_approximant, series_norms,
                              system_from_model)
from modwave.errors import ModwaveError
from modwave.model import get_model

X = np.linspace(-60, 60, 24001)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-2, 2), st.floats(0.5, 4))
def test_burgers_wave_mass(gamma, mass, t):
    th = burgers_diffusion_wave(gamma, mass, X, t)
    assert np.trapezoid(th, X) == pytest.approx(mass, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.floats(-5, 5), st.floats(-2, 2))
def test_burgers_wave_solves_equation(gamma, mass):
    assert burgers_residual(gamma, mass, 1.5) < 1e-7


def test_zero_coupling_gives_heat_kernel():
    np.testing.assert_allclose(burgers_diffusion_wave(0.0, 0.7, X, 2.0), 0.7 * heat_kernel(X, 2.0))
    with pytest.raises(ValueError):
        burgers_diffusion_wave(1.0, 1.0, X, 0.0)


def test_hump_leans_with_coupling():
    # positive gamma * mass pushes the mass forward
    th = burgers_diffusion_wave(4.0, 1.0, X, 1.0)
    assert np.trapezoid(X * th, X) > 0
    assert np.trapezoid(X * burgers_diffusion_wave(-4.0, 1.0, X, 1.0), X) < 0


@pytest.fixture(scope="module")
def system():
    return system_from_model(get_model("conservation_law"), [0.0, 0.0])


def test_eigenbases_biorthogonal(system):
    np.testing.assert_allclose(system.L_star @ system.R_star, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(system.L_star @ system.A_star @ system.R_star, np.diag(system.a), atol=1e-12)
    assert np.all(np.diff(system.a) > 0)


def test_projection_identities(system):
    R, L, Gt = system.R_star, system.L_star, system.Gamma_tilde
    for i in range(2):
        for j in range(2):
            for m in range(2):
                val = L[i] @ np.einsum("iab,a,b->i", Gt, R[:, j], R[:, m])
                want = system.self_interaction()[j] if i == j == m else 0.0
                assert val == pytest.approx(want, abs=1e-12)
    np.testing.assert_allclose(system.B_tilde, R @ np.diag(system.b) @ L, atol=1e-12)
    np.testing.assert_allclose(system.gamma * system.b, system.self_interaction(), atol=1e-12)


def test_scalar_quadratic_equals_decoupled():
    s = constant_state_system([[0.3]], [[[1.2]]], [[0.8]])
    W, N = 64, 8
    x = np.arange(W * N) / N
    z0 = 0.3 * np.exp(-((x - W / 2) ** 2))[None, :]
    q = integrate_approximant(s, "quadratic", z0, 5.0, 0.05, W, N, save_times=[1.0, 5.0])
    d = integrate_approximant(s, "decoupled", z0, 5.0, 0.05, W, N, save_times=[1.0, 5.0])
    np.testing.assert_allclose(q.fields, d.fields, atol=1e-14)


def test_structure_errors():
    with pytest.raises(ModwaveError) as err:
        eigenbases([[0.0, 1.0], [-1.0, 0.0]])
    assert err.value.code == "nonstrict-hyperbolic"
    with pytest.raises(ModwaveError) as err:
        eigenbases([[1.0, 0.0], [0.0, 1.0]])
    assert err.value.code == "nonstrict-hyperbolic"
    with pytest.raises(ModwaveError) as err:
        constant_state_system([[1.0, 0.0], [0.0, 2.0]], np.zeros((2, 2, 2)), [[1.0, 0.0], [0.0, -1.0]])
    assert err.value.code == "nonparabolic"
    with pytest.raises(ModwaveError) as err:
        system_from_model(get_model("kuramoto_sivashinsky"), [0.0])
    assert err.value.code == "unsupported-structure"


def test_superposition_zero_mass_and_drift(system):
    x = np.linspace(0, 200, 2001)
    assert np.all(diffusion_wave_superposition(system, [0.0, 0.0], x, 3.0) == 0)
    # each mode is centred near x = a_j (1 + t) for small mass
    m0 = system.R_star[:, 1] * 1e-3
    w = diffusion_wave_superposition(system, m0, x, 50.0, center=100.0)
    c = system.L_star[1] @ w
    assert np.trapezoid(x * c, x) / np.trapezoid(c, x) == pytest.approx(100 + system.a[1] * 51, abs=1e-2)


def test_gap_of_identical_runs_is_zero_and_grids_checked():
    f = np.random.default_rng(0).normal(size=(4, 2, 64))
    a = Solution(np.arange(4.0), f, 8, 8)
    assert np.all(equivalence_gap(a, a, window=None).gap == 0)
    with pytest.raises(ModwaveError) as err:
        equivalence_gap(a, Solution(np.arange(4.0), f, 4, 16), window=None)
    assert err.value.code == "grid-mismatch"


TIMES = np.concatenate([[0], np.geomspace(10, 500, 20)])


@pytest.mark.slow
def test_decoupled_run_approaches_shifted_superposition(system):
    W, N = 1024, 8
    x = np.arange(W * N) / N
    g = np.exp(-((x - W / 2) ** 2) / 0.5)
    z0 = np.vstack([0.05 * g, 0.03 * g])
    dec = integrate_approximant(system, "decoupled", z0, 500, 0.05, W, N, save_times=TIMES)
    m0 = z0.sum(axis=1) / N
    moments = (system.L_star @ z0 * (x - W / 2)).sum(axis=1) / N
    shifts = first_moment_shifts(system, m0, moments)
    sup = np.array([diffusion_wave_superposition(system, m0, x, t, center=W / 2, shifts=shifts) for t in TIMES])
    gap = equivalence_gap(dec, Solution(TIMES, sup, W, N), p=1)
    assert gap.rate[0] <= -0.65


@pytest.mark.slow
def test_forced_scalar_decays_faster_than_diffusion_wave():
    W, N = 1024, 4
    x = np.arange(W * N) / N
    g = np.exp(-((x - W / 2) ** 2) / 0.5)
    # zero-mass initial datum for k, forcing carried away at unit speed
    run = forced_scalar_run(0.0, 0.5, 1.0, 1.0, 1.0, 0.05 * g, -0.05 * (x - W / 2) * g, 500, 0.05, W, N,
                            save_times=TIMES)
    k = Solution(run.times, run.fields[:, 1:], W, N)
    assert abs(run.fields[-1, 1].sum() / N) < 1e-10
    assert series_norms(k, 2, (50, 500)).rate[0] <= -0.65
