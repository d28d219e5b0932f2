import numpy as np
import pytest

from modwave.bloch import fit_critical_expansion, spectrum
from modwave.model import get_model
from modwave.profile import build_family, initial_guess, march, solve_profile, viscoelastic_seed

TWO_PI = 2 * np.pi
_ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number: int, passed: bool, detail: str):
        _ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
        print(_ACCEPTANCE_LINES[-1])
    return record


@pytest.fixture(scope="session")
def ks_wave():
    """KS wave in the stable band, k = 0.8 / (2 pi), zero mean."""
    m = get_model("kuramoto_sivashinsky")
    p = solve_profile(m, initial_guess(m, 0.9 / TWO_PI, 2.0, N=64, M=[0.0], shape="sin"))
    return march(m, p, 0.8 / TWO_PI, steps=5)


@pytest.fixture(scope="session")
def ks_family(ks_wave):
    return build_family(ks_wave.model, ks_wave, half_widths=(2, 2))


@pytest.fixture(scope="session")
def ks_spectrum(ks_wave):
    sp = spectrum(ks_wave, N_f=24)
    fit_critical_expansion(sp)
    return sp


@pytest.fixture(scope="session")
def sh_wave():
    """Swift-Hohenberg roll at eps = 0.2, k = 1 / (2 pi)."""
    m = get_model("swift_hohenberg", r=0.04)
    return solve_profile(m, initial_guess(m, 1 / TWO_PI, 0.23, N=64))


@pytest.fixture(scope="session")
def ve_wave():
    """Standing viscoelastic wave with the inverse stress law."""
    return viscoelastic_seed(get_model("viscoelasticity"), 0.3, -1.0, 1.0)


@pytest.fixture(scope="session")
def ve_family(ve_wave):
    return build_family(ve_wave.model, ve_wave, half_widths=(2, 2))


def bm_wave(eps: float):
    m = get_model("benard_marangoni", eps=eps)
    return solve_profile(m, initial_guess(m, 1 / TWO_PI, [2 * eps / np.sqrt(3), 0, 0], N=64, M=[0.0, 0.0]))
