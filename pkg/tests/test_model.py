import numpy as np
import pytest

from modwave.errors import ModwaveError
from modwave.model import (available_models, check_model, flux_derivatives, get_model, linear_symbol)


@pytest.mark.parametrize("name", ["burgers", "heat", "viscoelasticity", "kuramoto_sivashinsky",
                                  "swift_hohenberg", "benard_marangoni", "coupled_pair", "conservation_law"])
def test_builtin_models_pass_screens(name):
    m = get_model(name)
    center = np.ones(m.n) if name in ("viscoelasticity", "coupled_pair") else None
    rep = check_model(m, np.random.default_rng(0), probes=20, scale=0.3, center=center)
    assert rep.get("flux_jacobian_error", 0.0) < 1e-6
    assert rep.get("flux_hessian_error", 0.0) < 1e-5
    assert rep["conserved_source_max"] == 0.0
    assert rep["symbol_large_xi_max_real"] < 0


def test_registry_and_unsupported_model():
    assert "saint_venant" in available_models()
    with pytest.raises(ModwaveError) as err:
        get_model("saint_venant")
    assert err.value.code == "unsupported-structure"
    with pytest.raises(KeyError):
        get_model("no_such_model")


def test_heat_symbol_is_advection_diffusion():
    m = get_model("heat", advection=0.4, viscosity=2.0)
    S = linear_symbol(m, 1.5)
    assert S[0, 0] == pytest.approx(-1j * 1.5 * 0.4 - 2.0 * 1.5 ** 2)


def test_swift_hohenberg_symbol():
    r = 0.04
    m = get_model("swift_hohenberg", r=r)
    for xi in (0.0, 0.5, 1.0, 2.0):
        assert linear_symbol(m, xi)[0, 0].real == pytest.approx(r - (1 - xi ** 2) ** 2)


def test_conservation_law_derivatives_at_origin():
    m = get_model("conservation_law")
    u = np.zeros((2, 1))
    A = flux_derivatives(m, u, 1)[..., 0]
    H = flux_derivatives(m, u, 2)[..., 0]
    np.testing.assert_allclose(A, m.params["A"])
    np.testing.assert_allclose(H, m.params["Gamma"])


def test_state_shape_checked():
    m = get_model("viscoelasticity")
    with pytest.raises(ValueError):
        flux_derivatives(m, np.zeros((3, 4)))
