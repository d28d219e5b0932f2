"""Registry of one-dimensional evolution systems

    u_t + d_x f(u) + g(u, u_x) + P(d_x) u = d_x (B(u) d_x u)

with u in R^n. Fields are vectorized: a state array has shape (n, ...) and
Jacobians have shape (n, n, ...), with the first index the output component.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable, Optional

import numpy as np

from .errors import ModwaveError

FD_STEP = 1e-5


@dataclass(frozen=True)
class ModelSpec:
    name: str
    n: int
    flux: Callable[[np.ndarray], np.ndarray]
    conserved: tuple
    linear_op: np.ndarray  # (n, 5): coefficients of d^0..d^4 per component
    viscosity: Callable[[np.ndarray], np.ndarray] | np.ndarray
    source: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    flux_jacobian: Optional[Callable] = None
    flux_hessian: Optional[Callable] = None
    source_jacobians: Optional[Callable] = None
    params: dict = field(default_factory=dict)
    # exact symmetry flags, e.g. {"speed_independent_of_mean": True}
    symmetries: dict = field(default_factory=dict)

    @property
    def n_conserved(self) -> int:
        return int(sum(self.conserved))

    @property
    def conserved_index(self) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.conserved))

    @property
    def constant_viscosity(self) -> bool:
        return not callable(self.viscosity)

    @property
    def has_source(self) -> bool:
        return self.source is not None


def _check_state(model: ModelSpec, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[:1] != (model.n,):
        raise ValueError(f"state must have leading dimension {model.n}, got shape {u.shape}")
    return u


def _fd_step(u: np.ndarray) -> np.ndarray:
    return FD_STEP * (1.0 + np.abs(u))


def fd_jacobian(fun: Callable, u: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of a vectorized map R^n -> R^m."""
    n = u.shape[0]
    h = _fd_step(u)
    cols = []
    for j in range(n):
        e = np.zeros_like(u)
        e[j] = h[j]
        cols.append((fun(u + e) - fun(u - e)) / (2 * h[j]))
    return np.stack(cols, axis=1)


def evaluate_flux(model: ModelSpec, u) -> np.ndarray:
    u = _check_state(model, u)
    return np.asarray(model.flux(u), dtype=float)


def flux_derivatives(model: ModelSpec, u, order: int = 1) -> np.ndarray:
    """df(u) with shape (n, n, ...) or d^2 f(u) with shape (n, n, n, ...).

    Entry [i, j, l] of the Hessian is d^2 f_i / du_j du_l.
    """
    u = _check_state(model, u)
    if order == 1:
        if model.flux_jacobian is not None:
            return np.asarray(model.flux_jacobian(u), dtype=float)
        return fd_jacobian(model.flux, u)
    if order == 2:
        if model.flux_hessian is not None:
            return np.asarray(model.flux_hessian(u), dtype=float)
        jac = (lambda v: flux_derivatives(model, v, 1)) if model.flux_jacobian else None
        if jac is not None:
            return fd_jacobian(jac, u)
        # second differences of f directly
        n = model.n
        h = _fd_step(u)
        out = np.zeros((n, n, n) + u.shape[1:])
        for j in range(n):
            for l in range(n):
                ej = np.zeros_like(u)
                el = np.zeros_like(u)
                ej[j] = h[j]
                el[l] = h[l]
                fpp = model.flux(u + ej + el)
                fpm = model.flux(u + ej - el)
                fmp = model.flux(u - ej + el)
                fmm = model.flux(u - ej - el)
                out[:, j, l] = (fpp - fpm - fmp + fmm) / (4 * h[j] * h[l])
        return out
    raise ValueError("order must be 1 or 2")


def evaluate_source(model: ModelSpec, u, ux=None) -> np.ndarray:
    u = _check_state(model, u)
    if model.source is None:
        return np.zeros_like(u)
    if ux is None:
        ux = np.zeros_like(u)
    return np.asarray(model.source(u, ux), dtype=float)


def source_derivatives(model: ModelSpec, u, ux=None) -> tuple[np.ndarray, np.ndarray]:
    """(dg/du, dg/du_x), each of shape (n, n, ...)."""
    u = _check_state(model, u)
    if ux is None:
        ux = np.zeros_like(u)
    zero = np.zeros((model.n,) + u.shape)
    if model.source is None:
        return zero, zero.copy()
    if model.source_jacobians is not None:
        gu, gux = model.source_jacobians(u, ux)
        return np.asarray(gu, dtype=float), np.asarray(gux, dtype=float)
    gu = fd_jacobian(lambda v: model.source(v, ux), u)
    gux = fd_jacobian(lambda v: model.source(u, v), ux)
    return gu, gux


def evaluate_viscosity(model: ModelSpec, u) -> np.ndarray:
    """B(u) with shape (n, n, ...)."""
    u = _check_state(model, u)
    if callable(model.viscosity):
        return np.asarray(model.viscosity(u), dtype=float)
    B = np.asarray(model.viscosity, dtype=float)
    return np.broadcast_to(B.reshape(B.shape + (1,) * (u.ndim - 1)), B.shape + u.shape[1:]).copy()


def viscosity_derivative(model: ModelSpec, u) -> np.ndarray:
    """dB(u) with entry [i, j, l] = dB_ij / du_l, shape (n, n, n, ...)."""
    u = _check_state(model, u)
    n = model.n
    if not callable(model.viscosity):
        return np.zeros((n, n, n) + u.shape[1:])
    h = _fd_step(u)
    out = np.zeros((n, n, n) + u.shape[1:])
    for l in range(n):
        e = np.zeros_like(u)
        e[l] = h[l]
        out[:, :, l] = (model.viscosity(u + e) - model.viscosity(u - e)) / (2 * h[l])
    return out


def poly_symbol(model: ModelSpec, z) -> np.ndarray:
    """P(z) per component, shape (n,) + shape(z)."""
    z = np.asarray(z, dtype=complex)
    powers = np.stack([z ** m for m in range(5)])
    return np.tensordot(model.linear_op, powers, axes=(1, 0))


def shifted_poly(model: ModelSpec, r: int) -> np.ndarray:
    """Coefficients (n, 5) of the sigma^r part of P(K + sigma) as a polynomial in K."""
    out = np.zeros_like(model.linear_op, dtype=float)
    for m in range(r, 5):
        out[:, m - r] += comb(m, r) * model.linear_op[:, m]
    return out


def linear_symbol(model: ModelSpec, wavenumber: float, state=None) -> np.ndarray:
    """Fourier symbol of the linearization about a constant state.

    Returns the n x n matrix S with  v_t = S v  for v = v0 exp(i xi x).
    """
    xi = float(wavenumber)
    if state is None:
        state = np.zeros(model.n)
    u = np.asarray(state, dtype=float).reshape(model.n, 1)
    A = flux_derivatives(model, u, 1)[..., 0]
    gu, gux = source_derivatives(model, u)
    B = evaluate_viscosity(model, u)[..., 0]
    P = poly_symbol(model, 1j * xi)
    return (-1j * xi * A - gu[..., 0] - 1j * xi * gux[..., 0]
            - np.diag(P) - xi ** 2 * B)


# ----------------------------------------------------------------------------
# builtin models

_REGISTRY: dict[str, Callable[..., ModelSpec]] = {}


def register(name: str):
    def deco(fn):
        _REGISTRY[name] = fn
        return fn
    return deco


def available_models() -> list[str]:
    return sorted(_REGISTRY) + ["saint_venant"]


def get_model(name: str, **params) -> ModelSpec:
    if name == "saint_venant":
        raise ModwaveError("unsupported-structure",
                           "saint_venant has degenerate diffusion and is not runnable")
    if name not in _REGISTRY:
        raise KeyError(f"unknown model {name!r}; available: {available_models()}")
    return _REGISTRY[name](**params)


def _linop(n, rows: dict | None = None) -> np.ndarray:
    P = np.zeros((n, 5))
    for i, coeffs in (rows or {}).items():
        P[i, :len(coeffs)] = coeffs
    return P


@register("burgers")
def burgers(viscosity: float = 1.0) -> ModelSpec:
    return ModelSpec(
        name="burgers", n=1,
        flux=lambda u: 0.5 * u ** 2,
        flux_jacobian=lambda u: u[None, :],
        flux_hessian=lambda u: np.ones((1, 1) + u.shape),
        conserved=(True,), linear_op=_linop(1),
        viscosity=np.array([[viscosity]]),
        params={"viscosity": viscosity},
    )


@register("heat")
def heat(advection: float = 0.0, viscosity: float = 1.0) -> ModelSpec:
    a = advection
    return ModelSpec(
        name="heat", n=1,
        flux=lambda u: a * u,
        flux_jacobian=lambda u: np.full((1, 1) + u.shape[1:], a),
        flux_hessian=lambda u: np.zeros((1, 1) + u.shape),
        conserved=(True,), linear_op=_linop(1),
        viscosity=np.array([[viscosity]]),
        params={"advection": advection, "viscosity": viscosity},
    )


def _stress_law(law: str, stiffness: float):
    if law == "inverse":
        return (lambda t: stiffness / t, lambda t: -stiffness / t ** 2,
                lambda t: 2 * stiffness / t ** 3)
    if law == "cubic":
        # sigma = -s*tau + tau^3 : monotone decreasing near tau = 0
        return (lambda t: -stiffness * t + t ** 3, lambda t: -stiffness + 3 * t ** 2,
                lambda t: 6 * t)
    raise ValueError(f"unknown stress law {law!r}")


@register("viscoelasticity")
def viscoelasticity(eps1: float = 1.0, eps2: float | None = None,
                    law: str = "inverse", stiffness: float = 1.0) -> ModelSpec:
    """Lagrangian viscoelasticity: tau_t - u_x = eps1 tau_xx, u_t - sigma(tau)_x = eps2 u_xx."""
    eps2 = eps1 if eps2 is None else eps2
    sig, dsig, d2sig = _stress_law(law, stiffness)

    def flux(u):
        return np.stack([-u[1], -sig(u[0])])

    def jac(u):
        z = np.zeros(u.shape[1:])
        return np.array([[z, z - 1.0], [-dsig(u[0]), z]])

    def hess(u):
        out = np.zeros((2, 2, 2) + u.shape[1:])
        out[1, 0, 0] = -d2sig(u[0])
        return out

    return ModelSpec(
        name="viscoelasticity", n=2, flux=flux, flux_jacobian=jac, flux_hessian=hess,
        conserved=(True, True), linear_op=_linop(2),
        viscosity=np.diag([eps1, eps2]),
        params={"eps1": eps1, "eps2": eps2, "law": law, "stiffness": stiffness},
        symmetries={"speed_independent_of_mean": eps1 == eps2},
    )


@register("kuramoto_sivashinsky")
def kuramoto_sivashinsky() -> ModelSpec:
    """u_t + (u^2/2)_x + u_xx + u_xxxx = 0."""
    return ModelSpec(
        name="kuramoto_sivashinsky", n=1,
        flux=lambda u: 0.5 * u ** 2,
        flux_jacobian=lambda u: u[None, :],
        flux_hessian=lambda u: np.ones((1, 1) + u.shape),
        conserved=(True,), linear_op=_linop(1, {0: [0, 0, 1, 0, 1]}),
        viscosity=np.zeros((1, 1)),
        params={},
    )


@register("swift_hohenberg")
def swift_hohenberg(r: float = 0.04, quadratic: float = 0.0) -> ModelSpec:
    """u_t + (1 + d^2)^2 u - r u + b u^2 + u^3 = 0."""
    b = quadratic

    def source(u, ux):
        return -r * u + b * u ** 2 + u ** 3

    def source_jac(u, ux):
        return (-r + 2 * b * u + 3 * u ** 2)[None, :], np.zeros((1,) + u.shape)

    return ModelSpec(
        name="swift_hohenberg", n=1,
        flux=lambda u: np.zeros_like(u),
        flux_jacobian=lambda u: np.zeros((1,) + u.shape),
        flux_hessian=lambda u: np.zeros((1, 1) + u.shape),
        source=source, source_jacobians=source_jac,
        conserved=(False,), linear_op=_linop(1, {0: [1, 0, 2, 0, 1]}),
        viscosity=np.zeros((1, 1)),
        params={"r": r, "quadratic": quadratic},
    )


@register("benard_marangoni")
def benard_marangoni(eps: float = 0.05, gamma: float = 0.0) -> ModelSpec:
    """Three-component convection model (u, v, w); v and w are conserved.

        u_t = -(1 + d^2)^2 u + eps^2 u - u^3 + gamma (u v_x + u w_x)
        v_t = v_xx + v_x - (u v)_x
        w_t = w_xx - w_x - (u w)_x
    """
    e2 = eps ** 2

    def flux(u):
        return np.stack([np.zeros_like(u[0]), u[0] * u[1] - u[1], u[0] * u[2] + u[2]])

    def jac(u):
        z = np.zeros(u.shape[1:])
        return np.array([[z, z, z],
                         [u[1], u[0] - 1.0, z],
                         [u[2], z, u[0] + 1.0]])

    def hess(u):
        out = np.zeros((3, 3, 3) + u.shape[1:])
        out[1, 0, 1] = out[1, 1, 0] = 1.0
        out[2, 0, 2] = out[2, 2, 0] = 1.0
        return out

    def source(u, ux):
        g0 = -e2 * u[0] + u[0] ** 3 - gamma * u[0] * (ux[1] + ux[2])
        z = np.zeros_like(u[0])
        return np.stack([g0, z, z])

    def source_jac(u, ux):
        z = np.zeros(u.shape[1:])
        gu = np.zeros((3, 3) + u.shape[1:])
        gux = np.zeros((3, 3) + u.shape[1:])
        gu[0, 0] = -e2 + 3 * u[0] ** 2 - gamma * (ux[1] + ux[2])
        gux[0, 1] = -gamma * u[0] + z
        gux[0, 2] = -gamma * u[0] + z
        return gu, gux

    return ModelSpec(
        name="benard_marangoni", n=3, flux=flux, flux_jacobian=jac, flux_hessian=hess,
        source=source, source_jacobians=source_jac,
        conserved=(False, True, True),
        linear_op=_linop(3, {0: [1, 0, 2, 0, 1]}),
        viscosity=np.diag([0.0, 1.0, 1.0]),
        params={"eps": eps, "gamma": gamma},
    )


@register("coupled_pair")
def coupled_pair(beta: float = 0.5, eps: float = 1.0, law: str = "inverse",
                 stiffness: float = 1.0) -> ModelSpec:
    """Viscoelasticity with a convective term in the stress equation,

        tau_t - u_x = eps tau_xx,   u_t + (beta u^2/2 - sigma(tau))_x = eps u_xx,

    which breaks the Hamiltonian structure of the profile equation and makes
    the wave speed depend on the means.
    """
    sig, dsig, d2sig = _stress_law(law, stiffness)

    def flux(u):
        return np.stack([-u[1], 0.5 * beta * u[1] ** 2 - sig(u[0])])

    def jac(u):
        z = np.zeros(u.shape[1:])
        return np.array([[z, z - 1.0], [-dsig(u[0]), beta * u[1]]])

    def hess(u):
        out = np.zeros((2, 2, 2) + u.shape[1:])
        out[1, 0, 0] = -d2sig(u[0])
        out[1, 1, 1] = beta
        return out

    return ModelSpec(
        name="coupled_pair", n=2, flux=flux, flux_jacobian=jac, flux_hessian=hess,
        conserved=(True, True), linear_op=_linop(2),
        viscosity=np.diag([eps, eps]),
        params={"beta": beta, "eps": eps, "law": law, "stiffness": stiffness},
    )


@register("conservation_law")
def conservation_law(A=((0.6, 0.2), (0.3, -0.5)),
                     Gamma=(((1.0, 0.5), (0.5, -0.4)), ((0.3, 0.6), (0.6, 0.8))),
                     cubic=(0.7, -0.5), B=((1.0, 0.2), (0.1, 0.8))) -> ModelSpec:
    """System of conservation laws w_t + g(w)_x = B w_xx with

        g(w) = A w + (1/2) w^T Gamma w + cubic * w_1^3 / 6,

    where Gamma[i] is the symmetric Hessian of g_i. Used as a full nonlinear
    system with known quadratic data.
    """
    A_ = np.asarray(A, float)
    G = np.asarray(Gamma, float)
    C = np.asarray(cubic, float)
    n = A_.shape[0]

    def flux(u):
        return (np.einsum("ij,j...->i...", A_, u) + 0.5 * np.einsum("j...,ijl,l...->i...", u, G, u)
                + np.multiply.outer(C, u[0] ** 3 / 6))

    def jac(u):
        out = np.einsum("ij,...->ij...", A_, np.ones(u.shape[1:])) + np.einsum("ijl,l...->ij...", G, u)
        out[:, 0] += np.multiply.outer(C, u[0] ** 2 / 2)
        return out

    def hess(u):
        out = np.einsum("ijl,...->ijl...", G, np.ones(u.shape[1:]))
        out[:, 0, 0] += np.multiply.outer(C, u[0])
        return out

    return ModelSpec(
        name="conservation_law", n=n, flux=flux, flux_jacobian=jac, flux_hessian=hess,
        conserved=(True,) * n, linear_op=_linop(n), viscosity=np.asarray(B, float),
        params={"A": A_.tolist(), "Gamma": G.tolist(), "cubic": C.tolist(), "B": np.asarray(B).tolist()},
    )


def check_model(model: ModelSpec, rng: np.random.Generator, probes: int = 100,
                scale: float = 1.0, center=None) -> dict:
    """Numerical screens: analytic vs finite-difference derivatives, divergence
    form of conserved rows, and decay of the principal symbol."""
    center = np.zeros(model.n) if center is None else np.asarray(center, float)
    u = center[:, None] + scale * rng.uniform(-1, 1, size=(model.n, probes))
    report = {}
    if model.flux_jacobian is not None:
        a = model.flux_jacobian(u)
        b = fd_jacobian(model.flux, u)
        report["flux_jacobian_error"] = float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a))))
    if model.flux_hessian is not None:
        a = model.flux_hessian(u)
        jac = model.flux_jacobian or (lambda v: fd_jacobian(model.flux, v))
        b = fd_jacobian(jac, u)
        report["flux_hessian_error"] = float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a))))
    ux = scale * rng.uniform(-1, 1, size=u.shape)
    g = evaluate_source(model, u, ux)
    report["conserved_source_max"] = float(np.max(np.abs(g[model.conserved_index]))) if model.n_conserved else 0.0
    if model.source is not None and model.source_jacobians is not None:
        gu, gux = model.source_jacobians(u, ux)
        fu = fd_jacobian(lambda v: model.source(v, ux), u)
        fux = fd_jacobian(lambda v: model.source(u, v), ux)
        report["source_jacobian_error"] = float(max(np.max(np.abs(gu - fu)), np.max(np.abs(gux - fux))))
    xis = np.linspace(10, 100, 10)
    re = [np.max(np.linalg.eigvals(linear_symbol(model, x, center)).real) for x in xis]
    report["symbol_large_xi_max_real"] = float(max(re))
    return report
