"""Diffusion waves and constant-coefficient approximants of viscous
conservation laws near a constant state.

For w_t + g(w)_x = (B(w) w_x)_x about w_star, with A = dg, Gamma = d^2 g and
left/right eigenbases L R = I of A, the approximants are

    quadratic:  y_t + A y_x + (1/2)(y^T Gamma y)_x = B~ y_xx
    decoupled:  z_t + A z_x + (1/2)(z^T Gamma~ z)_x = B~ z_xx

where B~ and Gamma~ keep only the diagonal of B and the self-interaction
of Gamma in characteristic coordinates. Both are integrated in
characteristic coordinates so the linear part is diagonal and exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erfc

from .errors import ModwaveError
from .evolve import FieldState, Trajectory, _Spectral, decay_rate, integrate_pde, lp_norms, run
from .model import ModelSpec, evaluate_viscosity, flux_derivatives


# ----------------------------------------------------------------------------
# scalar waves


def heat_kernel(x, t: float) -> np.ndarray:
    return np.exp(-np.asarray(x, float) ** 2 / (4 * t)) / np.sqrt(4 * np.pi * t)


def burgers_diffusion_wave(gamma: float, mass: float, x, t: float) -> np.ndarray:
    """Solution of theta_t + (gamma theta^2 / 2)_x = theta_xx from mass * delta.

    Hopf-Cole closed form; the heat kernel when gamma = 0.
    """
    if not t > 0:
        raise ValueError("diffusion waves are defined for t > 0 only")
    x = np.asarray(x, float)
    G = heat_kernel(x, t)
    if gamma == 0 or mass == 0:
        return mass * G
    amp = np.expm1(0.5 * gamma * mass)
    return (2.0 / gamma) * amp * G / (1.0 + amp * 0.5 * erfc(x / np.sqrt(4 * t)))


def burgers_residual(gamma: float, mass: float, t: float, length: float = 80.0, n: int = 4096,
                     dt: float = 1e-5) -> float:
    """Max residual of the Burgers equation for the Hopf-Cole wave, using
    spectral x-derivatives and a fourth-order central difference in t."""
    x = (np.arange(n) - n // 2) * (length / n)
    nu = 2 * np.pi * np.fft.rfftfreq(n, length / n)
    th = burgers_diffusion_wave(gamma, mass, x, t)
    d = lambda f, o: np.fft.irfft((1j * nu) ** o * np.fft.rfft(f), n)
    w = [burgers_diffusion_wave(gamma, mass, x, t + s * dt) for s in (-2, -1, 1, 2)]
    th_t = (w[0] - 8 * w[1] + 8 * w[2] - w[3]) / (12 * dt)
    res = th_t + d(0.5 * gamma * th ** 2, 1) - d(th, 2)
    return float(np.max(np.abs(res)))


# ----------------------------------------------------------------------------
# constant-state data


@dataclass
class ConstantStateSystem:
    w_star: np.ndarray
    A_star: np.ndarray
    B_star: np.ndarray
    Gamma_star: np.ndarray  # (n, n, n), Gamma[i] = Hess g_i
    L_star: np.ndarray
    R_star: np.ndarray
    Gamma_tilde: np.ndarray
    B_tilde: np.ndarray
    gamma: np.ndarray  # Burgers coefficients after rescaling by b_j
    a: np.ndarray
    b: np.ndarray

    @property
    def n(self) -> int:
        return self.A_star.shape[0]

    def self_interaction(self) -> np.ndarray:
        """l_j Gamma(r_j, r_j) for each mode."""
        return quadratic_in_modes(self.Gamma_star, self.R_star, self.L_star)


def quadratic_in_modes(Gamma, R, L) -> np.ndarray:
    return np.array([L[j] @ np.einsum("iab,a,b->i", Gamma, R[:, j], R[:, j]) for j in range(R.shape[1])])


def diagonal_projection(Gamma, R, L) -> np.ndarray:
    """Gamma~ with l_i Gamma~(r_j, r_l) = delta_ij delta_il l_j Gamma(r_j, r_j)."""
    g = quadratic_in_modes(Gamma, R, L)
    return np.einsum("ij,j,ja,jb->iab", R, g, L, L)


def eigenbases(A, collision_tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Real eigenvalues sorted ascending with L R = I; raises on complex or
    colliding eigenvalues."""
    lam, R = np.linalg.eig(np.asarray(A, float))
    if np.max(np.abs(lam.imag)) > collision_tol * max(1.0, np.max(np.abs(lam))):
        raise ModwaveError("nonstrict-hyperbolic", f"complex characteristic speeds {lam}")
    lam, R = lam.real, R.real
    order = np.argsort(lam)
    lam, R = lam[order], R[:, order]
    if lam.size > 1 and np.min(np.diff(lam)) < collision_tol * max(1.0, np.max(np.abs(lam))):
        raise ModwaveError("nonstrict-hyperbolic", f"repeated characteristic speeds {lam}")
    return lam, np.linalg.inv(R), R


def constant_state_system(A, Gamma, B, w_star=None, collision_tol: float = 1e-8) -> ConstantStateSystem:
    A = np.asarray(A, float)
    Gamma = np.asarray(Gamma, float)
    B = np.asarray(B, float)
    n = A.shape[0]
    a, L, R = eigenbases(A, collision_tol)
    b = np.einsum("ja,ab,bj->j", L, B, R)
    if np.any(b <= 0):
        raise ModwaveError("nonparabolic", f"diag(L B R) = {b}")
    B_tilde = R @ np.diag(b) @ L
    Gt = diagonal_projection(Gamma, R, L)
    gam = quadratic_in_modes(Gamma, R, L) / b
    return ConstantStateSystem(w_star=np.zeros(n) if w_star is None else np.asarray(w_star, float),
                               A_star=A, B_star=B, Gamma_star=Gamma, L_star=L, R_star=R,
                               Gamma_tilde=Gt, B_tilde=B_tilde, gamma=gam, a=a, b=b)


def system_from_model(model: ModelSpec, w_star) -> ConstantStateSystem:
    """Constant-state data of a conservation-law model (all components conserved, no source)."""
    if model.n_conserved != model.n or model.has_source or np.any(model.linear_op):
        raise ModwaveError("unsupported-structure", "approximants need a pure system of conservation laws")
    u = np.asarray(w_star, float).reshape(model.n, 1)
    A = flux_derivatives(model, u, 1)[..., 0]
    H = flux_derivatives(model, u, 2)[..., 0]
    B = evaluate_viscosity(model, u)[..., 0]
    return constant_state_system(A, H, B, w_star)


# ----------------------------------------------------------------------------
# approximant integration


class Approximant:
    """Quadratic or decoupled approximant on a torus of length W with N_x
    points per unit length, stepped in characteristic coordinates."""

    def __init__(self, system: ConstantStateSystem, kind: str, W: int, N_x: int):
        if kind not in ("quadratic", "decoupled"):
            raise ValueError(f"unknown approximant {kind!r}")
        self.system, self.kind = system, kind
        self.sp = _Spectral(W, N_x)
        nu = self.sp.nu
        self.lin = -1j * system.a[:, None] * nu - system.b[:, None] * nu ** 2
        self.Gamma = system.Gamma_star if kind == "quadratic" else system.Gamma_tilde
        self.L, self.R = system.L_star, system.R_star

    def nonlinear(self, c):
        sp = self.sp
        y = self.R @ sp.pad(np.fft.rfft(c, axis=-1))
        q = 0.5 * np.einsum("ax,iab,bx->ix", y, self.Gamma, y)
        return -sp.dy(self.L @ sp.unpad(q))


@dataclass
class Solution:
    """Perturbation trajectory w - w_star in original coordinates."""
    times: np.ndarray
    fields: np.ndarray  # (n_t, n, Ntot)
    W: int
    N_x: int
    label: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.W * self.N_x) / self.N_x


def integrate_approximant(system: ConstantStateSystem, kind: str, z0: np.ndarray, T: float, dt: float,
                          W: int, N_x: int, save_times=None, scheme: str = "etd2") -> Solution:
    ap = Approximant(system, kind, W, N_x)
    traj = run(ap, system.L_star @ np.atleast_2d(z0), 0.0, T, dt, save_times, scheme)
    fields = np.einsum("ij,tjx->tix", system.R_star, traj.snapshots)
    return Solution(traj.times, fields, W, N_x, label=kind)


def integrate_full(model: ModelSpec, w_star, z0: np.ndarray, T: float, dt: float, W: int, N_x: int,
                   save_times=None, scheme: str = "etd2") -> Solution:
    u0 = np.asarray(w_star, float)[:, None] + np.atleast_2d(z0)
    traj = integrate_pde(model, FieldState(u0, 0.0, W, N_x), T, dt, save_times=save_times, scheme=scheme,
                         norm_every=max(1, int(round(T / dt))))
    return Solution(traj.times, traj.snapshots - np.asarray(w_star, float)[None, :, None], W, N_x, label="full")


def diffusion_wave_superposition(system: ConstantStateSystem, m0, x, t: float,
                                 center: float = 0.0, period: Optional[float] = None,
                                 shifts=None) -> np.ndarray:
    """sum_j theta_j(x - a_j (1 + t), b_j (1 + t)) r_j, where theta_j carries
    the mass l_j m0. With ``period`` the images on the torus are summed;
    ``shifts`` moves the point mass of each mode."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.asarray(x, float)
    masses = system.L_star @ np.asarray(m0, float)
    out = np.zeros((system.n,) + x.shape)
    images = [0.0] if period is None else [-period, 0.0, period]
    for j in range(system.n):
        if masses[j] == 0:
            continue
        xc = x - center - system.a[j] * (1 + t) - (0.0 if shifts is None else shifts[j])
        if period is not None:
            xc = (xc + period / 2) % period - period / 2
        th = sum(burgers_diffusion_wave(system.gamma[j], masses[j], xc + s, system.b[j] * (1 + t))
                 for s in images)
        out += np.multiply.outer(system.R_star[:, j], th)
    return out


def first_moment_shifts(system: ConstantStateSystem, m0, first_moments) -> np.ndarray:
    """Offsets of the point masses such that each wave at t = 0 has the given
    first moment (about the common centre) in its characteristic coordinate."""
    masses = system.L_star @ np.asarray(m0, float)
    out = np.zeros(system.n)
    for j in range(system.n):
        if masses[j] == 0:
            continue
        s = system.b[j]
        half = 12 * np.sqrt(s) + 10 * abs(system.gamma[j] * masses[j])
        x = np.linspace(-half, half, 8001)
        th = burgers_diffusion_wave(system.gamma[j], masses[j], x, s)
        out[j] = first_moments[j] / masses[j] - np.trapezoid(x * th, x) / masses[j] - system.a[j]
    return out


# ----------------------------------------------------------------------------
# gaps


@dataclass
class GapSeries:
    times: np.ndarray
    gap: np.ndarray
    p: float
    rate: Optional[tuple] = None


def _as_series(traj):
    if isinstance(traj, Solution):
        return traj.times, traj.fields, traj.W, traj.N_x
    if isinstance(traj, Trajectory):
        return traj.times, traj.snapshots, traj.W, traj.N_x
    raise TypeError("expected a Solution or Trajectory")


def series_norms(traj, p=2, window=None) -> GapSeries:
    times, f, W, N_x = _as_series(traj)
    vals = np.array([lp_norms(s, 1.0 / N_x)[p] for s in f])
    out = GapSeries(np.asarray(times), vals, p)
    if window is not None:
        out.rate = decay_rate(out.times, vals, window)
    return out


def equivalence_gap(traj_a, traj_b, p=2, window=(50.0, 500.0)) -> GapSeries:
    """L^p distance between two trajectories at their common save times and
    its fitted exponent in (1 + t) over ``window``."""
    ta, fa, Wa, Na = _as_series(traj_a)
    tb, fb, Wb, Nb = _as_series(traj_b)
    if (Wa, Na) != (Wb, Nb) or fa.shape[1:] != fb.shape[1:] or not np.allclose(ta, tb):
        raise ModwaveError("grid-mismatch", f"{(Wa, Na, fa.shape)} vs {(Wb, Nb, fb.shape)}")
    gaps = np.array([lp_norms(x - y, 1.0 / Na)[p] for x, y in zip(fa, fb)])
    out = GapSeries(np.asarray(ta), gaps, p)
    if window is not None and np.all(gaps[(out.times >= window[0]) & (out.times <= window[1])] > 0):
        out.rate = decay_rate(out.times, gaps, window)
    return out


# ----------------------------------------------------------------------------
# scalar forced equation


class ForcedScalar:
    """k_t + a k_x + (gamma k^2)_x - d k_xx = (F k)_x with F itself a
    diffusion wave, F_t + a_F F_x = d_F F_xx; state rows are (F, k)."""

    def __init__(self, a, gamma, d, a_F, d_F, W: int, N_x: int):
        if d <= 0 or d_F <= 0:
            raise ModwaveError("nonparabolic", "diffusion coefficients must be positive")
        self.sp = _Spectral(W, N_x)
        nu = self.sp.nu
        self.lin = np.vstack([-1j * a_F * nu - d_F * nu ** 2, -1j * a * nu - d * nu ** 2])
        self.gamma = gamma

    def nonlinear(self, u):
        sp = self.sp
        F, k = sp.pad(np.fft.rfft(u, axis=-1))
        rhs = sp.dy(sp.unpad(F * k - self.gamma * k ** 2))
        return np.vstack([np.zeros_like(rhs), rhs])


def forced_scalar_run(a: float, gamma: float, d: float, a_F: float, d_F: float, F0, k0, T: float, dt: float,
                      W: int, N_x: int, save_times=None) -> Solution:
    fs = ForcedScalar(a, gamma, d, a_F, d_F, W, N_x)
    traj = run(fs, np.vstack([F0, k0]), 0.0, T, dt, save_times, "etd2")
    return Solution(traj.times, traj.snapshots, W, N_x, label="forced")
