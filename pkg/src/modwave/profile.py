"""Periodic traveling-wave profiles, their (M, k) families, variational
derivatives and the adjoint generalized null function.

A profile is stored on the unit period in the scaled coordinate y = k(x - c t),
so the wavenumber k counts periods per unit length. The profile equation is

    R(U) = D(B(U) D U) - D f(U) + c D U - g(U, D U) - P(D) U = 0,   D = k d_y.

Newton iterations run on the Fourier coefficients of U; the identically zero
mean rows of conserved components are replaced by a mean (or flux) constraint
and a phase row pins the translation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ModwaveError
from .model import (ModelSpec, evaluate_flux, evaluate_source, evaluate_viscosity,
                    source_derivatives)
from .spectral import OperatorExpansion, derivative, resample, to_coeffs, to_grid


@dataclass(frozen=True)
class WaveProfile:
    model: ModelSpec
    U: np.ndarray  # (n, N)
    k: float
    c: float
    M: np.ndarray  # means of conserved components
    q: np.ndarray  # flux constants of conserved components
    residual_norm: float

    @property
    def N(self) -> int:
        return self.U.shape[-1]

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.N) / self.N

    @property
    def K(self) -> int:
        return self.N // 2 - 1

    @property
    def is_constant(self) -> bool:
        return bool(np.max(np.abs(self.U - self.U.mean(axis=1, keepdims=True))) < 1e-12)

    def dU(self, order: int = 1) -> np.ndarray:
        """y-derivative of the profile."""
        return derivative(self.U, order)

    def amplitude(self) -> float:
        return float(np.max(np.abs(self.U - self.U.mean(axis=1, keepdims=True))))

    def expansion(self, K: Optional[int] = None) -> OperatorExpansion:
        return OperatorExpansion(self.model, self.U, self.k, self.c, self.K if K is None else K)

    def params(self) -> np.ndarray:
        return np.concatenate([self.M, [self.k]])


def _means(model: ModelSpec, U: np.ndarray) -> np.ndarray:
    return U[model.conserved_index].mean(axis=1)


def flux_constant(model: ModelSpec, U: np.ndarray, k: float, c: float) -> np.ndarray:
    """q = <B(U) U_x - f(U) + c U> - p_1 <U> on conserved components."""
    idx = model.conserved_index
    if idx.size == 0:
        return np.zeros(0)
    Ux = k * derivative(U)
    B = evaluate_viscosity(model, U)
    visc = np.einsum("ijx,jx->ix", B, Ux)
    f = evaluate_flux(model, U)
    total = (visc - f + c * U).mean(axis=1)
    p1 = model.linear_op[:, 1]
    return (total - p1 * U.mean(axis=1))[idx]


def profile_residual(model: ModelSpec, U: np.ndarray, k: float, c: float) -> np.ndarray:
    """Residual of the differentiated profile equation on the grid of U.

    Products are formed on a grid of twice the size and truncated back.
    """
    N = U.shape[-1]
    Nf = 2 * N
    Uf = resample(U, Nf)
    Ux = k * derivative(Uf)
    B = evaluate_viscosity(model, Uf)
    visc = np.einsum("ijx,jx->ix", B, Ux)
    f = evaluate_flux(model, Uf)
    g = evaluate_source(model, Uf, Ux)
    R = k * derivative(visc - f + c * Uf) - g
    for m in range(1, 5):
        coef = model.linear_op[:, m]
        if np.any(coef):
            R -= coef[:, None] * k ** m * derivative(Uf, m)
    R -= model.linear_op[:, 0][:, None] * Uf
    return resample(R, N)


def _symmetrize(c: np.ndarray) -> np.ndarray:
    """Project coefficients (n, 2K+1) onto those of real fields."""
    return 0.5 * (c + np.conj(c[:, ::-1]))


def _rcond(J: np.ndarray) -> float:
    scale = np.max(np.abs(J), axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    s = np.linalg.svd(J / scale, compute_uv=False)
    return float(s[-1] / s[0])


def _constant_profile(model, guess, M, q, k, tol, max_iter):
    n = model.n
    idx = model.conserved_index
    u = guess.U.mean(axis=1).copy()
    if M is not None:
        u[idx] = M
    free = np.setdiff1d(np.arange(n), idx)
    c = float(guess.c)
    if free.size:
        p0 = model.linear_op[:, 0]

        def eq(v):
            full = u.copy()
            full[free] = v
            r = evaluate_source(model, full[:, None])[:, 0] + p0 * full
            return r[free]

        v = u[free].copy()
        for _ in range(max_iter):
            r = eq(v)
            if np.max(np.abs(r)) <= tol:
                break
            full = u.copy()
            full[free] = v
            gu, _ = source_derivatives(model, full[:, None])
            Jf = gu[..., 0] + np.diag(p0)
            v = v - np.linalg.solve(Jf[np.ix_(free, free)], r)
        else:
            raise ModwaveError("newton-diverged", "constant-state source equation")
        u[free] = v
    if model.n == 1 and model.n_conserved == 1:
        from .model import flux_derivatives
        c = float(flux_derivatives(model, u[:, None], 1)[0, 0, 0])
    U = np.repeat(u[:, None], guess.N, axis=1)
    if M is None and q is not None and idx.size:
        raise ModwaveError("unsupported-structure",
                           "flux-constant constraint is not defined for constant states")
    res = float(np.max(np.abs(profile_residual(model, U, k, c))))
    return WaveProfile(model, U, float(k), c, _means(model, U),
                       flux_constant(model, U, k, c), res)


def solve_profile(model: ModelSpec, guess: WaveProfile, M=None, q=None, k: Optional[float] = None,
                  tol: float = 1e-9, max_iter: int = 40,
                  phase_ref: Optional[np.ndarray] = None) -> WaveProfile:
    """Newton solve of the profile equation with k fixed and either the means
    M or the flux constants q fixed (M defaults to the guess means).

    The phase is fixed by <U - U_ref, U_ref'> = 0 where U_ref is ``phase_ref``
    (grid values) or the guess itself.
    """
    k = float(guess.k if k is None else k)
    nc = model.n_conserved
    if M is None and q is None:
        M = _means(model, guess.U)
    M = None if M is None else np.atleast_1d(np.asarray(M, float))
    q = None if q is None else np.atleast_1d(np.asarray(q, float))
    if guess.N % 2:
        raise ValueError("profile grids must have an even number of points")
    if guess.is_constant:
        return _constant_profile(model, guess, M, q, k, tol, max_iter)

    n, N = model.n, guess.N
    K = N // 2 - 1
    size = 2 * K + 1
    idx = model.conserved_index
    ref = guess.U if phase_ref is None else np.asarray(phase_ref)
    ref_c = to_coeffs(resample(ref, N), K)
    ref_prime = (2j * np.pi * np.arange(-K, K + 1)) * ref_c
    mean_rows = np.array([i * size + K for i in idx], dtype=int)

    coef = to_coeffs(guess.U, K)
    coef = _symmetrize(coef)
    c = float(guess.c)

    def system(coef, c):
        U = to_grid(coef, N)
        Rg = profile_residual(model, U, k, c)
        R = to_coeffs(Rg, K).ravel()
        if nc:
            if M is not None:
                R[mean_rows] = coef[idx, K] - M
            else:
                R[mean_rows] = flux_constant(model, U, k, c) - q
        phase = np.vdot(ref_prime.ravel(), (coef - ref_c).ravel())
        F = np.concatenate([R, [phase]])
        extra = np.abs(R[mean_rows]) if nc else np.zeros(0)
        return U, F, max(np.max(np.abs(Rg)), np.max(extra, initial=0.0), abs(phase))

    U, F, res = system(coef, c)
    converged = False
    for it in range(max_iter + 1):
        if res <= tol and converged:
            break
        if res <= tol:
            converged = True  # one more full step to push the error to rounding level
        ex = OperatorExpansion(model, U, k, c, K)
        J = np.zeros((n * size + 1, n * size + 1), dtype=complex)
        J[:-1, :-1] = ex.L[0]
        J[:-1, -1] = ex.Kd @ coef.ravel()
        if nc:
            if M is not None:
                J[mean_rows, :] = 0.0
                J[mean_rows, mean_rows] = 1.0
            else:
                J[mean_rows, :-1] = ex.L[1][mean_rows]
                J[mean_rows, -1] = coef[idx, K]
        J[-1, :-1] = np.conj(ref_prime.ravel())
        if _rcond(J) < 1e-13:
            raise ModwaveError("singular-jacobian", f"iteration {it}, k={k}")
        step = np.linalg.solve(J, -F)
        dcoef = _symmetrize(step[:-1].reshape(n, size))
        dc = float(step[-1].real)
        if converged:
            new_coef, new_c = coef + dcoef, c + dc
            U_new, F_new, new_res = system(new_coef, new_c)
            if new_res <= 10 * tol:
                coef, c, U, F, res = new_coef, new_c, U_new, F_new, new_res
            break
        lam = 1.0
        for _ in range(8):
            new_coef, new_c = coef + lam * dcoef, c + lam * dc
            U_new, F_new, new_res = system(new_coef, new_c)
            if np.isfinite(new_res) and new_res < res * (1 - 1e-4 * lam):
                break
            lam *= 0.5
        else:
            raise ModwaveError("newton-diverged", f"no descent at iteration {it}, residual {res:.3e}")
        coef, c, U, F, res = new_coef, new_c, U_new, F_new, new_res
    if res > tol:
        raise ModwaveError("newton-diverged", f"residual {res:.3e} after {max_iter} iterations")
    U = to_grid(coef, N)
    R = profile_residual(model, U, k, c)
    return WaveProfile(model, U, k, c, _means(model, U), flux_constant(model, U, k, c),
                       float(np.max(np.abs(R))))


def initial_guess(model: ModelSpec, k: float, amplitude: float, N: int = 128,
                  M=None, c: float = 0.0, shape: str = "cos", background=None) -> WaveProfile:
    """Small-amplitude harmonic seed near a bifurcation from a constant state."""
    y = np.arange(N) / N
    base = np.zeros(model.n) if background is None else np.asarray(background, float)
    U = np.repeat(base[:, None], N, axis=1).astype(float)
    if M is not None:
        U[model.conserved_index] = np.asarray(M, float)[:, None]
    wave = np.cos(2 * np.pi * y) if shape == "cos" else -np.sin(2 * np.pi * y)
    amp = np.broadcast_to(np.asarray(amplitude, float), (model.n,))
    U = U + amp[:, None] * wave
    return WaveProfile(model, U, float(k), float(c), _means(model, U), np.zeros(model.n_conserved), np.inf)


def viscoelastic_seed(model: ModelSpec, amplitude: float, stress_offset: float, center: float,
                      N: int = 64, tol: float = 1e-9) -> WaveProfile:
    """Standing wave of the viscoelastic system from its profile ODE.

    With c = 0 the profile satisfies eps1 eps2 tau'' = sigma(tau) + stress_offset
    and u = -eps1 tau'. The orbit through tau = center + amplitude, tau' = 0 is
    integrated until tau' vanishes twice, which fixes the period, and the
    sampled orbit is polished by Newton.
    """
    if model.name != "viscoelasticity":
        raise ValueError("viscoelastic_seed needs the viscoelasticity model")
    e1, e2 = model.params["eps1"], model.params["eps2"]
    law, s = model.params["law"], model.params["stiffness"]
    sigma = (lambda t: s / t) if law == "inverse" else (lambda t: -s * t + t ** 3)

    def rhs(_, z):
        return [z[1], (sigma(z[0]) + stress_offset) / (e1 * e2)]

    def turn(_, z):
        return z[1]

    sol = solve_ivp(rhs, [0.0, 200.0], [center + amplitude, 0.0], events=turn, rtol=1e-12, atol=1e-12,
                    dense_output=True)
    te = sol.t_events[0]
    te = te[te > 1e-8]
    if te.size < 2:
        raise ModwaveError("no-periodic-orbit", "the orbit did not close within the integration window")
    period = te[1]
    z = sol.sol(np.arange(N) / N * period)
    U = np.array([z[0], -e1 * z[1]])
    guess = WaveProfile(model, U, 1.0 / period, 0.0, _means(model, U), np.zeros(2), np.inf)
    return solve_profile(model, guess, tol=tol)


def check_profile(profile: WaveProfile, tol: float) -> dict:
    """Evaluate the type invariants of a converged profile."""
    U = profile.U
    amp = max(profile.amplitude(), 1e-300)
    c = to_coeffs(U, profile.K)
    from .spectral import evaluate_periodic
    end_gap = np.max(np.abs(evaluate_periodic(c, np.array([0.0])) - evaluate_periodic(c, np.array([1.0]))))
    report = {
        "periodicity": float(end_gap / amp),
        "mean_error": float(np.max(np.abs(_means(profile.model, U) - profile.M))) if profile.M.size else 0.0,
        "residual": profile.residual_norm,
    }
    report["ok"] = report["periodicity"] < 1e-10 and report["mean_error"] < 1e-10 and report["residual"] <= tol
    return report


# ----------------------------------------------------------------------------
# families


@dataclass(frozen=True)
class WaveFamily:
    anchor: WaveProfile
    deltas: np.ndarray  # (n_c + 1,): parameter steps, last entry for k
    half_widths: tuple  # (m_M, m_k)
    nodes: dict = field(repr=False)  # offset tuple -> WaveProfile
    dU_dM: Optional[np.ndarray] = None  # (n, N, n_c)
    dU_dk: Optional[np.ndarray] = None  # (n, N)
    dc_dM: Optional[np.ndarray] = None  # (n_c,)
    dc_dk: Optional[float] = None
    u_adj: Optional[np.ndarray] = None  # (n, N)
    normalization_shift: float = 0.0
    derivative_method: str = ""
    notes: dict = field(default_factory=dict, repr=False)

    @property
    def model(self) -> ModelSpec:
        return self.anchor.model

    @property
    def n_params(self) -> int:
        return self.model.n_conserved + 1

    def offsets(self):
        return sorted(self.nodes)

    def node_params(self, offset) -> np.ndarray:
        return self.anchor.params() + np.asarray(offset) * self.deltas

    def table(self, fn) -> np.ndarray:
        """Array of fn(profile) over the tensor patch, axes ordered (M_1..M_nc, k)."""
        m_M, m_k = self.half_widths
        shape = (2 * m_M + 1,) * self.model.n_conserved + (2 * m_k + 1,)
        out = None
        for off, prof in self.nodes.items():
            val = np.asarray(fn(prof), dtype=float)
            if out is None:
                out = np.full(shape + val.shape, np.nan)
            pos = tuple(o + m_M for o in off[:-1]) + (off[-1] + m_k,)
            out[pos] = val
        return out

    def centered_derivative(self, fn, axis: int, order: int = 1) -> np.ndarray:
        """Centered difference of fn at the anchor along one parameter axis."""
        e = np.zeros(self.n_params, dtype=int)
        e[axis] = 1
        h = self.deltas[axis]
        f0 = np.asarray(fn(self.nodes[tuple(np.zeros(self.n_params, int))]), float)
        fp = np.asarray(fn(self.nodes[tuple(e)]), float)
        fm = np.asarray(fn(self.nodes[tuple(-e)]), float)
        if order == 1:
            return (fp - fm) / (2 * h)
        if order == 2:
            return (fp - 2 * f0 + fm) / h ** 2
        raise ValueError("order must be 1 or 2")

    def hessian(self, fn) -> np.ndarray:
        """Second derivatives of fn at the anchor over (M, k), shape (p, p) + fn shape."""
        p = self.n_params
        zero = tuple(np.zeros(p, int))
        f0 = np.asarray(fn(self.nodes[zero]), float)
        H = np.zeros((p, p) + f0.shape)
        for a in range(p):
            H[a, a] = self.centered_derivative(fn, a, 2)
            for b in range(a + 1, p):
                vals = {}
                for sa, sb in itertools.product((1, -1), repeat=2):
                    off = np.zeros(p, int)
                    off[a], off[b] = sa, sb
                    node = self.nodes.get(tuple(off))
                    if node is None:
                        raise ModwaveError("patch-too-small", "mixed second differences need diagonal nodes")
                    vals[(sa, sb)] = np.asarray(fn(node), float)
                H[a, b] = H[b, a] = ((vals[(1, 1)] - vals[(1, -1)] - vals[(-1, 1)] + vals[(-1, -1)])
                                     / (4 * self.deltas[a] * self.deltas[b]))
        return H

    def gradient(self, fn, extrapolate: bool = False) -> np.ndarray:
        """First derivatives of fn at the anchor, shape (p,) + fn shape.

        With ``extrapolate`` and a half-width of two along an axis, the steps
        h and 2h are combined by Richardson extrapolation.
        """
        out = []
        for a in range(self.n_params):
            d1 = self.centered_derivative(fn, a, 1)
            width = self.half_widths[1] if a == self.n_params - 1 else self.half_widths[0]
            if extrapolate and width >= 2:
                e = np.zeros(self.n_params, int)
                e[a] = 2
                d2 = (np.asarray(fn(self.nodes[tuple(e)]), float)
                      - np.asarray(fn(self.nodes[tuple(-e)]), float)) / (4 * self.deltas[a])
                d1 = (4 * d1 - d2) / 3
            out.append(d1)
        return np.stack(out)


def _seed_from(prof: WaveProfile, params: np.ndarray) -> WaveProfile:
    model = prof.model
    U = prof.U.copy()
    nc = model.n_conserved
    if nc:
        U[model.conserved_index] += (params[:nc] - prof.M)[:, None]
    return replace(prof, U=U, k=float(params[-1]), M=params[:nc].copy())


def _solve_with_halving(model, seed: WaveProfile, target: np.ndarray, tol, ref, depth=0):
    nc = model.n_conserved
    guess = _seed_from(seed, target)
    try:
        return solve_profile(model, guess, M=target[:nc] if nc else None, k=target[-1],
                             tol=tol, phase_ref=ref)
    except ModwaveError:
        if depth >= 4:
            raise ModwaveError("fold-detected", f"no convergence at parameters {target}")
        mid = 0.5 * (seed.params() + target)
        half = _solve_with_halving(model, seed, mid, tol, ref, depth + 1)
        return _solve_with_halving(model, half, target, tol, ref, depth + 1)


def continue_family(model: ModelSpec, anchor: WaveProfile, deltas=None, half_widths=(1, 1),
                    tol: float = 1e-9, full_tensor: bool = True) -> WaveFamily:
    """Tensor patch of profiles around the anchor in (M, k).

    Each node is seeded from an already converged neighbour one step closer
    to the anchor. ``deltas`` default to 1e-3 times the anchor scales.
    """
    nc = model.n_conserved
    if anchor.is_constant:
        raise ModwaveError("unsupported-structure", "families require a non-constant anchor")
    if deltas is None:
        scale_M = np.maximum(np.abs(anchor.M), max(anchor.amplitude(), 1.0))
        deltas = np.concatenate([1e-3 * scale_M, [1e-3 * anchor.k]])
    deltas = np.asarray(deltas, float).reshape(nc + 1)
    m_M, m_k = (int(half_widths[0]), int(half_widths[1]))
    ranges = [range(-m_M, m_M + 1)] * nc + [range(-m_k, m_k + 1)]
    offsets = sorted(itertools.product(*ranges), key=lambda o: (sum(map(abs, o)), o))
    if not full_tensor:
        offsets = [o for o in offsets if sum(1 for v in o if v) <= 2]
    zero = tuple([0] * (nc + 1))
    nodes = {zero: anchor}
    ref = anchor.U
    for off in offsets:
        if off == zero:
            continue
        # nearest converged neighbour: reduce the largest offset by one
        j = int(np.argmax(np.abs(off)))
        prev = list(off)
        prev[j] -= int(np.sign(off[j]))
        seed = nodes[tuple(prev)]
        target = anchor.params() + np.asarray(off) * deltas
        nodes[off] = _solve_with_halving(model, seed, target, tol, ref)
    return WaveFamily(anchor=anchor, deltas=deltas, half_widths=(m_M, m_k), nodes=nodes)


# ----------------------------------------------------------------------------
# derivatives and the adjoint


def _bordered(ex: OperatorExpansion, anchor: WaveProfile) -> np.ndarray:
    n, size = ex.n, ex.size
    coef = ex.coeffs(anchor.U)
    J = np.zeros((n * size + 1, n * size + 1), dtype=complex)
    J[:-1, :-1] = ex.L[0]
    J[:-1, -1] = ex.Kd @ coef
    rows = ex.mean_rows()
    J[rows, :] = 0.0
    J[rows, rows] = 1.0
    J[-1, :-1] = np.conj(ex.deriv(coef))
    return J


def _variational(family: WaveFamily):
    a = family.anchor
    ex = a.expansion()
    nc = a.model.n_conserved
    J = _bordered(ex, a)
    if _rcond(J) < 1e-12:
        raise ModwaveError("kernel-dimension-mismatch", "bordered variational system is singular")
    rows = ex.mean_rows()
    coef = ex.coeffs(a.U)
    rhs = np.zeros((J.shape[0], nc + 1), dtype=complex)
    for j in range(nc):
        rhs[rows[j], j] = 1.0
    r = -(ex.L[1] @ ex.deriv(coef))
    r[rows] = 0.0
    rhs[:-1, nc] = r
    sol = np.linalg.solve(J, rhs)
    resid = np.max(np.abs(J @ sol - rhs))
    if resid > 1e-6 * max(1.0, np.max(np.abs(rhs))):
        raise ModwaveError("kernel-dimension-mismatch", f"solve residual {resid:.2e}")
    fields = np.stack([ex.field(sol[:-1, j], a.N) for j in range(nc + 1)], axis=-1)
    dc = sol[-1].real
    return fields[..., :nc], fields[..., nc], dc[:nc], float(dc[nc])


def _finite_difference(family: WaveFamily):
    nc = family.model.n_conserved
    grads_U = family.gradient(lambda p: p.U, extrapolate=True)  # (p, n, N)
    grads_c = family.gradient(lambda p: p.c, extrapolate=True)
    dU_dM = np.moveaxis(grads_U[:nc], 0, -1)
    return dU_dM, grads_U[nc], grads_c[:nc], float(grads_c[nc])


def richardson_gap(family: WaveFamily) -> float:
    """Max difference between centered differences with steps h and 2h for the
    profile derivatives; needs half-widths of at least two."""
    p = family.n_params
    m_M, m_k = family.half_widths
    worst = 0.0
    for a in range(p):
        if (a < p - 1 and m_M < 2) or (a == p - 1 and m_k < 2):
            continue
        e = np.zeros(p, int)
        e[a] = 1
        h = family.deltas[a]
        d1 = (family.nodes[tuple(e)].U - family.nodes[tuple(-e)].U) / (2 * h)
        d2 = (family.nodes[tuple(2 * e)].U - family.nodes[tuple(-2 * e)].U) / (4 * h)
        worst = max(worst, float(np.max(np.abs(d1 - d2)) / max(np.max(np.abs(d1)), 1e-300)))
    return worst


def family_derivatives(family: WaveFamily, method: str = "variational") -> WaveFamily:
    """Fill dU_dM, dU_dk, dc_dM, dc_dk by solving the bordered variational
    systems or by centered differences over the patch."""
    if method == "variational":
        dM, dk, cM, ck = _variational(family)
    elif method == "finite_difference":
        dM, dk, cM, ck = _finite_difference(family)
    else:
        raise ValueError(f"unknown method {method!r}")
    return replace(family, dU_dM=dM, dU_dk=dk, dc_dM=np.asarray(cM, float), dc_dk=ck,
                   u_adj=None, normalization_shift=0.0, derivative_method=method)


def grid_inner(a: np.ndarray, b: np.ndarray) -> float:
    """L2(0,1) pairing of real grid fields (sums over components)."""
    return float(np.sum(np.mean(a * b, axis=-1)))


def adjoint_null(family: WaveFamily, kernel_tol: float = 1e-7) -> WaveFamily:
    """Generalized null function of L0* paired to give <u, dU/dM> = 0 and <u, U'> = 1."""
    if family.dU_dM is None:
        raise ValueError("family_derivatives must run before adjoint_null")
    a = family.anchor
    ex = a.expansion()
    nc = a.model.n_conserved
    L0 = ex.L[0]
    s = np.linalg.svd(L0, compute_uv=False)
    small = int(np.sum(s < max(kernel_tol, 1e-13 * s[0])))
    if small > nc + 1:
        raise ModwaveError("adjoint-kernel-too-large", f"{small} singular values below {kernel_tol}")
    E = ex.constants()
    dM = np.stack([ex.coeffs(family.dU_dM[..., j]) for j in range(nc)], axis=1) if nc else np.zeros((L0.shape[0], 0))
    Up = ex.deriv(ex.coeffs(a.U))
    rhs_top = -a.k * (E @ np.asarray(family.dc_dM, complex)) if nc else np.zeros(L0.shape[0], complex)
    # rows scaled so the pairing constraints are not swamped by the operator rows
    w = 1.0 / max(1.0, np.max(np.abs(L0)))
    A = np.vstack([w * L0.conj().T, dM.conj().T, Up.conj()[None, :]])
    b = np.concatenate([w * rhs_top, np.zeros(nc), [1.0]])
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    sol = ex.field(sol, a.N)
    return replace(family, u_adj=sol)


def normalize_parametrization(family: WaveFamily) -> WaveFamily:
    """Shift dU_dk along U' so that <u_adj, dU_dk> = 0."""
    if family.u_adj is None:
        raise ValueError("adjoint_null must run before normalize_parametrization")
    Up = family.anchor.dU()
    alpha = -grid_inner(family.u_adj, family.dU_dk)
    return replace(family, dU_dk=family.dU_dk + alpha * Up,
                   normalization_shift=family.normalization_shift + alpha)


def family_identities(family: WaveFamily) -> dict:
    """Residuals of the linear identities tying the family derivatives to L0 and L1."""
    a = family.anchor
    ex = a.expansion()
    nc = a.model.n_conserved
    coef = ex.coeffs(a.U)
    Up = ex.deriv(coef)
    out = {"L0_Uprime": float(np.max(np.abs(ex.L[0] @ Up)))}
    if nc:
        worst = 0.0
        for j in range(nc):
            v = ex.L[0] @ ex.coeffs(family.dU_dM[..., j]) + family.dc_dM[j] * (ex.Kd @ coef)
            worst = max(worst, float(np.max(np.abs(v))))
        out["L0_dM"] = worst
        means = np.stack([family.dU_dM[i].mean(axis=0) for i in a.model.conserved_index])
        out["mean_dM"] = float(np.max(np.abs(means - np.eye(nc))))
        out["mean_dk"] = float(np.max(np.abs(family.dU_dk[a.model.conserved_index].mean(axis=-1))))
    else:
        out.update(L0_dM=0.0, mean_dM=0.0, mean_dk=0.0)
    v = (ex.L[0] @ ex.coeffs(family.dU_dk) + family.dc_dk * (ex.Kd @ coef)
         + ex.L[1] @ Up)
    out["L0_dk"] = float(np.max(np.abs(v)))
    if family.u_adj is not None:
        ua = family.u_adj
        out["adj_Uprime"] = abs(grid_inner(ua, a.dU()) - 1.0)
        out["adj_dM"] = max([abs(grid_inner(ua, family.dU_dM[..., j])) for j in range(nc)] or [0.0])
        out["adj_dk"] = abs(grid_inner(ua, family.dU_dk))
    return out


def build_family(model: ModelSpec, anchor: WaveProfile, deltas=None, half_widths=(1, 1),
                 tol: float = 1e-9, method: str = "variational") -> WaveFamily:
    """Continuation, derivatives, adjoint and normalization in one call."""
    fam = continue_family(model, anchor, deltas, half_widths, tol)
    fam = family_derivatives(fam, method)
    fam = adjoint_null(fam)
    return normalize_parametrization(fam)


# ----------------------------------------------------------------------------
# interpolation over the patch


class FamilyInterpolant:
    """Polynomial model in (M, k) of the profile coefficients and speed over the patch.

    With a full tensor patch the basis is the tensor product of degrees up to
    2 m per axis, so the nodes are interpolated exactly; otherwise a total
    degree two least-squares fit is used. Node profiles are re-phased by the
    normalization shift so that the k-derivative of the model matches the
    normalized dU_dk.
    """

    def __init__(self, family: WaveFamily, K: Optional[int] = None):
        self.family = family
        a = family.anchor
        self.K = a.K if K is None else int(K)
        self.center = a.params()
        self.scale = family.deltas
        p = family.n_params
        m_M, m_k = family.half_widths
        widths = [m_M] * (p - 1) + [m_k]
        n_tensor = int(np.prod([2 * w + 1 for w in widths]))
        if len(family.nodes) == n_tensor:
            self.exponents = np.array(list(itertools.product(*[range(2 * w + 1) for w in widths])))
        else:
            self.exponents = np.array([e for e in itertools.product(range(3), repeat=p) if sum(e) <= 2])
        X, Y, C = [], [], []
        j = np.arange(-self.K, self.K + 1)
        for off, prof in family.nodes.items():
            X.append(self._monomials(np.asarray(off, float)))
            shift = family.normalization_shift * (prof.k - a.k)
            coef = to_coeffs(prof.U, self.K) * np.exp(2j * np.pi * j * shift)
            Y.append(coef.ravel())
            C.append(prof.c)
        X = np.asarray(X)
        if X.shape[0] < X.shape[1]:
            raise ModwaveError("patch-too-small", "polynomial model needs more nodes")
        self.coef_fit, *_ = np.linalg.lstsq(X, np.asarray(Y), rcond=None)
        self.c_fit, *_ = np.linalg.lstsq(X, np.asarray(C), rcond=None)
        self.n = a.model.n
        self.bounds = np.array(widths, float)

    def _monomials(self, z: np.ndarray, deriv: Optional[int] = None) -> np.ndarray:
        e = self.exponents
        if deriv is None:
            return np.prod(z[None, :] ** e, axis=1)
        ee = e.copy()
        fac = ee[:, deriv].astype(float)
        ee[:, deriv] = np.maximum(ee[:, deriv] - 1, 0)
        return fac * np.prod(z[None, :] ** ee, axis=1)

    def _basis(self, params, deriv: Optional[int] = None) -> np.ndarray:
        z = (np.asarray(params, float) - self.center) / self.scale
        row = self._monomials(z, deriv)
        return row if deriv is None else row / self.scale[deriv]

    def in_patch(self, params, slack: float = 1.0) -> bool:
        z = (np.asarray(params, float) - self.center) / self.scale
        return bool(np.all(np.abs(z) <= self.bounds * slack))

    def coefficients(self, params) -> np.ndarray:
        return (self._basis(params) @ self.coef_fit).reshape(self.n, 2 * self.K + 1)

    def coefficient_derivative(self, params, axis: int) -> np.ndarray:
        return (self._basis(params, axis) @ self.coef_fit).reshape(self.n, 2 * self.K + 1)

    def speed(self, params) -> float:
        return float(self._basis(params) @ self.c_fit)

    def evaluate(self, params, y) -> np.ndarray:
        """U^{M,k}(y) for arbitrary points y (period one)."""
        from .spectral import evaluate_periodic
        return evaluate_periodic(self.coefficients(params), np.asarray(y))


def march(model: ModelSpec, start: WaveProfile, k_target: float, steps: int = 20,
          M=None, tol: float = 1e-9) -> WaveProfile:
    """Follow a branch in k (and optionally M) from ``start`` to ``k_target``
    by natural-parameter continuation with step halving."""
    nc = model.n_conserved
    M_target = start.M if M is None else np.atleast_1d(np.asarray(M, float))
    path = np.linspace(0.0, 1.0, steps + 1)[1:]
    prof = start
    p0 = start.params()
    p1 = np.concatenate([M_target, [k_target]]) if nc else np.array([k_target])
    for s in path:
        target = (1 - s) * p0 + s * p1
        prof = _solve_with_halving(model, prof, target, tol, None)
    return prof
