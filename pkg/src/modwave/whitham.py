"""Whitham modulation data of a wave family: averaged maps, the first-order
matrix, second-order diffusion, quadratic coefficients, coupling class, and
the initial-data map for modulated perturbations.

Modulation variables are w = (M, k) deviations from the anchor (M_bar, k_bar).
The quadratic system, written in the co-moving coordinate of unit period, is

    w_t + k_bar A w_y - d_y(1/2 w^T Gamma w) = k_bar^2 Bt w_yy
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ModwaveError
from .model import evaluate_flux, evaluate_viscosity, flux_derivatives
from .profile import WaveFamily, WaveProfile, grid_inner
from .spectral import derivative, evaluate_periodic, to_coeffs

COUPLINGS = ("generic", "linearly_decoupled", "quadratically_decoupled")


def total_flux(profile: WaveProfile) -> np.ndarray:
    """<f(U) + p_1 U - B(U) U_x> on conserved components (equals c M - q)."""
    model = profile.model
    idx = model.conserved_index
    if idx.size == 0:
        return np.zeros(0)
    U = profile.U
    Ux = profile.k * derivative(U)
    B = evaluate_viscosity(model, U)
    visc = np.einsum("ijx,jx->ix", B, Ux)
    f = evaluate_flux(model, U)
    p1 = model.linear_op[:, 1]
    return ((f - visc).mean(axis=1) + p1 * U.mean(axis=1))[idx]


def frequency(profile: WaveProfile) -> float:
    return -profile.k * profile.c


def averaged_maps(family: WaveFamily) -> dict:
    """Tabulate F, omega and the means over the patch (axes M_1..M_nc, k)."""
    return {
        "F": family.table(total_flux),
        "omega": family.table(frequency),
        "c": family.table(lambda p: p.c),
        "M": family.table(lambda p: p.M),
        "k": family.table(lambda p: p.k),
    }


@dataclass
class WhithamData:
    k: float
    c: float
    M: np.ndarray
    F: np.ndarray
    grad_F: np.ndarray  # (n_c, p)
    hess_F: np.ndarray  # (n_c, p, p)
    omega: float
    grad_omega: np.ndarray  # (p,)
    hess_omega: np.ndarray  # (p, p)
    grad_c: np.ndarray
    hess_c: np.ndarray
    A_star: np.ndarray
    a: np.ndarray
    V: np.ndarray  # right eigenvectors (columns)
    Vt: np.ndarray  # left eigenvectors (columns), Vt^T V = I
    B_tilde: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    diffusion_route: str = ""
    Gamma: Optional[np.ndarray] = None
    Gamma_uncorrected: Optional[np.ndarray] = None
    coupling: str = ""
    evidence: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def p(self) -> int:
        return self.A_star.shape[0]

    def as_dict(self) -> dict:
        out = {}
        for key, val in self.__dict__.items():
            if isinstance(val, np.ndarray):
                out[key] = val.tolist()
            elif isinstance(val, (np.floating, np.integer)):
                out[key] = val.item()
            else:
                out[key] = val
        return out


def _family_gradients(family: WaveFamily):
    nc = family.model.n_conserved
    ext = min(family.half_widths) >= 2
    gF = family.gradient(total_flux, extrapolate=ext).T if nc else np.zeros((0, nc + 1))
    gw = family.gradient(frequency, extrapolate=ext)
    gc = family.gradient(lambda p: p.c, extrapolate=ext)
    if family.dc_dM is not None and family.derivative_method == "variational":
        gc = np.concatenate([family.dc_dM, [family.dc_dk]])
        a = family.anchor
        gw = -a.k * gc
        gw[-1] -= a.c
    hF = np.moveaxis(family.hessian(total_flux), -1, 0) if nc else np.zeros((0, nc + 1, nc + 1))
    hw = family.hessian(frequency)
    hc = family.hessian(lambda p: p.c)
    return gF, hF, gw, hw, gc, hc


def first_order_matrix(family: WaveFamily, collision_tol: float = 1e-8) -> WhithamData:
    """A_* = d(F - c_bar M, -omega - c_bar k)/d(M, k) at the anchor and its
    dual eigenbases."""
    a = family.anchor
    nc = a.model.n_conserved
    p = nc + 1
    gF, hF, gw, hw, gc, hc = _family_gradients(family)
    A = np.zeros((p, p))
    if nc:
        A[:nc] = gF
        A[:nc, :nc] -= a.c * np.eye(nc)
    A[nc] = -gw
    A[nc, nc] -= a.c
    evals, V = np.linalg.eig(A)
    warnings = []
    if np.max(np.abs(evals.imag)) > 1e-8 * max(1.0, np.max(np.abs(evals))):
        warnings.append("complex characteristic speeds")
    order = np.argsort(evals.real)
    evals, V = evals[order], V[:, order]
    if p > 1:
        gaps = np.abs(np.diff(np.sort(evals.real)))
        if np.min(gaps) < collision_tol * max(1.0, np.max(np.abs(evals))):
            raise ModwaveError("non-diagonalizable", f"characteristic speeds collide: {evals}")
    if np.all(np.abs(evals.imag) < 1e-12):
        evals, V = evals.real, V.real
    Vt = np.linalg.inv(V).T
    return WhithamData(k=a.k, c=a.c, M=a.M.copy(), F=total_flux(a), grad_F=gF, hess_F=hF,
                       omega=frequency(a), grad_omega=gw, hess_omega=hw, grad_c=gc, hess_c=hc,
                       A_star=A, a=evals, V=V, Vt=Vt, warnings=warnings)


def classify_coupling(family: WaveFamily, tol: float = 1e-6) -> tuple[str, dict]:
    """Phase-coupling class from the measured mean-derivatives of the speed."""
    model = family.model
    nc = model.n_conserved
    if nc == 0:
        return "quadratically_decoupled", {"reason": "no conserved components"}
    gc = family.gradient(lambda p: p.c)
    hc = family.hessian(lambda p: p.c)
    cM = gc[:nc] if family.dc_dM is None else np.asarray(family.dc_dM)
    cMM = hc[:nc, :nc]
    scale = max(1.0, float(np.max(np.abs(family.table(lambda p: p.c)))))
    ev = {"dc_dM": np.abs(cM).max(), "d2c_dM2": np.abs(cMM).max(), "scale": scale, "tol": tol}
    if model.symmetries.get("speed_independent_of_mean"):
        ev["reason"] = "registered symmetry"
        return "quadratically_decoupled", ev
    if ev["dc_dM"] >= tol * scale:
        return "generic", ev
    # second differences carry O(residual/delta^2) noise
    noise = 1e-9 / float(np.min(family.deltas[:nc])) ** 2
    if ev["d2c_dM2"] < max(tol * scale, 10 * noise):
        return "quadratically_decoupled", ev
    return "linearly_decoupled", ev


# ----------------------------------------------------------------------------
# second-order diffusion


def _pure_conservative(model) -> bool:
    return (model.constant_viscosity and not model.has_source and not np.any(model.linear_op)
            and model.n_conserved == model.n)


def _constrained_solve(L0, rhs, rows, expected_nullity: int, what: str):
    """Least-squares solve of L0 g = rhs subject to C g = 0 (rows of C given)."""
    C = np.atleast_2d(np.asarray(rows))
    w = 1.0 / max(1.0, np.max(np.abs(L0)))
    A = np.vstack([w * L0, C])
    b = np.concatenate([w * rhs, np.zeros(C.shape[0])])
    sol, _, rank, sv = np.linalg.lstsq(A, b, rcond=1e-11)
    nullity = A.shape[1] - rank
    resid = np.max(np.abs(A @ sol - b))
    if nullity > expected_nullity or resid > 1e-7 * max(1.0, w * np.max(np.abs(rhs))):
        raise ModwaveError("bordered-singular",
                           f"{what}: nullity {nullity} (expected {expected_nullity}), residual {resid:.2e}")
    return sol


def second_order_conservative(family: WaveFamily, data: WhithamData, route: str = "auto") -> dict:
    """Diffusion blocks d_ij from the bordered solves for g^M, g^k.

    route: "generic" (constraint <u_adj, g> = 0), "decoupled" (also mean free;
    needs dc/dM = 0) or "auto" (decoupled when the data are classified as
    decoupled, generic otherwise).
    """
    model = family.model
    if not _pure_conservative(model):
        raise ModwaveError("unsupported-structure",
                           "diffusion solves need constant B, no source and no linear operator")
    if family.u_adj is None:
        raise ValueError("family needs adjoint_null and normalize_parametrization")
    a = family.anchor
    nc = model.n_conserved
    p = nc + 1
    ex = a.expansion()
    L0, L1, L2 = ex.L[0], ex.L[1], ex.L[2]
    B = np.asarray(model.viscosity, float)
    k = a.k
    cf = ex.coeffs
    dM = [cf(family.dU_dM[..., j]) for j in range(nc)]
    dk = cf(family.dU_dk)
    Up = ex.deriv(cf(a.U))
    E = ex.constants()
    ua = cf(family.u_adj)
    gF = data.grad_F
    cM = np.asarray(family.dc_dM, float)
    ck = float(family.dc_dk)
    dMmat = np.stack(dM, axis=1)
    if route == "auto":
        route = "generic" if data.coupling == "generic" else "decoupled"
    rhs_M, rhs_k = [], None
    if route == "generic":
        for j in range(nc):
            col = gF[:, j] - a.c * np.eye(nc)[:, j]
            rhs_M.append(-L1 @ dM[j] - dMmat @ col - dk * k * cM[j])
        rhs_k = -L1 @ dk - dMmat @ gF[:, nc] - L2 @ Up - dk * k * ck
        rows = ua.conj()[None, :]
        nullity = max(nc - 1, 0)
    elif route == "decoupled":
        for j in range(nc):
            col = gF[:, j] - a.c * np.eye(nc)[:, j]
            rhs_M.append(-L1 @ dM[j] - dMmat @ col + Up * np.vdot(ua, L1 @ dM[j]))
        L2U = L2 @ Up
        rhs_k = (-L1 @ dk - dMmat @ gF[:, nc] + Up * np.vdot(ua, L1 @ dk) - dk * k * ck
                 - (L2U - Up * np.vdot(ua, L2U)))
        rows = np.vstack([E.conj().T, ua.conj()[None, :]])
        nullity = 0
    else:
        raise ValueError(f"unknown route {route!r}")
    gM = [_constrained_solve(L0, r, rows, nullity, f"g^M[{j}]") for j, r in enumerate(rhs_M)]
    gk = _constrained_solve(L0, rhs_k, rows, nullity, "g^k")
    N = a.N
    gM_f = [ex.field(g, N) for g in gM]
    gk_f = ex.field(gk, N)
    A_loc = flux_derivatives(model, a.U, 1)

    def avg_df(gfield):
        return np.einsum("ijx,jx->i", A_loc, gfield)[model.conserved_index] / N

    def avg(gfield):
        return gfield[model.conserved_index].mean(axis=1)

    d = np.zeros((p, p))
    dF_M = gF[:, :nc]
    if route == "generic":
        for j in range(nc):
            d[:nc, j] = B[np.ix_(model.conserved_index, model.conserved_index)][:, j] - avg_df(gM_f[j]) + dF_M @ avg(gM_f[j])
            d[nc, j] = k * cM @ avg(gM_f[j])
        d[:nc, nc] = -avg_df(gk_f) + dF_M @ avg(gk_f)
        d[nc, nc] = k * cM @ avg(gk_f)
    else:
        for j in range(nc):
            d[:nc, j] = B[np.ix_(model.conserved_index, model.conserved_index)][:, j] - avg_df(gM_f[j])
            d[nc, j] = np.vdot(ua, L1 @ dM[j]).real
        d[:nc, nc] = -avg_df(gk_f)
        d[nc, nc] = (np.vdot(ua, L2 @ Up) + np.vdot(ua, L1 @ dk)).real
    return {"d": d, "route": route, "g_M": gM_f, "g_k": gk_f}


def canonical_diffusion(d: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """B~ = R diag(L d R) L with R = V, L = V^{-1}; returns (B~, diagonal entries b_j)."""
    L = np.linalg.inv(V)
    b = np.diag(L @ d @ V)
    Bt = V @ np.diag(b) @ L
    if np.all(np.abs(b.imag) < 1e-10 * max(1.0, np.max(np.abs(b)))):
        b, Bt = b.real, Bt.real
    return Bt, b


def diffusion_from_spectrum(data: WhithamData, fits: list) -> tuple[np.ndarray, np.ndarray]:
    """B~ built from fitted b_j, matched to the A_* eigenvalues by speed."""
    fa = np.array([f["a"] for f in fits])
    fb = np.array([f["b"] for f in fits])
    order = [int(np.argmin(np.abs(fa - aj))) for aj in data.a]
    b = fb[order]
    L = np.linalg.inv(data.V)
    return (data.V @ np.diag(b) @ L).real, b


# ----------------------------------------------------------------------------
# quadratic coefficients


def quadratic_coefficients(family: WaveFamily, data: WhithamData, corrected: bool = True) -> np.ndarray:
    """Symmetric coefficient array Gamma (p, p, p); Gamma[i] is the quadratic
    form of row i. Conserved rows carry -k d^2F_i plus, when ``corrected``,
    the terms from the phase-dependent change of variables; the wavenumber
    row is k d^2 omega in both cases."""
    m_M, m_k = family.half_widths
    if m_k < 1 or (family.model.n_conserved and m_M < 1):
        raise ModwaveError("patch-too-small", "second differences need half-widths >= 1")
    nc = family.model.n_conserved
    p = nc + 1
    kb, cb = data.k, data.c
    G = np.zeros((p, p, p))
    e_k = np.zeros(p)
    e_k[nc] = 1.0
    for i in range(nc):
        G[i] = -kb * data.hess_F[i]
        if corrected:
            ell = data.grad_F[i].copy()
            ell[i] -= cb
            e_i = np.zeros(p)
            e_i[i] = 1.0
            G[i] += -(np.outer(e_k, ell) + np.outer(ell, e_k))
            G[i] += kb * (np.outer(e_i, data.grad_c) + np.outer(data.grad_c, e_i))
    G[nc] = kb * data.hess_omega
    return 0.5 * (G + np.swapaxes(G, 1, 2))


# ----------------------------------------------------------------------------
# assembly


def whitham_data(family: WaveFamily, fits: Optional[list] = None, route: str = "auto",
                 coupling_tol: float = 1e-6) -> WhithamData:
    """First-order data, coupling class, diffusion and quadratic coefficients.

    Diffusion comes from the bordered solves when the model supports them,
    otherwise from fitted Bloch coefficients ``fits``.
    """
    data = first_order_matrix(family)
    data.coupling, data.evidence = classify_coupling(family, coupling_tol)
    if _pure_conservative(family.model):
        res = second_order_conservative(family, data, route)
        data.d = res["d"]
        data.B_tilde, data.b = canonical_diffusion(res["d"], data.V)
        data.diffusion_route = res["route"]
    elif fits is not None:
        data.B_tilde, data.b = diffusion_from_spectrum(data, fits)
        data.diffusion_route = "spectrum"
    data.Gamma = quadratic_coefficients(family, data, corrected=True)
    data.Gamma_uncorrected = quadratic_coefficients(family, data, corrected=False)
    return data


# ----------------------------------------------------------------------------
# initial data


@dataclass
class ModulationInitialData:
    y: np.ndarray
    M_W0: np.ndarray  # (n_c, Ntot)
    kappa_W0: np.ndarray
    Psi_W0: np.ndarray
    h0: np.ndarray  # centered phase data


class PeriodicInterpolant:
    """Band-limited interpolant of samples on [0, length)."""

    def __init__(self, values: np.ndarray, length: float, rel_cut: float = 1e-15):
        values = np.asarray(values, float)
        self.length = float(length)
        N = values.shape[-1]
        hat = np.fft.fft(values, axis=-1) / N
        freq = np.fft.fftfreq(N, 1.0 / N)
        if N % 2 == 0:
            hat[..., N // 2] = 0.0
        mag = np.abs(hat).reshape(-1, N).max(axis=0)
        keep = mag > rel_cut * max(mag.max(), 1e-300)
        self.hat = hat[..., keep]
        self.omega = 2 * np.pi * freq[keep] / self.length

    def __call__(self, y, order: int = 0) -> np.ndarray:
        y = np.asarray(y, float)
        out = np.zeros(self.hat.shape[:-1] + y.shape)
        fac = (1j * self.omega) ** order
        for start in range(0, y.size, 4096):
            sl = y.ravel()[start:start + 4096]
            ph = np.exp(1j * np.outer(sl, self.omega))
            val = (ph @ (self.hat * fac).T).real  # (chunk, ...)
            out.reshape(self.hat.shape[:-1] + (-1,))[..., start:start + sl.size] = np.moveaxis(val, 0, -1)
        return out


def invert_phase(psi: np.ndarray, y: np.ndarray, length: float, tol: float = 1e-12,
                 max_iter: int = 50) -> np.ndarray:
    """Psi with (Id - psi)(Psi(x)) = x at the grid points x = y, for periodic psi."""
    interp = PeriodicInterpolant(psi, length)
    slope = np.max(np.abs(interp(y, 1)))
    if slope >= 1:
        raise ModwaveError("phase-not-invertible", f"max |psi'| = {slope:.3f} >= 1")
    x = np.asarray(y, float)
    z = x + interp(x)
    for _ in range(max_iter):
        r = z - interp(z) - x
        z = z - r / (1 - interp(z, 1))
        if np.max(np.abs(r)) <= tol:
            break
    else:
        raise ModwaveError("phase-not-invertible", "Newton iteration did not converge")
    return z


def center_phase(h0: np.ndarray) -> tuple[np.ndarray, float]:
    """Subtract the mean of the two far-field values (domain ends on the torus)."""
    shift = 0.5 * (h0[0] + h0[-1])
    return h0 - shift, float(shift)


def profile_at(profile: WaveProfile, points) -> np.ndarray:
    """Ubar evaluated at arbitrary points (period one)."""
    return evaluate_periodic(to_coeffs(profile.U, profile.K), np.asarray(points))


def whitham_initial_data(u0: np.ndarray, h0: np.ndarray, profile: WaveProfile, W: int) -> ModulationInitialData:
    """Modulation data (M, kappa, Psi) at t = 0 from u0 and the phase data h0
    on a torus of W periods (co-moving coordinate)."""
    u0 = np.atleast_2d(u0)
    Ntot = u0.shape[-1]
    y = np.arange(Ntot) * (W / Ntot)
    h0c, _ = center_phase(np.asarray(h0, float))
    Psi = invert_phase(h0c, y, W)
    dPsi = 1.0 + PeriodicInterpolant(Psi - y, W)(y, 1)
    idx = profile.model.conserved_index
    UPsi = profile_at(profile, Psi)[idx]
    Mbar = profile.M[:, None]
    M_W0 = Mbar + (u0[idx] - UPsi) + (1.0 / dPsi - 1.0) * (UPsi - Mbar)
    return ModulationInitialData(y=y, M_W0=M_W0, kappa_W0=profile.k * dPsi, Psi_W0=Psi, h0=h0c)
