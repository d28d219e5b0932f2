"""Time integration on a torus of W periods, modulated initial data,
modulation systems with phase recovery, extraction of modulation fields from
trajectories and decay-rate fits.

All fields live in the scaled coordinate y = k (x - s t) in which the
background wave has unit period; s is the frame speed (the wave speed for
the co-moving frame, zero for the lab frame).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .errors import ModwaveError
from .model import (ModelSpec, evaluate_flux, evaluate_source, evaluate_viscosity, flux_derivatives,
                    poly_symbol, source_derivatives, viscosity_derivative)
from .profile import FamilyInterpolant, WaveProfile
from .spectral import resample, to_coeffs
from .whitham import PeriodicInterpolant, WhithamData, invert_phase, profile_at


@dataclass
class FieldState:
    u: np.ndarray  # (n, W * N_x)
    t: float
    W: int
    N_x: int

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.u.shape[-1]) / self.N_x

    @property
    def length(self) -> float:
        return float(self.W)


@dataclass
class Trajectory:
    times: np.ndarray
    snapshots: np.ndarray  # (n_snap, n, Ntot)
    norm_times: np.ndarray
    norms: dict  # name -> {p: array}
    W: int
    N_x: int
    masses: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.snapshots.shape[-1]) / self.N_x


def tile(profile: WaveProfile, W: int, N_x: int) -> np.ndarray:
    """Profile repeated over W periods with N_x points per period."""
    return np.tile(resample(profile.U, N_x), (1, W))


def lp_norms(v: np.ndarray, dy: float) -> dict:
    a = np.abs(np.atleast_2d(v))
    return {1: float(a.sum() * dy), 2: float(np.sqrt((a ** 2).sum() * dy)), np.inf: float(a.max())}


# ----------------------------------------------------------------------------
# stepping


class _Stepper:
    """Exponential time differencing on real Fourier coefficients.

    ``lin`` holds the diagonal linear symbol (n, n_modes); ``nonlin`` maps grid
    fields (n, Ntot) to Fourier coefficients of the explicit part. Both
    schemes keep equilibria of the semi-discrete system fixed exactly.
    """

    def __init__(self, lin: np.ndarray, nonlin: Callable, Ntot: int, dt: float, scheme: str,
                 contour: int = 32):
        self.lin, self.nonlin, self.Ntot, self.dt = lin, nonlin, Ntot, float(dt)
        if scheme not in ("etd2", "etd4"):
            raise ValueError(f"unknown scheme {scheme!r}")
        self.scheme = scheme
        h = self.dt
        z = h * lin
        self.E = np.exp(z)
        self.E2 = np.exp(z / 2)
        # phi-functions by contour averages, stable as z -> 0
        r = np.exp(2j * np.pi * (np.arange(1, contour + 1) - 0.5) / contour)
        Z = z[..., None] + r
        eZ = np.exp(Z)
        if scheme == "etd2":
            self.phi1 = h * np.mean((eZ - 1) / Z, axis=-1)
            self.phi2 = h * np.mean((eZ - 1 - Z) / Z ** 2, axis=-1)
            if np.all(np.isreal(lin)):
                self.phi1, self.phi2 = self.phi1.real, self.phi2.real
        else:
            Zh = z[..., None] / 2 + r
            self.Q = h * np.mean((np.exp(Zh) - 1) / Zh, axis=-1) / 2
            self.f1 = h * np.mean((-4 - Z + eZ * (4 - 3 * Z + Z ** 2)) / Z ** 3, axis=-1)
            self.f2 = h * np.mean((2 + Z + eZ * (-2 + Z)) / Z ** 3, axis=-1)
            self.f3 = h * np.mean((-4 - 3 * Z - Z ** 2 + eZ * (4 - Z)) / Z ** 3, axis=-1)
            if np.all(np.isreal(lin)):
                for name in ("Q", "f1", "f2", "f3"):
                    setattr(self, name, getattr(self, name).real)

    def grid(self, uh):
        return np.fft.irfft(uh, self.Ntot, axis=-1)

    def step(self, uh):
        N, g, E, E2 = self.nonlin, self.grid, self.E, self.E2
        Nu = N(g(uh))
        if self.scheme == "etd2":
            a = E * uh + self.phi1 * Nu
            return a + self.phi2 * (N(g(a)) - Nu)
        a = E2 * uh + self.Q * Nu
        Na = N(g(a))
        b = E2 * uh + self.Q * Na
        Nb = N(g(b))
        c = E2 * a + self.Q * (2 * Nb - Nu)
        Nc = N(g(c))
        return E * uh + self.f1 * Nu + 2 * self.f2 * (Na + Nb) + self.f3 * Nc


class _Spectral:
    """Wavenumbers and padded products on the torus."""

    def __init__(self, W: int, N_x: int):
        self.W, self.N_x = int(W), int(N_x)
        self.Ntot = self.W * self.N_x
        if self.Ntot % 2:
            raise ValueError("grid size must be even")
        j = np.arange(self.Ntot // 2 + 1)
        self.nu = 2 * np.pi * j / self.W
        self.nyq = self.Ntot // 2
        self.Npad = 2 * self.Ntot

    def dy(self, vh, order=1):
        out = (1j * self.nu) ** order * vh
        out[..., self.nyq] = 0.0
        return out

    def pad(self, vh):
        out = np.zeros(vh.shape[:-1] + (self.Npad // 2 + 1,), complex)
        out[..., :self.nyq] = vh[..., :self.nyq]
        return np.fft.irfft(out, self.Npad, axis=-1) * (self.Npad / self.Ntot)

    def unpad(self, f):
        fh = np.fft.rfft(f, axis=-1) * (self.Ntot / self.Npad)
        out = fh[..., :self.nyq + 1].copy()
        out[..., self.nyq] = 0.0
        return out


def _reference_viscosity(model: ModelSpec, state) -> np.ndarray:
    B = evaluate_viscosity(model, np.asarray(state, float).reshape(model.n, 1))[..., 0]
    return np.diag(np.diag(B))


class PDE:
    """u_t = k^2 (B(u) u_y)_y - k f(u)_y + k s u_y - g(u, k u_y) - P(k d_y) u on the torus."""

    def __init__(self, model: ModelSpec, W: int, N_x: int, k: float, frame_speed: float = 0.0,
                 ref_state=None):
        self.model = model
        self.sp = _Spectral(W, N_x)
        self.k, self.s = float(k), float(frame_speed)
        ref = np.zeros(model.n) if ref_state is None else ref_state
        self.Bref = _reference_viscosity(model, ref)
        nu = self.sp.nu
        kz = 1j * self.k * nu
        self.lin = (-poly_symbol(model, kz) - np.diag(self.Bref)[:, None] * (self.k * nu) ** 2
                    + 1j * self.k * self.s * nu)
        self.lin[:, self.sp.nyq] = np.minimum(self.lin[:, self.sp.nyq].real, 0.0)
        self._const_B = model.constant_viscosity and np.allclose(np.asarray(model.viscosity), self.Bref)

    def nonlinear(self, u):
        sp, k, model = self.sp, self.k, self.model
        uh = np.fft.rfft(u, axis=-1)
        up = sp.pad(uh)
        uyp = sp.pad(sp.dy(uh))
        flux = evaluate_flux(model, up)
        total = -k * sp.dy(sp.unpad(flux))
        if not self._const_B:
            B = evaluate_viscosity(model, up)
            extra = np.einsum("ijx,jx->ix", B - self.Bref[..., None], uyp)
            total += k ** 2 * sp.dy(sp.unpad(extra))
        if model.has_source:
            total -= sp.unpad(evaluate_source(model, up, k * uyp))
        return total


class LinearizedPDE:
    """Linearization of PDE about a tiled background (frozen coefficients)."""

    def __init__(self, pde: PDE, background: np.ndarray):
        self.pde, self.sp, self.lin = pde, pde.sp, pde.lin
        model, k, sp = pde.model, pde.k, pde.sp
        bh = np.fft.rfft(background, axis=-1)
        Ub = sp.pad(bh)
        Uy = k * sp.pad(sp.dy(bh))
        self.A = flux_derivatives(model, Ub, 1)
        self.gu, self.gux = source_derivatives(model, Ub, Uy)
        self.has_source = model.has_source
        if not pde._const_B:
            self.Bm = evaluate_viscosity(model, Ub) - pde.Bref[..., None]
            self.C = np.einsum("ijlx,jx->ilx", viscosity_derivative(model, Ub), Uy)
        else:
            self.Bm = None

    def nonlinear(self, v):
        sp, k = self.sp, self.pde.k
        vh = np.fft.rfft(v, axis=-1)
        vp = sp.pad(vh)
        vyp = k * sp.pad(sp.dy(vh))
        total = -k * sp.dy(sp.unpad(np.einsum("ijx,jx->ix", self.A, vp)))
        if self.Bm is not None:
            visc = np.einsum("ijx,jx->ix", self.Bm, vyp) + np.einsum("ijx,jx->ix", self.C, vp)
            total += k * sp.dy(sp.unpad(visc))
        if self.has_source:
            src = np.einsum("ijx,jx->ix", self.gu, vp) + np.einsum("ijx,jx->ix", self.gux, vyp)
            total -= sp.unpad(src)
        return total


def _time_grid(T: float, dt: float) -> tuple[int, float]:
    n = int(np.ceil(T / dt - 1e-9))
    return n, T / n


def run(system, u0: np.ndarray, t0: float, T: float, dt: float, save_times=None, scheme: str = "etd2",
        norm_every: int = 1, reference: Optional[np.ndarray] = None, ceiling: float = 1e8,
        conserved=None, extra_state: Optional[dict] = None) -> Trajectory:
    """Integrate ``system`` (PDE, LinearizedPDE or a modulation system) from t0 to T."""
    sp = system.sp
    nsteps, h = _time_grid(T - t0, dt)
    stepper = _Stepper(system.lin, system.nonlinear, sp.Ntot, h, scheme)
    save_times = np.array([T] if save_times is None else sorted(save_times), float)
    save_steps = {int(round((s - t0) / h)): s for s in save_times}
    uh = np.fft.rfft(np.asarray(u0, float), axis=-1)
    dy = 1.0 / sp.N_x
    snaps, times, ntimes, norms, masses = [], [], [], {"v": {1: [], 2: [], np.inf: []}}, []
    ref = 0.0 if reference is None else reference

    def record(step, u):
        if step % norm_every == 0 or step == nsteps:
            ntimes.append(t0 + step * h)
            for p, val in lp_norms(u - ref, dy).items():
                norms["v"][p].append(val)
            if conserved is not None and len(conserved):
                masses.append(u[conserved].sum(axis=1) * dy)
        if step in save_steps:
            times.append(save_steps[step])
            snaps.append(u.copy())

    u = np.fft.irfft(uh, sp.Ntot, axis=-1)
    record(0, u)
    for step in range(1, nsteps + 1):
        uh = stepper.step(uh)
        if step % norm_every == 0 or step in save_steps or step == nsteps:
            u = np.fft.irfft(uh, sp.Ntot, axis=-1)
            top = np.max(np.abs(u))
            if not np.isfinite(top) or top > ceiling:
                raise ModwaveError("blow-up", f"|u| = {top:.3e} at t = {t0 + step * h:.4g}")
            record(step, u)
    return Trajectory(times=np.asarray(times), snapshots=np.asarray(snaps), norm_times=np.asarray(ntimes),
                      norms={k: {p: np.asarray(v) for p, v in d.items()} for k, d in norms.items()},
                      W=sp.W, N_x=sp.N_x, masses=np.asarray(masses) if masses else None)


def integrate_pde(model: ModelSpec, u0: FieldState, T: float, dt: float, k: float = 1.0,
                  frame_speed: float = 0.0, save_times=None, scheme: str = "etd2", norm_every: int = 1,
                  reference: Optional[np.ndarray] = None, ceiling: float = 1e8) -> Trajectory:
    """Integrate the full PDE on the torus of ``u0``.

    ``k`` is the coordinate scale (wavenumber of the background wave) and
    ``frame_speed`` the speed of the frame in physical units.
    """
    ref_state = u0.u.mean(axis=1)
    pde = PDE(model, u0.W, u0.N_x, k, frame_speed, ref_state)
    return run(pde, u0.u, u0.t, u0.t + T, dt, save_times, scheme, norm_every, reference, ceiling,
               conserved=model.conserved_index)


def integrate_linear(profile: WaveProfile, v0: np.ndarray, T: float, dt: float, W: int, N_x: int,
                     scheme: str = "etd4", save_times=None) -> Trajectory:
    """Linearized dynamics about the tiled profile in the co-moving frame."""
    pde = PDE(profile.model, W, N_x, profile.k, profile.c, profile.U.mean(axis=1))
    lin = LinearizedPDE(pde, tile(profile, W, N_x))
    return run(lin, v0, 0.0, T, dt, save_times, scheme)


# ----------------------------------------------------------------------------
# modulated data


def modulated_initial_data(profile: WaveProfile, h0: np.ndarray, d0: np.ndarray, W: int, N_x: int) -> FieldState:
    """u0 = (Ubar + d0) o Psi0 with Psi0 = (Id - h0)^{-1}, all on the torus grid."""
    Ntot = W * N_x
    y = np.arange(Ntot) / N_x
    d0 = np.broadcast_to(np.atleast_2d(d0), (profile.model.n, Ntot))
    h0 = np.asarray(h0, float)
    if np.all(h0 == 0):
        Psi = y
        dval = d0.copy()
    else:
        Psi = invert_phase(h0, y, W)
        dval = PeriodicInterpolant(d0, W)(np.mod(Psi, W))
    u = profile_at(profile, Psi) + dval
    return FieldState(u=u, t=0.0, W=W, N_x=N_x)


# ----------------------------------------------------------------------------
# modulation systems


class ModulationSystem:
    """Whitham-type systems in characteristic coordinates z = L w with exact
    linear factor -k a_j d_y + k^2 b_j d_yy; the phase psi = Psi - y is
    carried as an extra row integrated with the explicit part."""

    def __init__(self, data: WhithamData, system: str, W: int, N_x: int):
        if data.B_tilde is None or data.b is None:
            raise ValueError("Whitham data lacks the diffusion matrix")
        if np.any(np.real(data.b) <= 0):
            raise ModwaveError("nonparabolic", f"diffusion coefficients {data.b}")
        if system not in ("full_whitham", "quadratic", "decoupled"):
            raise ValueError(f"unknown system {system!r}")
        self.data, self.system = data, system
        self.sp = _Spectral(W, N_x)
        p = data.p
        self.p = p
        self.R = np.real_if_close(data.V)
        self.L = np.linalg.inv(self.R)
        kb = data.k
        nu = self.sp.nu
        a, b = np.real(data.a), np.real(data.b)
        lin = -1j * kb * a[:, None] * nu - kb ** 2 * b[:, None] * nu ** 2
        self.lin = np.vstack([lin, np.zeros((1, nu.size))])
        self.Gamma = data.Gamma
        if system == "decoupled":
            self.Gamma = decoupled_gamma(data.Gamma, self.R, self.L)
        self.D = data.d if (system == "full_whitham" and data.d is not None) else data.B_tilde
        self.e = np.zeros(p)
        self.e[-1] = 1.0

    def to_state(self, w: np.ndarray, psi: np.ndarray) -> np.ndarray:
        return np.vstack([self.L @ w, psi[None, :]])

    def from_state(self, u: np.ndarray):
        return self.R @ u[:self.p], u[self.p]

    def _flux_excess(self, w):
        """Nonlinear part of k * flux (beyond k A w) and phase source (beyond -e.A w)."""
        d, kb = self.data, self.data.k
        if self.system == "full_whitham":
            nc = self.p - 1
            q = np.zeros_like(w)
            for i in range(nc):
                q[i] = 0.5 * np.einsum("ax,ab,bx->x", w, d.hess_F[i], w)
            q[nc] = -0.5 * np.einsum("ax,ab,bx->x", w, d.hess_omega, w)
            return kb * q, -q[nc]
        quad = 0.5 * np.einsum("ax,iab,bx->ix", w, self.Gamma, w)
        return -quad, quad[-1] / kb

    def nonlinear(self, u):
        sp, kb = self.sp, self.data.k
        uh = np.fft.rfft(u, axis=-1)
        w = self.R @ sp.pad(uh[:self.p])
        wy = sp.pad(sp.dy(self.R @ uh[:self.p]))
        flux, src = self._flux_excess(w)
        rhs_w = -sp.dy(sp.unpad(flux))
        if self.system == "full_whitham" and self.D is not self.data.B_tilde:
            rhs_w += kb ** 2 * sp.dy(sp.unpad((self.D - self.data.B_tilde) @ wy))
        A = self.data.A_star
        psi_src = -self.e @ A @ w + src + kb * self.e @ self.D @ wy
        return np.vstack([self.L @ rhs_w, sp.unpad(psi_src)[None, :]])


def decoupled_gamma(Gamma: np.ndarray, R: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Keep only the self-interaction of each characteristic mode:
    Gamma~^i = sum_j R_ij (l_j Gamma(r_j, r_j)) l_j l_j^T."""
    p = R.shape[0]
    gam = np.array([L[j] @ np.einsum("iab,a,b->i", Gamma, R[:, j], R[:, j]) for j in range(p)])
    out = np.zeros_like(Gamma)
    for i in range(p):
        for j in range(p):
            out[i] += R[i, j] * gam[j] * np.outer(L[j], L[j])
    return out


def integrate_modulation(data: WhithamData, system: str, w0: np.ndarray, psi0: np.ndarray, T: float,
                         dt: float, W: int, N_x: int, save_times=None, norm_every: int = 1,
                         scheme: str = "etd2", ceiling: float = 1e8) -> Trajectory:
    """Integrate a modulation system for w = (M - Mbar, kappa - kbar) with the
    phase psi = Psi - y alongside. Snapshots have rows (w..., psi)."""
    sysm = ModulationSystem(data, system, W, N_x)
    state = sysm.to_state(np.atleast_2d(w0), np.asarray(psi0, float))
    traj = run(sysm, state, 0.0, T, dt, save_times, scheme, norm_every, ceiling=ceiling)
    snaps = np.array([np.vstack([sysm.R @ s[:sysm.p], s[sysm.p:]]) for s in traj.snapshots])
    traj.snapshots = snaps
    traj.extras["system"] = system
    return traj


# ----------------------------------------------------------------------------
# extraction


@dataclass
class ModulationFields:
    y: np.ndarray  # window centres
    times: np.ndarray
    Psi: np.ndarray  # (n_t, n_w)
    M: np.ndarray  # (n_t, n_c, n_w)
    kappa: np.ndarray  # (n_t, n_w)
    residual: np.ndarray  # (n_t, n_w) relative fit residual
    consistency: np.ndarray  # (n_t,) max |kappa - kbar dPsi/dy|

    @property
    def psi(self) -> np.ndarray:
        return self.Psi - self.y[None, :]


class _WindowFit:
    def __init__(self, interp: FamilyInterpolant, kbar: float):
        self.it, self.kbar = interp, kbar
        self.nc = interp.family.model.n_conserved
        self.j = np.arange(-interp.K, interp.K + 1)

    def model(self, params, Psi_c, dy):
        it = self.it
        kappa = params[-1]
        arg = Psi_c + (kappa / self.kbar) * dy
        ph = np.exp(2j * np.pi * np.outer(self.j, arg))
        coef = it.coefficients(params)
        val = (coef @ ph).real
        dval = ((2j * np.pi * self.j * coef) @ ph).real
        cols = []
        for a in range(len(params)):
            col = (it.coefficient_derivative(params, a) @ ph).real
            if a == len(params) - 1:
                col = col + dval * dy / self.kbar
            cols.append(col)
        cols.append(dval)
        return val, np.stack(cols, axis=-1)

    def fit(self, u, dy, params, Psi_c, tol=1e-12, max_iter=30):
        x = np.concatenate([params, [Psi_c]])
        scale = np.concatenate([self.it.scale, [1.0]])
        for _ in range(max_iter):
            val, J = self.model(x[:-1], x[-1], dy)
            r = (u - val).ravel()
            Jm = J.reshape(-1, J.shape[-1]) * scale
            step, *_ = np.linalg.lstsq(Jm, r, rcond=None)
            x = x + step * scale
            if np.max(np.abs(step)) < tol:
                break
        val, _ = self.model(x[:-1], x[-1], dy)
        res = np.linalg.norm(u - val) / max(np.linalg.norm(u), 1e-300)
        return x[:-1], x[-1], res


def extract_modulation(snapshots: np.ndarray, times, interp: FamilyInterpolant, W: int, N_x: int,
                       slack: float = 1.0) -> ModulationFields:
    """Least-squares fit of u ~ U^{M,kappa}(Psi_c + (kappa/kbar)(y - y_c)) on
    one-period windows centred every half period."""
    kbar = interp.family.anchor.k
    fitter = _WindowFit(interp, kbar)
    Ntot = W * N_x
    half = N_x // 2
    centres = np.arange(0, Ntot, half)
    offs = np.arange(-half, half)
    dyw = offs / N_x
    nw = centres.size
    Psi = np.zeros((len(times), nw))
    Ms = np.zeros((len(times), fitter.nc, nw))
    kap = np.zeros((len(times), nw))
    res = np.zeros((len(times), nw))
    cons = np.zeros(len(times))
    start = interp.center.copy()
    Psi_start = 0.0
    for ti, u in enumerate(snapshots):
        params, Pc = start.copy(), Psi_start
        for wi, c in enumerate(centres):
            yc = c / N_x
            uw = u[:, (c + offs) % Ntot]
            if wi > 0:
                Pc = Psi[ti, wi - 1] + 0.5 * params[-1] / kbar
            params, Pc, r = fitter.fit(uw, dyw, params, Pc)
            if not interp.in_patch(params, slack):
                raise ModwaveError("fit-out-of-patch", f"t={times[ti]:.4g}, y={yc:.4g}, params={params}")
            Psi[ti, wi], Ms[ti, :, wi], kap[ti, wi], res[ti, wi] = Pc, params[:-1], params[-1], r
            if wi == 0:
                start, Psi_start = params.copy(), Pc
        yc_all = centres / N_x
        dpsi = PeriodicInterpolant(Psi[ti] - yc_all, W)(yc_all, 1)
        cons[ti] = np.max(np.abs(kap[ti] - kbar * (1 + dpsi)))
    return ModulationFields(y=centres / N_x, times=np.asarray(times), Psi=Psi, M=Ms, kappa=kap,
                            residual=res, consistency=cons)


# ----------------------------------------------------------------------------
# rates and comparisons


def decay_rate(times, values, window=(50.0, 500.0)) -> tuple[float, float]:
    """Slope of log(value) against log(1 + t) on the window, with its standard error."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 3:
        raise ValueError("fewer than three samples in the rate window")
    if np.any(v[sel] <= 0):
        raise ValueError("decay rates need positive values")
    fit = stats.linregress(np.log1p(t[sel]), np.log(v[sel]))
    return float(fit.slope), float(fit.stderr)


@dataclass
class Comparison:
    times: np.ndarray
    gap: dict  # p -> array
    signal: dict
    gap_rate: Optional[tuple] = None
    signal_rate: Optional[tuple] = None
    fields: Optional[ModulationFields] = None
    modulation: Optional[Trajectory] = None


def modulation_initial_state(profile: WaveProfile, u0: FieldState, h0: np.ndarray):
    """(w0, psi0) from the initial-data map."""
    from .whitham import whitham_initial_data
    init = whitham_initial_data(u0.u, h0, profile, u0.W)
    w0 = np.vstack([init.M_W0 - profile.M[:, None], (init.kappa_W0 - profile.k)[None, :]])
    return w0, init.Psi_W0 - init.y, init


def compare_to_whitham(pde_traj: Trajectory, interp: FamilyInterpolant, data: WhithamData, u0: FieldState,
                       h0: np.ndarray, system: str = "full_whitham", dt: float = 0.05,
                       window=(50.0, 500.0)) -> Comparison:
    """Gap between extracted (M, kappa) and the modulation trajectory launched
    from the initial-data map, sampled at the window centres."""
    profile = interp.family.anchor
    W, N_x = pde_traj.W, pde_traj.N_x
    w0, psi0, _ = modulation_initial_state(profile, u0, h0)
    times = pde_traj.times
    mod = integrate_modulation(data, system, w0, psi0, float(times[-1]), dt, W, N_x, save_times=times)
    fields = extract_modulation(pde_traj.snapshots, times, interp, W, N_x)
    idx = np.arange(0, W * N_x, N_x // 2)
    dyc = 0.5
    gap = {2: [], np.inf: []}
    sig = {2: [], np.inf: []}
    for ti in range(len(times)):
        ext = np.vstack([fields.M[ti] - profile.M[:, None], (fields.kappa[ti] - profile.k)[None, :]])
        wm = mod.snapshots[ti][:data.p][:, idx]
        for p, val in lp_norms(ext - wm, dyc).items():
            if p in gap:
                gap[p].append(val)
        for p, val in lp_norms(ext, dyc).items():
            if p in sig:
                sig[p].append(val)
    gap = {p: np.asarray(v) for p, v in gap.items()}
    sig = {p: np.asarray(v) for p, v in sig.items()}
    out = Comparison(times=times, gap=gap, signal=sig, fields=fields, modulation=mod)
    try:
        out.gap_rate = decay_rate(times, gap[2], window)
        out.signal_rate = decay_rate(times, sig[2], window)
    except ValueError:
        pass
    return out
