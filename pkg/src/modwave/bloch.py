"""Bloch-Floquet analysis of the linearization about a periodic profile.

Floquet exponents xi live in [-pi, pi] for the unit-period coordinate y, and
L_xi acts on 1-periodic functions through D = k (d_y + i xi). Functions on a
torus of W periods are decomposed on the grid xi_r = 2 pi r / W.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve
from scipy.optimize import linear_sum_assignment

from .errors import ModwaveError
from .profile import WaveFamily, WaveProfile
from .spectral import OperatorExpansion, resample, to_coeffs

TAIL_TOL = 1e-12


@dataclass(frozen=True)
class BlochOperator:
    xi: float
    matrix: np.ndarray
    truncation: int


class BlochEngine:
    """Cached Galerkin expansion of L_xi about one profile."""

    def __init__(self, profile: WaveProfile, N_f: int = 32, check_tail: bool = True):
        self.profile = profile
        self.N_f = int(N_f)
        self.k = profile.k
        self.n = profile.model.n
        self.n_crit = profile.model.n_conserved + 1
        self.expansion = OperatorExpansion(profile.model, profile.U, profile.k, profile.c, self.N_f)
        if check_tail and self.expansion.tail > TAIL_TOL:
            raise ModwaveError("truncation-too-small",
                               f"coefficient tail {self.expansion.tail:.2e} at index {self.N_f}")

    @property
    def size(self) -> int:
        return self.n * (2 * self.N_f + 1)

    def matrix(self, xi: float) -> np.ndarray:
        return self.expansion.at(xi)

    def coeffs(self, u: np.ndarray) -> np.ndarray:
        return self.expansion.coeffs(u)


def assemble_bloch(profile: WaveProfile, xi: float, N_f: int = 32) -> BlochOperator:
    engine = BlochEngine(profile, N_f)
    return BlochOperator(float(xi), engine.matrix(xi), engine.N_f)


def default_xi_grid(n_global: int = 65, xi_fit: float = 0.1, n_fit: int = 41) -> np.ndarray:
    """Symmetric grid on [-pi, pi] refined on the fit window."""
    g = np.linspace(-np.pi, np.pi, n_global)
    f = np.linspace(-xi_fit, xi_fit, n_fit)
    return np.unique(np.round(np.concatenate([g, f, [0.0]]), 14))


# ----------------------------------------------------------------------------
# spectra


@dataclass
class BlochSpectrum:
    xi_grid: np.ndarray
    eigenvalues: list  # per xi, sorted by decreasing real part
    k: float
    n_crit: int
    curve_xi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    curves: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), complex))
    theta_margin: float = np.nan
    zero_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    engine: Optional[BlochEngine] = field(default=None, repr=False)
    fits: list = field(default_factory=list)


def _match(prev: np.ndarray, pred: np.ndarray, eigs: np.ndarray, xi: float) -> np.ndarray:
    cost = np.abs(pred[:, None] - eigs[None, :])
    rows, cols = linear_sum_assignment(cost)
    chosen = eigs[cols[np.argsort(rows)]]
    if len(pred) > 1:
        sep = np.min([abs(pred[i] - pred[j]) for i in range(len(pred)) for j in range(i + 1, len(pred))])
    else:
        others = np.sort(np.abs(eigs - pred[0]))
        sep = others[1] if len(others) > 1 else np.inf
    step = np.max(np.abs(pred - prev)) if len(prev) else 0.0
    radius = 0.5 * sep + 1e-12
    err = np.abs(chosen - pred)
    if np.any(err > max(radius, 0.0)) and np.any(err > 0.5 * step + 1e-12):
        raise ModwaveError("branch-collision", f"matching failed near xi={xi:.4g}")
    return chosen


def track_critical(xis: np.ndarray, eigs: list, k: float, n_crit: int) -> np.ndarray:
    """Follow the n_crit branches through the origin along increasing |xi|.

    ``xis`` are positive (or all negative) and sorted by |xi|. Branches are
    ordered by the estimated group velocity -Im(lambda)/(k xi) at the first point.
    """
    out = np.zeros((n_crit, len(xis)), complex)
    first = eigs[0]
    order = np.argsort(np.abs(first))
    pick = first[order[:n_crit]]
    if len(first) > n_crit:
        nxt = np.abs(first[order[n_crit]])
        if nxt < 2 * np.max(np.abs(pick)):
            raise ModwaveError("branch-collision", f"critical group not isolated at xi={xis[0]:.4g}")
    speed = -pick.imag / (k * xis[0])
    pick = pick[np.argsort(speed)]
    out[:, 0] = pick
    prev_xi, prev = 0.0, np.zeros(n_crit, complex)
    for i in range(1, len(xis)):
        cur_xi, cur = xis[i - 1], out[:, i - 1]
        slope = (cur - prev) / (cur_xi - prev_xi)
        pred = cur + slope * (xis[i] - cur_xi)
        out[:, i] = _match(cur, pred, eigs[i], xis[i])
        prev_xi, prev = cur_xi, cur
    return out


def spectrum(profile: WaveProfile, xi_grid=None, N_f: int = 32, ceiling: Optional[float] = None,
             xi_track: float = 0.1, engine: Optional[BlochEngine] = None) -> BlochSpectrum:
    """Eigenvalues of L_xi over a symmetric xi grid, with critical branches tracked
    on |xi| <= xi_track independently on each side of the origin."""
    engine = engine or BlochEngine(profile, N_f)
    xi_grid = default_xi_grid(xi_fit=xi_track) if xi_grid is None else np.asarray(xi_grid, float)
    k = profile.k
    if ceiling is None:
        ceiling = 10 * k ** 2 * (2 * np.pi * engine.N_f) ** 2 + 10 * k ** 4 * (2 * np.pi * engine.N_f) ** 4 * np.any(profile.model.linear_op[:, 4])
    eigs = []
    for xi in xi_grid:
        lam = np.linalg.eigvals(engine.matrix(xi))
        lam = lam[np.abs(lam.real) <= ceiling]
        eigs.append(lam[np.argsort(-lam.real)])
    spec = BlochSpectrum(xi_grid=xi_grid, eigenvalues=eigs, k=k, n_crit=engine.n_crit, engine=engine)
    zero = np.flatnonzero(xi_grid == 0.0)
    if zero.size:
        spec.zero_eigenvalues = eigs[zero[0]]
    pos = np.flatnonzero((xi_grid > 0) & (xi_grid <= xi_track + 1e-14))
    neg = np.flatnonzero((xi_grid < 0) & (xi_grid >= -xi_track - 1e-14))
    neg = neg[np.argsort(-xi_grid[neg])]
    if pos.size and neg.size:
        cp = track_critical(xi_grid[pos], [eigs[i] for i in pos], k, engine.n_crit)
        cn = track_critical(xi_grid[neg], [eigs[i] for i in neg], k, engine.n_crit)
        spec.curve_xi = np.concatenate([xi_grid[neg][::-1], xi_grid[pos]])
        spec.curves = np.concatenate([cn[:, ::-1], cp], axis=1)
    nz = xi_grid != 0
    worst = np.array([e[0].real if e.size else -np.inf for e in eigs])
    spec.theta_margin = float(np.min(-worst[nz] / xi_grid[nz] ** 2)) if np.any(nz) else np.nan
    return spec


def conjugate_symmetry_gap(spec: BlochSpectrum) -> float:
    """max |lambda_j(-xi) - conj(lambda_j(xi))| over the tracked window."""
    xs = spec.curve_xi
    worst = 0.0
    for i, x in enumerate(xs):
        if x <= 0:
            continue
        j = np.flatnonzero(np.isclose(xs, -x, rtol=0, atol=1e-13))
        if j.size:
            worst = max(worst, float(np.max(np.abs(spec.curves[:, j[0]] - np.conj(spec.curves[:, i])))))
    return worst


def fit_critical_expansion(spec: BlochSpectrum, xi_fit: float = 0.1, degree: int = 6) -> list:
    """Least-squares polynomial fit lambda_j(xi) = sum_m c_m xi^m on |xi| <= xi_fit.

    Returns per branch a dict with a = -Im(c_1)/k, b = -Re(c_2)/k^2, the
    imaginary contaminations, the cubic coefficient and the fit residual.
    """
    xs = spec.curve_xi
    sel = (np.abs(xs) <= xi_fit + 1e-14) & (xs != 0)
    npts = int(np.sum(sel))
    if npts < degree + 3:
        raise ModwaveError("fit-ill-conditioned", f"{npts} points in the fit window for degree {degree}")
    x = xs[sel]
    V = np.vander(x, degree + 1, increasing=True)[:, 1:]  # lambda(0) = 0
    k = spec.k
    fits = []
    for branch in spec.curves[:, sel]:
        coef, *_ = np.linalg.lstsq(V, branch, rcond=None)
        resid = float(np.max(np.abs(V @ coef - branch)))
        c1, c2 = coef[0], coef[1]
        a = -c1.imag / k
        b = -c2.real / k ** 2
        fits.append({"a": float(a), "b": float(b), "a_imag": float(c1.real / k),
                     "b_imag": float(-c2.imag / k ** 2), "cubic": complex(coef[2]) if degree >= 3 else 0j,
                     "residual": resid})
    spec.fits = fits
    return fits


# ----------------------------------------------------------------------------
# stability conditions


def riesz_projector(A: np.ndarray, radius: float, nodes: int = 64, center: complex = 0.0) -> np.ndarray:
    """Spectral projector of A for the eigenvalues inside |z - center| < radius."""
    n = A.shape[0]
    I = np.eye(n)
    P = np.zeros((n, n), complex)
    for m in range(nodes):
        z = center + radius * np.exp(2j * np.pi * (m + 0.5) / nodes)
        P += (z - center) * lu_solve(lu_factor(z * I - A), I)
    return P / nodes


def contour_count(A: np.ndarray, radius: float, nodes: int = 64) -> float:
    """Number of eigenvalues of A in the disk |z| < radius (trace of the projector)."""
    return float(np.trace(riesz_projector(A, radius, nodes)).real)


@dataclass
class StabilityReport:
    D1: bool
    D2: bool
    D3: bool
    max_real_nonzero_xi: float
    max_real_noncritical_zero: float
    theta: float
    zero_count: float
    expected_count: int
    eps0: float
    gap: float

    @property
    def stable(self) -> bool:
        return self.D1 and self.D2 and self.D3

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["stable"] = self.stable
        return d


def zero_cluster(eigs: np.ndarray, cluster_tol: float = 1e-4):
    """(eigenvalues with |lambda| < cluster_tol, spectral gap beyond them)."""
    mags = np.abs(eigs)
    inside = eigs[mags < cluster_tol]
    outside = mags[mags >= cluster_tol]
    gap = float(np.min(outside)) if outside.size else np.inf
    return inside, gap


def check_diffusive_stability(spec: BlochSpectrum, eps0: Optional[float] = None,
                              cluster_tol: float = 1e-4) -> StabilityReport:
    """Evaluate the three diffusive stability conditions on a computed spectrum."""
    xs = spec.xi_grid
    nz = xs != 0
    max_re = max(float(e[0].real) for e, flag in zip(spec.eigenvalues, nz) if flag and e.size)
    if spec.engine is None or not np.any(xs == 0):
        raise ValueError("spectrum must include xi = 0 and keep its engine")
    L0 = spec.engine.matrix(0.0)
    eigs0 = spec.zero_eigenvalues
    cluster, gap = zero_cluster(eigs0, cluster_tol)
    eps = 0.5 * gap if eps0 is None else float(eps0)
    count = contour_count(L0, eps)
    noncrit = eigs0[np.abs(eigs0) >= eps]
    max_nc = float(np.max(noncrit.real)) if noncrit.size else -np.inf
    d1 = max_re < 0 and max_nc < 0
    theta = spec.theta_margin
    return StabilityReport(D1=bool(d1), D2=bool(theta > 0), D3=bool(abs(count - spec.n_crit) < 0.5),
                           max_real_nonzero_xi=max_re, max_real_noncritical_zero=max_nc,
                           theta=float(theta), zero_count=count, expected_count=spec.n_crit,
                           eps0=eps, gap=gap)


def zero_group_structure(engine: BlochEngine, eps0: float, rank_tol: float = 1e-6) -> dict:
    """Algebraic and geometric multiplicity of the eigenvalue 0 of L_0 from the
    Riesz projector, and the rank of the nilpotent part (one Jordan chain of
    height two shows up as rank one)."""
    L0 = engine.matrix(0.0)
    P = riesz_projector(L0, eps0)
    u, s, _ = np.linalg.svd(P)
    dim = int(np.sum(s > 0.5))
    basis = u[:, :dim]
    N = basis.conj().T @ L0 @ basis
    sv = np.linalg.svd(N, compute_uv=False)
    scale = max(1.0, np.max(np.abs(L0)) ** 0)
    rank = int(np.sum(sv > rank_tol * scale))
    return {"algebraic": dim, "nilpotent_rank": rank, "geometric": dim - rank,
            "singular_values": sv}


def choose_cutoff(engine: BlochEngine, eps0: float, xi_max: float = 1.0, n: int = 200) -> float:
    """Half the smallest |xi| where the eigenvalue count in B(0, eps0) changes."""
    for xi in np.linspace(xi_max / n, xi_max, n):
        lam = np.linalg.eigvals(engine.matrix(xi))
        if int(np.sum(np.abs(lam) < eps0)) != engine.n_crit:
            return 0.5 * xi
    return 0.5 * xi_max


# ----------------------------------------------------------------------------
# critical bases


@dataclass
class CriticalBases:
    xis: np.ndarray
    Q: list  # per xi: (size, n_c+1)
    Qt: list
    Lam_tilde: list  # scaled reduced matrices
    lam: np.ndarray  # (len(xis), n_c+1) critical eigenvalues
    beta: list
    beta_t: list
    eps0: float
    k: float
    V: np.ndarray  # right eigenvectors of the limit scaled matrix (columns)
    Vt: np.ndarray  # dual left eigenvectors (columns), Vt^H V = I
    speeds: np.ndarray  # a_j from the limit
    Lam_tilde0: np.ndarray
    Q0: np.ndarray
    Qt0: np.ndarray
    engine: BlochEngine = field(repr=False)

    def phi(self, i: int) -> np.ndarray:
        """Scaled eigenfunctions (columns) at xis[i]."""
        s = 1j * self.k * self.xis[i]
        Q, B = self.Q[i], self.beta[i]
        D = np.ones(Q.shape[1], complex)
        D[:-1] = s
        return Q @ (D[:, None] * B)

    def phi_tilde(self, i: int) -> np.ndarray:
        s = 1j * self.k * self.xis[i]
        Qt, Bt = self.Qt[i], self.beta_t[i]
        D = np.ones(Qt.shape[1], complex)
        D[-1] = np.conj(s)
        return Qt @ (D[:, None] * Bt)


def _scaled(Lam: np.ndarray, s: complex) -> np.ndarray:
    p = Lam.shape[0]
    D = np.ones(p, complex)
    D[-1] = s
    return (D[:, None] * Lam / D[None, :]) / s


def _eig_sorted(Lt: np.ndarray):
    w, B = np.linalg.eig(Lt)
    order = np.argsort(-w.real)  # a_j = -w_j ascending
    w, B = w[order], B[:, order]
    Bt = np.linalg.inv(B).conj().T
    return w, B, Bt


def critical_bases(family: WaveFamily, xis, N_f: int = 32, eps0: Optional[float] = None,
                   engine: Optional[BlochEngine] = None, limit_step: float = 1e-3) -> CriticalBases:
    """Dual bases of the critical eigenspaces by projector continuation from
    (dU/dM, U') and (e_l, u_adj) at xi = 0."""
    if family.u_adj is None:
        raise ValueError("family needs adjoint_null and normalize_parametrization first")
    a = family.anchor
    engine = engine or BlochEngine(a, N_f)
    nc = a.model.n_conserved
    p = nc + 1
    if eps0 is None:
        _, gap = zero_cluster(np.linalg.eigvals(engine.matrix(0.0)))
        eps0 = 0.5 * gap
    cols = [engine.coeffs(family.dU_dM[..., j]) for j in range(nc)] + [engine.coeffs(a.dU())]
    Q0 = np.stack(cols, axis=1)
    E = engine.expansion.constants()
    Qt0 = np.concatenate([E, engine.coeffs(family.u_adj)[:, None]], axis=1)
    k = a.k

    def at(xi):
        L = engine.matrix(xi)
        P = riesz_projector(L, eps0)
        rank = np.trace(P).real
        if abs(rank - p) > 0.25:
            raise ModwaveError("projector-discontinuity", f"projector rank {rank:.3f} at xi={xi:.4g}")
        PQ = P @ Q0
        Q = PQ @ np.linalg.inv(Qt0.conj().T @ PQ)
        Qt = P.conj().T @ Qt0
        Lam = Qt.conj().T @ L @ Q
        return Q, Qt, Lam

    # limit of the scaled matrix at xi -> 0 by symmetric averaging
    h = limit_step
    Lt_p = _scaled(at(h)[2], 1j * k * h)
    Lt_m = _scaled(at(-h)[2], -1j * k * h)
    Lt0 = 0.5 * (Lt_p + Lt_m)
    w0, V, Vt = _eig_sorted(Lt0)
    xis = np.asarray(xis, float)
    Qs, Qts, Lts, lams, Bs, Bts = [], [], [], [], [], []
    for xi in xis:
        Q, Qt, Lam = at(xi)
        Qs.append(Q)
        Qts.append(Qt)
        if xi == 0:
            Lt, w, B, Bt = Lt0, w0, V, Vt
            lams.append(np.zeros(p, complex))
        else:
            s = 1j * k * xi
            Lt = _scaled(Lam, s)
            w, B, Bt = _eig_sorted(Lt)
            lams.append(s * w)
        Lts.append(Lt)
        Bs.append(B)
        Bts.append(Bt)
    return CriticalBases(xis=xis, Q=Qs, Qt=Qts, Lam_tilde=Lts, lam=np.asarray(lams), beta=Bs,
                         beta_t=Bts, eps0=float(eps0), k=k, V=V, Vt=Vt, speeds=-w0.real,
                         Lam_tilde0=Lt0, Q0=Q0, Qt0=Qt0, engine=engine)


def phase_direction_derivative(family: WaveFamily, N_f: int = 32, h: float = 1e-4,
                               engine: Optional[BlochEngine] = None) -> tuple:
    """(d/dxi q_{n+1} at 0 by centered differences, i k dU/dk), as coefficient vectors."""
    cb = critical_bases(family, [h, -h], N_f, engine=engine)
    dq = (cb.Q[0][:, -1] - cb.Q[1][:, -1]) / (2 * h)
    return dq, 1j * family.anchor.k * cb.engine.coeffs(family.dU_dk)


# ----------------------------------------------------------------------------
# Bloch transform on a torus of W periods


def bloch_indices(W: int) -> np.ndarray:
    """Residues r with xi_r = 2 pi r / W in (-pi, pi]."""
    return np.arange(-((W - 1) // 2), W // 2 + 1)


def bloch_transform(g: np.ndarray, W: int, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Bloch components of g (n, W*N): returns (xi_r, coefficients (len(r), n, 2K+1))
    with g(y) = sum_r (2 pi / W) exp(i xi_r y) gcheck_r(y)."""
    g = np.atleast_2d(np.asarray(g, float))
    n, Ntot = g.shape
    if Ntot % W:
        raise ModwaveError("domain-not-commensurate", f"{Ntot} points do not split into {W} periods")
    ghat = np.fft.fft(g, axis=-1) / Ntot
    rs = bloch_indices(W)
    j = np.arange(-K, K + 1)
    m = (W * j[None, :] + rs[:, None]) % Ntot  # (R, 2K+1)
    out = ghat[:, m] * (W / (2 * np.pi))  # (n, R, 2K+1)
    return 2 * np.pi * rs / W, np.moveaxis(out, 0, 1)


def inverse_bloch_transform(gcheck: np.ndarray, W: int, N: int, real: bool = True) -> np.ndarray:
    """Inverse of bloch_transform onto a grid of N points per period."""
    R, n, size = gcheck.shape
    K = (size - 1) // 2
    Ntot = W * N
    rs = bloch_indices(W)
    j = np.arange(-K, K + 1)
    m = (W * j[None, :] + rs[:, None]) % Ntot
    ghat = np.zeros((n, Ntot), complex)
    ghat[:, m] = np.moveaxis(gcheck, 1, 0) * (2 * np.pi / W)
    g = np.fft.ifft(ghat, axis=-1) * Ntot
    return g.real if real else g


def bloch_norm_sq(gcheck: np.ndarray, W: int) -> float:
    """||gcheck||^2 over [-pi, pi] x [0, 1] with the grid quadrature."""
    return float(np.sum(np.abs(gcheck) ** 2) * 2 * np.pi / W)


def _commensurate(W, length, k):
    if length is not None:
        periods = length * k
        if abs(periods - round(periods)) > 1e-9 or round(periods) != W:
            raise ModwaveError("domain-not-commensurate", f"length {length} holds {periods} periods")
    if int(W) != W or W < 1:
        raise ModwaveError("domain-not-commensurate", f"W={W} is not a positive integer")


def propagate_linear(profile: WaveProfile, g: np.ndarray, t: float, W: int, N_f: int = 32,
                     engine: Optional[BlochEngine] = None, length: Optional[float] = None) -> np.ndarray:
    """e^{tL} g for g sampled on W periods (co-moving frame), via Bloch synthesis."""
    _commensurate(W, length, profile.k)
    engine = engine or BlochEngine(profile, N_f)
    g = np.atleast_2d(g)
    N = g.shape[-1] // W
    if N < 2 * engine.N_f + 2:
        raise ValueError("grid too coarse for the requested truncation")
    xis, gc = bloch_transform(g, W, engine.N_f)
    out = np.empty_like(gc)
    for i, xi in enumerate(xis):
        v = gc[i].ravel()
        if t != 0:
            v = expm(t * engine.matrix(xi)) @ v
        out[i] = v.reshape(gc[i].shape)
    return inverse_bloch_transform(out, W, N)


def raised_cosine(xi, xi0: float) -> np.ndarray:
    """Smooth cutoff: 1 on |xi| <= xi0/2, 0 on |xi| >= xi0, cosine blend between."""
    x = np.abs(np.asarray(xi, float))
    s = np.clip((x - 0.5 * xi0) / (0.5 * xi0), 0.0, 1.0)
    return 0.5 * (1 + np.cos(np.pi * s))


def _field_from_modes(values: np.ndarray, xis: np.ndarray, W: int, N: int) -> np.ndarray:
    """sum_r (2 pi / W) exp(i xi_r y) values_r on the big grid (values: (R, p))."""
    Ntot = W * N
    rs = np.round(xis * W / (2 * np.pi)).astype(int)
    hat = np.zeros((values.shape[1], Ntot), complex)
    hat[:, rs % Ntot] = values.T * (2 * np.pi / W)
    return (np.fft.ifft(hat, axis=-1) * Ntot).real


def principal_symbols(bases: CriticalBases, gc: np.ndarray, t: float, alpha: np.ndarray):
    """Bloch symbols of e_{n+1}.s^p, of the mean channel s^M and of the full
    vector s^p (M entries zeroed at xi = 0 where they are singular)."""
    R = len(bases.xis)
    p = bases.Q0.shape[1]
    sp = np.zeros((R, p), complex)
    sM = np.zeros((R, p - 1), complex)
    k = bases.k
    for i, xi in enumerate(bases.xis):
        if alpha[i] == 0:
            continue
        c = bases.Qt[i].conj().T @ gc[i]  # <q~_l, g>
        if xi == 0:
            Lt0 = bases.Lam_tilde0
            cM = np.concatenate([c[:-1], [0.0]])
            sp[i, -1] = alpha[i] * (c[-1] + t * (Lt0 @ cM)[-1])
            sM[i] = alpha[i] * c[:-1]
            continue
        s = 1j * k * xi
        D = np.ones(p, complex)
        D[-1] = s
        B, Bt, lam = bases.beta[i], bases.beta_t[i], bases.lam[i]
        pair = Bt.conj().T @ (D * c)  # <phi~_j, g>
        vec = (B * np.exp(lam * t)[None, :]) @ pair / s
        sp[i] = alpha[i] * vec
        sM[i] = alpha[i] * (s * vec[:-1])
    return sp, sM


def split_propagator(family: WaveFamily, g: np.ndarray, t: float, W: int, N_f: int = 32,
                     mode: str = "two_term", xi0: Optional[float] = None,
                     engine: Optional[BlochEngine] = None, bases: Optional[CriticalBases] = None,
                     full: bool = True) -> dict:
    """Split e^{tL} g into its principal phase part and a residual.

    two_term: S = Ubar' psi + S~ with psi = e_{n+1}.s^p g.
    refined:  S = (Ubar' + dU/dk k d_y) psi + dU/dM . s^M g + R~.
    """
    a = family.anchor
    engine = engine or BlochEngine(a, N_f)
    g = np.atleast_2d(g)
    N = g.shape[-1] // W
    xis, gc = bloch_transform(g, W, engine.N_f)
    gc_flat = gc.reshape(len(xis), -1)
    if xi0 is None:
        eps = bases.eps0 if bases is not None else None
        if eps is None:
            _, gap = zero_cluster(np.linalg.eigvals(engine.matrix(0.0)))
            eps = 0.5 * gap
        xi0 = choose_cutoff(engine, eps)
    alpha = raised_cosine(xis, xi0)
    inside = alpha > 0
    if bases is None or len(bases.xis) != int(inside.sum()) or not np.allclose(bases.xis, xis[inside]):
        bases = critical_bases(family, xis[inside], engine.N_f, engine=engine)
    sp_in, sM_in = principal_symbols(bases, gc_flat[inside], t, alpha[inside])
    sp = np.zeros((len(xis), sp_in.shape[1]), complex)
    sM = np.zeros((len(xis), sM_in.shape[1]), complex)
    sp[inside], sM[inside] = sp_in, sM_in
    psi = _field_from_modes(sp[:, -1:], xis, W, N)[0]
    Ubar_p = np.tile(resample(a.dU(), N), (1, W))
    out = {"xi0": xi0, "psi": psi, "bases": bases, "alpha": alpha, "xis": xis}
    total = propagate_linear(a, g, t, W, engine=engine) if full else None
    out["full"] = total
    principal = Ubar_p * psi[None, :]
    if mode == "two_term":
        out["principal"] = principal
        if full:
            out["residual"] = total - principal
        return out
    if mode != "refined":
        raise ValueError(f"unknown mode {mode!r}")
    psi_y = _field_from_modes((sp[:, -1] * 1j * xis)[:, None], xis, W, N)[0]
    s_mean = _field_from_modes(sM, xis, W, N)  # (n_c, Ntot)
    dUk = np.tile(resample(family.dU_dk, N), (1, W))
    Rp = principal + dUk * (a.k * psi_y)[None, :]
    RM = np.zeros_like(Rp)
    for j in range(s_mean.shape[0]):
        RM += np.tile(resample(family.dU_dM[..., j], N), (1, W)) * s_mean[j][None, :]
    out.update(principal=Rp, mean_part=RM, s_M=s_mean, psi_y=psi_y)
    if full:
        out["residual"] = total - Rp - RM
    return out
