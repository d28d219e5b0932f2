"""Fourier utilities on the unit period and Galerkin assembly of the
linearized operator family L_xi = sum_m sigma^m L^(m), sigma = i k xi.

Coefficient vectors hold modes j = -K..K for each component, stacked
component-major, with the normalization c_j = mean(u exp(-2 pi i j y)) so that
the L2(0,1) inner product is <a, b> = sum(conj(a_j) b_j).
"""
from __future__ import annotations

import numpy as np

from .model import (ModelSpec, evaluate_viscosity, flux_derivatives, shifted_poly,
                    source_derivatives, viscosity_derivative)


def grid(N: int) -> np.ndarray:
    return np.arange(N) / N


def modes(K: int) -> np.ndarray:
    return np.arange(-K, K + 1)


def to_coeffs(u: np.ndarray, K: int) -> np.ndarray:
    """Grid values (..., N) -> coefficients (..., 2K+1) for modes -K..K."""
    u = np.asarray(u)
    N = u.shape[-1]
    if 2 * K + 1 > N:
        raise ValueError(f"K={K} needs at least {2 * K + 1} grid points, got {N}")
    c = np.fft.fft(u, axis=-1) / N
    idx = modes(K) % N
    return c[..., idx]


def to_grid(c: np.ndarray, N: int, real: bool = True) -> np.ndarray:
    """Coefficients (..., 2K+1) -> grid values (..., N)."""
    c = np.asarray(c)
    K = (c.shape[-1] - 1) // 2
    if 2 * K + 1 > N:
        raise ValueError(f"{N} grid points cannot hold modes up to {K}")
    full = np.zeros(c.shape[:-1] + (N,), dtype=complex)
    full[..., modes(K) % N] = c
    u = np.fft.ifft(full, axis=-1) * N
    return u.real if real else u


def resample(u: np.ndarray, N: int) -> np.ndarray:
    """Spectral interpolation of periodic grid data (..., N0) onto N points."""
    u = np.asarray(u)
    N0 = u.shape[-1]
    if N == N0:
        return u.copy()
    K = (min(N, N0) - 1) // 2
    return to_grid(to_coeffs(u, K), N)


def derivative(u: np.ndarray, order: int = 1) -> np.ndarray:
    """Spectral y-derivative on the unit period; the Nyquist mode is dropped."""
    u = np.asarray(u)
    N = u.shape[-1]
    j = np.fft.fftfreq(N, 1.0 / N)
    sym = (2j * np.pi * j) ** order
    if N % 2 == 0:
        sym[N // 2] = 0.0
    return np.fft.ifft(np.fft.fft(u, axis=-1) * sym, axis=-1).real


def evaluate_periodic(c: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate a trigonometric polynomial with coefficients (..., 2K+1) at points y."""
    K = (c.shape[-1] - 1) // 2
    phase = np.exp(2j * np.pi * np.multiply.outer(modes(K), np.asarray(y)))
    return np.tensordot(c, phase, axes=(-1, 0)).real


def inner(a: np.ndarray, b: np.ndarray) -> complex:
    """L2(0,1) inner product of coefficient vectors (any matching shapes)."""
    return complex(np.vdot(a.ravel(), b.ravel()))


def mean_of(c: np.ndarray, K: int, n: int) -> np.ndarray:
    """Component means of a stacked coefficient vector."""
    return np.asarray(c).reshape(n, 2 * K + 1)[:, K]


def tail_size(u: np.ndarray, K: int) -> float:
    """Largest |coefficient| at |j| >= K relative to the largest coefficient."""
    N = u.shape[-1]
    c = np.abs(np.fft.fft(u, axis=-1) / N)
    j = np.abs(np.fft.fftfreq(N, 1.0 / N))
    top = max(np.max(c), 1e-300)
    if not np.any(j >= K):
        return 0.0
    return float(np.max(c[..., j >= K]) / top)


def toeplitz_blocks(a: np.ndarray, K: int) -> np.ndarray:
    """Galerkin matrix of multiplication by an n x n periodic matrix function.

    ``a`` holds grid samples with shape (n, n, N), N >= 4K+1.
    """
    n = a.shape[0]
    N = a.shape[-1]
    if N < 4 * K + 1:
        raise ValueError("multiplication symbol needs N >= 4K+1 samples")
    ahat = np.fft.fft(a, axis=-1) / N
    p = modes(K)
    diff = (p[:, None] - p[None, :]) % N
    size = 2 * K + 1
    out = np.zeros((n * size, n * size), dtype=complex)
    for i in range(n):
        for j in range(n):
            if np.any(ahat[i, j] != 0):
                out[i * size:(i + 1) * size, j * size:(j + 1) * size] = ahat[i, j][diff]
    return out


class OperatorExpansion:
    """Galerkin matrices L^(m), m = 0..4, of the linearization about a
    profile U (given on a periodic grid), in the co-moving scaled frame:

        L(sigma) v = D(B D v + (dB v) U_x) - D(df v) + c D v - dg_u v - dg_ux D v - P(D) v

    with D = k d_y + sigma and U_x = k U'.
    """

    def __init__(self, model: ModelSpec, U: np.ndarray, k: float, c: float, K: int):
        self.model, self.k, self.c, self.K = model, float(k), float(c), int(K)
        n = model.n
        self.n = n
        self.size = 2 * K + 1
        Nfine = max(U.shape[-1], 4 * K + 2)
        Nfine += Nfine % 2
        Uf = resample(U, Nfine)
        Ux = self.k * derivative(Uf)
        self.U_fine = Uf
        A = flux_derivatives(model, Uf, 1)
        gu, gux = source_derivatives(model, Uf, Ux)
        self.multipliers = {"A": A, "gu": gu, "gux": gux}
        I = np.eye(n * self.size, dtype=complex)
        Kd = np.kron(np.eye(n), np.diag(2j * np.pi * self.k * modes(K)))
        self.Kd = Kd
        MA = toeplitz_blocks(A, K)
        MGu = toeplitz_blocks(gu, K)
        MGux = toeplitz_blocks(gux, K)
        if model.constant_viscosity:
            Bc = np.asarray(model.viscosity, float)
            MB = np.kron(Bc, np.eye(self.size))
            MC = np.zeros_like(I)
            B0 = Kd @ MB @ Kd
        else:
            Bv = evaluate_viscosity(model, Uf)
            dB = viscosity_derivative(model, Uf)
            C = np.einsum("ijlx,jx->ilx", dB, Ux)
            MB = toeplitz_blocks(Bv, K)
            MC = toeplitz_blocks(C, K)
            B0 = Kd @ MB @ Kd
        self.MA, self.MB = MA, MB
        kj = 2j * np.pi * self.k * modes(K)
        P = []
        for r in range(5):
            coeffs = shifted_poly(model, r)
            diag = np.concatenate([sum(coeffs[i, m] * kj ** m for m in range(5)) for i in range(n)])
            P.append(np.diag(diag.astype(complex)))
        L0 = B0 + Kd @ MC - Kd @ MA + self.c * Kd - MGu - MGux @ Kd - P[0]
        L1 = MB @ Kd + Kd @ MB + MC - MA + self.c * I - MGux - P[1]
        L2 = MB - P[2]
        self.L = [L0, L1, L2, -P[3], -P[4]]
        self.tail = max(tail_size(A.reshape(-1, A.shape[-1]), K),
                        tail_size(gu.reshape(-1, gu.shape[-1]), K),
                        tail_size(Uf, K))

    def at(self, xi: float) -> np.ndarray:
        s = 1j * self.k * xi
        out = self.L[0].copy()
        for m in range(1, 5):
            if s != 0 and np.any(self.L[m]):
                out = out + s ** m * self.L[m]
        return out

    def coeffs(self, u: np.ndarray) -> np.ndarray:
        """Grid field (n, N) -> stacked coefficient vector."""
        return to_coeffs(np.asarray(u).reshape(self.n, -1), self.K).ravel()

    def field(self, c: np.ndarray, N: int) -> np.ndarray:
        return to_grid(np.asarray(c).reshape(self.n, self.size), N)

    def deriv(self, c: np.ndarray) -> np.ndarray:
        """y-derivative of a coefficient vector."""
        return (self.Kd @ c) / self.k

    def mean_rows(self) -> np.ndarray:
        """Row indices of the j=0 mode of conserved components."""
        return np.array([i * self.size + self.K for i in self.model.conserved_index], dtype=int)

    def constants(self) -> np.ndarray:
        """Columns e_l (constant functions) for conserved components."""
        E = np.zeros((self.n * self.size, self.model.n_conserved), dtype=complex)
        for col, row in enumerate(self.mean_rows()):
            E[row, col] = 1.0
        return E
