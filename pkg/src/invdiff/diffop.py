"""Discretized diffusion operator: a bank of Gaussian kernels over sigma bins.

The forward map sends a PSDR stack to an image,

    d = sum_k sqrt(Delta_k) * (h_k * a_k),

with zero-padded 'same' convolutions. ``approx="full"`` convolves directly
with the sampled kernels; ``approx="lowrank"`` uses the best rank-r separable
factorization of each kernel and applies it as banded Toeplitz products
``T_u @ a_k @ T_v.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import ndimage

from .tensorio import PsdrStack, SigmaGrid, WeightMaps

__all__ = [
    "KernelBank",
    "gaussian_2d",
    "build_kernel_bank",
    "forward",
    "adjoint",
    "normal_op",
    "op_norm_sq",
    "analytic_norm_sq",
    "kernel_report",
    "conv_same",
]

Approx = Literal["full", "lowrank"]


def gaussian_2d(sigma: float, radius: int) -> np.ndarray:
    """Isotropic Gaussian density sampled at integer offsets in [-radius, radius]^2."""
    m = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(m * m) / (2.0 * sigma * sigma))
    # outer product keeps the kernel exactly symmetric under flips and transposition
    return np.outer(g, g) / (2.0 * math.pi * sigma * sigma)


def _even_factor(vec: np.ndarray) -> np.ndarray:
    return 0.5 * (vec + vec[::-1])


@dataclass
class KernelBank:
    """Per-bin kernels ``h_k`` with their rank-r SVD factors.

    ``singular_values[k]`` holds the full spectrum of ``h_k``; ``factors[k]`` is
    ``(s, U, V)`` truncated to ``rank`` terms, so that
    ``h_k ~= (U * s) @ V.T``.
    """

    sigma: SigmaGrid
    kernels: list
    radii: list
    factors: list
    singular_values: list
    rank: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def K(self) -> int:
        return len(self.kernels)

    @property
    def widths(self) -> np.ndarray:
        return self.sigma.widths

    def lowrank_kernel(self, k: int) -> np.ndarray:
        s, U, V = self.factors[k]
        return (U * s) @ V.T

    def _toeplitz(self, shape: tuple[int, int]):
        """Banded Toeplitz stacks (K, r, M, M) and (K, r, N, N), with sqrt(Delta_k)*s_j folded into the row factor."""
        key = ("toeplitz", shape)
        if key not in self._cache:
            M, N = shape
            sq = np.sqrt(self.widths)
            Tu = np.zeros((self.K, self.rank, M, M))
            Tv = np.zeros((self.K, self.rank, N, N))
            for k, (s, U, V) in enumerate(self.factors):
                R = self.radii[k]
                for j in range(self.rank):
                    Tu[k, j] = sq[k] * s[j] * _band(U[:, j], R, M)
                    Tv[k, j] = _band(V[:, j], R, N)
            self._cache[key] = (Tu, Tv)
        return self._cache[key]


def _band(vec: np.ndarray, radius: int, n: int) -> np.ndarray:
    """Matrix T with T[i, j] = vec[i - j + radius] (zero outside the band)."""
    i = np.arange(n)
    off = i[:, None] - i[None, :] + radius
    valid = (off >= 0) & (off <= 2 * radius)
    T = np.zeros((n, n))
    T[valid] = vec[off[valid]]
    return T


def build_kernel_bank(
    sigma: SigmaGrid,
    rank: int = 1,
    quadrature_nodes: int = 5,
    trunc_factor: float = 4.0,
) -> KernelBank:
    """Bin-averaged Gaussian kernels and their best rank-``rank`` factorizations.

    Each kernel is the midpoint-rule average of ``quadrature_nodes`` sampled
    Gaussians across its bin, truncated at radius ``ceil(trunc_factor * sigma_k)``.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if quadrature_nodes < 1:
        raise ValueError("quadrature_nodes must be >= 1")
    if trunc_factor < 3:
        raise ValueError("trunc_factor must be >= 3")
    if sigma.edges[0] <= 0:
        raise ValueError("sigma_0 must be positive: the kernel is undefined at sigma = 0")

    kernels, radii, factors, spectra = [], [], [], []
    q = quadrature_nodes
    for lo, hi in zip(sigma.edges[:-1], sigma.edges[1:]):
        R = int(math.ceil(trunc_factor * hi))
        if rank > 2 * R + 1:
            raise ValueError(f"rank {rank} exceeds kernel dimension {2 * R + 1}")
        nodes = lo + (hi - lo) * (np.arange(q) + 0.5) / q
        h = sum(gaussian_2d(s, R) for s in nodes) / q
        U, s, Vt = np.linalg.svd(h)
        V = Vt.T.copy()
        U = U.copy()
        for j in range(rank):
            u, v = U[:, j], V[:, j]
            # h is even in both axes, so the dominant singular vectors are even;
            # symmetrizing removes round-off asymmetry
            if np.linalg.norm(_even_factor(u)) > np.linalg.norm(u - _even_factor(u)):
                u = _even_factor(u)
                v = _even_factor(v)
                u /= np.linalg.norm(u)
                v /= np.linalg.norm(v)
            if u[R] < 0:
                u, v = -u, -v
            U[:, j], V[:, j] = u, v
        kernels.append(h)
        radii.append(R)
        factors.append((s[:rank].copy(), U[:, :rank].copy(), V[:, :rank].copy()))
        spectra.append(s)
    return KernelBank(sigma, kernels, radii, factors, spectra, rank)


def conv_same(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' 2D convolution with an odd-sized kernel, computed directly.

    Sparse inputs scatter shifted kernel copies; dense ones go through
    ``ndimage.convolve``. Both are exact sums, no FFT round-off.
    """
    M, N = x.shape
    R = h.shape[0] // 2
    rows, cols = np.nonzero(x)
    if rows.size * 8 > M * N:
        return ndimage.convolve(x, h, mode="constant", cval=0.0)
    out = np.zeros((M, N))
    for m, n in zip(rows, cols):
        r0, r1 = max(m - R, 0), min(m + R + 1, M)
        c0, c1 = max(n - R, 0), min(n + R + 1, N)
        out[r0:r1, c0:c1] += x[m, n] * h[r0 - m + R : r1 - m + R, c0 - n + R : c1 - n + R]
    return out


def _check(bank: KernelBank, shape):
    if shape[0] != bank.K:
        raise ValueError(f"stack has {shape[0]} planes, bank has {bank.K} kernels")


def forward(bank: KernelBank, a, approx: Approx = "lowrank") -> np.ndarray:
    """Apply the discretized diffusion operator to a stack (``PsdrStack`` or K x M x N array)."""
    coeffs = a.coeffs if isinstance(a, PsdrStack) else np.asarray(a, dtype=np.float64)
    _check(bank, coeffs.shape)
    if approx == "full":
        sq = np.sqrt(bank.widths)
        out = np.zeros(coeffs.shape[1:])
        for k in range(bank.K):
            out += sq[k] * conv_same(coeffs[k], bank.kernels[k])
        return out
    if approx != "lowrank":
        raise ValueError(f"unknown approximation {approx!r}")
    Tu, Tv = bank._toeplitz(coeffs.shape[1:])
    tmp = np.matmul(Tu, coeffs[:, None, :, :])
    tmp = np.matmul(tmp, np.swapaxes(Tv, -1, -2))
    return tmp.sum(axis=(0, 1))


def adjoint(bank: KernelBank, d: np.ndarray, weights: WeightMaps | None = None, approx: Approx = "lowrank") -> np.ndarray:
    """Adjoint with respect to the w2-weighted image inner product; output masked by mu."""
    d = np.asarray(d, dtype=np.float64)
    if weights is not None:
        if weights.w2.shape != d.shape:
            raise ValueError("weight maps and image shapes differ")
        d = weights.w2 * d
    if approx == "full":
        sq = np.sqrt(bank.widths)
        out = np.empty((bank.K, *d.shape))
        for k in range(bank.K):
            out[k] = sq[k] * conv_same(d, bank.kernels[k][::-1, ::-1])
    elif approx == "lowrank":
        Tu, Tv = bank._toeplitz(d.shape)
        tmp = np.matmul(np.swapaxes(Tu, -1, -2), d)
        out = np.matmul(tmp, Tv).sum(axis=1)
    else:
        raise ValueError(f"unknown approximation {approx!r}")
    if weights is not None:
        out *= weights.mu
    return out


def normal_op(bank, x, weights=None, approx: Approx = "lowrank") -> np.ndarray:
    return adjoint(bank, forward(bank, x, approx), weights, approx)


def op_norm_sq(
    bank: KernelBank,
    weights: WeightMaps,
    approx: Approx = "lowrank",
    iters: int = 100,
    seed: int = 0,
) -> float:
    """Largest Rayleigh quotient of A*A seen along a seeded power iteration."""
    if iters < 10:
        raise ValueError("iters must be >= 10")
    shape = (bank.K, *weights.mu.shape)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) * weights.mu
    best = 0.0
    for _ in range(iters):
        nrm = np.linalg.norm(x)
        if nrm == 0:
            x = rng.standard_normal(shape) * weights.mu
            nrm = np.linalg.norm(x)
            if nrm == 0:
                return 0.0
        x /= nrm
        y = normal_op(bank, x, weights, approx)
        best = max(best, float(np.vdot(x, y)))
        x = y
    return best


def analytic_norm_sq(bank: KernelBank, weights: WeightMaps, approx: Approx = "lowrank") -> float:
    """Young's-inequality bound sum_k Delta_k * ||w||_inf^2 * (sum |h_k|)^2."""
    total = 0.0
    for k in range(bank.K):
        h = bank.kernels[k] if approx == "full" else bank.lowrank_kernel(k)
        total += bank.widths[k] * float(np.abs(h).sum()) ** 2
    return weights.w_inf_sq * total


def kernel_report(bank: KernelBank, ranks=(1, 3)) -> list[dict]:
    """Per-bin singular values and relative Frobenius error of rank-r truncations."""
    rows = []
    for k, s in enumerate(bank.singular_values):
        total = float(np.sqrt(np.sum(s**2)))
        row = {
            "bin": k,
            "sigma_lo": float(bank.sigma.edges[k]),
            "sigma_hi": float(bank.sigma.edges[k + 1]),
            "radius": bank.radii[k],
            "mass": float(bank.kernels[k].sum()),
            "s1": float(s[0]),
            "s2": float(s[1]) if s.size > 1 else 0.0,
            "s3": float(s[2]) if s.size > 2 else 0.0,
        }
        for r in ranks:
            row[f"rel_err_r{r}"] = float(np.sqrt(np.sum(s[r:] ** 2)) / total)
        rows.append(row)
    return rows
