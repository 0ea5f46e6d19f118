"""Proximal and projection operators for the non-negative group-sparsity regularizer.

Per pixel, the regularizer restricted to the regularized bins is

    theta(x) = ||xi * x||_2 + indicator(x >= 0),

and its scaled prox is ``x+ - P_E(x+)`` where ``E = {y : ||y / xi|| <= gamma}``.
With ``xi = 1`` the ellipsoid is a ball and the prox reduces to a group
shrinkage of the positive part. Every function here works on plain 1D
vectors; :func:`apply_prox_stack` applies them fiber-wise to a whole stack.
"""

from __future__ import annotations

import math
from typing import Literal, Optional

import numpy as np

from .tensorio import PsdrStack, WeightMaps

__all__ = [
    "positive_part",
    "negative_part",
    "project_ball",
    "project_ellipsoid",
    "prox_nonneg_group_ball",
    "prox_nonneg_group_weighted",
    "prox_conjugate",
    "apply_prox_stack",
    "regularizer_value",
    "NEG_TOL",
]

# entries above -NEG_TOL count as non-negative when evaluating the regularizer
NEG_TOL = 1e-12
_MAX_ROOT_ITERS = 200


def positive_part(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, 0.0)


def negative_part(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < 0, x, 0.0)


def project_ball(x: np.ndarray, gamma: float) -> np.ndarray:
    """Euclidean projection onto the closed ball of radius ``gamma``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=np.float64)
    nrm = np.linalg.norm(x)
    if nrm <= gamma:
        return x.copy()
    return (gamma / nrm) * x


def _ellipsoid_multipliers(X: np.ndarray, xi: np.ndarray, gamma: float, tol: float) -> np.ndarray:
    """Multiplier lam >= 0 per row of X (P x n) with ||xi x / (xi^2 + 2 lam)|| = gamma.

    Rows already inside the ellipsoid get lam = 0. Newton runs on
    h(lam) = 1 / psi(lam) - 1 / gamma, which is concave increasing and close to
    linear for large lam, so iterates started at 0 rise monotonically to the
    root. Each step is kept inside the bracket [0, max(xi) ||x|| / (2 gamma)];
    a step leaving it is replaced by bisection.
    """
    xi2 = xi * xi
    num = xi2 * X * X  # xi^2 x^2
    P = X.shape[0]
    lam = np.zeros(P)
    inside = np.sqrt(np.sum(X * X / xi2, axis=1)) <= gamma
    active = ~inside
    if not np.any(active):
        return lam
    lo = np.zeros(P)
    hi = np.max(xi) * np.linalg.norm(X, axis=1) / (2.0 * gamma)
    idx = np.flatnonzero(active)
    for _ in range(_MAX_ROOT_ITERS):
        if idx.size == 0:
            break
        l = lam[idx]
        den = xi2[None, :] + 2.0 * l[:, None]
        psi = np.sqrt(np.sum(num[idx] / den**2, axis=1))
        phi = psi - gamma
        done = np.abs(phi) <= tol * gamma
        pos = phi > 0
        lo[idx] = np.where(pos, l, lo[idx])
        hi[idx] = np.where(pos, hi[idx], l)
        # psi' = -2 sum(num / den^3) / psi, h' = -psi' / psi^2
        dh = 2.0 * np.sum(num[idx] / den**3, axis=1) / psi**3
        with np.errstate(divide="ignore", invalid="ignore"):
            step = l - (1.0 / psi - 1.0 / gamma) / dh
        ok = np.isfinite(step) & (step > lo[idx]) & (step < hi[idx])
        nxt = np.where(ok, step, 0.5 * (lo[idx] + hi[idx]))
        collapsed = (hi[idx] - lo[idx]) <= 4 * np.finfo(float).eps * np.maximum(hi[idx], 1e-300)
        finished = done | collapsed
        lam[idx] = np.where(finished, l, nxt)
        idx = idx[~finished]
    return lam


def _multiplier_1d(x: np.ndarray, xi2: np.ndarray, gamma: float, tol: float) -> float:
    """Single-vector version of :func:`_ellipsoid_multipliers` with less per-call overhead."""
    if math.sqrt(float(np.sum(x * x / xi2))) <= gamma:
        return 0.0
    num = xi2 * x * x
    lo, hi = 0.0, math.sqrt(float(np.max(xi2))) * math.sqrt(float(np.sum(x * x))) / (2.0 * gamma)
    lam = 0.0
    for _ in range(_MAX_ROOT_ITERS):
        den = xi2 + 2.0 * lam
        r = num / (den * den)
        psi = math.sqrt(float(np.sum(r)))
        phi = psi - gamma
        if abs(phi) <= tol * gamma:
            break
        if phi > 0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= 4 * np.finfo(float).eps * max(hi, 1e-300):
            break
        dh = 2.0 * float(np.sum(r / den)) / psi**3
        step = lam - (1.0 / psi - 1.0 / gamma) / dh if dh > 0 else math.nan
        lam = step if lo < step < hi else 0.5 * (lo + hi)
    return lam


def project_ellipsoid(
    x: np.ndarray, xi: np.ndarray, gamma: float, tol: float = 1e-12
) -> tuple[np.ndarray, float]:
    """Project ``x`` onto ``{y : ||y / xi||_2 <= gamma}``.

    Returns the projection and its Lagrange multiplier; the projection is
    ``xi**2 * x / (xi**2 + 2 * lam)``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=np.float64)
    xi = np.broadcast_to(np.asarray(xi, dtype=np.float64), x.shape)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
        raise ValueError("non-finite input")
    if np.any(xi <= 0):
        raise ValueError("weights xi must be strictly positive")
    lam = _multiplier_1d(x, xi * xi, gamma, tol)
    if lam == 0.0:
        return x.copy(), 0.0
    return xi * xi * x / (xi * xi + 2.0 * lam), lam


def prox_nonneg_group_ball(x: np.ndarray, gamma: float) -> np.ndarray:
    """``x+ * (1 - gamma / ||x+||)+``: prox of gamma*||.|| plus the non-negativity constraint."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    xp = positive_part(x)
    nrm = np.linalg.norm(xp)
    if nrm <= gamma:
        return np.zeros_like(xp)
    return xp * (1.0 - gamma / nrm)


def prox_nonneg_group_weighted(x: np.ndarray, xi: np.ndarray, gamma: float, tol: float = 1e-12) -> np.ndarray:
    """``x+ - P_E(x+)`` with E the xi-weighted ellipsoid of radius gamma."""
    xp = positive_part(x)
    y, _ = project_ellipsoid(xp, xi, gamma, tol)
    return xp - y


def prox_conjugate(x: np.ndarray, xi: np.ndarray, gamma: float, tol: float = 1e-12) -> np.ndarray:
    """Prox of the convex conjugate: ``x- + P_E(x+)``."""
    y, _ = project_ellipsoid(positive_part(x), xi, gamma, tol)
    return negative_part(x) + y


def apply_prox_stack(
    a: PsdrStack | np.ndarray,
    threshold: float,
    aleph=None,
    xi: Optional[np.ndarray] = None,
    mode: Literal["ball", "ellipsoid"] = "ball",
    mu: Optional[np.ndarray] = None,
    tol: float = 1e-12,
) -> np.ndarray:
    """Prox of ``threshold * GS + indicator(a >= 0)`` on a K x M x N stack.

    Bins outside ``aleph`` only get their positive part; the ``aleph`` fiber
    of every pixel gets the group prox. Pixels outside ``mu`` are zeroed.
    Returns the new coefficient array.
    """
    if isinstance(a, PsdrStack):
        coeffs = a.coeffs
        if aleph is None:
            aleph = a.sigma.aleph
    else:
        coeffs = np.asarray(a, dtype=np.float64)
    if coeffs.ndim != 3:
        raise ValueError("expected a K x M x N stack")
    K = coeffs.shape[0]
    if aleph is None:
        aleph = range(K)
    aleph = list(aleph)
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    if mu is not None and mu.shape != coeffs.shape[1:]:
        raise ValueError("mask shape does not match stack")

    out = positive_part(coeffs)
    if threshold > 0 and aleph:
        fib = out[aleph]  # |aleph| x M x N copy
        if mode == "ball" and xi is None:
            nrm = np.sqrt(np.sum(fib * fib, axis=0))
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(nrm > threshold, 1.0 - threshold / nrm, 0.0)
            out[aleph] = fib * scale
        elif mode in ("ball", "ellipsoid"):
            w = np.ones(len(aleph)) if xi is None else np.asarray(xi, dtype=np.float64)
            if w.shape != (len(aleph),) or np.any(w <= 0):
                raise ValueError("xi must hold one positive weight per regularized bin")
            X = fib.reshape(len(aleph), -1).T
            lam = _ellipsoid_multipliers(X, w, threshold, tol)
            w2 = w * w
            proj = X * (w2[None, :] / (w2[None, :] + 2.0 * lam[:, None]))
            out[aleph] = (X - proj).T.reshape(fib.shape)
        else:
            raise ValueError(f"unknown prox mode {mode!r}")
    if mu is not None:
        out *= mu
    return out


def regularizer_value(a: PsdrStack | np.ndarray, aleph=None, xi: Optional[np.ndarray] = None) -> float:
    """Sum over pixels of ``||xi * fiber||_2`` over the regularized bins.

    Returns ``math.inf`` when any coefficient is negative beyond round-off.
    """
    if isinstance(a, PsdrStack):
        coeffs = a.coeffs
        if aleph is None:
            aleph = a.sigma.aleph
    else:
        coeffs = np.asarray(a, dtype=np.float64)
    if aleph is None:
        aleph = range(coeffs.shape[0])
    if coeffs.size and coeffs.min() < -NEG_TOL:
        return math.inf
    fib = positive_part(coeffs[list(aleph)])  # round-off negatives count as zero
    if xi is not None:
        fib = fib * np.asarray(xi, dtype=np.float64)[:, None, None]
    return float(np.sum(np.sqrt(np.sum(fib * fib, axis=0))))
