"""Synthetic scenes and noisy observations.

A scene is a list of point sources, each with a total particle count and a
profile over the generation sigma bins. Observations are produced by the
exact (unapproximated) forward operator, an optical blur with a
pixel-integrated Gaussian, normalization to peak 1, additive Gaussian noise
with the variance of b-bit quantization, clipping and scaling to [0, 255].
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from . import diffop
from .diffop import KernelBank
from .tensorio import ImageGrid, PsdrStack, SigmaGrid

__all__ = [
    "Cell",
    "Scene",
    "NoiseModel",
    "derive_seed",
    "philox",
    "box_muller",
    "make_profile",
    "make_scene",
    "scene_to_psdr",
    "integrated_gaussian",
    "render",
]


def derive_seed(seed: int, stage: str) -> int:
    """Stable 64-bit sub-seed for a named pipeline stage."""
    digest = hashlib.sha256(f"{int(seed)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def philox(seed: int, stage: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(seed, stage)))


def box_muller(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal samples from uniform pairs (both Box-Muller branches used)."""
    n = int(np.prod(shape))
    half = (n + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * half)
    z[0::2] = r * np.cos(2.0 * math.pi * u2)
    z[1::2] = r * np.sin(2.0 * math.pi * u2)
    return z[:n].reshape(shape)


@dataclass
class Cell:
    m: int
    n: int
    q: float
    profile: np.ndarray

    def to_json(self) -> dict:
        return {"m": int(self.m), "n": int(self.n), "q": float(self.q), "profile": [float(v) for v in self.profile]}


@dataclass
class Scene:
    cells: list
    dims: tuple
    gen_sigma: SigmaGrid
    seed: int = 0

    def __post_init__(self):
        M, N = self.dims
        for c in self.cells:
            if not (0 <= c.m < M and 0 <= c.n < N):
                raise ValueError(f"cell at ({c.m}, {c.n}) lies outside the {M}x{N} image")
            if not c.q > 0:
                raise ValueError("cell totals must be positive")
            p = np.asarray(c.profile, dtype=np.float64)
            if p.shape != (self.gen_sigma.K,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("profiles must be non-negative, one entry per bin, summing to 1")

    @property
    def positions(self) -> np.ndarray:
        return np.array([[c.m, c.n] for c in self.cells], dtype=np.int64).reshape(-1, 2)

    @property
    def totals(self) -> np.ndarray:
        return np.array([c.q for c in self.cells], dtype=np.float64)

    def to_json(self) -> dict:
        return {
            "dims": [int(d) for d in self.dims],
            "cells": [c.to_json() for c in self.cells],
            "seed": int(self.seed),
            "gen_sigma_edges": [float(e) for e in self.gen_sigma.edges],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, obj: dict) -> "Scene":
        cells = [Cell(int(c["m"]), int(c["n"]), float(c["q"]), np.asarray(c["profile"], dtype=np.float64)) for c in obj["cells"]]
        return cls(cells, tuple(obj["dims"]), SigmaGrid(obj["gen_sigma_edges"]), int(obj.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class NoiseModel:
    """Additive Gaussian noise with the variance of b-bit quantization on [0, 1]."""

    bits: int = 8

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("bits must be >= 1")

    @property
    def variance(self) -> float:
        return 2.0 ** (-2 * self.bits) / 12.0


def make_profile(kind, K: int) -> np.ndarray:
    """Fraction of a cell's particles per generation bin.

    ``"uniform"`` spreads evenly, ``"triangular_decay"`` decays linearly with
    sigma, and any sequence is taken as a custom profile and normalized.
    """
    if isinstance(kind, str):
        if kind == "uniform":
            p = np.full(K, 1.0 / K)
        elif kind == "triangular_decay":
            p = np.arange(K, 0, -1, dtype=np.float64)
            p /= p.sum()
        else:
            raise ValueError(f"unknown profile kind {kind!r}")
    else:
        p = np.asarray(kind, dtype=np.float64)
        if p.shape != (K,) or np.any(p < 0) or not p.sum() > 0:
            raise ValueError("custom profile must have one non-negative entry per bin")
        p = p / p.sum()
    return p


def make_scene(
    n_cells: int,
    dims: tuple,
    q_max: float,
    gen_sigma: SigmaGrid,
    profile_kind="uniform",
    seed: int = 0,
    margin: int = 0,
    min_separation: float = 0.0,
    mask: Optional[np.ndarray] = None,
    max_tries: int = 100000,
) -> Scene:
    """Draw ``n_cells`` pixel-centred sources uniformly over the mask interior.

    Totals are uniform on [q_max / 2, q_max]. With ``min_separation > 0``
    candidates closer than that to an accepted cell are rejected.
    """
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    if not q_max > 0:
        raise ValueError("q_max must be positive")
    M, N = dims
    allowed = np.zeros((M, N), dtype=bool)
    allowed[margin : M - margin, margin : N - margin] = True
    if mask is not None:
        allowed &= np.asarray(mask) > 0
    free = np.flatnonzero(allowed.ravel())
    if n_cells > free.size:
        raise ValueError(f"{n_cells} cells requested but only {free.size} interior pixels are available")

    rng = philox(seed, "scene")
    profile = make_profile(profile_kind, gen_sigma.K)
    chosen: list[int] = []
    if min_separation <= 0:
        chosen = list(rng.choice(free, size=n_cells, replace=False))
    else:
        pos = np.empty((0, 2))
        tries = 0
        while len(chosen) < n_cells:
            tries += 1
            if tries > max_tries:
                raise ValueError(f"could not place {n_cells} cells {min_separation} px apart")
            idx = int(free[rng.integers(free.size)])
            p = np.array(divmod(idx, N), dtype=np.float64)
            if pos.size and np.min(np.hypot(*(pos - p).T)) < min_separation:
                continue
            chosen.append(idx)
            pos = np.vstack([pos, p])
    q = rng.uniform(q_max / 2.0, q_max, size=n_cells)
    cells = [Cell(*divmod(int(i), N), float(qq), profile.copy()) for i, qq in zip(chosen, q)]
    return Scene(cells, (M, N), gen_sigma, seed)


def scene_to_psdr(scene: Scene) -> PsdrStack:
    """Box-basis coefficients: ``coeffs[k, m, n] = sum of q * profile[k] / sqrt(Delta_k)``."""
    sg = scene.gen_sigma
    coeffs = np.zeros((sg.K, *scene.dims))
    inv = 1.0 / np.sqrt(sg.widths)
    for c in scene.cells:
        coeffs[:, c.m, c.n] += c.q * np.asarray(c.profile) * inv
    return PsdrStack(coeffs, sg)


def integrated_gaussian(sigma: float, radius: Optional[int] = None) -> np.ndarray:
    """2D Gaussian integrated over unit pixels, truncated at ``radius`` and renormalized."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if radius is None:
        radius = int(math.ceil(4.0 * sigma))
    m = np.arange(0, radius + 1, dtype=np.float64)
    # upper tail differences are accurate far out; mirror for exact symmetry
    half = ndtr(-(m - 0.5) / sigma) - ndtr(-(m + 0.5) / sigma)
    g = np.concatenate([half[:0:-1], half])
    g /= g.sum()
    return np.outer(g, g)


def render(
    psdr: PsdrStack,
    gen_bank: KernelBank,
    blur_sigma: float,
    noise: NoiseModel,
    seed: int = 0,
    noiseless: bool = False,
    pixel_pitch: float = 1.0,
) -> tuple[ImageGrid, float]:
    """Simulate an 8-bit-range observation; returns ``(image in [0, 255], gain)``."""
    if not blur_sigma > 0:
        raise ValueError("blur_sigma must be positive")
    d = diffop.forward(gen_bank, psdr, approx="full")
    d = diffop.conv_same(d, integrated_gaussian(blur_sigma))
    peak = float(d.max())
    if not peak > 0:
        raise ValueError("pre-noise image is identically zero; gain undefined")
    gain = 1.0 / peak
    d = d / peak  # division keeps the maximum at exactly 1.0
    if not noiseless:
        d = d + math.sqrt(noise.variance) * box_muller(philox(seed, "noise"), d.shape)
        d = np.clip(d, 0.0, 1.0)
    return ImageGrid(255.0 * d, pixel_pitch), gain
