"""Accelerated proximal gradient (FISTA) for regularized inverse diffusion.

Minimizes

    ||A a - d||_D^2 + lam * GS(a)   subject to a >= 0, supp(a) in mu,

where ``||.||_D`` is the w2-weighted norm. The data term has gradient
``2 A*(A a - d)`` with Lipschitz constant ``2 ||A||^2``, so with
``eta = 1 / ||A||^2`` the iteration reads

    a <- [b - eta A*(A b - d)]+          (non-negative projection)
    a_aleph <- a_aleph (1 - eta lam / (2 ||a_aleph||))+   (group shrinkage)
    b <- a + alpha (a - a_prev)
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from . import diffop
from .diffop import KernelBank
from .prox import apply_prox_stack, regularizer_value
from .tensorio import PsdrStack, WeightMaps

__all__ = [
    "SolveConfig",
    "SolveLog",
    "DivergenceError",
    "fista_momentum",
    "step_size",
    "cost",
    "solve",
]

log = logging.getLogger(__name__)

# power-iteration estimates approach ||A||^2 from below; shrink the step slightly
STEP_SAFETY = 1.0 - 1e-3


class DivergenceError(RuntimeError):
    """The cost became non-finite during a solve."""


@dataclass
class SolveConfig:
    lam: float = 0.5
    iters: int = 2000
    step_mode: Literal["power_iteration", "analytic_bound", "fixed"] = "power_iteration"
    eta: Optional[float] = None
    momentum: Literal["fista", "none"] = "fista"
    approx: Literal["full", "lowrank"] = "lowrank"
    prox_mode: Literal["ball", "ellipsoid"] = "ball"
    xi: Optional[tuple] = None
    log_every: int = 10
    tol_rel_cost: Optional[float] = None
    power_iters: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.step_mode == "fixed" and not (self.eta is not None and self.eta > 0):
            raise ValueError("step_mode='fixed' needs eta > 0")
        if self.step_mode not in ("power_iteration", "analytic_bound", "fixed"):
            raise ValueError(f"unknown step_mode {self.step_mode!r}")
        if self.momentum not in ("fista", "none"):
            raise ValueError(f"unknown momentum {self.momentum!r}")


@dataclass
class SolveLog:
    iters: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    nse: list = field(default_factory=list)
    gs: list = field(default_factory=list)
    eta: float = float("nan")

    def append(self, i, c, n, g):
        if self.iters and i <= self.iters[-1]:
            raise ValueError("log iterations must increase")
        self.iters.append(int(i))
        self.costs.append(float(c))
        self.nse.append(float(n))
        self.gs.append(float(g))

    def to_csv(self, path) -> None:
        def fmt(v):
            # infinite regularizer values are flagged rather than written as floats
            return "inf" if math.isinf(v) else f"{v:.12g}"

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "cost", "nse", "gs"])
            for row in zip(self.iters, self.costs, self.nse, self.gs):
                w.writerow([row[0], *(fmt(v) for v in row[1:])])

    @classmethod
    def from_csv(cls, path) -> "SolveLog":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(int(row["iter"]), float(row["cost"]), float(row["nse"]), float(row["gs"]))
        return out


def fista_momentum(t_prev: float, momentum: str = "fista") -> tuple[float, float]:
    """One step of the FISTA sequence: returns ``(t, alpha)`` with alpha = (t_prev - 1) / t."""
    if t_prev < 1:
        raise ValueError("t_prev must be >= 1")
    t = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev))
    if momentum == "none":
        return t, 0.0
    return t, (t_prev - 1.0) / t


def step_size(bank: KernelBank, weights: WeightMaps, cfg: SolveConfig) -> float:
    if cfg.step_mode == "fixed":
        return float(cfg.eta)
    if cfg.step_mode == "analytic_bound":
        return 1.0 / diffop.analytic_norm_sq(bank, weights, cfg.approx)
    nsq = diffop.op_norm_sq(bank, weights, cfg.approx, iters=cfg.power_iters, seed=cfg.seed)
    return STEP_SAFETY / nsq


def _aleph(bank: KernelBank):
    return bank.sigma.aleph


def cost(a, d_obs, bank: KernelBank, weights: WeightMaps, lam: float, approx="lowrank", xi=None):
    """Return ``(cost, nse, gs)`` for the stack ``a`` against observation ``d_obs``."""
    coeffs = a.coeffs if isinstance(a, PsdrStack) else np.asarray(a, dtype=np.float64)
    d = np.asarray(d_obs, dtype=np.float64)
    r = diffop.forward(bank, coeffs, approx) - d
    data = float(np.sum(weights.w2 * r * r))
    dnorm = float(np.sum(weights.w2 * d * d))
    gs = regularizer_value(coeffs, _aleph(bank), xi)
    if dnorm > 0:
        nse = data / dnorm
    else:
        nse = 0.0 if data == 0 else math.inf
    reg = lam * gs if lam > 0 else 0.0
    return data + reg, nse, gs


def solve(
    d_obs,
    bank: KernelBank,
    weights: Optional[WeightMaps] = None,
    cfg: Optional[SolveConfig] = None,
    a0: Optional[PsdrStack] = None,
    callback=None,
) -> tuple[PsdrStack, SolveLog]:
    """Run the accelerated proximal gradient loop for ``cfg.iters`` iterations.

    ``callback(i, a)``, if given, is called with every iterate.
    """
    cfg = cfg or SolveConfig()
    d = d_obs.data if hasattr(d_obs, "data") else np.asarray(d_obs, dtype=np.float64)
    if weights is None:
        weights = WeightMaps.ones(d.shape)
    if weights.w2.shape != d.shape:
        raise ValueError("observation and weight maps differ in shape")
    shape = (bank.K, *d.shape)
    a = np.zeros(shape) if a0 is None else np.array(a0.coeffs, dtype=np.float64)
    if a.shape != shape:
        raise ValueError(f"initial stack has shape {a.shape}, expected {shape}")
    a *= weights.mu

    eta = step_size(bank, weights, cfg)
    xi = None if cfg.xi is None else np.asarray(cfg.xi, dtype=np.float64)
    threshold = 0.5 * eta * cfg.lam
    aleph = _aleph(bank)

    history = SolveLog(eta=eta)

    def record(i, x):
        c, n, g = cost(x, d, bank, weights, cfg.lam, cfg.approx, xi)
        if not math.isfinite(c):
            raise DivergenceError(f"non-finite cost at iteration {i} (eta={eta:.4g})")
        history.append(i, c, n, g)
        return c

    record(0, a)
    window = []
    a_prev = a.copy()
    b = a.copy()
    t = 1.0
    for i in range(1, cfg.iters + 1):
        t, alpha = fista_momentum(t, cfg.momentum)
        grad = diffop.adjoint(bank, diffop.forward(bank, b, cfg.approx) - d, weights, cfg.approx)
        a_new = apply_prox_stack(b - eta * grad, threshold, aleph, xi, cfg.prox_mode, weights.mu)
        b = a_new + alpha * (a_new - a_prev) if alpha else a_new.copy()
        a_prev = a_new
        if callback is not None:
            callback(i, a_new)
        if i % cfg.log_every == 0 or i == cfg.iters:
            c = record(i, a_new)
            if cfg.tol_rel_cost is not None:
                window.append((i, c))
                while window and window[0][0] < i - 50:
                    window.pop(0)
                if len(window) > 1 and i >= 50:
                    c0 = window[0][1]
                    if abs(c0 - c) <= cfg.tol_rel_cost * max(abs(c0), 1e-300):
                        log.info("early stop at iteration %d", i)
                        break
    return PsdrStack(a_prev, bank.sigma), history
