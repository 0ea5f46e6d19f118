"""Reference solvers and the randomized battery behind ``invdiff prox-check``.

The oracles do not use the closed forms in :mod:`invdiff.prox`:

* :func:`direct_prox` minimizes ``0.5 ||y - x||^2 + gamma ||xi * y||`` over
  ``y >= 0`` with L-BFGS-B, then polishes with Newton steps on the detected
  support.
* :func:`ellipsoid_projection_pg` projects onto ``{||y / xi|| <= gamma}`` by
  accelerated projected gradient in the variable ``z = y / xi``, where the
  feasible set is a plain ball.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import prox

__all__ = [
    "prox_objective",
    "direct_prox",
    "ellipsoid_projection_pg",
    "SuiteReport",
    "run_prox_suite",
]

log = logging.getLogger(__name__)


def prox_objective(y, x, xi, gamma) -> float:
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        return math.inf
    return 0.5 * float(np.sum((y - x) ** 2)) + gamma * float(np.linalg.norm(xi * y))


def _newton_polish(y, x, xi, gamma, iters=50):
    """Newton on the smooth problem restricted to supp(y); returns None if it leaves the orthant."""
    S = y > 0
    if not S.any():
        return None
    xs, ws, z = x[S], xi[S] ** 2, y[S].copy()
    for _ in range(iters):
        s = math.sqrt(float(np.sum(ws * z * z)))
        if s == 0:
            return None
        g = z - xs + gamma * ws * z / s
        wz = ws * z
        H = np.eye(z.size) + gamma * (np.diag(ws) / s - np.outer(wz, wz) / s**3)
        step = np.linalg.solve(H, g)
        z = z - step
        if np.max(np.abs(step)) <= 1e-15 * max(1.0, np.max(np.abs(z))):
            break
    if np.any(z <= 0):
        return None
    out = np.zeros_like(y)
    out[S] = z
    return out


def direct_prox(x, xi, gamma) -> np.ndarray:
    """Generic numerical minimizer of the non-negative weighted group prox objective."""
    x = np.asarray(x, dtype=np.float64)
    xi = np.broadcast_to(np.asarray(xi, dtype=np.float64), x.shape).copy()

    def fg(y):
        wy = xi * y
        nrm = float(np.linalg.norm(wy))
        f = 0.5 * float(np.sum((y - x) ** 2)) + gamma * nrm
        g = y - x + (gamma * xi * wy / nrm if nrm > 0 else 0.0)
        return f, g

    res = minimize(
        fg,
        np.maximum(x, 0.0),
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None)] * x.size,
        options={"ftol": 1e-16, "gtol": 1e-13, "maxiter": 10000},
    )
    best = np.maximum(res.x, 0.0)
    cands = [best, np.zeros_like(x)]
    thresh = 1e-7 * max(1.0, float(np.max(np.abs(x))))
    pol = _newton_polish(np.where(best > thresh, best, 0.0), x, xi, gamma)
    if pol is not None:
        cands.append(pol)
    return min(cands, key=lambda y: prox_objective(y, x, xi, gamma))


def ellipsoid_projection_pg(x, xi, gamma, iters=200000, tol=1e-14) -> np.ndarray:
    """Projection onto ``{y : ||y / xi|| <= gamma}`` via FISTA on ``z = y / xi`` with a ball constraint."""
    x = np.asarray(x, dtype=np.float64)
    xi = np.broadcast_to(np.asarray(xi, dtype=np.float64), x.shape)
    L = float(np.max(xi) ** 2)

    def ball(z):
        n = np.linalg.norm(z)
        return z if n <= gamma else z * (gamma / n)

    z = ball(x / xi)
    zp, w, t = z, z, 1.0
    for _ in range(iters):
        g = xi * (xi * w - x)
        z_new = ball(w - g / L)
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        w = z_new + ((t - 1) / t_new) * (z_new - z)
        if np.max(np.abs(z_new - z)) <= tol * max(1.0, gamma):
            z = z_new
            break
        z, t = z_new, t_new
    return xi * z


@dataclass
class SuiteReport:
    cases: int
    oracle_cases: int
    max_moreau: float = 0.0
    max_kkt: float = 0.0
    max_feasibility: float = 0.0
    max_ball_vs_oracle: float = 0.0
    max_weighted_vs_oracle: float = 0.0
    max_ball_special_case: float = 0.0
    seconds: float = 0.0
    tolerances: dict = field(default_factory=dict)

    @property
    def checks(self) -> dict:
        t = self.tolerances
        return {
            "moreau": self.max_moreau <= t["moreau"],
            "kkt": self.max_kkt <= t["kkt"],
            "feasibility": self.max_feasibility <= t["feasibility"],
            "ball_vs_oracle": self.max_ball_vs_oracle <= t["oracle"],
            "weighted_vs_oracle": self.max_weighted_vs_oracle <= t["oracle"],
            "ball_special_case": self.max_ball_special_case <= t["special"],
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> list[str]:
        vals = {
            "moreau": self.max_moreau,
            "kkt": self.max_kkt,
            "feasibility": self.max_feasibility,
            "ball_vs_oracle": self.max_ball_vs_oracle,
            "weighted_vs_oracle": self.max_weighted_vs_oracle,
            "ball_special_case": self.max_ball_special_case,
        }
        tol = {
            "moreau": "moreau",
            "kkt": "kkt",
            "feasibility": "feasibility",
            "ball_vs_oracle": "oracle",
            "weighted_vs_oracle": "oracle",
            "ball_special_case": "special",
        }
        out = []
        for name, ok in self.checks.items():
            out.append(f"{'PASS' if ok else 'FAIL'}  {name:<20s} max={vals[name]:.3e}  tol={self.tolerances[tol[name]]:.0e}")
        return out


DEFAULT_TOLERANCES = {"moreau": 1e-8, "kkt": 1e-8, "feasibility": 1e-12, "oracle": 1e-6, "special": 1e-10}


def _random_case(rng):
    n = int(rng.integers(1, 17))
    x = rng.normal(size=n) * rng.choice([0.1, 1.0, 10.0])
    xi = np.exp(rng.uniform(-1.5, 1.5, size=n))
    gamma = float(np.exp(rng.uniform(-3.0, 2.0)))
    return x, xi, gamma


def run_prox_suite(seed: int = 0, cases: int = 10_000, oracle_cases: int = 1000, tolerances=None) -> SuiteReport:
    """Randomized checks of the prox module.

    Every case checks the Moreau identity, the ellipsoid KKT conditions,
    feasibility and the ball special case; the first ``oracle_cases`` cases
    are also compared with :func:`direct_prox`.
    """
    tol = dict(DEFAULT_TOLERANCES)
    if tolerances:
        tol.update(tolerances)
    rng = np.random.default_rng(seed)
    rep = SuiteReport(cases=cases, oracle_cases=min(oracle_cases, cases), tolerances=tol)
    t0 = time.perf_counter()
    for c in range(cases):
        x, xi, gamma = _random_case(rng)
        p = prox.prox_nonneg_group_weighted(x, xi, gamma)
        q = prox.prox_conjugate(x, xi, gamma)
        rep.max_moreau = max(rep.max_moreau, float(np.max(np.abs(p + q - x))))

        xp = prox.positive_part(x)
        y, lam = prox.project_ellipsoid(xp, xi, gamma)
        scale = gamma * gamma
        kkt = abs(lam * (float(np.sum((y / xi) ** 2)) - scale)) / scale
        if lam < 0:
            kkt = math.inf
        rep.max_kkt = max(rep.max_kkt, kkt)
        excess = float(np.linalg.norm(y / xi)) - gamma * (1 + 1e-12)
        rep.max_feasibility = max(rep.max_feasibility, max(excess, 0.0) / gamma)

        b1 = prox.prox_nonneg_group_ball(x, gamma)
        b2 = prox.prox_nonneg_group_weighted(x, np.ones_like(x), gamma)
        rep.max_ball_special_case = max(rep.max_ball_special_case, float(np.max(np.abs(b1 - b2))))

        if c < rep.oracle_cases:
            ob = direct_prox(x, np.ones_like(x), gamma)
            ow = direct_prox(x, xi, gamma)
            rep.max_ball_vs_oracle = max(rep.max_ball_vs_oracle, float(np.max(np.abs(ob - b1))))
            rep.max_weighted_vs_oracle = max(rep.max_weighted_vs_oracle, float(np.max(np.abs(ow - p))))
    rep.seconds = time.perf_counter() - t0
    return rep
