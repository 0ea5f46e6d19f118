"""Earth mover's distance between spatial particle distributions.

The balanced transportation problem with Euclidean pixel costs is solved
exactly by the transportation simplex (MODI / u-v method): a north-west
corner start and duals read off the basis spanning tree. The most negative
reduced cost enters; after a degenerate pivot the rule switches to Bland's
smallest index until the objective moves again, so the method cannot cycle.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .tensorio import PsdrStack

__all__ = [
    "SpatialDistribution",
    "TransportPlan",
    "EMDError",
    "psdr_to_distribution",
    "transport_simplex",
    "emd",
    "emd_report",
]


class EMDError(ValueError):
    pass


@dataclass
class SpatialDistribution:
    support: np.ndarray  # (n, 2) integer pixel positions
    mass: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.int64).reshape(-1, 2)
        self.mass = np.asarray(self.mass, dtype=np.float64).ravel()
        if self.support.shape[0] != self.mass.size:
            raise ValueError("support and mass lengths differ")
        if np.any(~(self.mass > 0)):
            raise ValueError("masses must be positive and finite")

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def __len__(self):
        return self.mass.size

    def shifted(self, dr: int, dc: int) -> "SpatialDistribution":
        return SpatialDistribution(self.support + np.array([dr, dc]), self.mass.copy())


@dataclass
class TransportPlan:
    i: np.ndarray
    j: np.ndarray
    flow: np.ndarray
    objective: float
    u: np.ndarray
    v: np.ndarray
    pivots: int = 0

    def dense(self, m: int, n: int) -> np.ndarray:
        F = np.zeros((m, n))
        F[self.i, self.j] = self.flow
        return F

    def to_csv(self, path, src: SpatialDistribution, dst: SpatialDistribution) -> None:
        with open(path, "w") as fh:
            fh.write("i_row,i_col,j_row,j_col,flow\n")
            for a, b, f in zip(self.i, self.j, self.flow):
                if f > 0:
                    r0, c0 = src.support[a]
                    r1, c1 = dst.support[b]
                    fh.write(f"{r0},{c0},{r1},{c1},{f:.12g}\n")


def psdr_to_distribution(a: PsdrStack, normalize_to: float, prune_eps: float = 1e-8) -> SpatialDistribution:
    """Per-pixel mass ``sum_k sqrt(Delta_k) coeffs[k]``, pruned and rescaled to ``normalize_to``.

    Pixels below ``prune_eps * max`` are dropped before rescaling.
    """
    if not normalize_to > 0:
        raise ValueError("normalize_to must be positive")
    mass = a.spatial_mass()
    peak = float(mass.max()) if mass.size else 0.0
    if not peak > 0:
        raise EMDError("stack has zero total mass")
    keep = mass > max(prune_eps * peak, 0.0)
    rows, cols = np.nonzero(keep)
    w = mass[rows, cols]
    w = w * (normalize_to / w.sum())
    return SpatialDistribution(np.stack([rows, cols], axis=1), w)


def _northwest_corner(supply, demand):
    """Initial basic feasible solution with exactly m + n - 1 basic cells (a spanning tree)."""
    m, n = supply.size, demand.size
    a, b = supply.copy(), demand.copy()
    basis, flow = [], []
    i = j = 0
    while i < m and j < n:
        x = min(a[i], b[j])
        basis.append((i, j))
        flow.append(x)
        a[i] -= x
        b[j] -= x
        if i == m - 1 and j == n - 1:
            break
        # on a tie advance the row only, so the next cell carries a degenerate zero
        if (a[i] <= b[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return basis, flow


def _duals(m, n, adj, C):
    """Solve u_i + v_j = c_ij on the basis tree with u_0 = 0. Nodes: rows 0..m-1, cols m..m+n-1."""
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    q = deque([0])
    while q:
        x = q.popleft()
        for y in adj[x]:
            if np.isnan(pot[y]):
                if x < m:
                    pot[y] = C[x, y - m] - pot[x]
                else:
                    pot[y] = C[y, x - m] - pot[x]
                q.append(y)
    return pot[:m], pot[m:]


def _tree_path(adj, start, goal, total):
    prev = np.full(total, -1)
    prev[start] = start
    q = deque([start])
    while q:
        x = q.popleft()
        if x == goal:
            break
        for y in adj[x]:
            if prev[y] < 0:
                prev[y] = x
                q.append(y)
    path = [goal]
    while path[-1] != start:
        path.append(int(prev[path[-1]]))
    return path[::-1]


def transport_simplex(supply, demand, C, tol: Optional[float] = None, max_pivots: int = 1_000_000) -> TransportPlan:
    """Exact minimum-cost balanced transportation plan.

    ``supply`` (m), ``demand`` (n) and ``C`` (m x n); totals must agree to
    1e-6 relative. Returns the plan with the optimal duals ``u``, ``v``.
    """
    supply = np.asarray(supply, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    m, n = supply.size, demand.size
    if m == 0 or n == 0:
        raise EMDError("empty support")
    if C.shape != (m, n):
        raise ValueError("cost matrix shape does not match supports")
    total = supply.sum()
    if abs(total - demand.sum()) > 1e-6 * max(total, demand.sum()):
        raise EMDError(f"unbalanced totals {total} vs {demand.sum()}")
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.abs(C).max()))

    basis, flow = _northwest_corner(supply, demand)
    X = {cell: f for cell, f in zip(basis, flow)}
    adj = [set() for _ in range(m + n)]
    for i, j in basis:
        adj[i].add(m + j)
        adj[m + j].add(i)
    is_basic = np.zeros((m, n), dtype=bool)
    for i, j in basis:
        is_basic[i, j] = True

    pivots = 0
    bland = False
    while True:
        u, v = _duals(m, n, adj, C)
        red = C - u[:, None] - v[None, :]
        red[is_basic] = 0.0
        neg = np.flatnonzero(red.ravel() < -tol)
        if neg.size == 0:
            break
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("transportation simplex exceeded the pivot limit")
        if bland:
            ei, ej = divmod(int(neg[0]), n)
        else:
            ei, ej = divmod(int(np.argmin(red)), n)
        path = _tree_path(adj, m + ej, ei, m + n)  # column ej -> row ei in the tree
        # the cycle is entering cell (ei, ej) followed by the tree path; cells alternate -, +, -, ...
        cells = []
        for a, b in zip(path[:-1], path[1:]):
            cells.append((a, b - m) if a < m else (b, a - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(X[c] for c in minus)
        bland = theta == 0.0
        leaving = min((c for c in minus if X[c] == theta), key=lambda c: c[0] * n + c[1])
        for c in minus:
            X[c] -= theta
        for c in plus:
            X[c] += theta
        X[(ei, ej)] = theta
        del X[leaving]
        li, lj = leaving
        adj[li].discard(m + lj)
        adj[m + lj].discard(li)
        adj[ei].add(m + ej)
        adj[m + ej].add(ei)
        is_basic[li, lj] = False
        is_basic[ei, ej] = True

    cells = sorted(X)
    ii = np.array([c[0] for c in cells], dtype=np.int64)
    jj = np.array([c[1] for c in cells], dtype=np.int64)
    ff = np.array([X[c] for c in cells], dtype=np.float64)
    obj = float(np.sum(ff * C[ii, jj]))
    return TransportPlan(ii, jj, ff, obj, u, v, pivots)


def emd(p_hat: SpatialDistribution, p_true: SpatialDistribution) -> tuple[float, TransportPlan]:
    """Earth mover's distance in pixels (objective per unit mass) and the optimal plan."""
    if len(p_hat) == 0 or len(p_true) == 0:
        raise EMDError("empty support")
    diff = p_hat.support[:, None, :].astype(np.float64) - p_true.support[None, :, :]
    C = np.sqrt(np.sum(diff * diff, axis=2))
    plan = transport_simplex(p_hat.mass, p_true.mass, C)
    return plan.objective / p_hat.total, plan


def emd_report(value: float, p_hat: SpatialDistribution, p_true: SpatialDistribution) -> dict:
    return {
        "emd_pixels": float(value),
        "total_mass": p_true.total,
        "support_sizes": [len(p_hat), len(p_true)],
    }


def save_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
