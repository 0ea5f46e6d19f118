"""Detection from a recovered stack: pseudo-likelihood map, local maxima, matching.

Candidates are the 8-connected local maxima of the per-pixel group norm.
Detections are matched greedily, in decreasing pseudo-likelihood, to the
closest still-unmatched true cell within the tolerance; the threshold on the
pseudo-likelihood is then chosen to maximize F1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .tensorio import PsdrStack

__all__ = [
    "DetectionList",
    "MatchReport",
    "pseudo_likelihood",
    "local_maxima",
    "greedy_match",
    "sweep_threshold",
]

_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class DetectionList:
    """Detections sorted by ``p`` descending, ties in row-major order."""

    rows: np.ndarray
    cols: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64).ravel()
        self.cols = np.asarray(self.cols, dtype=np.int64).ravel()
        self.p = np.asarray(self.p, dtype=np.float64).ravel()
        if not (self.rows.size == self.cols.size == self.p.size):
            raise ValueError("rows, cols and p must have equal length")
        order = np.lexsort((self.cols, self.rows, -self.p))
        self.rows, self.cols, self.p = self.rows[order], self.cols[order], self.p[order]

    def __len__(self):
        return self.p.size

    @property
    def positions(self) -> np.ndarray:
        return np.stack([self.rows, self.cols], axis=1)

    def above(self, delta: float) -> "DetectionList":
        keep = self.p > delta
        return DetectionList(self.rows[keep], self.cols[keep], self.p[keep])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("rank,row,col,p\n")
            for i, (r, c, v) in enumerate(zip(self.rows, self.cols, self.p)):
                fh.write(f"{i},{r},{c},{v:.12g}\n")

    @classmethod
    def from_csv(cls, path) -> "DetectionList":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([int(r["row"]) for r in rows], [int(r["col"]) for r in rows], [float(r["p"]) for r in rows])


@dataclass
class MatchReport:
    tp: int
    fp: int
    fn: int
    pre: float
    rec: float
    f1: float
    delta: float = 0.0
    tolerance: float = 3.0

    @classmethod
    def from_counts(cls, tp, fp, fn, delta=0.0, tolerance=3.0) -> "MatchReport":
        pre = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * pre * rec / (pre + rec) if pre + rec else 0.0
        return cls(int(tp), int(fp), int(fn), pre, rec, f1, float(delta), float(tolerance))

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")


def pseudo_likelihood(a: PsdrStack | np.ndarray, aleph=None) -> np.ndarray:
    """Per-pixel Euclidean norm of the regularized-bin fiber."""
    if isinstance(a, PsdrStack):
        coeffs = a.coeffs
        if aleph is None:
            aleph = a.sigma.aleph
    else:
        coeffs = np.asarray(a, dtype=np.float64)
        if aleph is None:
            aleph = range(coeffs.shape[0])
    aleph = list(aleph)
    if not aleph:
        raise ValueError("aleph must be non-empty")
    fib = coeffs[aleph]
    return np.sqrt(np.sum(fib * fib, axis=0))


def local_maxima(p: np.ndarray, min_value: float = 0.0) -> DetectionList:
    """8-connected local maxima of ``p`` with ``p > max(0, min_value)``.

    A pixel qualifies when it is >= all its neighbours and strictly greater than
    at least one (out-of-image neighbours count as -inf). Qualifying pixels that
    form an equal-valued 8-connected plateau are reported once, at their
    lexicographically smallest position.
    """
    p = np.asarray(p, dtype=np.float64)
    M, N = p.shape
    padded = np.pad(p, 1, constant_values=-np.inf)
    shifted = np.stack([padded[1 + dr : 1 + dr + M, 1 + dc : 1 + dc + N] for dr, dc in _NEIGHBOURS])
    is_max = (p > 0) & np.all(p >= shifted, axis=0)
    strict = np.any(p > shifted, axis=0)
    cand = is_max & strict
    if not np.any(cand):
        return DetectionList([], [], [])

    # row-major scan: the first pixel reached in an equal-valued plateau is its smallest
    rows, cols = np.nonzero(cand)
    visited = np.zeros_like(cand)
    keep_r, keep_c, keep_p = [], [], []
    for r, c in zip(rows, cols):
        if visited[r, c]:
            continue
        v = p[r, c]
        visited[r, c] = True
        stack = [(r, c)]
        while stack:
            i, j = stack.pop()
            for dr, dc in _NEIGHBOURS:
                ii, jj = i + dr, j + dc
                if 0 <= ii < M and 0 <= jj < N and cand[ii, jj] and not visited[ii, jj] and p[ii, jj] == v:
                    visited[ii, jj] = True
                    stack.append((ii, jj))
        keep_r.append(r)
        keep_c.append(c)
        keep_p.append(v)
    dets = DetectionList(keep_r, keep_c, keep_p)
    return dets.above(min_value) if min_value > 0 else dets


def _match_flags(dets: DetectionList, truth: np.ndarray, radius: float) -> np.ndarray:
    """Greedy one-to-one matching; returns a TP flag per detection (in list order)."""
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    free = np.ones(truth.shape[0], dtype=bool)
    flags = np.zeros(len(dets), dtype=bool)
    for i in range(len(dets)):
        if not free.any():
            break
        dist = np.hypot(truth[:, 0] - dets.rows[i], truth[:, 1] - dets.cols[i])
        dist[~free] = np.inf
        j = int(np.argmin(dist))  # first minimum: truth-list order breaks ties
        if dist[j] <= radius:
            free[j] = False
            flags[i] = True
    return flags


def greedy_match(dets: DetectionList, truth, rho: float = 3.0, strict_diameter: bool = False, delta: float = 0.0) -> MatchReport:
    """Precision, recall and F1 of ``dets`` against true positions (n x 2).

    A detection matches when an unmatched truth lies within ``rho`` pixels
    (``rho / 2`` with ``strict_diameter``).
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    radius = rho / 2.0 if strict_diameter else rho
    flags = _match_flags(dets, truth, radius)
    tp = int(flags.sum())
    return MatchReport.from_counts(tp, len(dets) - tp, truth.shape[0] - tp, delta, rho)


def sweep_threshold(dets: DetectionList, truth, rho: float = 3.0, strict_diameter: bool = False):
    """Pick the threshold delta (keep ``p > delta``) that maximizes F1.

    Candidates are 0 and every distinct detection value; ties go to the
    larger delta. Returns ``(delta, report, curve)`` with ``curve`` a list of
    ``(delta, f1)`` pairs in increasing delta.
    """
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    radius = rho / 2.0 if strict_diameter else rho
    # kept detections for any delta form a prefix of the sorted list, and the
    # greedy matching of a prefix is the prefix of the full matching
    flags = _match_flags(dets, truth, radius)
    ctp = np.concatenate([[0], np.cumsum(flags)])
    n_truth = truth.shape[0]
    deltas = np.unique(np.concatenate([[0.0], dets.p]))
    curve = []
    best, best_key = None, None
    for delta in deltas:
        kept = int(np.sum(dets.p > delta))
        tp = int(ctp[kept])
        rep = MatchReport.from_counts(tp, kept - tp, n_truth - tp, delta, rho)
        curve.append((float(delta), rep.f1))
        # exact F1 so that ties are not decided by round-off
        key = Fraction(2 * tp, kept + n_truth) if tp else Fraction(0)
        if best is None or key >= best_key:
            best, best_key = rep, key
    return best.delta, best, curve
