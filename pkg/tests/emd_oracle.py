"""Exhaustive basic-feasible-solution oracle for small transportation problems.

Every basis of a balanced m x n transportation polytope is a set of m + n - 1
cells whose incidence matrix is nonsingular (a spanning tree of the bipartite
graph). The optimum of the LP is attained at one of them, so solving each
basis system and keeping the cheapest non-negative one gives the exact value.
"""

import itertools

import numpy as np


def enumerate_bases(supply, demand, C, tol=1e-12):
    supply = np.asarray(supply, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    m, n = C.shape
    cells = [(i, j) for i in range(m) for j in range(n)]
    k = m + n - 1
    subsets = np.array(list(itertools.combinations(range(m * n), k)))
    # equations: m row sums and the first n - 1 column sums (the last is implied by balance)
    A = np.zeros((len(subsets), k, k))
    for col in range(k):
        idx = subsets[:, col]
        ii, jj = idx // n, idx % n
        A[np.arange(len(subsets)), ii, col] = 1.0
        has = jj < n - 1
        A[np.arange(len(subsets))[has], m + jj[has], col] = 1.0
    rhs = np.concatenate([supply, demand[:-1]])
    nonsingular = np.abs(np.linalg.det(A)) > 0.5  # incidence matrices are totally unimodular
    A, subsets = A[nonsingular], subsets[nonsingular]
    flows = np.linalg.solve(A, np.broadcast_to(rhs, (len(A), k))[..., None])[..., 0]
    scale = max(supply.sum(), 1.0)
    feasible = np.all(flows >= -tol * scale, axis=1)
    costs = np.array([C[i, j] for i, j in cells])
    obj = np.sum(flows * costs[subsets], axis=1)
    return float(obj[feasible].min())


def random_instance(rng, max_side=4):
    m, n = (int(v) for v in rng.integers(1, max_side + 1, size=2))
    src = rng.choice(100, size=m, replace=False)
    dst = rng.choice(100, size=n, replace=False)
    supply = rng.uniform(0.1, 1.0, size=m)
    demand = rng.uniform(0.1, 1.0, size=n)
    demand *= supply.sum() / demand.sum()
    return np.stack(np.divmod(src, 10), axis=1), supply, np.stack(np.divmod(dst, 10), axis=1), demand
