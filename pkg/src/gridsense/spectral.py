"""Graph Laplacians, algebraic connectivity and the Cheeger constant."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

MAX_EXACT_CHEEGER = 16


@dataclass(frozen=True)
class GraphMatrixBundle:
    adjacency: np.ndarray
    degree: np.ndarray
    laplacian: np.ndarray
    normalized_laplacian: np.ndarray

    @property
    def n(self) -> int:
        return len(self.adjacency)


def build_bundle(adjacency) -> GraphMatrixBundle:
    A = np.asarray(adjacency)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.all((A == 0) | (A == 1)):
        raise ValueError("adjacency must be binary")
    if not np.array_equal(A, A.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(A) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    A = A.astype(float)
    deg = A.sum(axis=1)
    L = np.diag(deg) - A
    # isolated nodes get a zero entry in D^{-1/2}
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    NL = inv_sqrt[:, None] * L * inv_sqrt[None, :]
    return GraphMatrixBundle(A, np.diag(deg), L, NL)


def fiedler_value(bundle: GraphMatrixBundle, normalized: bool = False) -> float:
    """Second-smallest eigenvalue of the (normalized) Laplacian."""
    if bundle.n < 2:
        raise ValueError("Fiedler value needs at least 2 nodes")
    M = bundle.normalized_laplacian if normalized else bundle.laplacian
    return float(np.linalg.eigvalsh(M)[1])


def algebraic_connectivity(adjacency) -> float:
    """Unnormalized lambda_2 of a 0/1 adjacency; 0 for fewer than two nodes."""
    A = np.asarray(adjacency, dtype=float)
    if len(A) < 2:
        return 0.0
    L = np.diag(A.sum(axis=1)) - A
    return float(np.linalg.eigvalsh(L)[1])


def cheeger_bruteforce(bundle: GraphMatrixBundle) -> float:
    """Exact Cheeger constant by enumerating every bipartition."""
    n = bundle.n
    if n > MAX_EXACT_CHEEGER:
        raise ValueError("too large for exact Cheeger")
    A = bundle.adjacency
    if A.sum() == 0:
        raise ValueError("graph has no edges")
    deg = A.sum(axis=1)
    total = deg.sum()
    best = np.inf
    # node n-1 is pinned to the complement so each bipartition is visited once
    for size in range(1, n):
        for subset in combinations(range(n - 1), size):
            mask = np.zeros(n, dtype=bool)
            mask[list(subset)] = True
            vol = deg[mask].sum()
            denom = min(vol, total - vol)
            if denom == 0:
                continue
            cut = A[np.ix_(mask, ~mask)].sum()
            best = min(best, cut / denom)
    return float(best)


def cheeger_bounds(bundle: GraphMatrixBundle) -> tuple[float, float]:
    lam = max(fiedler_value(bundle, normalized=True), 0.0)
    return lam / 2.0, float(np.sqrt(2.0 * lam))
