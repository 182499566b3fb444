"""Wireless cyber layer: node embedding, log-normal shadowing path loss, link activation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .grid import PowerGrid


@dataclass(frozen=True)
class PathLossParams:
    d0: float = 1.0
    bpl_d0: float = 40.3308
    gamma: float = 1.701
    sigma_shadow: float = 2.18
    pt_dbm: float = 10.0
    pn_dbm: float = -90.0
    lambda_c: float = 75.0

    def __post_init__(self):
        if self.d0 <= 0 or self.gamma <= 0 or self.sigma_shadow < 0:
            raise ValueError("path loss params need d0 > 0, gamma > 0, sigma_shadow >= 0")


@dataclass
class CyberLayer:
    coords: np.ndarray
    dist: np.ndarray
    params: PathLossParams = field(default_factory=PathLossParams)
    candidate: Optional[np.ndarray] = None  # n x n bool; None means every pair

    def __post_init__(self):
        n = len(self.dist)
        if self.candidate is None:
            self.candidate = ~np.eye(n, dtype=bool)
        else:
            self.candidate = np.asarray(self.candidate, dtype=bool) & ~np.eye(n, dtype=bool)
            self.candidate = self.candidate | self.candidate.T

    @property
    def n(self) -> int:
        return len(self.dist)

    @property
    def candidate_edges(self) -> set[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.candidate, 1))
        return set(zip(iu.tolist(), ju.tolist()))

    def path_loss_matrix(self, shadowing: Optional[np.ndarray] = None) -> np.ndarray:
        """Path loss for every pair; the diagonal is ``inf``."""
        p = self.params
        with np.errstate(divide="ignore"):
            pl = p.bpl_d0 + 10.0 * p.gamma * np.log10(self.dist / p.d0)
        if shadowing is not None:
            pl = pl + shadowing
        pl = np.where(self.dist > 0, pl, np.inf)
        np.fill_diagonal(pl, np.inf)
        return pl

    def feasible_links(self, shadowing: Optional[np.ndarray] = None) -> np.ndarray:
        """Boolean n x n matrix of ``link_state`` over all pairs."""
        return (self.path_loss_matrix(shadowing) <= self.params.lambda_c) & self.candidate


def mds_embed(distances: np.ndarray, dim: int = 2) -> np.ndarray:
    """Classical MDS.  Negative eigenvalues are clamped to zero."""
    D = np.asarray(distances, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1] or not np.allclose(D, D.T):
        raise ValueError("distance matrix must be square and symmetric")
    n = len(D)
    H = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * H @ (D**2) @ H
    evals, evecs = np.linalg.eigh((B + B.T) / 2)
    order = np.argsort(evals)[::-1][:dim]
    lam = np.clip(evals[order], 0.0, None)
    X = evecs[:, order] * np.sqrt(lam)
    if X.shape[1] < dim:
        X = np.hstack([X, np.zeros((n, dim - X.shape[1]))])
    return X


def resistance_distances(grid: PowerGrid, meters_per_ohm: float = 1000.0) -> np.ndarray:
    """Shortest-path completion of branch lengths ``|1/y| * meters_per_ohm``."""
    w = np.abs(1.0 / grid.admittance) * meters_per_ohm
    a = coo_matrix((w, (grid.edge_from, grid.edge_to)), shape=(grid.n, grid.n)).tocsr()
    return shortest_path(a, directed=False)


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def build_layer(
    grid: PowerGrid,
    params: Optional[PathLossParams] = None,
    median_distance_m: Optional[float] = 110.0,
    meters_per_ohm: float = 1000.0,
    candidate: Optional[np.ndarray] = None,
) -> CyberLayer:
    """Embed the grid in the plane from branch impedances.

    With ``median_distance_m`` set, impedance lengths are rescaled so the
    median pairwise resistance distance equals that many meters; otherwise
    ``meters_per_ohm`` is applied as is.
    """
    R = resistance_distances(grid, 1.0)
    if median_distance_m is not None:
        med = np.median(R[np.triu_indices(grid.n, 1)])
        scale = median_distance_m / med
    else:
        scale = meters_per_ohm
    coords = mds_embed(R * scale)
    return CyberLayer(coords, pairwise_distances(coords), params or PathLossParams(), candidate)


def path_loss(layer: CyberLayer, i: int, j: int, shadowing: float = 0.0) -> float:
    if i == j:
        raise ValueError("path loss needs two distinct nodes")
    d = layer.dist[i, j]
    if d <= 0:
        raise ValueError("coincident nodes")
    p = layer.params
    return p.bpl_d0 + 10.0 * p.gamma * np.log10(d / p.d0) + shadowing


def snr(layer: CyberLayer, i: int, j: int, shadowing: float = 0.0) -> float:
    return layer.params.pt_dbm - path_loss(layer, i, j, shadowing) - layer.params.pn_dbm


def link_state(layer: CyberLayer, i: int, j: int, shadowing: float = 0.0) -> int:
    if not layer.candidate[i, j]:
        return 0
    return int(path_loss(layer, i, j, shadowing) <= layer.params.lambda_c)


def draw_shadowing(n: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """One symmetric realization of the shadowing term for every pair."""
    x = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    x[iu] = rng.normal(0.0, sigma, size=len(iu[0]))
    return x + x.T
