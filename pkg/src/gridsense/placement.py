"""Sensor placement graphs, feasibility refinement and the penalty reward."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cyber import CyberLayer
from .spectral import algebraic_connectivity


@dataclass(frozen=True)
class RewardConfig:
    r1: float = 5000.0
    r2: float = 1.075
    r3: float = 0.5
    N: int = 25
    lambda_s: float = 0.90
    lambda_c: float = 75.0

    def __post_init__(self):
        if min(self.r1, self.r2, self.r3, self.N, self.lambda_c) <= 0:
            raise ValueError("reward weights, budget and lambda_c must be positive")
        if not 0 < self.lambda_s <= 1:
            raise ValueError("lambda_s must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class PlacementGraph:
    node_sel: np.ndarray  # (n,) uint8
    adj: np.ndarray  # (n, n) uint8, symmetric

    def __post_init__(self):
        object.__setattr__(self, "node_sel", np.asarray(self.node_sel, dtype=np.uint8))
        object.__setattr__(self, "adj", np.asarray(self.adj, dtype=np.uint8))

    @property
    def n(self) -> int:
        return len(self.node_sel)

    @property
    def nodes(self) -> list[int]:
        return np.flatnonzero(self.node_sel).tolist()

    @property
    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adj, 1))
        return list(zip(i.tolist(), j.tolist()))

    @property
    def size(self) -> int:
        return int(self.node_sel.sum())

    def vector(self) -> np.ndarray:
        """Node selection followed by the upper-triangular adjacency, as 0/1 floats."""
        iu = np.triu_indices(self.n, 1)
        return np.concatenate([self.node_sel, self.adj[iu]]).astype(float)

    def key(self) -> bytes:
        return self.node_sel.tobytes() + np.packbits(self.adj[np.triu_indices(self.n, 1)]).tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, PlacementGraph):
            return NotImplemented
        return np.array_equal(self.node_sel, other.node_sel) and np.array_equal(self.adj, other.adj)

    def __hash__(self) -> int:
        return hash(self.key())

    def is_valid(self) -> bool:
        a = self.adj
        if not np.array_equal(a, a.T) or np.any(np.diag(a)):
            return False
        i, j = np.nonzero(a)
        return bool(np.all(self.node_sel[i]) and np.all(self.node_sel[j]))

    def selected_adjacency(self) -> np.ndarray:
        idx = self.nodes
        return self.adj[np.ix_(idx, idx)]

    def fiedler(self) -> float:
        """lambda_2 of the unnormalized Laplacian on the selected nodes; 0 below two nodes."""
        if self.size < 2:
            return 0.0
        return max(algebraic_connectivity(self.selected_adjacency()), 0.0)

    def to_dict(self) -> dict:
        return {"n": self.n, "nodes": self.nodes, "edges": [list(e) for e in self.edges]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PlacementGraph":
        n = d["n"]
        sel = np.zeros(n, dtype=np.uint8)
        sel[d["nodes"]] = 1
        adj = np.zeros((n, n), dtype=np.uint8)
        for i, j in d["edges"]:
            adj[i, j] = adj[j, i] = 1
        return cls(sel, adj)

    @classmethod
    def from_json(cls, text: str) -> "PlacementGraph":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_parts(cls, n: int, nodes, edges=()) -> "PlacementGraph":
        return cls.from_dict({"n": n, "nodes": list(nodes), "edges": [list(e) for e in edges]})


def refine(raw: PlacementGraph, layer: CyberLayer, shadowing: Optional[np.ndarray] = None) -> PlacementGraph:
    """Project a raw graph onto the feasible set.

    Symmetrize by OR, clear the diagonal, drop edges at unselected nodes and
    drop links whose path loss under ``shadowing`` exceeds the threshold.
    """
    sel = raw.node_sel.astype(bool)
    a = (raw.adj != 0) | (raw.adj.T != 0)
    np.fill_diagonal(a, False)
    a &= sel[:, None] & sel[None, :]
    a &= layer.feasible_links(shadowing)
    return PlacementGraph(sel.astype(np.uint8), a.astype(np.uint8))


def check_constraints(p: PlacementGraph, S_a: float, cfg: RewardConfig) -> tuple[int, int]:
    return int(p.size <= cfg.N), int(S_a >= cfg.lambda_s)


def reward(p: PlacementGraph, S_a: float, cfg: RewardConfig) -> float:
    """``r1 * lambda_2`` when both constraints hold, otherwise the linear penalty.

    The penalty is used verbatim, so with a slack budget it can be positive.
    """
    i1, i2 = check_constraints(p, S_a, cfg)
    if i1 * i2 == 1:
        return cfg.r1 * p.fiedler()
    return -cfg.r2 * (p.size - cfg.N) - cfg.r3 * (cfg.lambda_s - S_a)
