"""Greedy-Accuracy, Greedy-Robustness and Random placement baselines."""

from __future__ import annotations

import numpy as np

from .placement import PlacementGraph, refine
from .problem import ProblemContext
from .spectral import algebraic_connectivity


def _with_links(n: int, nodes, feasible: np.ndarray) -> PlacementGraph:
    sel = np.zeros(n, dtype=np.uint8)
    sel[list(nodes)] = 1
    mask = sel.astype(bool)
    adj = feasible & mask[:, None] & mask[None, :]
    return PlacementGraph(sel, adj.astype(np.uint8))


def greedy_accuracy(problem: ProblemContext, N: int) -> PlacementGraph:
    """Add the node with the largest detection gain until ``N`` nodes or no positive gain.

    The first node is always taken (the best standalone sensor, lowest index on
    ties), then every feasible link among the chosen nodes is switched on.
    """
    lam = problem.detection.lambda_a
    chosen: list[int] = []
    current = 0.0
    while len(chosen) < min(N, problem.n):
        rest = [i for i in range(problem.n) if i not in chosen]
        gains = [problem.table.detection_score(chosen + [i], lam) for i in rest]
        k = int(np.argmax(gains))
        if chosen and gains[k] <= current:
            break
        assert gains[k] >= current - 1e-12, "detection score must not decrease"
        chosen.append(rest[k])
        current = gains[k]
    p = _with_links(problem.n, chosen, problem.layer.feasible_links())
    return refine(p, problem.layer)


def greedy_robustness(problem: ProblemContext, N: int) -> PlacementGraph:
    """Grow from the best feasible pair, each time adding the node that maximizes lambda_2.

    A new node brings all of its feasible links to the chosen set (adding links
    never lowers lambda_2).  The starting pair is the feasible pair with the
    lowest path loss, lowest indices on ties.
    """
    feas = problem.layer.feasible_links()
    if not feas.any():
        raise ValueError("no feasible links")
    pl = problem.layer.path_loss_matrix()
    i, j = np.nonzero(np.triu(feas, 1))
    k = int(np.lexsort((j, i, pl[i, j]))[0])
    chosen = [int(i[k]), int(j[k])]
    while len(chosen) < min(N, problem.n):
        rest = [v for v in range(problem.n) if v not in chosen]
        scores = []
        for v in rest:
            idx = chosen + [v]
            scores.append(algebraic_connectivity(feas[np.ix_(idx, idx)].astype(float)))
        chosen.append(rest[int(np.argmax(scores))])
    return refine(_with_links(problem.n, chosen, feas), problem.layer)


def random_placement(problem: ProblemContext, N: int, rng: np.random.Generator) -> PlacementGraph:
    """``N`` nodes without replacement; each feasible link among them kept with probability 0.5."""
    n = problem.n
    nodes = rng.choice(n, size=min(N, n), replace=False)
    p = _with_links(n, nodes, problem.layer.feasible_links())
    coin = np.triu(rng.random((n, n)) < 0.5, 1)
    adj = p.adj.astype(bool) & (coin | coin.T)
    return refine(PlacementGraph(p.node_sel, adj.astype(np.uint8)), problem.layer)


BASELINES = {
    "greedy-accuracy": lambda problem, N, rng: greedy_accuracy(problem, N),
    "greedy-robustness": lambda problem, N, rng: greedy_robustness(problem, N),
    "random": random_placement,
}


def run_baseline(which: str, problem: ProblemContext, N: int, rng: np.random.Generator) -> PlacementGraph:
    if which not in BASELINES:
        raise ValueError(f"unknown baseline {which!r}; choose from {sorted(BASELINES)}")
    return BASELINES[which](problem, N, rng)
