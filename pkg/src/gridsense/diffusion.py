"""Discrete (two-state) diffusion over node and edge categories.

States are arrays of 0/1 categories.  Edge states are stored for ``i < j``
only, in ``np.triu_indices(n, 1)`` order; any leading batch dimensions are
carried through unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

D = 2


@dataclass(frozen=True)
class DiffusionSchedule:
    """Uniform transition matrices ``Q^t = a_t I + (1 - a_t) 11'/2``.

    ``Q[t]`` and ``Qbar[t]`` are indexed by the step ``t`` itself; index 0 of
    ``Q`` is unused (identity) and ``Qbar[0] = I``.
    """

    alpha: np.ndarray  # (T + 1,), alpha[0] = 1
    Q: np.ndarray  # (T + 1, 2, 2)
    Qbar: np.ndarray  # (T + 1, 2, 2)

    @property
    def T(self) -> int:
        return len(self.alpha) - 1

    # nodes and edges share one transition family
    @property
    def Qv(self) -> np.ndarray:
        return self.Q

    @property
    def Qe(self) -> np.ndarray:
        return self.Q

    @property
    def Qv_bar(self) -> np.ndarray:
        return self.Qbar

    @property
    def Qe_bar(self) -> np.ndarray:
        return self.Qbar

    @classmethod
    def from_alphas(cls, alphas) -> "DiffusionSchedule":
        a = np.clip(np.asarray(alphas, dtype=float), 0.0, 1.0)
        if a.ndim != 1 or len(a) < 1:
            raise ValueError("need at least one step")
        alpha = np.concatenate([[1.0], a])
        uniform = np.full((D, D), 1.0 / D)
        Q = alpha[:, None, None] * np.eye(D) + (1.0 - alpha[:, None, None]) * uniform
        Qbar = np.empty_like(Q)
        Qbar[0] = np.eye(D)
        for t in range(1, len(alpha)):
            Qbar[t] = Qbar[t - 1] @ Q[t]
        return cls(alpha, Q, Qbar)


def make_schedule(T: int, kind: str = "cosine") -> DiffusionSchedule:
    """Per-step alphas whose running product falls from 1 to 0 at ``t = T``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    t = np.arange(T + 1) / T
    if kind == "cosine":
        s = 0.008
        abar = np.cos((t + s) / (1 + s) * math.pi / 2) ** 2
        abar = abar / abar[0]
    elif kind == "linear":
        abar = 1.0 - t
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    abar[-1] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        alphas = np.where(abar[:-1] > 0, abar[1:] / abar[:-1], 0.0)
    return DiffusionSchedule.from_alphas(alphas)


@dataclass
class GraphState:
    node_states: np.ndarray  # (..., n)
    edge_states: np.ndarray  # (..., n(n-1)/2)
    t: int

    @property
    def n(self) -> int:
        return self.node_states.shape[-1]

    def adjacency(self) -> np.ndarray:
        n = self.n
        A = np.zeros(self.edge_states.shape[:-1] + (n, n), dtype=np.uint8)
        iu = np.triu_indices(n, 1)
        A[..., iu[0], iu[1]] = self.edge_states
        A[..., iu[1], iu[0]] = self.edge_states
        return A


def num_pairs(n: int) -> int:
    return n * (n - 1) // 2


def sample_prior(n: int, rng: np.random.Generator, batch: tuple[int, ...] = (), T: int = 0) -> GraphState:
    """Independent fair coins on every node and edge (the uniform limit)."""
    return GraphState(
        rng.integers(0, 2, size=batch + (n,)).astype(np.int8),
        rng.integers(0, 2, size=batch + (num_pairs(n),)).astype(np.int8),
        T,
    )


def _sample_binary(p1: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(p1.shape) < p1).astype(np.int8)


def forward_sample(g0: GraphState, sched: DiffusionSchedule, t: int, rng: np.random.Generator) -> GraphState:
    """Draw ``G^t ~ q(G^t | G^0)`` using the rows of ``Qbar[t]``."""
    if g0.t != 0:
        raise ValueError("forward sampling starts from t = 0")
    if not 1 <= t <= sched.T:
        raise ValueError(f"t must lie in [1, {sched.T}]")
    qb = sched.Qbar[t]
    nodes = _sample_binary(qb[g0.node_states, 1], rng)
    edges = _sample_binary(qb[g0.edge_states, 1], rng)
    return GraphState(nodes, edges, t)


def posterior(z_t: int, z0: int, sched: DiffusionSchedule, t: int) -> np.ndarray:
    """``q(z^{t-1} | z^t, z^0)``, proportional to ``Q^t[:, z_t] * Qbar^{t-1}[z0, :]``."""
    if not 1 <= t <= sched.T:
        raise ValueError(f"t must lie in [1, {sched.T}]")
    un = sched.Q[t][:, z_t] * sched.Qbar[t - 1][z0, :]
    z = un.sum()
    if z <= 0:
        raise ValueError("zero normalizer")
    return un / z


def posterior_table(sched: DiffusionSchedule, t: int) -> np.ndarray:
    """``P[z_t, z0, z_prev]`` for every state combination at step ``t``.

    Combinations that are impossible (zero normalizer, only when ``alpha = 1``)
    fall back to staying at ``z_t``.
    """
    P = np.empty((D, D, D))
    for zt in range(D):
        for z0 in range(D):
            un = sched.Q[t][:, zt] * sched.Qbar[t - 1][z0, :]
            s = un.sum()
            P[zt, z0] = un / s if s > 0 else np.eye(D)[zt]
    return P


def step_distribution(g_t: GraphState, node_pred: np.ndarray, edge_pred: np.ndarray, sched: DiffusionSchedule):
    """Per-element ``p(z^{t-1} | G^t)`` as a mixture of posteriors weighted by the predictions."""
    P = posterior_table(sched, g_t.t)
    node_post = P[g_t.node_states]  # (..., n, z0, z_prev)
    edge_post = P[g_t.edge_states]
    node_p = np.einsum("...k,...kj->...j", node_pred, node_post)
    edge_p = np.einsum("...k,...kj->...j", edge_pred, edge_post)
    return node_p, edge_p


def _check_rows(p: np.ndarray, what: str) -> None:
    if p.shape[-1] != D or np.any(p < -1e-12) or np.any(np.abs(p.sum(-1) - 1.0) > 1e-6):
        raise ValueError(f"invalid {what} prediction rows")


def denoise_step(
    g_t: GraphState,
    node_pred: np.ndarray,
    edge_pred: np.ndarray,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
) -> GraphState:
    """Sample ``G^{t-1}`` independently per node and edge from the posterior mixture."""
    if not 1 <= g_t.t <= sched.T:
        raise ValueError(f"t must lie in [1, {sched.T}]")
    _check_rows(node_pred, "node")
    _check_rows(edge_pred, "edge")
    node_p, edge_p = step_distribution(g_t, node_pred, edge_pred, sched)
    return GraphState(_sample_binary(node_p[..., 1], rng), _sample_binary(edge_p[..., 1], rng), g_t.t - 1)


def step_log_prob(g_prev: GraphState, node_p: np.ndarray, edge_p: np.ndarray) -> np.ndarray:
    """Factorized log-probability of ``g_prev`` under per-element distributions."""
    ln = np.log(np.take_along_axis(node_p, g_prev.node_states[..., None].astype(int), -1)[..., 0])
    le = np.log(np.take_along_axis(edge_p, g_prev.edge_states[..., None].astype(int), -1)[..., 0])
    return ln.sum(-1) + le.sum(-1)
