"""Denoising-MDP policy-gradient training (ddpo / gdpo / efgd) with an experience-feedback buffer."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from . import denoiser as dn
from .diffusion import DiffusionSchedule, GraphState, denoise_step, make_schedule, sample_prior
from .placement import PlacementGraph, check_constraints
from .problem import Evaluation, ProblemContext

MODES = ("ddpo", "gdpo", "efgd")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "efgd"
    batch_size: int = 256  # |D|
    timesteps_per_traj: int = 4  # |T_k|, capped at T
    beta: float = 0.2
    learning_rate: float = 1e-5
    epochs: int = 100
    buffer_size: int = 50
    T: int = 20
    schedule: str = "cosine"
    optimizer: str = "sgd"
    hidden: int = 32
    layers: int = 2
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.T < 1 or not 1 <= self.timesteps_per_traj:
            raise ValueError("need T >= 1 and at least one timestep per trajectory")
        if self.batch_size < 2 or self.buffer_size < 1 or self.epochs < 0:
            raise ValueError("need batch_size >= 2, buffer_size >= 1, epochs >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def n_timesteps(self) -> int:
        return min(self.timesteps_per_traj, self.T)

    @property
    def hyper(self) -> dn.DenoiserHyper:
        return dn.DenoiserHyper(self.hidden, self.layers, self.dropout)


@dataclass
class Trajectory:
    states: list[GraphState]  # G^T ... G^0
    timesteps: tuple[int, ...]
    terminal: PlacementGraph  # refined G^0
    reward: float
    S_a: float = 0.0
    feasible: bool = False

    @property
    def g0(self) -> GraphState:
        return self.states[-1]

    def at(self, t: int) -> GraphState:
        return self.states[len(self.states) - 1 - t]

    @property
    def total_reward(self) -> float:
        # only the terminal step is rewarded
        return self.reward


@dataclass
class ExperienceBuffer:
    capacity: int = 50
    entries: list[tuple[PlacementGraph, float, int]] = field(default_factory=list)
    _counter: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def rewards(self) -> list[float]:
        return [r for _, r, _ in self.entries]

    @property
    def min_reward(self) -> float:
        return min(self.rewards) if self.entries else float("nan")

    def add(self, graph: PlacementGraph, r: float) -> None:
        self.add_many([(graph, r)])

    def add_many(self, items) -> None:
        best: dict[bytes, tuple[PlacementGraph, float, int]] = {g.key(): (g, r, o) for g, r, o in self.entries}
        for g, r in items:
            k = g.key()
            if k not in best:
                best[k] = (g, float(r), self._counter)
                self._counter += 1
            elif r > best[k][1]:
                best[k] = (g, float(r), best[k][2])
        ranked = sorted(best.values(), key=lambda e: (-e[1], e[2]))
        self.entries = ranked[: self.capacity]


def update_buffer(buffer: ExperienceBuffer, trajectories: list[Trajectory]) -> ExperienceBuffer:
    buffer.add_many((tr.terminal, tr.reward) for tr in trajectories)
    return buffer


def select_feedback(buffer: ExperienceBuffer, terminal: PlacementGraph) -> Optional[PlacementGraph]:
    """MMSE-nearest buffer entry; ties go to higher reward, then earlier insertion."""
    if not buffer.entries:
        return None
    v = terminal.vector()
    best = min(buffer.entries, key=lambda e: (float(np.mean((e[0].vector() - v) ** 2)), -e[1], e[2]))
    return best[0]


def standardize_rewards(trajectories) -> np.ndarray:
    r = np.array([tr.reward if isinstance(tr, Trajectory) else tr for tr in trajectories], dtype=float)
    if len(r) < 2:
        raise ValueError("cannot standardize fewer than two rewards")
    sd = r.std()
    if sd < 1e-8:
        return np.zeros_like(r)
    return (r - r.mean()) / sd


def rollout(
    model: dn.GraphTransformer, sched: DiffusionSchedule, n: int, count: int, rng: np.random.Generator
) -> list[GraphState]:
    """Batched reverse process; returns the batched states G^T ... G^0."""
    g = sample_prior(n, rng, (count,), sched.T)
    states = [g]
    for t in range(sched.T, 0, -1):
        pv, pe = dn.predict(model, g.node_states, g.edge_states, np.full(count, t), sched.T)
        g = denoise_step(g, pv, pe, sched, rng)
        states.append(g)
    return states


def to_placement(node_states: np.ndarray, edge_states: np.ndarray) -> PlacementGraph:
    n = len(node_states)
    adj = np.zeros((n, n), dtype=np.uint8)
    iu = np.triu_indices(n, 1)
    adj[iu] = edge_states
    adj[iu[1], iu[0]] = edge_states
    return PlacementGraph(node_states, adj)


def collect_trajectories(
    model: dn.GraphTransformer,
    sched: DiffusionSchedule,
    problem: ProblemContext,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> list[Trajectory]:
    D, T = cfg.batch_size, sched.T
    batched = rollout(model, sched, problem.n, D, rng)
    out = []
    for k in range(D):
        states = [GraphState(s.node_states[k], s.edge_states[k], s.t) for s in batched]
        raw = to_placement(states[-1].node_states, states[-1].edge_states)
        p, s_a, r = problem.score(raw, problem.draw_shadowing(rng))
        steps = tuple(sorted(int(x) for x in rng.choice(np.arange(1, T + 1), cfg.n_timesteps, replace=False)))
        feas = all(check_constraints(p, s_a, problem.reward_cfg))
        out.append(Trajectory(states, steps, p, r, s_a, feas))
    return out


def _placement_states(p: PlacementGraph) -> tuple[np.ndarray, np.ndarray]:
    return p.node_sel.astype(np.int64), p.adj[np.triu_indices(p.n, 1)].astype(np.int64)


def build_loss_batches(
    trajectories: list[Trajectory],
    weights: np.ndarray,
    buffer: Optional[ExperienceBuffer],
    cfg: TrainConfig,
) -> list[dn.LossBatch]:
    """Flatten the objective into weighted cross-entropy terms."""
    D, T = len(trajectories), cfg.T
    rows: dict[str, list] = {"x0": [], "step": []}
    beta = cfg.beta if cfg.mode == "efgd" else 0.0
    for k, tr in enumerate(trajectories):
        scale = T / (D * len(tr.timesteps))
        fb = select_feedback(buffer, tr.terminal) if (buffer is not None and beta > 0) else None
        for t in tr.timesteps:
            gt = tr.at(t)
            if cfg.mode == "ddpo":
                prev = tr.at(t - 1)
                rows["step"].append((gt, t, prev.node_states, prev.edge_states, weights[k] * scale))
                continue
            rows["x0"].append((gt, t, tr.g0.node_states, tr.g0.edge_states, weights[k] * scale))
            if fb is not None:
                nv, ev = _placement_states(fb)
                rows["x0"].append((gt, t, nv, ev, beta * scale))
    batches = []
    for kind, rs in rows.items():
        if not rs:
            continue
        batches.append(
            dn.LossBatch(
                node_states=np.stack([r[0].node_states for r in rs]),
                edge_states=np.stack([r[0].edge_states for r in rs]),
                t=np.array([r[1] for r in rs]),
                target_nodes=np.stack([r[2] for r in rs]),
                target_edges=np.stack([r[3] for r in rs]),
                coef=np.array([r[4] for r in rs], dtype=float),
                kind=kind,
            )
        )
    return batches


def efgd_loss(
    model: dn.GraphTransformer,
    trajectories: list[Trajectory],
    weights: np.ndarray,
    buffer: Optional[ExperienceBuffer],
    cfg: TrainConfig,
    sched: Optional[DiffusionSchedule] = None,
    dropout_seed: Optional[int] = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and gradients for the configured mode; gradients are left on the parameters."""
    batches = build_loss_batches(trajectories, weights, buffer, cfg)
    return dn.loss_and_grad(model, batches, cfg.T, sched, dropout_seed)


def make_optimizer(model: dn.GraphTransformer, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    return torch.optim.SGD(model.parameters(), lr=cfg.learning_rate)


@dataclass
class EpochMetrics:
    epoch: int
    avg_reward: float
    feasible_fraction: float
    buffer_min_reward: float
    loss: float
    wall_time_s: float


def train(
    cfg: TrainConfig,
    problem: ProblemContext,
    model: Optional[dn.GraphTransformer] = None,
    on_epoch: Optional[Callable[[int, dn.GraphTransformer, EpochMetrics], None]] = None,
) -> tuple[dn.GraphTransformer, list[EpochMetrics], ExperienceBuffer]:
    """Run ``cfg.epochs`` of collect -> standardize -> buffer update -> loss -> step."""
    ss_init, ss_collect, ss_drop = np.random.SeedSequence(cfg.seed).spawn(3)
    if model is None:
        model = dn.init(cfg.hyper, int(ss_init.generate_state(1)[0]))
    sched = make_schedule(cfg.T, cfg.schedule)
    rng = np.random.default_rng(ss_collect)
    drop_rng = np.random.default_rng(ss_drop)
    opt = make_optimizer(model, cfg)
    buffer = ExperienceBuffer(cfg.buffer_size)
    metrics: list[EpochMetrics] = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        trajs = collect_trajectories(model, sched, problem, cfg, rng)
        weights = standardize_rewards(trajs)
        if cfg.mode == "efgd":
            update_buffer(buffer, trajs)
        opt.zero_grad(set_to_none=True)
        loss, _ = efgd_loss(
            model, trajs, weights, buffer if cfg.mode == "efgd" else None, cfg, sched, int(drop_rng.integers(2**31))
        )
        opt.step()
        m = EpochMetrics(
            epoch=epoch,
            avg_reward=float(np.mean([tr.reward for tr in trajs])),
            feasible_fraction=float(np.mean([tr.feasible for tr in trajs])),
            buffer_min_reward=buffer.min_reward,
            loss=loss,
            wall_time_s=time.perf_counter() - t0,
        )
        metrics.append(m)
        if on_epoch is not None:
            on_epoch(epoch, model, m)
    return model, metrics, buffer


def inference(
    model: dn.GraphTransformer,
    sched: DiffusionSchedule,
    problem: ProblemContext,
    count: int,
    rng: np.random.Generator,
    conditions: Optional[np.ndarray] = None,
) -> list[Evaluation]:
    """``count`` independent rollouts, each scored over the test shadowing conditions."""
    if count < 1:
        return []
    g0 = rollout(model, sched, problem.n, count, rng)[-1]
    return [problem.evaluate(to_placement(g0.node_states[k], g0.edge_states[k]), conditions) for k in range(count)]


def best_of(evals: list[Evaluation]) -> int:
    """Index of the evaluation with the highest mean reward (first on ties)."""
    return int(np.argmax([e.mean_reward for e in evals]))
