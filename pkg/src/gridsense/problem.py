"""Bundles one placement problem: grid, cyber layer, scenarios, detector scores and reward."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cyber import CyberLayer, PathLossParams, build_layer, draw_shadowing
from .detect import DetectionConfig, SensorScores, sensor_scores
from .grid import PowerGrid, ScenarioSet, generate_scenarios, pick_anomaly_times
from .placement import PlacementGraph, RewardConfig, check_constraints, refine, reward


@dataclass(frozen=True)
class ScenarioParams:
    T_s: int = 400
    anomalies: int = 20
    min_gap: int = 8
    load_noise_sigma: float = 0.005


@dataclass(frozen=True)
class Evaluation:
    placement: PlacementGraph  # refined at zero shadowing
    S_a: float
    fiedler: float
    feasible: bool
    mean_reward: float
    std_reward: float

    def to_dict(self) -> dict:
        return {
            "placement": self.placement.to_dict(),
            "detection_score": self.S_a,
            "fiedler": self.fiedler,
            "feasible": self.feasible,
            "mean_reward": self.mean_reward,
            "std_reward": self.std_reward,
        }


@dataclass
class ProblemContext:
    grid: PowerGrid
    layer: CyberLayer
    scenarios: ScenarioSet
    table: SensorScores
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    reward_cfg: RewardConfig = field(default_factory=RewardConfig)
    conditions: Optional[np.ndarray] = None  # (C, n, n) test shadowing draws

    @property
    def n(self) -> int:
        return self.grid.n

    def detection_score(self, p: PlacementGraph) -> float:
        return self.table.detection_score(p.nodes, self.detection.lambda_a)

    def draw_shadowing(self, rng: np.random.Generator) -> np.ndarray:
        return draw_shadowing(self.n, self.layer.params.sigma_shadow, rng)

    def score(self, raw: PlacementGraph, shadowing: Optional[np.ndarray] = None) -> tuple[PlacementGraph, float, float]:
        """Refine under ``shadowing`` and return (refined, S_a, reward)."""
        p = refine(raw, self.layer, shadowing)
        s_a = self.detection_score(p)
        return p, s_a, reward(p, s_a, self.reward_cfg)

    def evaluate(self, raw: PlacementGraph, conditions: Optional[np.ndarray] = None) -> Evaluation:
        """Reward statistics over the test shadowing conditions (population std)."""
        conds = self.conditions if conditions is None else conditions
        if conds is None or len(conds) == 0:
            conds = np.zeros((1, self.n, self.n))
        rewards = np.array([self.score(raw, c)[2] for c in conds])
        p, s_a, _ = self.score(raw)
        i1, i2 = check_constraints(p, s_a, self.reward_cfg)
        return Evaluation(p, s_a, p.fiedler(), bool(i1 and i2), float(rewards.mean()), float(rewards.std()))


def draw_conditions(n: int, count: int, sigma: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack([draw_shadowing(n, sigma, rng) for _ in range(count)]) if count else np.zeros((0, n, n))


def build_problem(
    grid: PowerGrid,
    seed: int = 0,
    scenario: ScenarioParams = ScenarioParams(),
    path_loss: Optional[PathLossParams] = None,
    detection: DetectionConfig = DetectionConfig(),
    reward_cfg: RewardConfig = RewardConfig(),
    n_conditions: int = 100,
    median_distance_m: Optional[float] = 110.0,
    scenarios: Optional[ScenarioSet] = None,
) -> ProblemContext:
    """Simulate scenarios, embed the layer and draw test conditions from one seed."""
    ss_times, ss_sim, ss_cond = np.random.SeedSequence(seed).spawn(3)
    params = path_loss or PathLossParams(lambda_c=reward_cfg.lambda_c)
    layer = build_layer(grid, params, median_distance_m=median_distance_m)
    if scenarios is None:
        times = pick_anomaly_times(
            scenario.T_s, scenario.anomalies, detection.window_w + 1, np.random.default_rng(ss_times), scenario.min_gap
        )
        sim_seed = int(ss_sim.generate_state(1)[0])
        scenarios = generate_scenarios(grid, scenario.T_s, times, scenario.load_noise_sigma, sim_seed)
    table = sensor_scores(scenarios, grid, detection)
    conds = draw_conditions(grid.n, n_conditions, params.sigma_shadow, int(ss_cond.generate_state(1)[0]))
    return ProblemContext(grid, layer, scenarios, table, detection, reward_cfg, conds)
