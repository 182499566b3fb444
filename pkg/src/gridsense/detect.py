"""GridWatch-style power-change detectors and anomaly scores."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .grid import GridSnapshot, PowerGrid, ScenarioSet


@dataclass(frozen=True)
class DetectionConfig:
    lambda_a: float = 50.0
    window_w: int = 32
    iqr_floor: float = 1e-6

    def __post_init__(self):
        if self.lambda_a <= 0 or self.window_w < 4 or self.iqr_floor <= 0:
            raise ValueError("need lambda_a > 0, window_w >= 4, iqr_floor > 0")


@dataclass(frozen=True)
class DetectorVector:
    x_se: float
    x_ga: float
    x_gd: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_se, self.x_ga, self.x_gd])


def detectors_from_changes(delta_s) -> DetectorVector:
    """Single-edge, group and group-diversion detectors for one sensor's power changes."""
    d = np.asarray(delta_s, dtype=complex).ravel()
    if d.size == 0:
        return DetectorVector(0.0, 0.0, 0.0)
    # correctly rounded sums and magnitudes, so the values do not depend on reduction order
    re, im = math.fsum(d.real), math.fsum(d.imag)
    dev = np.hypot(d.real - re / d.size, d.imag - im / d.size)
    return DetectorVector(
        float(np.max(np.hypot(d.real, d.imag))),
        float(np.hypot(re, im)),
        math.fsum(dev),
    )


def _outgoing_power(grid: PowerGrid, snap: GridSnapshot, sensor: int) -> np.ndarray:
    edges = grid.incident_edges(sensor)
    sign = np.where(grid.edge_from[edges] == sensor, 1.0, -1.0)
    return snap.node_voltage[sensor] * np.conj(sign * snap.edge_current[edges])


def detector_vector(sensor: int, prev: GridSnapshot, curr: GridSnapshot, grid: PowerGrid) -> DetectorVector:
    if not 0 <= sensor < grid.n:
        raise ValueError(f"unknown sensor {sensor}")
    if prev.t + 1 != curr.t:
        raise ValueError("snapshots must be consecutive")
    delta = _outgoing_power(grid, curr, sensor) - _outgoing_power(grid, prev, sensor)
    return detectors_from_changes(delta)


def detector_series(scenarios: ScenarioSet, grid: PowerGrid) -> np.ndarray:
    """Detector values for every step and sensor, shape ``(T_s, n, 3)``.

    Row 0 is NaN: the first snapshot has no predecessor.
    """
    V = scenarios.voltages()
    I = scenarios.currents()
    T, n = V.shape
    out = np.full((T, n, 3), np.nan)
    # S[t, i, e]: power leaving sensor i along edge e, zero for non-incident edges
    inc = np.zeros((n, grid.m))
    inc[grid.edge_from, np.arange(grid.m)] = 1.0
    inc[grid.edge_to, np.arange(grid.m)] = -1.0
    mask = inc != 0
    S = V[:, :, None] * np.conj(inc[None, :, :] * I[:, None, :])
    dS = S[1:] - S[:-1]
    counts = mask.sum(axis=1)
    absd = np.where(mask, np.abs(dS), 0.0)
    out[1:, :, 0] = absd.max(axis=2)
    total = np.where(mask, dS, 0.0).sum(axis=2)
    out[1:, :, 1] = np.abs(total)
    mean = np.where(counts > 0, total / np.maximum(counts, 1), 0.0)
    out[1:, :, 2] = np.where(mask, np.abs(dS - mean[:, :, None]), 0.0).sum(axis=2)
    return out


class DetectorHistory:
    """Sliding window of one sensor's detector vectors."""

    def __init__(self, window_w: int = 32):
        self.window: deque[np.ndarray] = deque(maxlen=window_w)

    def __len__(self) -> int:
        return len(self.window)

    def push(self, x) -> None:
        self.window.append(np.asarray(x.as_array() if isinstance(x, DetectorVector) else x, dtype=float))

    @property
    def med(self) -> np.ndarray:
        return np.median(np.array(self.window), axis=0)

    @property
    def iqr(self) -> np.ndarray:
        q75, q25 = np.percentile(np.array(self.window), [75, 25], axis=0)
        return q75 - q25


def sensor_anomalousness(hist: DetectorHistory, x, cfg: DetectionConfig) -> float:
    """Infinity norm of the median/IQR-standardized detector vector; then records ``x``."""
    if len(hist) == 0:
        raise ValueError("insufficient history")
    xa = x.as_array() if isinstance(x, DetectorVector) else np.asarray(x, dtype=float)
    score = float(np.max(np.abs(xa - hist.med) / np.maximum(hist.iqr, cfg.iqr_floor)))
    hist.push(xa)
    return score


def overall_score(scores, placed: Iterable[int]) -> float:
    idx = list(placed)
    if not idx:
        raise ValueError("empty sensor set")
    return float(np.max(np.asarray(scores, dtype=float)[idx]))


@dataclass
class SensorScores:
    """Per-step, per-sensor anomalousness for one scenario set.

    ``scores[t, i]`` is NaN until sensor ``i`` has a full history window.
    """

    scores: np.ndarray
    anomaly_times: tuple[int, ...]
    warmup: int

    def detected(self, lambda_a: float) -> np.ndarray:
        """Bool ``(n, s)``: sensor i flags anomaly r."""
        return (self.scores[list(self.anomaly_times)] > lambda_a).T

    def detection_score(self, placed: Iterable[int], lambda_a: float) -> float:
        idx = list(placed)
        if not self.anomaly_times:
            raise ValueError("no anomalies to score")
        if not idx:
            return 0.0
        A = self.scores[np.ix_(list(self.anomaly_times), idx)].max(axis=1)
        return float(np.mean(A > lambda_a))

    def false_alarm_rate(self, placed: Iterable[int], lambda_a: float) -> float:
        """Share of scored normal steps flagged; auxiliary, never part of the reward."""
        idx = list(placed)
        if not idx:
            return 0.0
        normal = [t for t in range(self.warmup, len(self.scores)) if t not in set(self.anomaly_times)]
        if not normal:
            return 0.0
        return float(np.mean(self.scores[np.ix_(normal, idx)].max(axis=1) > lambda_a))


def sensor_scores(scenarios: ScenarioSet, grid: PowerGrid, cfg: DetectionConfig) -> SensorScores:
    """Run every sensor's history through the whole scenario set."""
    X = detector_series(scenarios, grid)
    T, n, _ = X.shape
    W = cfg.window_w
    warmup = W + 1
    if scenarios.anomaly_times and min(scenarios.anomaly_times) < warmup:
        raise ValueError("insufficient warm-up")
    scores = np.full((T, n), np.nan)
    for t in range(warmup, T):
        win = X[t - W : t]
        med = np.median(win, axis=0)
        q75, q25 = np.percentile(win, [75, 25], axis=0)
        z = np.abs(X[t] - med) / np.maximum(q75 - q25, cfg.iqr_floor)
        scores[t] = z.max(axis=1)
    return SensorScores(scores, tuple(scenarios.anomaly_times), warmup)


def detection_score(
    scenarios: ScenarioSet,
    placed: Iterable[int],
    cfg: DetectionConfig,
    grid: PowerGrid,
    table: Optional[SensorScores] = None,
) -> float:
    """Fraction of anomaly times at which the placed sensors' max score exceeds ``lambda_a``."""
    idx = list(placed)
    if not idx:
        raise ValueError("empty sensor set")
    if not scenarios.anomaly_times:
        raise ValueError("no anomalies to score")
    table = table or sensor_scores(scenarios, grid, cfg)
    return table.detection_score(idx, cfg.lambda_a)
