"""Bus/branch test cases, a linear complex nodal solver, and anomaly scenarios.

The solver treats every bus injection as a complex current source and the
slack bus as an ideal voltage source at ``1 + 0j``.  Edge currents are
oriented from ``edge_from`` to ``edge_to``: ``I_e = y_e * (V_from - V_to)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

REFERENCE_VOLTAGE = 1.0 + 0.0j
BUNDLED_CASES = ("ieee9", "ieee14", "ieee30", "ieee118")


class CaseFormatError(ValueError):
    """Raised when a case file cannot be turned into a valid grid."""


class IslandedGridError(RuntimeError):
    """Raised when the reduced nodal system is singular."""


@dataclass(frozen=True)
class PowerGrid:
    """Physical layer: buses re-indexed densely from 0, branches as parallel arrays."""

    labels: tuple[int, ...]
    edge_from: np.ndarray
    edge_to: np.ndarray
    admittance: np.ndarray
    injections: np.ndarray
    slack: int = 0

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def nodes(self) -> list[int]:
        return list(range(self.n))

    @property
    def m(self) -> int:
        return len(self.edge_from)

    @property
    def edges(self) -> list[tuple[int, int, complex]]:
        return [(int(i), int(j), complex(y)) for i, j, y in zip(self.edge_from, self.edge_to, self.admittance)]

    def incident_edges(self, node: int) -> np.ndarray:
        return np.flatnonzero((self.edge_from == node) | (self.edge_to == node))

    def validate(self) -> None:
        if not 0 <= self.slack < self.n:
            raise CaseFormatError(f"slack bus {self.slack} out of range")
        seen = set()
        for k, (i, j) in enumerate(zip(self.edge_from, self.edge_to)):
            if i == j:
                raise CaseFormatError(f"self-loop on bus {self.labels[i]} (edge {k})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise CaseFormatError(f"duplicate edge {self.labels[i]}-{self.labels[j]} (edge {k})")
            seen.add(key)
        if np.any(np.abs(self.admittance) <= 0):
            raise CaseFormatError("edge admittances must be nonzero")
        if not is_connected(self.n, self.edge_from, self.edge_to):
            raise CaseFormatError("disconnected case")


@dataclass
class GridSnapshot:
    t: int
    node_voltage: np.ndarray
    edge_current: np.ndarray
    injection: np.ndarray
    anomaly_label: Optional[int] = None


@dataclass
class ScenarioSet:
    snapshots: list[GridSnapshot]
    anomaly_times: tuple[int, ...]
    rng_seed: int
    load_noise_sigma: float = 0.0

    @property
    def T_s(self) -> int:
        return len(self.snapshots)

    def voltages(self) -> np.ndarray:
        return np.stack([s.node_voltage for s in self.snapshots])

    def currents(self) -> np.ndarray:
        return np.stack([s.edge_current for s in self.snapshots])


def is_connected(n: int, edge_from: Sequence[int], edge_to: Sequence[int]) -> bool:
    if n <= 1:
        return True
    a = coo_matrix((np.ones(len(edge_from)), (np.asarray(edge_from), np.asarray(edge_to))), shape=(n, n))
    ncomp, _ = connected_components(a, directed=False)
    return ncomp == 1


def bundled_case_path(name: str) -> Path:
    if name not in BUNDLED_CASES:
        raise FileNotFoundError(f"no bundled case named {name!r}; choose from {BUNDLED_CASES}")
    return Path(str(resources.files("gridsense") / "cases" / f"{name}.case"))


def resolve_case(path_or_name: str | Path) -> Path:
    """Accept a file path or the name of a bundled case (``ieee9`` ...)."""
    p = Path(path_or_name)
    if p.exists():
        return p
    if str(path_or_name) in BUNDLED_CASES:
        return bundled_case_path(str(path_or_name))
    raise FileNotFoundError(f"case file not found: {path_or_name}")


def parse_case(text: str, source: str = "<string>") -> PowerGrid:
    buses: dict[int, complex] = {}
    branches: list[tuple[int, int, complex, int]] = []
    slack_label = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        where = f"{source}:{lineno}"
        kind = parts[0].upper()
        try:
            if kind == "BUS" and len(parts) == 4:
                bid = int(parts[1])
                if bid in buses:
                    raise CaseFormatError(f"{where}: duplicate bus {bid}")
                buses[bid] = complex(float(parts[2]), float(parts[3]))
            elif kind == "BRANCH" and len(parts) == 5:
                branches.append((int(parts[1]), int(parts[2]), complex(float(parts[3]), float(parts[4])), lineno))
            elif kind == "SLACK" and len(parts) == 2:
                slack_label = int(parts[1])
            else:
                raise CaseFormatError(f"{where}: cannot parse record {raw.strip()!r}")
        except ValueError as exc:
            if isinstance(exc, CaseFormatError):
                raise
            raise CaseFormatError(f"{where}: bad number in {raw.strip()!r}") from exc

    if not buses:
        raise CaseFormatError(f"{source}: no BUS records")
    labels = tuple(sorted(buses))
    index = {b: k for k, b in enumerate(labels)}
    seen: dict[tuple[int, int], int] = {}
    ef, et, ys = [], [], []
    for i, j, y, lineno in branches:
        where = f"{source}:{lineno}"
        if i not in index or j not in index:
            raise CaseFormatError(f"{where}: branch references unknown bus")
        if i == j:
            raise CaseFormatError(f"{where}: self-loop on bus {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise CaseFormatError(f"{where}: duplicate edge {i}-{j} (first on line {seen[key]})")
        if abs(y) == 0:
            raise CaseFormatError(f"{where}: zero admittance on edge {i}-{j}")
        seen[key] = lineno
        ef.append(index[i])
        et.append(index[j])
        ys.append(y)

    if slack_label is None:
        slack_label = labels[0]
    if slack_label not in index:
        raise CaseFormatError(f"{source}: slack bus {slack_label} not among BUS records")

    grid = PowerGrid(
        labels=labels,
        edge_from=np.array(ef, dtype=int),
        edge_to=np.array(et, dtype=int),
        admittance=np.array(ys, dtype=complex),
        injections=np.array([buses[b] for b in labels], dtype=complex),
        slack=index[slack_label],
    )
    if not is_connected(grid.n, grid.edge_from, grid.edge_to):
        raise CaseFormatError(f"{source}: disconnected case")
    return grid


def load_case(path: str | Path) -> PowerGrid:
    """Read a ``.case`` file (or a bundled case name) into a validated grid."""
    p = resolve_case(path)
    return parse_case(p.read_text(encoding="utf-8"), source=str(p))


def admittance_matrix(grid: PowerGrid, admittance: Optional[np.ndarray] = None) -> np.ndarray:
    y = grid.admittance if admittance is None else admittance
    Y = np.zeros((grid.n, grid.n), dtype=complex)
    np.add.at(Y, (grid.edge_from, grid.edge_to), -y)
    np.add.at(Y, (grid.edge_to, grid.edge_from), -y)
    np.add.at(Y, (grid.edge_from, grid.edge_from), y)
    np.add.at(Y, (grid.edge_to, grid.edge_to), y)
    return Y


def nodal_solve(
    grid: PowerGrid,
    injections: Optional[np.ndarray] = None,
    failed_edge: Optional[int] = None,
    t: int = 0,
) -> GridSnapshot:
    """Solve ``Y V = I`` with the slack bus pinned to the reference voltage.

    ``failed_edge`` opens one branch (admittance 0) for this solve only.
    """
    inj = grid.injections if injections is None else np.asarray(injections, dtype=complex)
    y = grid.admittance.copy()
    if failed_edge is not None:
        y[failed_edge] = 0.0
        keep = np.arange(grid.m) != failed_edge
        if not is_connected(grid.n, grid.edge_from[keep], grid.edge_to[keep]):
            raise IslandedGridError("islanded grid")
    Y = admittance_matrix(grid, y)
    rest = np.array([k for k in range(grid.n) if k != grid.slack], dtype=int)
    V = np.full(grid.n, REFERENCE_VOLTAGE, dtype=complex)
    if len(rest):
        rhs = inj[rest] - Y[rest, grid.slack] * REFERENCE_VOLTAGE
        try:
            V[rest] = np.linalg.solve(Y[np.ix_(rest, rest)], rhs)
        except np.linalg.LinAlgError as exc:
            raise IslandedGridError("islanded grid") from exc
    I = y * (V[grid.edge_from] - V[grid.edge_to])
    return GridSnapshot(t=t, node_voltage=V, edge_current=I, injection=inj.copy(), anomaly_label=failed_edge)


def kcl_residual(grid: PowerGrid, snap: GridSnapshot) -> float:
    """Max over non-slack buses of |injection - net outgoing edge current|."""
    out = np.zeros(grid.n, dtype=complex)
    np.add.at(out, grid.edge_from, snap.edge_current)
    np.add.at(out, grid.edge_to, -snap.edge_current)
    mask = np.arange(grid.n) != grid.slack
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(snap.injection[mask] - out[mask])))


def safe_anomaly_edges(grid: PowerGrid) -> np.ndarray:
    """Edges whose removal keeps the grid connected."""
    safe = []
    for e in range(grid.m):
        keep = np.arange(grid.m) != e
        if is_connected(grid.n, grid.edge_from[keep], grid.edge_to[keep]):
            safe.append(e)
    return np.array(safe, dtype=int)


def pick_anomaly_times(
    T_s: int, count: int, warmup: int, rng: np.random.Generator, min_gap: int = 2
) -> tuple[int, ...]:
    """Draw ``count`` anomaly times in ``[warmup, T_s)``, pairwise at least ``min_gap`` apart.

    Sampling is uniform over all admissible configurations.  A gap of 2 keeps
    the recovery step after each failure out of the scored set; larger gaps
    keep the detector window from filling up with failure transients.
    """
    if count == 0:
        return ()
    min_gap = max(int(min_gap), 1)
    span = T_s - warmup - (count - 1) * (min_gap - 1)
    if span < count:
        raise ValueError(f"cannot place {count} anomalies {min_gap} apart in [{warmup}, {T_s})")
    base = np.sort(rng.choice(span, size=count, replace=False))
    return tuple(int(warmup + b + k * (min_gap - 1)) for k, b in enumerate(base))


def generate_scenarios(
    grid: PowerGrid,
    T_s: int,
    anomaly_times: Iterable[int],
    load_noise_sigma: float = 0.05,
    rng_seed: int = 0,
) -> ScenarioSet:
    """Simulate ``T_s`` timesteps; each anomaly time opens one random safe edge."""
    times = tuple(sorted(set(int(t) for t in anomaly_times)))
    if any(t < 0 or t >= T_s for t in times):
        raise ValueError("anomaly times must lie in [0, T_s)")
    if load_noise_sigma < 0:
        raise ValueError("load_noise_sigma must be non-negative")
    safe = safe_anomaly_edges(grid)
    if times and len(safe) == 0:
        raise ValueError("no safe anomaly edge")
    rng = np.random.default_rng(rng_seed)
    anomalous = set(times)
    snaps = []
    for t in range(T_s):
        scale = 1.0 + rng.normal(0.0, load_noise_sigma, size=grid.n)
        failed = int(safe[rng.integers(len(safe))]) if t in anomalous else None
        snaps.append(nodal_solve(grid, grid.injections * scale, failed_edge=failed, t=t))
    return ScenarioSet(snapshots=snaps, anomaly_times=times, rng_seed=rng_seed, load_noise_sigma=load_noise_sigma)


def scenarios_to_dict(sc: ScenarioSet) -> dict:
    return {
        "rng_seed": sc.rng_seed,
        "load_noise_sigma": sc.load_noise_sigma,
        "anomaly_times": list(sc.anomaly_times),
        "snapshots": [
            {
                "t": s.t,
                "anomaly_label": s.anomaly_label,
                "voltage": [[float(v.real), float(v.imag)] for v in s.node_voltage],
                "current": [[float(c.real), float(c.imag)] for c in s.edge_current],
                "injection": [[float(c.real), float(c.imag)] for c in s.injection],
            }
            for s in sc.snapshots
        ],
    }


def scenarios_from_dict(d: dict) -> ScenarioSet:
    def cplx(rows):
        a = np.asarray(rows, dtype=float).reshape(-1, 2)
        return a[:, 0] + 1j * a[:, 1]

    snaps = [
        GridSnapshot(
            t=s["t"],
            node_voltage=cplx(s["voltage"]),
            edge_current=cplx(s["current"]),
            injection=cplx(s["injection"]),
            anomaly_label=s["anomaly_label"],
        )
        for s in d["snapshots"]
    ]
    return ScenarioSet(snaps, tuple(d["anomaly_times"]), d["rng_seed"], d.get("load_noise_sigma", 0.0))


def make_grid(
    n: int,
    edges: Sequence[tuple[int, int, complex]],
    injections: Optional[Sequence[complex]] = None,
    slack: int = 0,
) -> PowerGrid:
    """Build and validate a grid from dense node ids ``0..n-1``."""
    grid = PowerGrid(
        labels=tuple(range(n)),
        edge_from=np.array([e[0] for e in edges], dtype=int),
        edge_to=np.array([e[1] for e in edges], dtype=int),
        admittance=np.array([e[2] for e in edges], dtype=complex),
        injections=np.zeros(n, dtype=complex) if injections is None else np.asarray(injections, dtype=complex),
        slack=slack,
    )
    grid.validate()
    return grid
