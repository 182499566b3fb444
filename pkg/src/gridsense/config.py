"""INI experiment configuration.

Schema (every key optional; unknown sections or keys are rejected)::

    [experiment]  case, seed, out
    [scenario]    T_s, anomalies, min_gap, load_noise_sigma
    [path_loss]   d0, bpl_d0, gamma, sigma_shadow, pt_dbm, pn_dbm, lambda_c, median_distance_m
    [detection]   lambda_a, window_w, iqr_floor
    [reward]      r1, r2, r3, N, lambda_s
    [train]       mode, batch_size, timesteps_per_traj, beta, learning_rate, epochs, buffer_size,
                  T, schedule, optimizer, hidden, layers, dropout, checkpoint_every
    [evaluate]    count, conditions

``case`` is a file path or the name of a bundled case (ieee9, ieee14, ieee30, ieee118).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .cyber import PathLossParams
from .detect import DetectionConfig
from .grid import resolve_case
from .placement import RewardConfig
from .problem import ScenarioParams
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalParams:
    count: int = 50
    conditions: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = "ieee9"
    seed: int = 0
    out: str = "runs"
    median_distance_m: float = 110.0
    checkpoint_every: int = 0
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    path_loss: PathLossParams = field(default_factory=PathLossParams)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvalParams = field(default_factory=EvalParams)

    def to_dict(self) -> dict:
        # the output directory is where artifacts go, not what they contain
        d = dataclasses.asdict(self)
        d.pop("out")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def component_seeds(self) -> dict[str, int]:
        """Independent integer seeds derived from the master seed."""
        names = ("problem", "train", "evaluate", "baseline")
        kids = np.random.SeedSequence(self.seed).spawn(len(names))
        return {k: int(s.generate_state(1)[0]) for k, s in zip(names, kids)}

    def with_overrides(self, **kw) -> "ExperimentConfig":
        cfg = self
        train_kw = {k: kw.pop(k) for k in ("mode",) if kw.get(k) is not None}
        if train_kw:
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **train_kw))
        top = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(cfg, **top) if top else cfg


_SECTIONS = {
    "scenario": ScenarioParams,
    "path_loss": PathLossParams,
    "detection": DetectionConfig,
    "reward": RewardConfig,
    "train": TrainConfig,
    "evaluate": EvalParams,
}
_EXTRA = {"path_loss": {"median_distance_m": float}, "train": {"checkpoint_every": int}}
_TOP = {"case": str, "seed": int, "out": str}


def _convert(raw: str, typ, where: str):
    try:
        if typ is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return typ(raw.strip())
    except ValueError as e:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from e


def _field_types(cls) -> dict:
    hints = {"int": int, "float": float, "str": str, "bool": bool}
    return {f.name: hints.get(f.type if isinstance(f.type, str) else f.type.__name__, str) for f in fields(cls)}


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    cp.optionxform = str  # keep key case (T_s, N)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    top: dict = {}
    parts: dict[str, dict] = {}
    for sec in cp.sections():
        if sec == "experiment":
            for k, v in cp[sec].items():
                if k not in _TOP:
                    raise ConfigError(f"{source}: unknown key [{sec}] {k}")
                top[k] = _convert(v, _TOP[k], f"[{sec}] {k}")
            continue
        if sec not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        types = _field_types(_SECTIONS[sec])
        kw = {}
        for k, v in cp[sec].items():
            if k in _EXTRA.get(sec, {}):
                top[k] = _convert(v, _EXTRA[sec][k], f"[{sec}] {k}")
            elif k in types and k != "seed":
                kw[k] = _convert(v, types[k], f"[{sec}] {k}")
            else:
                raise ConfigError(f"{source}: unknown key [{sec}] {k}")
        parts[sec] = kw
    try:
        built = {sec: cls(**parts.get(sec, {})) for sec, cls in _SECTIONS.items()}
        if built["path_loss"].lambda_c != built["reward"].lambda_c:
            built["reward"] = dataclasses.replace(built["reward"], lambda_c=built["path_loss"].lambda_c)
        cfg = ExperimentConfig(**top, **built)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{source}: {e}") from e
    return cfg


def load_config(path: Optional[str | Path]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p))


def check_case(cfg: ExperimentConfig) -> Path:
    try:
        return resolve_case(cfg.case)
    except (FileNotFoundError, ValueError) as e:
        raise ConfigError(str(e)) from e
