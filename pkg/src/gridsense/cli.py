"""Command-line harness: simulate | train | evaluate | baseline.

Exit codes: 0 ok, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import csv
import io
import json
import math
import platform
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__
from . import denoiser as dn
from .baselines import BASELINES, run_baseline
from .config import ConfigError, ExperimentConfig, check_case, load_config
from .diffusion import make_schedule
from .grid import load_case, scenarios_to_dict
from .problem import Evaluation, ProblemContext, build_problem
from .trainer import MODES, best_of, inference, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
METRIC_COLUMNS = ["epoch", "avg_reward", "feasible_fraction", "buffer_min_reward", "loss"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def manifest(cfg: ExperimentConfig, command: str, **extra) -> dict:
    return {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "component_seeds": cfg.component_seeds(),
        "versions": {
            "gridsense": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
        **extra,
    }


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def make_problem(cfg: ExperimentConfig) -> ProblemContext:
    grid = load_case(check_case(cfg))
    return build_problem(
        grid,
        seed=cfg.component_seeds()["problem"],
        scenario=cfg.scenario,
        path_loss=cfg.path_loss,
        detection=cfg.detection,
        reward_cfg=cfg.reward,
        n_conditions=cfg.evaluate.conditions,
        median_distance_m=cfg.median_distance_m,
    )


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> Path:
    problem = make_problem(cfg)
    path = out / "scenarios.json"
    write_json(path, {"manifest": manifest(cfg, "simulate"), "scenarios": scenarios_to_dict(problem.scenarios)})
    return path


def cmd_train(cfg: ExperimentConfig, out: Path) -> Path:
    problem = make_problem(cfg)
    tcfg = dataclasses.replace(cfg.train, seed=cfg.component_seeds()["train"])
    ckpt_dir = out / "checkpoints"
    timing = []

    def on_epoch(epoch, model, m):
        timing.append((epoch, m.wall_time_s))
        k = cfg.checkpoint_every
        if k > 0 and (epoch + 1) % k == 0:
            ckpt_dir.mkdir(exist_ok=True)
            dn.save(model, ckpt_dir / f"epoch{epoch + 1:04d}", tcfg.seed)

    model, metrics, buffer = train(tcfg, problem, on_epoch=on_epoch)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in metrics:
        w.writerow([_fmt(getattr(m, c)) for c in METRIC_COLUMNS])
    (out / "metrics.csv").write_text(buf.getvalue())
    # wall-clock time lives apart so metrics.csv is reproducible byte for byte
    (out / "timing.csv").write_text("epoch,wall_time_s\n" + "".join(f"{e},{t!r}\n" for e, t in timing))
    dn.save(model, out / "model", tcfg.seed)
    write_json(
        out / "buffer.json",
        [{"reward": r, "placement": g.to_dict()} for g, r, _ in buffer.entries],
    )
    write_json(out / "manifest.json", manifest(cfg, "train", epochs=len(metrics)))
    return out / "metrics.csv"


def _summary(records: list[Evaluation]) -> dict:
    best = best_of(records)
    return {
        "count": len(records),
        "best_index": best,
        "best": records[best].to_dict(),
        "mean_of_means": float(np.mean([r.mean_reward for r in records])),
        "feasible_fraction": float(np.mean([r.feasible for r in records])),
    }


def cmd_evaluate(cfg: ExperimentConfig, out: Path, checkpoint: Path, count: int) -> Path:
    if not checkpoint.with_suffix(".npz").is_file() or not checkpoint.with_suffix(".json").is_file():
        raise FileNotFoundError(f"missing checkpoint: {checkpoint}")
    model = dn.load(checkpoint)
    problem = make_problem(cfg)
    rng = np.random.default_rng(cfg.component_seeds()["evaluate"])
    records = inference(model, make_schedule(cfg.train.T, cfg.train.schedule), problem, count, rng)
    path = out / "evaluation.json"
    write_json(
        path,
        {
            "manifest": manifest(cfg, "evaluate", checkpoint=checkpoint.name, count=count),
            "records": [r.to_dict() for r in records],
            "summary": _summary(records) if records else {},
        },
    )
    return path


def cmd_baseline(cfg: ExperimentConfig, out: Path, which: str) -> Path:
    if which not in BASELINES:
        raise UsageError(f"unknown baseline {which!r}; choose from {sorted(BASELINES)}")
    problem = make_problem(cfg)
    rng = np.random.default_rng(cfg.component_seeds()["baseline"])
    placement = run_baseline(which, problem, cfg.reward.N, rng)
    ev = problem.evaluate(placement)
    path = out / f"baseline_{which}.json"
    write_json(path, {"manifest": manifest(cfg, "baseline", which=which), "records": [ev.to_dict()], "summary": _summary([ev])})
    return path


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gridsense", description="Robust wireless sensor placement with diffusion policy gradients.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI experiment configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="torch intra-op threads (default 1)")
    common.add_argument("--mode", choices=MODES, help="training mode (overrides the config)")
    sub.add_parser("simulate", parents=[common], help="simulate and store the scenario set")
    sub.add_parser("train", parents=[common], help="train the denoiser")
    ev = sub.add_parser("evaluate", parents=[common], help="sample and score placements from a checkpoint")
    ev.add_argument("--checkpoint", required=True, help="checkpoint path without suffix")
    ev.add_argument("--count", type=int, help="number of placements (default from config)")
    bl = sub.add_parser("baseline", parents=[common], help="run a baseline placement")
    bl.add_argument("--which", required=True, help=f"one of {', '.join(BASELINES)}")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out, mode=args.mode)
        check_case(cfg)
    except (ConfigError, UsageError) as e:
        print(f"gridsense: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    torch.set_num_threads(args.threads)
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            path = cmd_simulate(cfg, out)
        elif args.command == "train":
            path = cmd_train(cfg, out)
        elif args.command == "evaluate":
            count = args.count if args.count is not None else cfg.evaluate.count
            path = cmd_evaluate(cfg, out, Path(args.checkpoint), count)
        else:
            path = cmd_baseline(cfg, out, args.which)
    except UsageError as e:
        print(f"gridsense: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, FloatingPointError) as e:
        print(f"gridsense: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
