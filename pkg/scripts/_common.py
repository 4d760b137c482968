"""Shared helpers for the experiment scripts."""

import argparse
from pathlib import Path

from diffadapt.harness import ExperimentConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def parser(description: str, default_config: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(CONFIGS / default_config))
    p.add_argument("--trials", type=int, help="override run.n_trials")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out-dir", help="override output.dir")
    return p


def load(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config).with_overrides(args.seed, args.trials, args.out_dir)
