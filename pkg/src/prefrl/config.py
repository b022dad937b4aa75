"""Experiment configuration: flat dotted-key text format with overrides.

Every standard hyperparameter has a same-named key so a config file can be
audited by eye: discount, gamma_small, top_m_percent, iql_tau, iql_alpha,
target_update_rate, batch_size, ...
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from prefrl.datasets import BehaviorSpec
from prefrl.mdp import TabularMdp, chain_mdp, gridworld_mdp, random_mdp
from prefrl.solver import DiscountSchedule, SolverConfig
from prefrl.rewards import RewardTrainConfig


@dataclass(frozen=True)
class EnvironmentSpec:
    kind: str = "chain"  # chain | grid | random
    n_states: int = 6
    n_actions: int = 2
    width: int = 5
    height: int = 5
    discount: float = 0.9
    slip: float = 0.0
    env_seed: int = 0

    def build(self) -> TabularMdp:
        if self.kind == "chain":
            return chain_mdp(self.n_states, discount=self.discount)
        if self.kind == "grid":
            return gridworld_mdp(
                self.width, self.height, discount=self.discount, slip=self.slip
            )
        if self.kind == "random":
            rng = np.random.default_rng(self.env_seed)
            return random_mdp(
                self.n_states, self.n_actions, rng, discount=self.discount
            )
        raise ValueError(f"unknown environment kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    behavior: BehaviorSpec = field(default_factory=lambda: BehaviorSpec(
        n_trajectories=60, horizon=40
    ))
    query_budget: int = 10
    ensemble_size: int = 2
    segment_length: int = 10
    pool_size: int = 1000
    strategy: str = "ide"
    schedule: DiscountSchedule = field(default_factory=DiscountSchedule)
    solver: SolverConfig = field(default_factory=SolverConfig)
    reward: RewardTrainConfig = field(default_factory=RewardTrainConfig)
    teacher_mode: str = "deterministic"
    seed: int = 0
    # value-ensemble pretraining at round c runs steps_per_round * c steps
    steps_per_round: int = 1000
    final_steps: int = 3000
    allow_repeat: bool = False
    segment_value_mode: str = "mean"

    def __post_init__(self) -> None:
        if self.query_budget < 1:
            raise ValueError("query budget must be >= 1")
        if self.strategy in ("ide", "disagreement") and self.ensemble_size < 2:
            raise ValueError(f"strategy {self.strategy!r} needs at least 2 heads")
        if self.strategy not in ("ide", "random", "disagreement"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.teacher_mode not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown teacher mode {self.teacher_mode!r}")
        if self.segment_length < 1 or self.pool_size < 2:
            raise ValueError("invalid segment length or pool size")


_SECTIONS = {
    "environment": EnvironmentSpec,
    "behavior": BehaviorSpec,
    "schedule": DiscountSchedule,
    "solver": SolverConfig,
    "reward": RewardTrainConfig,
}

# config-file key aliases matching the standard hyperparameter sheet
_ALIASES = {
    "schedule.discount": "schedule.gamma",
    "schedule.top_m_percent": "schedule.m_percent",
}


def _coerce(current, raw: str):
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Apply dotted-key string overrides, e.g. {'solver.iql_tau': '0.9'}."""
    sections: dict[str, dict] = {}
    top: dict = {}
    for key, raw in overrides.items():
        key = _ALIASES.get(key, key)
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise KeyError(f"unknown config section {section!r}")
            sections.setdefault(section, {})[name] = raw
        else:
            top[key] = raw
    for section, fields in sections.items():
        sub = getattr(cfg, section)
        updates = {}
        for name, raw in fields.items():
            if not hasattr(sub, name):
                raise KeyError(f"unknown config key {section}.{name}")
            updates[name] = _coerce(getattr(sub, name), raw)
        cfg = replace(cfg, **{section: replace(sub, **updates)})
    updates = {}
    for name, raw in top.items():
        if not hasattr(cfg, name):
            raise KeyError(f"unknown config key {name!r}")
        updates[name] = _coerce(getattr(cfg, name), raw)
    return replace(cfg, **updates) if updates else cfg


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat key=value lines ('#' comments allowed) into a config."""
    overrides: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        overrides[key.strip()] = value.strip()
    return apply_overrides(base or ExperimentConfig(), overrides)


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path:
        with open(path) as f:
            cfg = parse_config_text(f.read(), cfg)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg
