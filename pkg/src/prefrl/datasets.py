"""Reward-free offline datasets and fixed-length query segments.

Datasets follow a mixture recipe: a small fraction of noisy scripted-optimal
trajectories plus a majority of epsilon-greedy explorers around the same
scripted policy. No reward values are stored anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from prefrl.mdp import Policy, TabularMdp, Trajectory, value_iteration


@dataclass(frozen=True)
class BehaviorSpec:
    """Mixture recipe for dataset generation."""

    n_trajectories: int
    expert_fraction: float = 0.05
    expert_noise: float = 0.05
    explore_epsilon: float = 0.8
    horizon: int = 200

    def __post_init__(self) -> None:
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be positive")
        for name in ("expert_fraction", "expert_noise", "explore_epsilon"):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")

    @property
    def n_expert(self) -> int:
        return int(round(self.expert_fraction * self.n_trajectories))


@dataclass(frozen=True)
class OfflineDataset:
    """Reward-free trajectories sharing a horizon, tied to a source MDP."""

    trajectories: tuple[Trajectory, ...]
    source_mdp_hash: str
    horizon: int

    def __post_init__(self) -> None:
        for traj in self.trajectories:
            if len(traj) != self.horizon:
                raise ValueError("all trajectories must share the horizon")

    def __len__(self) -> int:
        return len(self.trajectories)

    def transitions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All (s, a, s') triples; the final step of each trajectory has no
        observed successor and is dropped."""
        ss, aa, ns = [], [], []
        for traj in self.trajectories:
            ss.append(traj.states[:-1])
            aa.append(traj.actions[:-1])
            ns.append(traj.states[1:])
        return (
            np.concatenate(ss) if ss else np.empty(0, dtype=np.int64),
            np.concatenate(aa) if aa else np.empty(0, dtype=np.int64),
            np.concatenate(ns) if ns else np.empty(0, dtype=np.int64),
        )

    def state_action_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        ss = np.concatenate([t.states for t in self.trajectories])
        aa = np.concatenate([t.actions for t in self.trajectories])
        return ss, aa


@dataclass(frozen=True)
class Segment:
    """Fixed-length window of a trajectory, the unit of preference queries."""

    trajectory_index: int
    start: int
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self) -> None:
        states = np.ascontiguousarray(self.states, dtype=np.int64)
        actions = np.ascontiguousarray(self.actions, dtype=np.int64)
        states.setflags(write=False)
        actions.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        if len(self.states) != len(self.actions) or len(self.states) < 1:
            raise ValueError("segment must have matching states/actions, length >= 1")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def key(self) -> tuple[int, int]:
        return (self.trajectory_index, self.start)


def _sample_trajectory(
    mdp: TabularMdp,
    optimal_actions: np.ndarray,
    noise: float,
    epsilon: float,
    horizon: int,
    rng: np.random.Generator,
) -> Trajectory:
    states = np.empty(horizon, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    s = mdp.start_state
    for t in range(horizon):
        a = int(optimal_actions[s])
        if noise > 0 and rng.random() < noise:
            a = int(rng.integers(mdp.n_actions))
        if epsilon > 0 and rng.random() < epsilon:
            a = int(rng.integers(mdp.n_actions))
        states[t] = s
        actions[t] = a
        s = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
    return Trajectory(states=states, actions=actions)


def generate_dataset(
    mdp: TabularMdp, spec: BehaviorSpec, seed: int
) -> OfflineDataset:
    """Generate the mixture dataset.

    The first `n_expert` trajectories follow the scripted-optimal policy
    with each action replaced by a random one with probability
    `expert_noise`; the rest follow the same noisy scripted policy but take
    a uniformly random action with probability `explore_epsilon`. Each
    trajectory draws from its own spawned seed, so generation is
    reproducible and order-insensitive.
    """
    optimal_actions = value_iteration(mdp).greedy_policy().greedy_actions()
    children = np.random.SeedSequence(seed).spawn(spec.n_trajectories)
    n_expert = spec.n_expert
    trajectories = []
    for i in range(spec.n_trajectories):
        rng = np.random.default_rng(children[i])
        epsilon = 0.0 if i < n_expert else spec.explore_epsilon
        trajectories.append(
            _sample_trajectory(
                mdp, optimal_actions, spec.expert_noise, epsilon, spec.horizon, rng
            )
        )
    return OfflineDataset(
        trajectories=tuple(trajectories),
        source_mdp_hash=mdp.content_hash(),
        horizon=spec.horizon,
    )


def extract_segments(dataset: OfflineDataset, length: int) -> list[Segment]:
    """Non-overlapping consecutive windows of `length` steps per trajectory;
    the trailing remainder is dropped."""
    if length < 1:
        raise ValueError("segment length must be positive")
    if length > dataset.horizon:
        raise ValueError(
            f"segment length {length} exceeds trajectory horizon {dataset.horizon}"
        )
    segments = []
    for i, traj in enumerate(dataset.trajectories):
        for start in range(0, dataset.horizon - length + 1, length):
            segments.append(
                Segment(
                    trajectory_index=i,
                    start=start,
                    states=traj.states[start : start + length],
                    actions=traj.actions[start : start + length],
                )
            )
    return segments


def save_dataset(dataset: OfflineDataset, path: str) -> None:
    """Persist as JSON-lines: a header line then one trajectory per line."""
    with open(path, "w") as f:
        header = {
            "mdp_hash": dataset.source_mdp_hash,
            "horizon": dataset.horizon,
            "n": len(dataset),
        }
        f.write(json.dumps(header) + "\n")
        for traj in dataset.trajectories:
            line = {"states": traj.states.tolist(), "actions": traj.actions.tolist()}
            f.write(json.dumps(line) + "\n")


def load_dataset(path: str, mdp: TabularMdp | None = None) -> OfflineDataset:
    """Load a JSON-lines dataset, verifying the MDP hash when one is given."""
    with open(path) as f:
        header = json.loads(f.readline())
        trajectories = []
        for line in f:
            doc = json.loads(line)
            trajectories.append(
                Trajectory(
                    states=np.asarray(doc["states"], dtype=np.int64),
                    actions=np.asarray(doc["actions"], dtype=np.int64),
                )
            )
    if len(trajectories) != header["n"]:
        raise ValueError("dataset line count does not match header")
    if mdp is not None and mdp.content_hash() != header["mdp_hash"]:
        raise ValueError("dataset was generated from a different MDP")
    return OfflineDataset(
        trajectories=tuple(trajectories),
        source_mdp_hash=header["mdp_hash"],
        horizon=header["horizon"],
    )
