"""Finite tabular MDPs, policies, and exact dynamic-programming oracles.

All downstream claims in this package are verified against the solvers in
this module, so they are deliberately boring: dense numpy tensors, plain
fixed-point iteration with an explicit convergence cap, no shortcuts.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-8

# Safety margin on top of the analytic geometric-contraction iteration bound.
_ITER_MARGIN = 50


class ConvergenceError(RuntimeError):
    """A DP solve failed to reach its tolerance within the iteration cap."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with known transition tensor and true reward table.

    transition has shape (n_states, n_actions, n_states); true_reward has
    shape (n_states, n_actions) with entries in [0, 1].
    """

    n_states: int
    n_actions: int
    transition: np.ndarray
    true_reward: np.ndarray
    discount: float
    start_state: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "transition", _readonly(self.transition))
        object.__setattr__(self, "true_reward", _readonly(self.true_reward))
        if self.n_states < 1 or self.n_actions < 1:
            raise ValueError("n_states and n_actions must be positive")
        if self.transition.shape != (self.n_states, self.n_actions, self.n_states):
            raise ValueError(f"bad transition shape {self.transition.shape}")
        if self.true_reward.shape != (self.n_states, self.n_actions):
            raise ValueError(f"bad reward shape {self.true_reward.shape}")
        rowsums = self.transition.sum(axis=2)
        if not np.allclose(rowsums, 1.0, atol=1e-9, rtol=0.0):
            raise ValueError("transition rows must sum to 1 within 1e-9")
        if np.any(self.transition < 0):
            raise ValueError("transition probabilities must be non-negative")
        if np.any(self.true_reward < 0) or np.any(self.true_reward > 1):
            raise ValueError("true_reward entries must lie in [0, 1]")
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must lie in (0, 1)")
        if not (0 <= self.start_state < self.n_states):
            raise ValueError("start_state out of range")

    def to_json(self) -> str:
        doc = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.true_reward.tolist(),
            "discount": self.discount,
            "start_state": self.start_state,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        doc = json.loads(text)
        return cls(
            n_states=int(doc["n_states"]),
            n_actions=int(doc["n_actions"]),
            transition=np.asarray(doc["transition"], dtype=np.float64),
            true_reward=np.asarray(doc["reward"], dtype=np.float64),
            discount=float(doc["discount"]),
            start_state=int(doc["start_state"]),
        )

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


@dataclass(frozen=True)
class Policy:
    """Row-stochastic action distribution per state."""

    action_prob: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "action_prob", _readonly(self.action_prob))
        if self.action_prob.ndim != 2:
            raise ValueError("action_prob must be a (n_states, n_actions) matrix")
        if np.any(self.action_prob < 0):
            raise ValueError("action probabilities must be non-negative")
        if not np.allclose(self.action_prob.sum(axis=1), 1.0, atol=1e-9, rtol=0.0):
            raise ValueError("policy rows must sum to 1 within 1e-9")

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=np.int64)
        p = np.zeros((actions.shape[0], n_actions))
        p[np.arange(actions.shape[0]), actions] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.action_prob, axis=1)


@dataclass(frozen=True)
class ValueTable:
    """State values v and state-action values q from a DP solve."""

    v: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", _readonly(self.v))
        object.__setattr__(self, "q", _readonly(self.q))

    def greedy_policy(self) -> Policy:
        return Policy.deterministic(np.argmax(self.q, axis=1), self.q.shape[1])


@dataclass(frozen=True)
class Trajectory:
    """Ordered (state, action) steps of length >= 1."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self) -> None:
        states = np.ascontiguousarray(self.states, dtype=np.int64)
        actions = np.ascontiguousarray(self.actions, dtype=np.int64)
        states.setflags(write=False)
        actions.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        if self.states.ndim != 1 or self.states.shape != self.actions.shape:
            raise ValueError("states and actions must be 1-d arrays of equal length")
        if len(self.states) < 1:
            raise ValueError("trajectory must have length >= 1")

    def __len__(self) -> int:
        return len(self.states)

    def validate_for(self, mdp: TabularMdp) -> None:
        if np.any(self.states < 0) or np.any(self.states >= mdp.n_states):
            raise ValueError("trajectory state out of range")
        if np.any(self.actions < 0) or np.any(self.actions >= mdp.n_actions):
            raise ValueError("trajectory action out of range")


def _iteration_cap(discount: float, tol: float, r_max: float) -> int:
    # Starting from zero tables, the sup-norm error after k backups is at
    # most r_max * discount^k / (1 - discount).
    scale = max(r_max, 1.0) / (1.0 - discount)
    cap = math.ceil(math.log(tol / scale) / math.log(discount))
    return max(cap, 1) + _ITER_MARGIN


def value_iteration(
    mdp: TabularMdp, tol: float = DEFAULT_TOL, reward: np.ndarray | None = None
) -> ValueTable:
    """Solve the Bellman optimality equation to sup-norm residual <= tol.

    An alternative reward table may be supplied to solve the same dynamics
    under a learned or hypothesized reward.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = mdp.true_reward if reward is None else np.asarray(reward, dtype=np.float64)
    gamma = mdp.discount
    cap = _iteration_cap(gamma, tol, float(np.max(np.abs(r))) if r.size else 1.0)
    v = np.zeros(mdp.n_states)
    for _ in range(cap):
        q = r + gamma * (mdp.transition @ v)
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) <= tol * (1.0 - gamma) / max(gamma, 1e-12):
            v = v_new
            break
        v = v_new
    q = r + gamma * (mdp.transition @ v)
    residual = np.max(np.abs(q.max(axis=1) - v))
    if residual > tol:
        raise ConvergenceError(
            f"value iteration residual {residual:.3e} > tol {tol:.3e} after cap {cap}"
        )
    return ValueTable(v=q.max(axis=1), q=q)


def policy_evaluation(
    mdp: TabularMdp,
    pi: Policy,
    tol: float = DEFAULT_TOL,
    reward: np.ndarray | None = None,
) -> ValueTable:
    """Fixed point of the Bellman evaluation operator for pi, residual <= tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if pi.action_prob.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match mdp")
    r = mdp.true_reward if reward is None else np.asarray(reward, dtype=np.float64)
    gamma = mdp.discount
    cap = _iteration_cap(gamma, tol, float(np.max(np.abs(r))) if r.size else 1.0)
    v = np.zeros(mdp.n_states)
    for _ in range(cap):
        q = r + gamma * (mdp.transition @ v)
        v_new = np.sum(pi.action_prob * q, axis=1)
        if np.max(np.abs(v_new - v)) <= tol * (1.0 - gamma) / max(gamma, 1e-12):
            v = v_new
            break
        v = v_new
    q = r + gamma * (mdp.transition @ v)
    residual = np.max(np.abs(np.sum(pi.action_prob * q, axis=1) - v))
    if residual > tol:
        raise ConvergenceError(
            f"policy evaluation residual {residual:.3e} > tol {tol:.3e} after cap {cap}"
        )
    return ValueTable(v=np.sum(pi.action_prob * q, axis=1), q=q)


def rollout(
    mdp: TabularMdp, pi: Policy, horizon: int, rng: np.random.Generator
) -> Trajectory:
    """Sample a trajectory of exactly `horizon` steps from the start state."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    states = np.empty(horizon, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    s = mdp.start_state
    for t in range(horizon):
        a = int(rng.choice(mdp.n_actions, p=pi.action_prob[s]))
        states[t] = s
        actions[t] = a
        s = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
    return Trajectory(states=states, actions=actions)


def true_return(mdp: TabularMdp, traj: Trajectory) -> float:
    """Discounted return of a finite trajectory under the true reward."""
    traj.validate_for(mdp)
    rewards = mdp.true_reward[traj.states, traj.actions]
    weights = mdp.discount ** np.arange(len(traj))
    return float(np.dot(weights, rewards))


def truncation_error_bound(mdp: TabularMdp, horizon: int) -> float:
    """Upper bound on the tail mass ignored by an horizon-truncated return."""
    return mdp.discount**horizon / (1.0 - mdp.discount)


def suboptimality(mdp: TabularMdp, pi: Policy, tol: float = DEFAULT_TOL) -> float:
    """V*(s0) - V^pi(s0) from the two exact DP oracles."""
    v_star = value_iteration(mdp, tol).v[mdp.start_state]
    v_pi = policy_evaluation(mdp, pi, tol).v[mdp.start_state]
    return float(v_star - v_pi)


# --- built-in environments ------------------------------------------------


def chain_mdp(n_states: int, discount: float = 0.9) -> TabularMdp:
    """Chain with actions {L, R}: R moves right, L stays; reward 1 only in
    the rightmost state, which is absorbing."""
    if n_states < 2:
        raise ValueError("chain needs at least 2 states")
    n_actions = 2
    transition = np.zeros((n_states, n_actions, n_states))
    reward = np.zeros((n_states, n_actions))
    last = n_states - 1
    for s in range(n_states):
        if s == last:
            transition[s, :, s] = 1.0
            reward[s, :] = 1.0
        else:
            transition[s, 0, s] = 1.0  # L stays
            transition[s, 1, s + 1] = 1.0  # R moves right
    return TabularMdp(
        n_states=n_states,
        n_actions=n_actions,
        transition=transition,
        true_reward=reward,
        discount=discount,
        start_state=0,
    )


def gridworld_mdp(
    width: int,
    height: int,
    goal: tuple[int, int] | None = None,
    lava: list[tuple[int, int]] | None = None,
    discount: float = 0.95,
    slip: float = 0.0,
) -> TabularMdp:
    """Gridworld with actions {up, down, left, right}.

    The goal cell is absorbing with reward 1; lava cells are absorbing with
    reward 0. With probability `slip` the executed move is replaced by a
    uniformly random one. States are indexed row-major as y * width + x.
    """
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    if goal is None:
        goal = (width - 1, height - 1)
    lava = lava or []
    n_states = width * height
    n_actions = 4
    moves = [(0, -1), (0, 1), (-1, 0), (1, 0)]  # up, down, left, right

    def idx(x: int, y: int) -> int:
        return y * width + x

    goal_s = idx(*goal)
    lava_s = {idx(*c) for c in lava}
    transition = np.zeros((n_states, n_actions, n_states))
    reward = np.zeros((n_states, n_actions))
    for y in range(height):
        for x in range(width):
            s = idx(x, y)
            if s == goal_s:
                transition[s, :, s] = 1.0
                reward[s, :] = 1.0
                continue
            if s in lava_s:
                transition[s, :, s] = 1.0
                continue
            for a in range(n_actions):
                for a_eff in range(n_actions):
                    if a_eff == a:
                        p = 1.0 - slip + slip / n_actions
                    else:
                        p = slip / n_actions
                    dx, dy = moves[a_eff]
                    nx = min(max(x + dx, 0), width - 1)
                    ny = min(max(y + dy, 0), height - 1)
                    transition[s, a, idx(nx, ny)] += p
    return TabularMdp(
        n_states=n_states,
        n_actions=n_actions,
        transition=transition,
        true_reward=reward,
        discount=discount,
        start_state=0,
    )


def random_mdp(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    discount: float = 0.9,
    dirichlet_alpha: float = 1.0,
) -> TabularMdp:
    """Seeded random MDP: Dirichlet transitions, uniform [0, 1] rewards."""
    transition = rng.dirichlet(
        np.full(n_states, dirichlet_alpha), size=(n_states, n_actions)
    )
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(
        n_states=n_states,
        n_actions=n_actions,
        transition=transition,
        true_reward=reward,
        discount=discount,
        start_state=0,
    )
