"""Tabular IQL-style offline learning with variance-based discount scheduling.

Q and V are tables rather than networks, but training keeps minibatch SGD:
the discount schedule is defined relative to the variance distribution
*within a batch*, so batching is part of the method, not an approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from prefrl.datasets import Segment
from prefrl.mdp import Policy
from prefrl.rewards import AnnotatedDataset


class SolverDivergence(RuntimeError):
    """Value training produced non-finite tables."""


@dataclass(frozen=True)
class DiscountSchedule:
    """Per-sample discount rule driven by ensemble Q-variance.

    hard: samples whose variance strictly exceeds the (100 - m)th
    percentile of batch variances get gamma_small. soft: continuous
    annealing gamma / max(1, alpha_soft * var). off: gamma everywhere.
    """

    mode: str = "off"
    gamma: float = 0.99
    gamma_small: float = 0.7
    m_percent: float = 30.0
    alpha_soft: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("hard", "soft", "off"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if not (0.0 < self.gamma < 1.0) or not (0.0 < self.gamma_small < 1.0):
            raise ValueError("discounts must lie in (0, 1)")
        if self.gamma_small > self.gamma:
            raise ValueError("gamma_small must not exceed gamma")
        if not (0.0 < self.m_percent <= 100.0):
            raise ValueError("m_percent must lie in (0, 100]")
        if self.alpha_soft <= 0:
            raise ValueError("alpha_soft must be positive")


@dataclass(frozen=True)
class SolverConfig:
    """IQL hyperparameters; key names mirror the standard sheet."""

    iql_tau: float = 0.7
    iql_alpha: float = 3.0
    learning_rate: float = 0.5
    # harmonic decay: step t uses learning_rate / (1 + lr_decay * t)
    lr_decay: float = 0.0
    batch_size: int = 256
    steps: int = 3000
    target_update_rate: float = 5e-3

    def __post_init__(self) -> None:
        if not (0.5 < self.iql_tau < 1.0):
            raise ValueError("iql_tau must lie in (0.5, 1)")
        if self.iql_alpha <= 0 or self.learning_rate <= 0:
            raise ValueError("iql_alpha and learning_rate must be positive")
        if self.lr_decay < 0:
            raise ValueError("lr_decay must be non-negative")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size and steps must be non-negative")
        if not (0.0 < self.target_update_rate <= 1.0):
            raise ValueError("target_update_rate must lie in (0, 1]")


@dataclass(frozen=True)
class ValueEnsemble:
    """Per-head Q(s, a) and V(s) tables, one pair per reward head."""

    q: np.ndarray  # (n_heads, n_states, n_actions)
    v: np.ndarray  # (n_heads, n_states)

    def __post_init__(self) -> None:
        q = np.ascontiguousarray(self.q, dtype=np.float64)
        v = np.ascontiguousarray(self.v, dtype=np.float64)
        if q.ndim != 3 or v.ndim != 2 or q.shape[:2] != v.shape:
            raise ValueError("inconsistent ensemble shapes")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise ValueError("value tables must be finite")
        q.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    @property
    def n_heads(self) -> int:
        return self.q.shape[0]

    def to_json(self) -> str:
        import json

        return json.dumps({"q": self.q.tolist(), "v": self.v.tolist()})


def scheduled_discount(
    states: np.ndarray,
    actions: np.ndarray,
    q_heads: np.ndarray,
    sched: DiscountSchedule,
) -> np.ndarray:
    """Per-sample discount for a batch of (s, a) pairs.

    q_heads is the (n_heads, n_states, n_actions) online Q snapshot; the
    variance is the population variance over heads. Ties at the hard-mode
    percentile threshold resolve to the full gamma.
    """
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    if states.size == 0:
        raise ValueError("batch must be non-empty")
    if q_heads.shape[0] < 2:
        raise ValueError("variance needs at least 2 heads")
    if sched.mode == "off":
        return np.full(states.size, sched.gamma)
    variances = q_heads[:, states, actions].var(axis=0)
    if sched.mode == "hard":
        threshold = np.percentile(variances, 100.0 - sched.m_percent)
        out = np.full(states.size, sched.gamma)
        out[variances > threshold] = sched.gamma_small
        return out
    # soft: continuous annealing toward smaller discounts as variance grows
    return sched.gamma / np.maximum(1.0, sched.alpha_soft * variances)


def train_value_functions(
    annotated: AnnotatedDataset,
    sched: DiscountSchedule,
    cfg: SolverConfig,
    rng: np.random.Generator,
) -> ValueEnsemble:
    """Minibatch tabular IQL per reward head.

    Each step alternates (a) expectile regression of V toward Q at
    iql_tau over the batch's in-dataset actions, and (b) the Q backup
    Q(s,a) <- r_i(s,a) + gamma_hat(s,a) * V_target(s') with per-sample
    discounts from the schedule and a Polyak-averaged V target. Q targets
    are clipped to +-R_max / (1 - gamma) to bound divergence from learned
    reward outliers.
    """
    rewards = annotated.head_rewards
    n_heads, n_states, n_actions = rewards.shape
    s, a, sn = annotated.dataset.transitions()
    if s.size == 0:
        raise ValueError("annotated dataset has no transitions")
    q = np.zeros((n_heads, n_states, n_actions))
    v = np.zeros((n_heads, n_states))
    v_target = v.copy()
    r_max = float(np.max(np.abs(rewards))) if rewards.size else 0.0
    clip = r_max / (1.0 - sched.gamma) if r_max > 0 else 0.0
    lr = cfg.learning_rate
    rho = cfg.target_update_rate
    tau = cfg.iql_tau
    for step in range(cfg.steps):
        lr = cfg.learning_rate / (1.0 + cfg.lr_decay * step)
        idx = rng.integers(s.size, size=cfg.batch_size)
        bs, ba, bn = s[idx], a[idx], sn[idx]
        flat = bs * n_actions + ba
        s_counts = np.maximum(np.bincount(bs, minlength=n_states), 1)
        sa_counts = np.maximum(
            np.bincount(flat, minlength=n_states * n_actions), 1
        )
        q_sel = q[:, bs, ba]  # (n_heads, batch)
        # (a) expectile regression of V toward the Q snapshot; duplicate
        # batch entries for a cell contribute their mean, not their sum
        diff = q_sel - v[:, bs]
        weight = np.abs(tau - (diff < 0.0))
        gv = lr * weight * diff
        for m in range(n_heads):
            v[m] += np.bincount(bs, weights=gv[m], minlength=n_states) / s_counts
        # (b) scheduled Q backup against the Polyak target V
        gammas = scheduled_discount(bs, ba, q, sched)
        target = rewards[:, bs, ba] + gammas[None, :] * v_target[:, bn]
        np.clip(target, -clip, clip, out=target)
        gq = lr * (target - q_sel)
        for m in range(n_heads):
            q[m] += (
                np.bincount(flat, weights=gq[m], minlength=n_states * n_actions)
                / sa_counts
            ).reshape(n_states, n_actions)
        v_target += rho * (v - v_target)
        if step % 200 == 0 and not (
            np.all(np.isfinite(q)) and np.all(np.isfinite(v))
        ):
            raise SolverDivergence(f"non-finite value tables at step {step}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
        raise SolverDivergence("non-finite value tables after training")
    return ValueEnsemble(q=q, v=v)


def extract_policy(
    annotated: AnnotatedDataset, ensemble: ValueEnsemble, cfg: SolverConfig
) -> Policy:
    """Advantage-weighted policy over in-dataset actions.

    pi(a|s) is proportional to behavior_count(s, a) *
    exp(iql_alpha * mean-head advantage). States never visited in the
    dataset fall back to uniform.
    """
    n_states, n_actions = annotated.mean_reward.shape
    ss, aa = annotated.dataset.state_action_pairs()
    counts = np.zeros((n_states, n_actions))
    np.add.at(counts, (ss, aa), 1.0)
    advantage = (ensemble.q - ensemble.v[:, :, None]).mean(axis=0)
    # subtract the per-state max before exponentiating for stability
    shifted = cfg.iql_alpha * (advantage - advantage.max(axis=1, keepdims=True))
    weights = counts * np.exp(shifted)
    probs = np.full((n_states, n_actions), 1.0 / n_actions)
    seen = weights.sum(axis=1) > 0
    probs[seen] = weights[seen] / weights[seen].sum(axis=1, keepdims=True)
    return Policy(probs)


def segment_value(
    ensemble: ValueEnsemble, head: int, seg: Segment, mode: str = "mean"
) -> float:
    """Score a segment with one head's V table.

    mode 'mean' averages V over segment states (scale-stable across
    segment lengths), 'first' uses the first state, 'discounted_sum' sums
    V over states without normalization.
    """
    if not (0 <= head < ensemble.n_heads):
        raise ValueError("head index out of range")
    values = ensemble.v[head, seg.states]
    if mode == "mean":
        return float(values.mean())
    if mode == "first":
        return float(values[0])
    if mode == "discounted_sum":
        return float(values.sum())
    raise ValueError(f"unknown segment_value mode {mode!r}")


def segment_values_matrix(
    ensemble: ValueEnsemble, segments: list[Segment], mode: str = "mean"
) -> np.ndarray:
    """Vectorized segment_value: shape (n_heads, n_segments)."""
    states = np.stack([seg.states for seg in segments])  # (n_seg, L)
    per_step = ensemble.v[:, states]  # (n_heads, n_seg, L)
    if mode == "mean":
        return per_step.mean(axis=2)
    if mode == "first":
        return per_step[:, :, 0]
    if mode == "discounted_sum":
        return per_step.sum(axis=2)
    raise ValueError(f"unknown segment_value mode {mode!r}")
