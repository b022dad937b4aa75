"""Preference query selection and scripted teachers.

The exploratory criterion picks the segment pair maximizing, over head
pairs, the difference of value differences. The O(S * M^2) decomposition
used here is exact: for a fixed head pair (i, j), d(seg) = V_i(seg) -
V_j(seg) and the best pair is (argmax d, argmin d).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from prefrl.datasets import Segment
from prefrl.mdp import TabularMdp
from prefrl.rewards import RewardEnsemble, bt_probability
from prefrl.solver import ValueEnsemble, segment_values_matrix

STRATEGIES = ("ide", "random", "disagreement")


@dataclass(frozen=True)
class QueryPool:
    """Per-round pool of candidate segments, all sharing one length."""

    segments: list[Segment]
    round: int = 0
    pool_seed: int = 0

    def __post_init__(self) -> None:
        if len(self.segments) < 2:
            raise ValueError("pool needs at least 2 segments")
        lengths = {len(seg) for seg in self.segments}
        if len(lengths) != 1:
            raise ValueError("all pool segments must share a length")

    @classmethod
    def subsample(
        cls, segments: list[Segment], size: int, round: int, seed: int
    ) -> "QueryPool":
        """Round-keyed subsample of up to `size` segments without replacement."""
        pool_seed = seed ^ round
        rng = np.random.default_rng(np.random.SeedSequence([seed, round]))
        if len(segments) <= size:
            chosen = list(segments)
        else:
            idx = rng.choice(len(segments), size=size, replace=False)
            chosen = [segments[i] for i in sorted(idx)]
        return cls(segments=chosen, round=round, pool_seed=pool_seed)


@dataclass(frozen=True)
class QueryPair:
    seg1: Segment
    seg2: Segment
    score: float
    strategy: str

    def __post_init__(self) -> None:
        if self.seg1.key == self.seg2.key:
            raise ValueError("query pair must be two distinct segments")
        if not np.isfinite(self.score):
            raise ValueError("score must be finite")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def key(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return (self.seg1.key, self.seg2.key)


def _pair_from_extremes(d: np.ndarray) -> tuple[int, int, float]:
    """Best (k, l) with k < l for one head pair, lexicographic on ties."""
    hi = int(np.argmax(d))
    lo = int(np.argmin(d))
    score = float(d[hi] - d[lo])
    if hi == lo:  # all values equal; any pair scores 0
        return 0, 1, 0.0
    return min(hi, lo), max(hi, lo), score


def select_ide(
    pool: QueryPool,
    ensemble: ValueEnsemble,
    exclude: set | None = None,
    value_mode: str = "mean",
) -> QueryPair:
    """Maximize |(V_i(s1) - V_j(s1)) - (V_i(s2) - V_j(s2))| over segment
    pairs and head pairs; ties break lexicographically by (i, j, index)."""
    if ensemble.n_heads < 2:
        raise ValueError("exploratory selection needs at least 2 heads")
    values = segment_values_matrix(ensemble, pool.segments, mode=value_mode)
    n_heads, n_seg = values.shape
    best: tuple[float, int, int] | None = None
    for i in range(n_heads):
        for j in range(i + 1, n_heads):
            d = values[i] - values[j]
            if exclude:
                k, l, score = _scan_excluding(d, pool.segments, exclude)
            else:
                k, l, score = _pair_from_extremes(d)
            if k < 0:
                continue
            if best is None or score > best[0]:
                best = (score, k, l)
    if best is None:
        raise ValueError("no admissible segment pair in the pool")
    score, k, l = best
    return QueryPair(
        seg1=pool.segments[k], seg2=pool.segments[l], score=score, strategy="ide"
    )


def _scan_excluding(
    d: np.ndarray, segments: list[Segment], exclude: set
) -> tuple[int, int, float]:
    """Exhaustive scan over pairs skipping already-queried ones."""
    n = d.shape[0]
    gap = np.abs(d[:, None] - d[None, :])
    best = (-1, -1, -np.inf)
    order = np.dstack(np.triu_indices(n, k=1))[0]
    scores = gap[order[:, 0], order[:, 1]]
    for pos in np.argsort(-scores, kind="stable"):
        k, l = int(order[pos, 0]), int(order[pos, 1])
        if (segments[k].key, segments[l].key) in exclude:
            continue
        return k, l, float(scores[pos])
    return best


def select_random(
    pool: QueryPool, rng: np.random.Generator, exclude: set | None = None
) -> QueryPair:
    """Uniform distinct pair, seed-deterministic."""
    n = len(pool.segments)
    exclude = exclude or set()
    for _ in range(10_000):
        k, l = rng.choice(n, size=2, replace=False)
        k, l = (int(min(k, l)), int(max(k, l)))
        if (pool.segments[k].key, pool.segments[l].key) in exclude:
            continue
        d = 0.0
        return QueryPair(
            seg1=pool.segments[k], seg2=pool.segments[l], score=d, strategy="random"
        )
    raise ValueError("could not draw an unqueried pair from the pool")


def select_disagreement(
    pool: QueryPool, reward_ensemble: RewardEnsemble, exclude: set | None = None
) -> QueryPair:
    """Pair maximizing the std over heads of the BT preference probability;
    exhaustive over the pool with lexicographic tie-break."""
    if reward_ensemble.n_heads < 2:
        raise ValueError("disagreement selection needs at least 2 heads")
    fmap = reward_ensemble.feature_map
    feats = np.stack([fmap.segment_features(seg) for seg in pool.segments])
    returns = reward_ensemble.heads @ feats.T  # (n_heads, n_seg)
    n = len(pool.segments)
    exclude = exclude or set()
    best = None
    for k in range(n):
        for l in range(k + 1, n):
            if (pool.segments[k].key, pool.segments[l].key) in exclude:
                continue
            probs = [
                bt_probability(returns[m, k], returns[m, l])
                for m in range(reward_ensemble.n_heads)
            ]
            std = float(np.std(probs))
            if best is None or std > best[0]:
                best = (std, k, l)
    if best is None:
        raise ValueError("no admissible segment pair in the pool")
    std, k, l = best
    return QueryPair(
        seg1=pool.segments[k], seg2=pool.segments[l], score=std, strategy="disagreement"
    )


def true_segment_sum(mdp: TabularMdp, seg: Segment) -> float:
    """Undiscounted true-reward sum over the segment's steps."""
    return float(mdp.true_reward[seg.states, seg.actions].sum())


def oracle_answer(
    mdp: TabularMdp,
    pair: QueryPair,
    mode: str = "deterministic",
    rng: np.random.Generator | None = None,
) -> float:
    """Scripted teacher grading undiscounted true segment sums.

    deterministic: 1 / 0 / 0.5 by strict comparison; stochastic: Bernoulli
    with the BT probability of the two sums.
    """
    r1 = true_segment_sum(mdp, pair.seg1)
    r2 = true_segment_sum(mdp, pair.seg2)
    if mode == "deterministic":
        if r1 > r2:
            return 1.0
        if r1 < r2:
            return 0.0
        return 0.5
    if mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic teacher needs an rng")
        p = bt_probability(r1, r2)
        return 1.0 if rng.random() < p else 0.0
    raise ValueError(f"unknown teacher mode {mode!r}")


def log_query(
    path: str,
    round: int,
    pair: QueryPair,
    label: float,
    teacher_mode: str,
) -> None:
    """Append one query-log line (JSON-lines schema)."""
    doc = {
        "round": round,
        "strategy": pair.strategy,
        "seg1": [pair.seg1.trajectory_index, pair.seg1.start],
        "seg2": [pair.seg2.trajectory_index, pair.seg2.start],
        "score": pair.score,
        "label": label,
        "teacher_mode": teacher_mode,
    }
    with open(path, "a") as f:
        f.write(json.dumps(doc) + "\n")
