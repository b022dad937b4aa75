"""Version-space query loop on finite hypothesis families.

Implements the exact small-scale counterpart of the ensemble pipeline:
maximum-likelihood confidence sets over a finite family of return
hypotheses, Bellman-consistent pessimistic policy selection and
evaluation, candidate-policy-set construction, explorative policy-pair
selection, and the full query loop with measurable suboptimality.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from prefrl.datasets import OfflineDataset
from prefrl.mdp import (
    Policy,
    TabularMdp,
    Trajectory,
    policy_evaluation,
    rollout,
    value_iteration,
)
from prefrl.rewards import PROB_CLIP, bt_probability


class EmptyVersionSpaceError(RuntimeError):
    """No q-hypothesis met the Bellman-residual tolerance for a policy."""


@dataclass(frozen=True)
class FiniteFamilies:
    """Enumerable hypothesis families: reward tables (inducing return
    functions over trajectories), q tables, and deterministic policies."""

    rewards: np.ndarray  # (n_rewards, n_states, n_actions)
    qfuncs: np.ndarray  # (n_qfuncs, n_states, n_actions)
    policies: tuple[Policy, ...]

    def __post_init__(self) -> None:
        rewards = np.ascontiguousarray(self.rewards, dtype=np.float64)
        qfuncs = np.ascontiguousarray(self.qfuncs, dtype=np.float64)
        if rewards.ndim != 3 or qfuncs.ndim != 3 or len(self.policies) == 0:
            raise ValueError("families must be non-empty 3-d stacks plus policies")
        rewards.setflags(write=False)
        qfuncs.setflags(write=False)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "qfuncs", qfuncs)

    @property
    def n_rewards(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_delta(self) -> int:
        """Size of the induced pairwise return-difference family."""
        return self.n_rewards**2


@dataclass(frozen=True)
class ConfidenceSet:
    member_indices: tuple[int, ...]
    beta: float
    round: int = 0

    def __post_init__(self) -> None:
        if len(self.member_indices) == 0:
            raise ValueError("confidence set must contain the MLE")


@dataclass(frozen=True)
class PessimisticEstimate:
    policy_index: int
    policy: Policy
    value: float
    qtable_index: int
    epsilon: float


@dataclass(frozen=True)
class TheoryPreference:
    traj1: Trajectory
    traj2: Trajectory
    label: float


def trajectory_return(
    reward_table: np.ndarray, traj: Trajectory, discount: float
) -> float:
    """Discounted return of a finite trajectory under a reward hypothesis."""
    rewards = reward_table[traj.states, traj.actions]
    return float(np.dot(discount ** np.arange(len(traj)), rewards))


def _return_matrix(
    fams: FiniteFamilies, prefs: list[TheoryPreference], discount: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-hypothesis returns on the queried pairs: (R1, R2, labels)."""
    n = len(prefs)
    r1 = np.empty((fams.n_rewards, n))
    r2 = np.empty((fams.n_rewards, n))
    labels = np.array([p.label for p in prefs])
    for i, pref in enumerate(prefs):
        for h in range(fams.n_rewards):
            r1[h, i] = trajectory_return(fams.rewards[h], pref.traj1, discount)
            r2[h, i] = trajectory_return(fams.rewards[h], pref.traj2, discount)
    return r1, r2, labels


def mle_return(
    prefs: list[TheoryPreference], fams: FiniteFamilies, discount: float
) -> int:
    """Index of the hypothesis minimizing the cross-entropy loss over all
    queried pairs; exhaustive, lexicographic winner on ties."""
    if not prefs:
        return 0
    r1, r2, labels = _return_matrix(fams, prefs, discount)
    diff = r1 - r2
    p = np.clip(1.0 / (1.0 + np.exp(-diff)), PROB_CLIP, 1.0 - PROB_CLIP)
    losses = -(labels[None, :] * np.log(p) + (1.0 - labels[None, :]) * np.log(1.0 - p))
    return int(np.argmin(losses.sum(axis=1)))


def default_beta(k: int, n_delta: int, c1: float = 2.0) -> float:
    return c1 * math.sqrt(math.log(k * n_delta) / k)


def default_epsilon(n: int, n_policies: int, n_qfuncs: int, c2: float = 2.0) -> float:
    return c2 * math.sqrt(math.log(n * n_policies * n_qfuncs) / n)


def confidence_set(
    prefs: list[TheoryPreference],
    fams: FiniteFamilies,
    beta: float,
    discount: float,
    round: int = 0,
) -> ConfidenceSet:
    """Hypotheses whose return differences on the queried pairs stay within
    beta (summed squared deviation) of the MLE's."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if not prefs:
        return ConfidenceSet(
            member_indices=tuple(range(fams.n_rewards)), beta=beta, round=round
        )
    mle = mle_return(prefs, fams, discount)
    r1, r2, _ = _return_matrix(fams, prefs, discount)
    diff = r1 - r2
    residuals = ((diff - diff[mle][None, :]) ** 2).sum(axis=1)
    members = tuple(int(i) for i in np.flatnonzero(residuals <= beta))
    return ConfidenceSet(member_indices=members, beta=beta, round=round)


@dataclass(frozen=True)
class CollapsedTransitions:
    """Unique (s, a, s') triples with visit counts, for weighted losses."""

    s: np.ndarray
    a: np.ndarray
    sn: np.ndarray
    w: np.ndarray

    @classmethod
    def from_dataset(cls, dataset: OfflineDataset) -> "CollapsedTransitions":
        s, a, sn = dataset.transitions()
        return cls.from_arrays(s, a, sn)

    @classmethod
    def from_arrays(
        cls, s: np.ndarray, a: np.ndarray, sn: np.ndarray
    ) -> "CollapsedTransitions":
        if s.size == 0:
            raise ValueError("no transitions available")
        triples = np.stack([s, a, sn], axis=1)
        uniq, counts = np.unique(triples, axis=0, return_counts=True)
        return cls(
            s=uniq[:, 0], a=uniq[:, 1], sn=uniq[:, 2], w=counts.astype(np.float64)
        )

    @property
    def total(self) -> int:
        return int(self.w.sum())


def _policy_actions(pi: Policy) -> np.ndarray:
    return pi.greedy_actions()


def _pessimistic_value_for_policy(
    trans: CollapsedTransitions,
    reward_table: np.ndarray,
    pi: Policy,
    fams: FiniteFamilies,
    epsilon: float,
    discount: float,
    start_state: int,
) -> tuple[float, int]:
    """min over the small-Bellman-residual set of q(s0, pi), plus argmin."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    q = fams.qfuncs
    acts = _policy_actions(pi)
    pred = q[:, trans.s, trans.a]  # (n_q, T)
    qnext = q[:, trans.sn, acts[trans.sn]]  # (n_q, T)
    r_vec = reward_table[trans.s, trans.a]
    targets = r_vec[None, :] + discount * qnext  # (n_q, T)
    sw = np.sqrt(trans.w)
    pw = pred * sw[None, :]
    tw = targets * sw[None, :]
    loss_self = ((pw - tw) ** 2).sum(axis=1)
    # pairwise ||pw[q'] - tw[q]||^2 via the expansion trick
    p2 = (pw**2).sum(axis=1)
    t2 = (tw**2).sum(axis=1)
    cross = pw @ tw.T  # (q', q)
    loss_min = (p2[:, None] - 2.0 * cross + t2[None, :]).min(axis=0)
    member = loss_self - loss_min <= epsilon + 1e-9
    if not member.any():
        raise EmptyVersionSpaceError(
            "no q-hypothesis within epsilon of its best Bellman fit"
        )
    start_vals = q[:, start_state, acts[start_state]]
    masked = np.where(member, start_vals, np.inf)
    idx = int(np.argmin(masked))
    return float(start_vals[idx]), idx


def bcpe(
    trans: CollapsedTransitions,
    reward_table: np.ndarray,
    pi: Policy,
    fams: FiniteFamilies,
    epsilon: float,
    discount: float,
    start_state: int = 0,
) -> float:
    """Pessimistic policy value: worst-case q(s0, pi) over hypotheses whose
    Bellman residual is within epsilon of the best achievable fit."""
    value, _ = _pessimistic_value_for_policy(
        trans, reward_table, pi, fams, epsilon, discount, start_state
    )
    return value


def bcp(
    trans: CollapsedTransitions,
    reward_table: np.ndarray,
    fams: FiniteFamilies,
    epsilon: float,
    discount: float,
    start_state: int = 0,
) -> PessimisticEstimate:
    """Policy maximizing its pessimistic value, with the attaining q table."""
    best: tuple[float, int, int] | None = None
    for p_idx, pi in enumerate(fams.policies):
        value, q_idx = _pessimistic_value_for_policy(
            trans, reward_table, pi, fams, epsilon, discount, start_state
        )
        if best is None or value > best[0]:
            best = (value, p_idx, q_idx)
    value, p_idx, q_idx = best
    return PessimisticEstimate(
        policy_index=p_idx,
        policy=fams.policies[p_idx],
        value=value,
        qtable_index=q_idx,
        epsilon=epsilon,
    )


def candidate_policy_set(
    cset: ConfidenceSet,
    trans: CollapsedTransitions,
    fams: FiniteFamilies,
    epsilon: float,
    discount: float,
    start_state: int = 0,
) -> list[int]:
    """Union of pessimistic-best policies over confidence-set members,
    deduplicated in first-seen order."""
    seen: list[int] = []
    for r_idx in cset.member_indices:
        est = bcp(trans, fams.rewards[r_idx], fams, epsilon, discount, start_state)
        if est.policy_index not in seen:
            seen.append(est.policy_index)
    return seen


def select_exploratory_policies(
    pi_set: list[int],
    cset: ConfidenceSet,
    trans: CollapsedTransitions,
    fams: FiniteFamilies,
    epsilon: float,
    discount: float,
    start_state: int = 0,
    value_table: np.ndarray | None = None,
) -> tuple[int, int, float]:
    """Pair of candidate policies maximizing the worst-case disagreement of
    pessimistic values across confidence-set rewards. Returns (policy index,
    policy index, score); a singleton input returns (pi, pi, 0)."""
    if not pi_set:
        raise ValueError("candidate policy set must be non-empty")
    if value_table is None:
        value_table = np.array(
            [
                [
                    bcpe(
                        trans,
                        fams.rewards[r_idx],
                        fams.policies[p_idx],
                        fams,
                        epsilon,
                        discount,
                        start_state,
                    )
                    for r_idx in cset.member_indices
                ]
                for p_idx in pi_set
            ]
        )
    best: tuple[float, int, int] | None = None
    n_r = value_table.shape[1]
    for i in range(n_r):
        for j in range(n_r):
            d = value_table[:, i] - value_table[:, j]
            hi = int(np.argmax(d))
            lo = int(np.argmin(d))
            score = float(d[hi] - d[lo])
            if best is None or score > best[0]:
                best = (score, hi, lo)
    score, hi, lo = best
    if score <= 0.0:
        return pi_set[0], pi_set[0], 0.0
    return pi_set[hi], pi_set[lo], score


# --- family construction utilities ---------------------------------------


def all_deterministic_policies(
    n_states: int, n_actions: int, cap: int = 256, rng: np.random.Generator | None = None
) -> tuple[Policy, ...]:
    """Every deterministic policy, or a seeded sample of `cap` when the
    full product is larger."""
    total = n_actions**n_states
    if total <= cap:
        combos = product(range(n_actions), repeat=n_states)
        return tuple(
            Policy.deterministic(np.array(c), n_actions) for c in combos
        )
    if rng is None:
        raise ValueError(f"{total} policies exceed cap {cap}; pass an rng to sample")
    picks = rng.choice(total, size=cap, replace=False)
    policies = []
    for flat in sorted(int(p) for p in picks):
        actions = []
        for _ in range(n_states):
            actions.append(flat % n_actions)
            flat //= n_actions
        policies.append(Policy.deterministic(np.array(actions), n_actions))
    return tuple(policies)


def build_reward_family(
    mdp: TabularMdp,
    n_extra: int,
    rng: np.random.Generator,
    scale: float = 0.25,
    include_true: bool = True,
    include_negation: bool = False,
) -> np.ndarray:
    """True reward (realizable mode) plus structured perturbations, all
    clipped to [0, 1]."""
    tables = []
    if include_true:
        tables.append(mdp.true_reward.copy())
    if include_negation:
        tables.append(1.0 - mdp.true_reward)
    for _ in range(n_extra):
        noise = rng.uniform(-scale, scale, size=mdp.true_reward.shape)
        tables.append(np.clip(mdp.true_reward + noise, 0.0, 1.0))
    if not tables:
        raise ValueError("reward family would be empty")
    return np.stack(tables)


def build_q_family(
    mdp: TabularMdp,
    policies: tuple[Policy, ...],
    rewards: np.ndarray,
    rng: np.random.Generator,
    n_pairs: int,
    include_optimal: bool = True,
) -> np.ndarray:
    """Exact Q^pi_R tables for sampled (policy, reward) pairs, optionally
    with the optimal Q* under every reward hypothesis (realizable mode)."""
    tables = []
    if include_optimal:
        for r in rewards:
            tables.append(value_iteration(mdp, reward=r).q)
    n_total = len(policies) * rewards.shape[0]
    n_pairs = min(n_pairs, n_total)
    picks = rng.choice(n_total, size=n_pairs, replace=False)
    for flat in sorted(int(p) for p in picks):
        p_idx, r_idx = flat // rewards.shape[0], flat % rewards.shape[0]
        tables.append(
            policy_evaluation(mdp, policies[p_idx], reward=rewards[r_idx]).q
        )
    uniq = np.unique(np.stack(tables), axis=0)
    return uniq


# --- the query loop -------------------------------------------------------


@dataclass
class TheoryRoundRecord:
    round: int
    beta: float
    cset_size: int
    pi_set_size: int
    pair: tuple[int, int]
    score: float
    label: float
    subopt_running: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "round": self.round,
                "beta": self.beta,
                "cset_size": self.cset_size,
                "pi_set_size": self.pi_set_size,
                "pair": list(self.pair),
                "score": self.score,
                "label": self.label,
                "subopt_running": self.subopt_running,
            }
        )


@dataclass(frozen=True)
class TheoryResult:
    policy_indices: tuple[int, ...]
    suboptimality: float
    records: tuple[TheoryRoundRecord, ...]


def _best_dataset_match(
    dataset: OfflineDataset, reference: Trajectory
) -> Trajectory:
    """In-dataset trajectory with maximal state-visitation overlap."""
    ref_states = set(int(s) for s in reference.states)
    best, best_overlap = None, -1
    for traj in dataset.trajectories:
        overlap = len(ref_states.intersection(int(s) for s in traj.states))
        if overlap > best_overlap:
            best, best_overlap = traj, overlap
    return best


def _mixture_suboptimality(
    mdp: TabularMdp, fams: FiniteFamilies, indices: list[int], v_pi_cache: dict
) -> float:
    v_star = v_pi_cache["__v_star__"]
    vals = []
    for idx in indices:
        if idx not in v_pi_cache:
            v_pi_cache[idx] = policy_evaluation(mdp, fams.policies[idx]).v[
                mdp.start_state
            ]
        vals.append(v_pi_cache[idx])
    return float(v_star - np.mean(vals))


def run_theory_loop(
    mdp: TabularMdp,
    fams: FiniteFamilies,
    budget: int,
    dataset: OfflineDataset,
    teacher_mode: str = "stochastic",
    seed: int = 0,
    horizon: int = 50,
    c1: float = 2.0,
    c2: float = 2.0,
    query_mode: str = "rollout",
    log_path: str | None = None,
) -> TheoryResult:
    """Run the full version-space query loop.

    Per round: build the confidence set, take pessimistic-best policies as
    candidates, select the most disagreeing pair, sample one trajectory per
    policy (env rollout by default, in-dataset nearest match in 'offline'
    mode), query the teacher on true discounted returns, append. Returns
    the uniform mixture over all selected policies with its exact
    suboptimality.
    """
    if budget < 1:
        raise ValueError("query budget must be >= 1")
    trans = CollapsedTransitions.from_dataset(dataset)
    epsilon = default_epsilon(trans.total, len(fams.policies), fams.qfuncs.shape[0], c2)
    beta = default_beta(budget, fams.n_delta, c1)
    master = np.random.SeedSequence(seed)
    rollout_rng = np.random.default_rng(master.spawn(1)[0])
    teacher_rng = np.random.default_rng(master.spawn(1)[0])

    # pessimistic values are static across rounds: precompute the full
    # (policy, reward) table once
    full_cset = ConfidenceSet(
        member_indices=tuple(range(fams.n_rewards)), beta=np.inf, round=0
    )
    all_policies = list(range(len(fams.policies)))
    v_hat = np.array(
        [
            [
                bcpe(
                    trans,
                    fams.rewards[r],
                    fams.policies[p],
                    fams,
                    epsilon,
                    mdp.discount,
                    mdp.start_state,
                )
                for r in range(fams.n_rewards)
            ]
            for p in all_policies
        ]
    )
    bcp_policy = [int(np.argmax(v_hat[:, r])) for r in range(fams.n_rewards)]

    prefs: list[TheoryPreference] = []
    chosen: list[int] = []
    records: list[TheoryRoundRecord] = []
    v_pi_cache: dict = {
        "__v_star__": value_iteration(mdp).v[mdp.start_state]
    }
    for k in range(1, budget + 1):
        cset = confidence_set(prefs, fams, beta, mdp.discount, round=k)
        pi_set: list[int] = []
        for r_idx in cset.member_indices:
            if bcp_policy[r_idx] not in pi_set:
                pi_set.append(bcp_policy[r_idx])
        sub_table = v_hat[np.ix_(pi_set, list(cset.member_indices))]
        p1, p2, score = select_exploratory_policies(
            pi_set, cset, trans, fams, epsilon, mdp.discount, value_table=sub_table
        )
        tau1 = rollout(mdp, fams.policies[p1], horizon, rollout_rng)
        tau2 = rollout(mdp, fams.policies[p2], horizon, rollout_rng)
        if query_mode == "offline":
            tau1 = _best_dataset_match(dataset, tau1)
            tau2 = _best_dataset_match(dataset, tau2)
        elif query_mode != "rollout":
            raise ValueError(f"unknown query mode {query_mode!r}")
        r1 = trajectory_return(mdp.true_reward, tau1, mdp.discount)
        r2 = trajectory_return(mdp.true_reward, tau2, mdp.discount)
        if teacher_mode == "deterministic":
            label = 1.0 if r1 > r2 else 0.0 if r1 < r2 else 0.5
        elif teacher_mode == "stochastic":
            label = 1.0 if teacher_rng.random() < bt_probability(r1, r2) else 0.0
        else:
            raise ValueError(f"unknown teacher mode {teacher_mode!r}")
        prefs.append(TheoryPreference(traj1=tau1, traj2=tau2, label=label))
        chosen.extend([p1, p2])
        records.append(
            TheoryRoundRecord(
                round=k,
                beta=beta,
                cset_size=len(cset.member_indices),
                pi_set_size=len(pi_set),
                pair=(p1, p2),
                score=score,
                label=label,
                subopt_running=_mixture_suboptimality(mdp, fams, chosen, v_pi_cache),
            )
        )
    if log_path is not None:
        with open(log_path, "w") as f:
            for rec in records:
                f.write(rec.to_json() + "\n")
    return TheoryResult(
        policy_indices=tuple(chosen),
        suboptimality=_mixture_suboptimality(mdp, fams, chosen, v_pi_cache),
        records=tuple(records),
    )
