"""The query-loop driver, metrics, and sweeps.

`LoopSession` exposes the loop one preference at a time so that the same
code path serves both the in-process scripted-teacher run and the HTTP
labeling service: identical seeds plus identical labels yield identical
artifacts byte for byte.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from prefrl.config import ExperimentConfig
from prefrl.datasets import OfflineDataset, extract_segments, generate_dataset
from prefrl.mdp import Policy, TabularMdp, suboptimality
from prefrl.queries import (
    QueryPair,
    QueryPool,
    oracle_answer,
    select_disagreement,
    select_ide,
    select_random,
)
from prefrl.rewards import (
    AnnotatedDataset,
    PreferenceDataset,
    PreferenceRecord,
    RewardEnsemble,
    annotate,
    one_hot_features,
    train_ensemble,
)
from prefrl.solver import (
    DiscountSchedule,
    ValueEnsemble,
    extract_policy,
    train_value_functions,
)


@dataclass
class MetricsRecord:
    round: int
    suboptimality: float
    reward_correlation: float
    query_score: float
    wall_ms: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "round": self.round,
                "suboptimality": self.suboptimality,
                "reward_correlation": self.reward_correlation,
                "query_score": self.query_score,
                "wall_ms": self.wall_ms,
            }
        )


@dataclass
class QueryLogEntry:
    round: int
    strategy: str
    seg1: tuple[int, int]
    seg2: tuple[int, int]
    score: float
    label: float
    teacher_mode: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "round": self.round,
                "strategy": self.strategy,
                "seg1": list(self.seg1),
                "seg2": list(self.seg2),
                "score": self.score,
                "label": self.label,
                "teacher_mode": self.teacher_mode,
            }
        )


def reward_correlation(
    mdp: TabularMdp, annotated: AnnotatedDataset
) -> float:
    """Pearson correlation between the mean learned reward and the true
    reward over the dataset's visited (s, a) steps."""
    ss, aa = annotated.dataset.state_action_pairs()
    learned = annotated.mean_reward[ss, aa]
    true = mdp.true_reward[ss, aa]
    if np.std(learned) == 0 or np.std(true) == 0:
        return 0.0
    return float(np.corrcoef(learned, true)[0, 1])


class LoopSession:
    """Stepwise driver of the main query loop.

    Usage: repeatedly call `next_query()` then `submit_label(label)` until
    `done`, then `finalize()` for the extracted policy. Internal RNG
    streams are all derived from the master seed, so the artifacts depend
    only on (config, labels).
    """

    def __init__(self, cfg: ExperimentConfig, mdp: TabularMdp | None = None,
                 dataset: OfflineDataset | None = None):
        self.cfg = cfg
        self.mdp = mdp if mdp is not None else cfg.environment.build()
        self.dataset = (
            dataset
            if dataset is not None
            else generate_dataset(self.mdp, cfg.behavior, seed=cfg.seed)
        )
        self.segments = extract_segments(self.dataset, cfg.segment_length)
        self.fmap = one_hot_features(self.mdp.n_states, self.mdp.n_actions)
        self.prefs = PreferenceDataset()
        self.round = 0  # completed rounds
        self.metrics: list[MetricsRecord] = []
        self.query_log: list[QueryLogEntry] = []
        self._queried: set = set()
        self._pending: QueryPair | None = None
        self._ensemble: RewardEnsemble | None = None
        self._values: ValueEnsemble | None = None
        self._round_t0 = 0.0
        master = np.random.SeedSequence([cfg.seed, 0x5EED])
        # one spawned child per (round, purpose); generous upper bound
        self._children = master.spawn(4 * (cfg.query_budget + 2))
        self._final: tuple[Policy, AnnotatedDataset] | None = None

    def _rng(self, round_idx: int, purpose: int) -> np.random.Generator:
        return np.random.default_rng(self._children[4 * round_idx + purpose])

    @property
    def done(self) -> bool:
        return self.round >= self.cfg.query_budget

    @property
    def pending(self) -> QueryPair | None:
        return self._pending

    def next_query(self) -> QueryPair:
        """Retrain both ensembles on the preferences so far and select the
        next query pair. Idempotent while a query is pending."""
        if self._pending is not None:
            return self._pending
        if self.done:
            raise RuntimeError("query budget exhausted")
        cfg = self.cfg
        k = self.round + 1
        self._round_t0 = time.monotonic()
        self._ensemble = train_ensemble(
            self.prefs, self.fmap, cfg.reward, self._rng(k, 0)
        )
        annotated = annotate(self.dataset, self._ensemble)
        train_sched = replace(cfg.schedule, mode="off")
        solver_cfg = replace(cfg.solver, steps=cfg.steps_per_round * k)
        self._values = train_value_functions(
            annotated, train_sched, solver_cfg, self._rng(k, 1)
        )
        self._annotated = annotated
        pool = QueryPool.subsample(
            self.segments, cfg.pool_size, round=k, seed=cfg.seed
        )
        exclude = None if cfg.allow_repeat else self._queried
        if cfg.strategy == "ide":
            pair = select_ide(
                pool, self._values, exclude=exclude, value_mode=cfg.segment_value_mode
            )
        elif cfg.strategy == "disagreement":
            pair = select_disagreement(pool, self._ensemble, exclude=exclude)
        else:
            pair = select_random(pool, self._rng(k, 2), exclude=exclude)
        self._pending = pair
        return pair

    def submit_label(self, label: float) -> None:
        """Record the teacher's answer for the pending query and close the
        round with a metrics record."""
        if self._pending is None:
            raise RuntimeError("no pending query")
        if label not in (0.0, 0.5, 1.0):
            raise ValueError("label must be one of {0, 0.5, 1}")
        k = self.round + 1
        pair = self._pending
        self.prefs.append(
            PreferenceRecord(seg1=pair.seg1, seg2=pair.seg2, label=label, round=k)
        )
        self._queried.add(pair.key)
        self.query_log.append(
            QueryLogEntry(
                round=k,
                strategy=pair.strategy,
                seg1=pair.seg1.key,
                seg2=pair.seg2.key,
                score=pair.score,
                label=label,
                teacher_mode=self.cfg.teacher_mode,
            )
        )
        policy = extract_policy(self._annotated, self._values, self.cfg.solver)
        self.metrics.append(
            MetricsRecord(
                round=k,
                suboptimality=suboptimality(self.mdp, policy),
                reward_correlation=reward_correlation(self.mdp, self._annotated),
                query_score=pair.score,
                wall_ms=int((time.monotonic() - self._round_t0) * 1000),
            )
        )
        self._pending = None
        self.round = k

    def answer_with_oracle(self) -> float:
        """Scripted-teacher label for the pending query."""
        if self._pending is None:
            raise RuntimeError("no pending query")
        rng = self._rng(self.round + 1, 3)
        return oracle_answer(
            self.mdp, self._pending, mode=self.cfg.teacher_mode, rng=rng
        )

    def finalize(self) -> tuple[Policy, AnnotatedDataset]:
        """After the budget is spent: retrain the reward ensemble on the
        full preference dataset, annotate, train values with the configured
        discount schedule, and extract the final policy."""
        if not self.done:
            raise RuntimeError("query budget not yet exhausted")
        if self._final is not None:
            return self._final
        cfg = self.cfg
        k = cfg.query_budget + 1
        t0 = time.monotonic()
        ensemble = train_ensemble(self.prefs, self.fmap, cfg.reward, self._rng(k, 0))
        annotated = annotate(self.dataset, ensemble)
        solver_cfg = replace(cfg.solver, steps=cfg.final_steps)
        values = train_value_functions(
            annotated, cfg.schedule, solver_cfg, self._rng(k, 1)
        )
        policy = extract_policy(annotated, values, cfg.solver)
        self.metrics.append(
            MetricsRecord(
                round=k,
                suboptimality=suboptimality(self.mdp, policy),
                reward_correlation=reward_correlation(self.mdp, annotated),
                query_score=0.0,
                wall_ms=int((time.monotonic() - t0) * 1000),
            )
        )
        self._final = (policy, annotated)
        return self._final


def run_loop(
    cfg: ExperimentConfig,
    mdp: TabularMdp | None = None,
    dataset: OfflineDataset | None = None,
) -> tuple[Policy, list[MetricsRecord], LoopSession]:
    """In-process run with the scripted teacher answering every query."""
    session = LoopSession(cfg, mdp=mdp, dataset=dataset)
    while not session.done:
        session.next_query()
        session.submit_label(session.answer_with_oracle())
    policy, _ = session.finalize()
    return policy, session.metrics, session


def eval_policy(
    mdp: TabularMdp,
    policy: Policy,
    annotated: AnnotatedDataset | None = None,
) -> dict:
    """Exact suboptimality plus reward correlation when an annotation is
    supplied."""
    out = {"suboptimality": suboptimality(mdp, policy)}
    if annotated is not None:
        out["reward_correlation"] = reward_correlation(mdp, annotated)
    return out


def sweep(
    base: ExperimentConfig,
    grid: dict[str, list],
    seeds: list[int],
    csv_path: str | None = None,
) -> list[dict]:
    """Cross-product of dotted-key overrides, one run per (cell, seed).

    Returns tidy rows; cell failures are recorded and the sweep continues.
    """
    from prefrl.config import apply_overrides

    if not grid:
        raise ValueError("sweep grid must be non-empty")
    keys = sorted(grid.keys())
    rows: list[dict] = []
    for cell_id, combo in enumerate(product(*(grid[k] for k in keys))):
        overrides = {k: str(v) for k, v in zip(keys, combo)}
        for seed in seeds:
            row = {
                "cell": cell_id,
                "overrides": json.dumps(overrides, sort_keys=True),
                "seed": seed,
            }
            try:
                cfg = apply_overrides(base, overrides)
                cfg = replace(cfg, seed=seed)
                policy, metrics, session = run_loop(cfg)
                final = metrics[-1]
                row.update(
                    round=final.round,
                    suboptimality=final.suboptimality,
                    reward_correlation=final.reward_correlation,
                    error="",
                )
            except Exception as exc:  # record and continue
                row.update(
                    round=-1,
                    suboptimality=float("nan"),
                    reward_correlation=float("nan"),
                    error=f"{type(exc).__name__}: {exc}",
                )
            rows.append(row)
    if csv_path:
        fieldnames = [
            "cell", "overrides", "seed", "round",
            "suboptimality", "reward_correlation", "error",
        ]
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
    return rows
