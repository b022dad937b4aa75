"""Bradley-Terry preference modeling with a bootstrapped linear ensemble.

Each reward head is linear in a shared feature map (the tabular analog of a
multi-head network: shared backbone, distinct last layer), which keeps the
per-head maximum-likelihood problem convex. Heads train by full-batch
gradient descent on a bootstrap resample of the preference records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from prefrl.datasets import OfflineDataset, Segment
from prefrl.mdp import TabularMdp

PROB_CLIP = 1e-12


class TrainingError(RuntimeError):
    """Reward-head training produced non-finite values."""


class FeatureMap:
    """Deterministic (state, action) -> feature vector mapping.

    `table` has shape (n_states, n_actions, dimension) and is the only
    thing consumers need; subclasses populate it.
    """

    def __init__(self, table: np.ndarray):
        table = np.ascontiguousarray(table, dtype=np.float64)
        if not np.all(np.isfinite(table)):
            raise ValueError("feature table must be finite")
        table.setflags(write=False)
        self.table = table

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def n_actions(self) -> int:
        return self.table.shape[1]

    @property
    def dimension(self) -> int:
        return self.table.shape[2]

    def __call__(self, state: int, action: int) -> np.ndarray:
        return self.table[state, action]

    def segment_features(self, seg: Segment) -> np.ndarray:
        """Undiscounted sum of per-step features over the segment."""
        return self.table[seg.states, seg.actions].sum(axis=0)

    def describe(self) -> dict:
        return {
            "kind": "dense",
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "dimension": self.dimension,
        }


def one_hot_features(n_states: int, n_actions: int) -> FeatureMap:
    """Tabular one-hot features of dimension n_states * n_actions."""
    dim = n_states * n_actions
    table = np.eye(dim).reshape(n_states, n_actions, dim)
    return FeatureMap(table)


@dataclass(frozen=True)
class PreferenceRecord:
    """One answered query: label 1 means seg1 preferred, 0.5 is a tie."""

    seg1: Segment
    seg2: Segment
    label: float
    round: int = 0

    def __post_init__(self) -> None:
        if len(self.seg1) != len(self.seg2):
            raise ValueError("segments in a record must share length")
        if self.label not in (0.0, 0.5, 1.0):
            raise ValueError("label must be one of {0, 0.5, 1}")


class PreferenceDataset:
    """Append-only store of preference records, ordered by round."""

    def __init__(self, records: list[PreferenceRecord] | None = None):
        self._records: list[PreferenceRecord] = []
        for rec in records or []:
            self.append(rec)

    def append(self, record: PreferenceRecord) -> None:
        if self._records and record.round < self._records[-1].round:
            raise ValueError("round indices must be non-decreasing")
        self._records.append(record)

    @property
    def records(self) -> list[PreferenceRecord]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            for rec in self._records:
                doc = {
                    "seg1": [rec.seg1.trajectory_index, rec.seg1.start, len(rec.seg1)],
                    "seg2": [rec.seg2.trajectory_index, rec.seg2.start, len(rec.seg2)],
                    "label": rec.label,
                    "round": rec.round,
                }
                f.write(json.dumps(doc) + "\n")


@dataclass(frozen=True)
class RewardTrainConfig:
    n_heads: int = 2
    learning_rate: float = 3e-4
    max_steps: int = 5000
    grad_tol: float = 1e-6
    init_scale: float = 1e-2
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.n_heads < 2:
            raise ValueError("ensemble needs at least 2 heads")
        if self.learning_rate <= 0 or self.max_steps < 1 or self.grad_tol <= 0:
            raise ValueError("invalid training config")


@dataclass(frozen=True)
class RewardEnsemble:
    """Bootstrapped linear reward heads over a shared feature map."""

    feature_map: FeatureMap
    heads: np.ndarray  # (n_heads, dimension)
    bootstrap_masks: np.ndarray  # (n_heads, n_records) inclusion counts

    def __post_init__(self) -> None:
        heads = np.ascontiguousarray(self.heads, dtype=np.float64)
        if heads.ndim != 2 or heads.shape[0] < 2:
            raise ValueError("ensemble needs at least 2 heads")
        if heads.shape[1] != self.feature_map.dimension:
            raise ValueError("head dimension does not match feature map")
        if not np.all(np.isfinite(heads)):
            raise ValueError("head weights must be finite")
        heads.setflags(write=False)
        object.__setattr__(self, "heads", heads)

    @property
    def n_heads(self) -> int:
        return self.heads.shape[0]

    def reward_tables(self) -> np.ndarray:
        """Per-head reward tables, shape (n_heads, n_states, n_actions)."""
        return np.einsum("sad,hd->hsa", self.feature_map.table, self.heads)

    def mean_reward_table(self) -> np.ndarray:
        return self.reward_tables().mean(axis=0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "feature_map": self.feature_map.describe(),
                "heads": self.heads.tolist(),
                "bootstrap_masks": self.bootstrap_masks.tolist(),
            }
        )


def segment_return(head: np.ndarray, fmap: FeatureMap, seg: Segment) -> float:
    """Undiscounted within-segment sum of the head's per-step rewards."""
    return float(np.dot(head, fmap.segment_features(seg)))


def bt_probability(return1: float, return2: float) -> float:
    """P(seg1 preferred) = 1 / (exp(return2 - return1) + 1), overflow-safe."""
    diff = return1 - return2
    if diff >= 0:
        return 1.0 / (1.0 + np.exp(-diff))
    e = np.exp(diff)
    return float(e / (1.0 + e))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _design_matrix(prefs: PreferenceDataset, fmap: FeatureMap) -> tuple[np.ndarray, np.ndarray]:
    """Per-record difference-of-segment-features matrix and label vector."""
    records = prefs.records
    x = np.empty((len(records), fmap.dimension))
    o = np.empty(len(records))
    for k, rec in enumerate(records):
        x[k] = fmap.segment_features(rec.seg1) - fmap.segment_features(rec.seg2)
        o[k] = rec.label
    return x, o


def ce_loss(
    head: np.ndarray,
    fmap: FeatureMap,
    prefs: PreferenceDataset,
    mask: np.ndarray | None = None,
) -> float:
    x, o = _design_matrix(prefs, fmap)
    return _ce_loss_from_design(head, x, o, mask)


def ce_loss_grad(
    head: np.ndarray,
    fmap: FeatureMap,
    prefs: PreferenceDataset,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    x, o = _design_matrix(prefs, fmap)
    return _ce_grad_from_design(head, x, o, mask)


def _effective_mask(n: int, mask: np.ndarray | None) -> np.ndarray:
    w = np.ones(n) if mask is None else np.asarray(mask, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError("mask length does not match record count")
    if w.sum() <= 0:
        raise ValueError("effective preference dataset is empty after masking")
    return w


def _ce_loss_from_design(
    head: np.ndarray, x: np.ndarray, o: np.ndarray, mask: np.ndarray | None
) -> float:
    if x.shape[0] == 0:
        raise ValueError("preference dataset is empty")
    w = _effective_mask(x.shape[0], mask)
    p = np.clip(_sigmoid(x @ head), PROB_CLIP, 1.0 - PROB_CLIP)
    losses = -(o * np.log(p) + (1.0 - o) * np.log(1.0 - p))
    return float(np.dot(w, losses) / w.sum())


def _ce_grad_from_design(
    head: np.ndarray, x: np.ndarray, o: np.ndarray, mask: np.ndarray | None
) -> np.ndarray:
    if x.shape[0] == 0:
        raise ValueError("preference dataset is empty")
    w = _effective_mask(x.shape[0], mask)
    p = np.clip(_sigmoid(x @ head), PROB_CLIP, 1.0 - PROB_CLIP)
    return x.T @ (w * (p - o)) / w.sum()


def train_ensemble(
    prefs: PreferenceDataset,
    fmap: FeatureMap,
    cfg: RewardTrainConfig,
    rng: np.random.Generator,
) -> RewardEnsemble:
    """Train each head to a cross-entropy stationary point on its bootstrap
    resample. With no records yet, heads keep their random initialization."""
    n_records = len(prefs)
    x, o = (
        _design_matrix(prefs, fmap)
        if n_records
        else (np.empty((0, fmap.dimension)), np.empty(0))
    )
    heads = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(cfg.n_heads, fmap.dimension))
    masks = np.zeros((cfg.n_heads, n_records))
    for m in range(cfg.n_heads):
        if n_records == 0:
            continue
        if cfg.bootstrap:
            picks = rng.integers(n_records, size=n_records)
            masks[m] = np.bincount(picks, minlength=n_records)
        else:
            masks[m] = 1.0
        if masks[m].sum() == 0:
            masks[m, 0] = 1.0  # degenerate resample; keep the head trainable
        theta = heads[m]
        for _ in range(cfg.max_steps):
            grad = _ce_grad_from_design(theta, x, o, masks[m])
            if not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite gradient in head {m}")
            if np.max(np.abs(grad)) <= cfg.grad_tol:
                break
            theta = theta - cfg.learning_rate * grad
        if not np.all(np.isfinite(theta)):
            raise TrainingError(f"non-finite weights in head {m}")
        heads[m] = theta
    return RewardEnsemble(feature_map=fmap, heads=heads, bootstrap_masks=masks)


@dataclass(frozen=True)
class AnnotatedDataset:
    """Offline dataset plus learned per-step rewards.

    head_rewards has shape (n_heads, n_states, n_actions); mean_reward is
    the head average used for policy extraction.
    """

    dataset: OfflineDataset
    head_rewards: np.ndarray
    mean_reward: np.ndarray

    @property
    def n_heads(self) -> int:
        return self.head_rewards.shape[0]


def annotate(dataset: OfflineDataset, ensemble: RewardEnsemble) -> AnnotatedDataset:
    """Attach the ensemble-mean reward (and per-head tables) to the dataset."""
    tables = ensemble.reward_tables()
    return AnnotatedDataset(
        dataset=dataset, head_rewards=tables, mean_reward=tables.mean(axis=0)
    )


def annotate_with_tables(dataset: OfflineDataset, tables: np.ndarray) -> AnnotatedDataset:
    """Annotate from raw per-head reward tables (e.g. the true reward)."""
    tables = np.asarray(tables, dtype=np.float64)
    return AnnotatedDataset(
        dataset=dataset, head_rewards=tables, mean_reward=tables.mean(axis=0)
    )
