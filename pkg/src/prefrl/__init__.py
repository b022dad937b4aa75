"""Desk-scale offline preference-based RL laboratory.

Everything is tabular and exact: finite MDPs with dynamic-programming
oracles, linear Bradley-Terry reward ensembles, an IQL-style offline
solver with variance-based discount scheduling, exploratory preference
query selection, and a version-space theory track on finite hypothesis
families.
"""

from prefrl.mdp import (
    TabularMdp,
    Policy,
    ValueTable,
    Trajectory,
    value_iteration,
    policy_evaluation,
    rollout,
    true_return,
    suboptimality,
)

__all__ = [
    "TabularMdp",
    "Policy",
    "ValueTable",
    "Trajectory",
    "value_iteration",
    "policy_evaluation",
    "rollout",
    "true_return",
    "suboptimality",
]
