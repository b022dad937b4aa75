"""Query-loop driver, configuration, metrics, and sweeps."""

import json

import numpy as np
import pytest

from prefrl.config import (
    EnvironmentSpec,
    ExperimentConfig,
    apply_overrides,
    load_config,
    parse_config_text,
)
from prefrl.datasets import BehaviorSpec
from prefrl.experiment import LoopSession, eval_policy, run_loop, sweep
from prefrl.mdp import chain_mdp, value_iteration
from prefrl.rewards import RewardTrainConfig, annotate_with_tables
from prefrl.solver import SolverConfig


def fast_config(**kwargs):
    defaults = dict(
        environment=EnvironmentSpec(kind="chain", n_states=4),
        behavior=BehaviorSpec(n_trajectories=12, horizon=20,
                              expert_fraction=0.0, explore_epsilon=1.0),
        query_budget=3,
        segment_length=5,
        pool_size=30,
        steps_per_round=100,
        final_steps=200,
        solver=SolverConfig(steps=100, learning_rate=0.3),
        reward=RewardTrainConfig(learning_rate=0.05, max_steps=500),
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


class TestConfig:
    def test_defaults_valid(self):
        cfg = ExperimentConfig()
        assert cfg.query_budget == 10
        assert cfg.strategy == "ide"

    def test_budget_and_strategy_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(query_budget=0)
        with pytest.raises(ValueError):
            ExperimentConfig(strategy="newest")
        with pytest.raises(ValueError):
            ExperimentConfig(teacher_mode="human")

    def test_apply_overrides_sections_and_top_level(self):
        cfg = apply_overrides(
            ExperimentConfig(),
            {
                "solver.iql_tau": "0.9",
                "schedule.gamma_small": "0.5",
                "query_budget": "4",
                "strategy": "random",
            },
        )
        assert cfg.solver.iql_tau == 0.9
        assert cfg.schedule.gamma_small == 0.5
        assert cfg.query_budget == 4
        assert cfg.strategy == "random"

    def test_alias_keys(self):
        cfg = apply_overrides(
            ExperimentConfig(),
            {"schedule.discount": "0.95", "schedule.top_m_percent": "20"},
        )
        assert cfg.schedule.gamma == 0.95
        assert cfg.schedule.m_percent == 20.0

    def test_unknown_keys_rejected(self):
        with pytest.raises(KeyError):
            apply_overrides(ExperimentConfig(), {"solver.nope": "1"})
        with pytest.raises(KeyError):
            apply_overrides(ExperimentConfig(), {"nope": "1"})
        with pytest.raises(KeyError):
            apply_overrides(ExperimentConfig(), {"mystery.iql_tau": "0.9"})

    def test_parse_config_text(self):
        text = """
        # comment line
        environment.kind = grid
        environment.width = 4
        schedule.mode = hard
        seed = 7
        """
        cfg = parse_config_text(text)
        assert cfg.environment.kind == "grid"
        assert cfg.environment.width == 4
        assert cfg.schedule.mode == "hard"
        assert cfg.seed == 7

    def test_parse_rejects_bad_line(self):
        with pytest.raises(ValueError):
            parse_config_text("just words")

    def test_load_config_file_plus_overrides(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("query_budget = 5\nstrategy = random\n")
        cfg = load_config(str(path), {"query_budget": "8"})
        assert cfg.query_budget == 8
        assert cfg.strategy == "random"

    def test_environment_builders(self):
        assert EnvironmentSpec(kind="chain", n_states=5).build().n_states == 5
        assert EnvironmentSpec(kind="grid", width=3, height=2).build().n_states == 6
        a = EnvironmentSpec(kind="random", n_states=4, n_actions=3, env_seed=1).build()
        b = EnvironmentSpec(kind="random", n_states=4, n_actions=3, env_seed=1).build()
        assert a.content_hash() == b.content_hash()
        with pytest.raises(ValueError):
            EnvironmentSpec(kind="maze").build()


class TestLoopSession:
    def test_smoke_k1_random_strategy(self):
        cfg = fast_config(query_budget=1, strategy="random")
        policy, metrics, session = run_loop(cfg)
        assert np.allclose(policy.action_prob.sum(axis=1), 1.0)
        assert len(metrics) == 2  # one per round plus the final record

    def test_budget_accounting(self):
        cfg = fast_config(query_budget=3)
        _, _, session = run_loop(cfg)
        assert len(session.prefs) == 3
        assert session.done
        with pytest.raises(RuntimeError):
            session.next_query()

    def test_metrics_one_record_per_round(self):
        cfg = fast_config(query_budget=3)
        _, metrics, _ = run_loop(cfg)
        assert [m.round for m in metrics] == [1, 2, 3, 4]
        for m in metrics:
            assert np.isfinite(m.suboptimality)
            assert np.isfinite(m.reward_correlation)

    def test_determinism_across_runs(self):
        cfg = fast_config(query_budget=3)
        _, m1, s1 = run_loop(cfg)
        _, m2, s2 = run_loop(cfg)
        for a, b in zip(m1, m2):
            assert a.round == b.round
            assert a.suboptimality == b.suboptimality
            assert a.reward_correlation == b.reward_correlation
            assert a.query_score == b.query_score
        assert [e.seg1 for e in s1.query_log] == [e.seg1 for e in s2.query_log]
        assert [e.label for e in s1.query_log] == [e.label for e in s2.query_log]

    def test_next_query_idempotent_while_pending(self):
        cfg = fast_config()
        session = LoopSession(cfg)
        a = session.next_query()
        b = session.next_query()
        assert a is b

    def test_submit_requires_pending(self):
        cfg = fast_config()
        session = LoopSession(cfg)
        with pytest.raises(RuntimeError):
            session.submit_label(1.0)
        session.next_query()
        with pytest.raises(ValueError):
            session.submit_label(0.3)

    def test_no_repeated_queries_by_default(self):
        cfg = fast_config(query_budget=3)
        _, _, session = run_loop(cfg)
        keys = [(e.seg1, e.seg2) for e in session.query_log]
        assert len(set(keys)) == len(keys)

    def test_finalize_requires_exhausted_budget(self):
        cfg = fast_config()
        session = LoopSession(cfg)
        with pytest.raises(RuntimeError):
            session.finalize()

    def test_all_strategies_complete(self):
        for strategy in ("ide", "random", "disagreement"):
            cfg = fast_config(query_budget=2, strategy=strategy)
            _, metrics, session = run_loop(cfg)
            assert len(metrics) == 3
            assert all(e.strategy == strategy for e in session.query_log)

    def test_stochastic_teacher_runs(self):
        cfg = fast_config(query_budget=2, teacher_mode="stochastic")
        _, _, session = run_loop(cfg)
        assert all(e.label in (0.0, 1.0) for e in session.query_log)


class TestEvalPolicy:
    def test_optimal_policy_zero_suboptimality(self):
        mdp = chain_mdp(4)
        policy = value_iteration(mdp).greedy_policy()
        out = eval_policy(mdp, policy)
        assert out["suboptimality"] == pytest.approx(0.0, abs=1e-6)

    def test_reward_correlation_signs(self):
        cfg = fast_config(query_budget=1)
        session = LoopSession(cfg)
        mdp = session.mdp
        ann_true = annotate_with_tables(
            session.dataset, np.stack([mdp.true_reward] * 2)
        )
        out = eval_policy(mdp, value_iteration(mdp).greedy_policy(), ann_true)
        assert out["reward_correlation"] == pytest.approx(1.0)
        ann_neg = annotate_with_tables(
            session.dataset, np.stack([-mdp.true_reward] * 2)
        )
        out = eval_policy(mdp, value_iteration(mdp).greedy_policy(), ann_neg)
        assert out["reward_correlation"] == pytest.approx(-1.0)


class TestSweep:
    def test_single_cell_matches_run(self, tmp_path):
        cfg = fast_config(query_budget=2)
        rows = sweep(cfg, {"strategy": ["ide"]}, seeds=[0],
                     csv_path=str(tmp_path / "out.csv"))
        assert len(rows) == 1
        _, metrics, _ = run_loop(cfg)
        assert rows[0]["suboptimality"] == metrics[-1].suboptimality
        assert rows[0]["error"] == ""

    def test_cross_product_shape_and_csv(self, tmp_path):
        cfg = fast_config(query_budget=1)
        path = str(tmp_path / "sweep.csv")
        rows = sweep(
            cfg,
            {"strategy": ["ide", "random"], "schedule.gamma_small": [0.5, 0.7]},
            seeds=[0, 1],
            csv_path=path,
        )
        assert len(rows) == 8
        header = open(path).readline().strip().split(",")
        assert header == [
            "cell", "overrides", "seed", "round",
            "suboptimality", "reward_correlation", "error",
        ]
        cells = {r["cell"] for r in rows}
        assert len(cells) == 4

    def test_failures_recorded_not_raised(self, tmp_path):
        cfg = fast_config(query_budget=1)
        rows = sweep(cfg, {"solver.iql_tau": [0.9, 2.0]}, seeds=[0])
        errors = [r["error"] for r in rows]
        assert errors.count("") == 1
        assert any("iql_tau" in e for e in errors)

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            sweep(fast_config(), {}, seeds=[0])


class TestArtifacts:
    def test_metrics_json_round_trip(self):
        cfg = fast_config(query_budget=1)
        _, metrics, session = run_loop(cfg)
        doc = json.loads(metrics[0].to_json())
        assert set(doc) == {
            "round", "suboptimality", "reward_correlation", "query_score", "wall_ms",
        }
        entry = json.loads(session.query_log[0].to_json())
        assert set(entry) == {
            "round", "strategy", "seg1", "seg2", "score", "label", "teacher_mode",
        }
