"""End-to-end acceptance suite.

Each criterion gets exactly one pass/fail line: printed here per test and
echoed in the terminal summary by conftest. Tolerances and instance counts
are pinned; do not loosen them to make a failing criterion pass.
"""

import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from prefrl.config import EnvironmentSpec, ExperimentConfig
from prefrl.datasets import BehaviorSpec, Segment, generate_dataset
from prefrl.experiment import run_loop
from prefrl.mdp import (
    Policy,
    TabularMdp,
    policy_evaluation,
    random_mdp,
    rollout,
    suboptimality,
    value_iteration,
)
from prefrl.queries import QueryPool, select_ide
from prefrl.rewards import (
    PreferenceDataset,
    PreferenceRecord,
    RewardTrainConfig,
    annotate_with_tables,
    bt_probability,
    ce_loss,
    ce_loss_grad,
    one_hot_features,
)
from prefrl.service import create_app
from prefrl.solver import (
    DiscountSchedule,
    SolverConfig,
    ValueEnsemble,
    extract_policy,
    segment_values_matrix,
    train_value_functions,
)
from prefrl.theory import (
    CollapsedTransitions,
    FiniteFamilies,
    TheoryPreference,
    all_deterministic_policies,
    bcpe,
    build_reward_family,
    confidence_set,
    default_beta,
    default_epsilon,
    run_theory_loop,
    trajectory_return,
)


def report(num, name, ok):
    print(f"[{num:02d}] {name}: {'PASS' if ok else 'FAIL'}", flush=True)


def loop_config(kind, **kwargs):
    """Shared loop recipe for the paired-strategy and budget criteria: a
    mostly-random behavior policy on a sparse-reward task, so informative
    segment pairs are rare in the pool."""
    if kind == "chain":
        env = EnvironmentSpec(kind="chain", n_states=6)
    else:
        env = EnvironmentSpec(kind="grid", width=5, height=5, discount=0.95)
    defaults = dict(
        environment=env,
        behavior=BehaviorSpec(n_trajectories=25, horizon=30,
                              expert_fraction=0.1, explore_epsilon=1.0),
        query_budget=10,
        ensemble_size=2,
        segment_length=8,
        pool_size=300,
        steps_per_round=200,
        final_steps=2500,
        solver=SolverConfig(steps=200, learning_rate=0.5, lr_decay=0.002,
                            iql_tau=0.9, iql_alpha=1e6),
        reward=RewardTrainConfig(learning_rate=0.05, max_steps=1500),
        strategy="ide",
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


def deterministic_mdp(rng, n_states=3, n_actions=2, discount=0.9):
    transition = np.zeros((n_states, n_actions, n_states))
    succ = rng.integers(n_states, size=(n_states, n_actions))
    for s in range(n_states):
        for a in range(n_actions):
            transition[s, a, succ[s, a]] = 1.0
    return TabularMdp(
        n_states=n_states, n_actions=n_actions, transition=transition,
        true_reward=rng.uniform(0.0, 1.0, size=(n_states, n_actions)),
        discount=discount, start_state=0,
    )


def exact_model_transitions(mdp):
    """Every (s, a) once with its true successor; valid for deterministic
    dynamics only."""
    s, a, sn = [], [], []
    for state in range(mdp.n_states):
        for action in range(mdp.n_actions):
            s.append(state)
            a.append(action)
            sn.append(int(np.argmax(mdp.transition[state, action])))
    return CollapsedTransitions.from_arrays(np.array(s), np.array(a), np.array(sn))


def test_01_offline_solver_matches_exact_dp():
    # true rewards, full-coverage data, schedule off: the trained values
    # must recover the optimal start-state value within 1e-2
    t0 = time.monotonic()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(int(rng.integers(3, 13)), int(rng.integers(2, 5)),
                         rng, discount=0.9, dirichlet_alpha=0.25)
        spec = BehaviorSpec(n_trajectories=200, horizon=100,
                            expert_fraction=0.0, explore_epsilon=1.0)
        ds = generate_dataset(mdp, spec, seed=seed)
        annotated = annotate_with_tables(ds, np.stack([mdp.true_reward] * 2))
        cfg = SolverConfig(iql_tau=0.999, learning_rate=0.5, lr_decay=0.002,
                           batch_size=512, steps=8000)
        values = train_value_functions(
            annotated, DiscountSchedule(mode="off", gamma=mdp.discount),
            cfg, np.random.default_rng(seed + 1000),
        )
        greedy = Policy.deterministic(
            np.argmax(values.q.mean(axis=0), axis=1), mdp.n_actions
        )
        v_star = value_iteration(mdp).v[mdp.start_state]
        v_pi = policy_evaluation(mdp, greedy).v[mdp.start_state]
        worst = max(worst, abs(v_star - v_pi))
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-2 and elapsed < 60
    report(1, "offline solver matches exact dynamic programming", ok)
    assert worst <= 1e-2, f"worst start-state value error {worst:.4f}"
    assert elapsed < 60, f"took {elapsed:.0f}s"


def test_02_preference_loss_gradient_matches_finite_differences():
    t0 = time.monotonic()
    worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        n_states = int(rng.integers(2, 6))
        n_actions = int(rng.integers(1, 4))
        length = int(rng.integers(1, 6))
        fmap = one_hot_features(n_states, n_actions)
        records = []
        for t in range(int(rng.integers(1, 8))):
            records.append(PreferenceRecord(
                seg1=Segment(trajectory_index=t, start=0,
                             states=rng.integers(n_states, size=length),
                             actions=rng.integers(n_actions, size=length)),
                seg2=Segment(trajectory_index=t + 100, start=0,
                             states=rng.integers(n_states, size=length),
                             actions=rng.integers(n_actions, size=length)),
                label=float(rng.choice([0.0, 0.5, 1.0])),
            ))
        prefs = PreferenceDataset(records)
        theta = rng.normal(scale=1.0, size=fmap.dimension)
        grad = ce_loss_grad(theta, fmap, prefs)
        h = 1e-5
        for d in range(fmap.dimension):
            e = np.zeros(fmap.dimension)
            e[d] = h
            fd = (ce_loss(theta + e, fmap, prefs)
                  - ce_loss(theta - e, fmap, prefs)) / (2 * h)
            rel = abs(grad[d] - fd) / max(abs(fd), 1e-8)
            worst = max(worst, rel)
    elapsed = time.monotonic() - t0
    ok = worst < 1e-5 and elapsed < 10
    report(2, "preference loss gradient matches finite differences", ok)
    assert worst < 1e-5, f"worst relative gradient error {worst:.2e}"
    assert elapsed < 10, f"took {elapsed:.1f}s"


def brute_force_ide(values):
    """Exhaustive reference over head pairs and segment pairs with
    (i, j, k, l) lexicographic tie-break."""
    n_heads, n_seg = values.shape
    best = None
    for i in range(n_heads):
        for j in range(i + 1, n_heads):
            for k in range(n_seg):
                for l in range(k + 1, n_seg):
                    score = abs(
                        (values[i, k] - values[j, k])
                        - (values[i, l] - values[j, l])
                    )
                    key = (-score, i, j, k, l)
                    if best is None or key < best[0]:
                        best = (key, k, l, score)
    _, k, l, score = best
    return k, l, score


def test_03_query_selection_equals_exhaustive_search():
    t0 = time.monotonic()
    ok = True
    for trial in range(100):
        rng = np.random.default_rng(trial)
        n_seg = int(rng.integers(2, 31))
        n_heads = int(rng.integers(2, 5))
        n_states = 8
        segments = [
            Segment(trajectory_index=i, start=0,
                    states=rng.integers(n_states, size=3),
                    actions=np.zeros(3, dtype=np.int64))
            for i in range(n_seg)
        ]
        pool = QueryPool(segments=segments)
        v = rng.normal(size=(n_heads, n_states))
        values = ValueEnsemble(q=np.zeros((n_heads, n_states, 1)), v=v)
        pair = select_ide(pool, values)
        k, l, score = brute_force_ide(segment_values_matrix(values, segments))
        ok = ok and (
            pair.seg1.key == segments[k].key
            and pair.seg2.key == segments[l].key
            and pair.score == pytest.approx(score)
        )
        assert pair.seg1.key == segments[k].key
        assert pair.seg2.key == segments[l].key
        assert pair.score == pytest.approx(score)
    elapsed = time.monotonic() - t0
    ok = ok and elapsed < 10
    report(3, "query selection equals exhaustive search", ok)
    assert elapsed < 10, f"took {elapsed:.1f}s"


def test_04_uncertainty_queries_beat_random():
    # 20 paired seeds per environment, identical data and RNG streams:
    # only the selection strategy differs
    t0 = time.monotonic()
    ok = True
    details = []
    from dataclasses import replace

    for kind in ("chain", "grid"):
        ide, rnd = [], []
        for seed in range(20):
            cfg = loop_config(kind, seed=seed)
            _, m_ide, _ = run_loop(cfg)
            _, m_rnd, _ = run_loop(replace(cfg, strategy="random"))
            ide.append(m_ide[-1].suboptimality)
            rnd.append(m_rnd[-1].suboptimality)
        ide, rnd = np.array(ide), np.array(rnd)
        win_rate = float(np.mean(ide <= rnd))
        details.append(f"{kind}: mean {ide.mean():.3f} vs {rnd.mean():.3f}, "
                       f"win rate {win_rate:.2f}")
        ok = ok and ide.mean() <= rnd.mean() and win_rate >= 0.70
    elapsed = time.monotonic() - t0
    ok = ok and elapsed < 600
    report(4, "uncertainty-targeted queries beat random selection", ok)
    assert ok, "; ".join(details) + f"; took {elapsed:.0f}s"


def test_05_discount_schedule_counters_overestimation():
    # one ensemble head carries non-negative noise on 30% of reward cells;
    # annealing the discount on high-variance cells must not hurt
    t0 = time.monotonic()
    hard_s, off_s = [], []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(6, 3, rng, discount=0.9)
        spec = BehaviorSpec(n_trajectories=60, horizon=40,
                            expert_fraction=0.0, explore_epsilon=1.0)
        ds = generate_dataset(mdp, spec, seed=seed)
        noise = rng.uniform(1.0, 3.0, size=mdp.true_reward.shape)
        noise *= rng.random(noise.shape) < 0.3
        ann = annotate_with_tables(
            ds, np.stack([mdp.true_reward + noise, mdp.true_reward])
        )
        cfg = SolverConfig(steps=2000, learning_rate=0.5, lr_decay=0.002,
                           iql_tau=0.9, iql_alpha=1e6)
        subs = {}
        for mode, sched in (
            ("off", DiscountSchedule(mode="off", gamma=0.9)),
            ("hard", DiscountSchedule(mode="hard", gamma=0.9,
                                      gamma_small=0.7, m_percent=30.0)),
        ):
            values = train_value_functions(
                ann, sched, cfg, np.random.default_rng(seed + 500)
            )
            subs[mode] = suboptimality(mdp, extract_policy(ann, values, cfg))
        hard_s.append(subs["hard"])
        off_s.append(subs["off"])
    hard_s, off_s = np.array(hard_s), np.array(off_s)
    win_rate = float(np.mean(hard_s <= off_s))
    elapsed = time.monotonic() - t0
    ok = hard_s.mean() <= off_s.mean() and win_rate >= 0.70 and elapsed < 600
    report(5, "discount schedule counters reward overestimation", ok)
    assert hard_s.mean() <= off_s.mean(), (
        f"mean {hard_s.mean():.3f} vs {off_s.mean():.3f}"
    )
    assert win_rate >= 0.70, f"win rate {win_rate:.2f}"
    assert elapsed < 600, f"took {elapsed:.0f}s"


def test_06_more_queries_never_hurt():
    # mean final suboptimality over budgets {2, 5, 10, 20}, 20 seeds each;
    # non-increasing with at most one adjacent violation within one pooled
    # standard error
    t0 = time.monotonic()
    budgets = [2, 5, 10, 20]
    means, sems = [], []
    for budget in budgets:
        subs = np.array([
            run_loop(loop_config("grid", query_budget=budget, seed=s))[1][-1]
            .suboptimality
            for s in range(20)
        ])
        means.append(subs.mean())
        sems.append(subs.std(ddof=1) / np.sqrt(len(subs)))
    violations = 0
    ok = True
    for i in range(len(budgets) - 1):
        if means[i + 1] > means[i]:
            violations += 1
            pooled_se = float(np.hypot(sems[i], sems[i + 1]))
            ok = ok and means[i + 1] - means[i] <= pooled_se
    ok = ok and violations <= 1
    elapsed = time.monotonic() - t0
    ok = ok and elapsed < 1200
    report(6, "larger query budgets never hurt", ok)
    assert ok, f"means {np.round(means, 4)}, {violations} violations"
    assert elapsed < 1200, f"took {elapsed:.0f}s"


def test_07_confidence_set_covers_truth():
    # stochastic labels on 16 queried pairs; the set built with radius
    # 2*sqrt(log(K*|pairs|)/K) must contain the generating hypothesis in
    # at least 85 of 100 trials
    t0 = time.monotonic()
    K = 16
    horizon = 6
    hits = 0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        mdp = random_mdp(4, 2, rng, discount=0.5)
        rewards = build_reward_family(mdp, n_extra=5, rng=rng, scale=0.15)
        policies = all_deterministic_policies(4, 2)
        fams = FiniteFamilies(rewards=rewards, qfuncs=np.zeros((1, 4, 2)),
                              policies=policies)
        beta = default_beta(K, fams.n_delta, c1=2.0)
        prefs = []
        for _ in range(K):
            p1, p2 = rng.integers(len(policies), size=2)
            t1 = rollout(mdp, policies[p1], horizon, rng)
            t2 = rollout(mdp, policies[p2], horizon, rng)
            r1 = trajectory_return(mdp.true_reward, t1, mdp.discount)
            r2 = trajectory_return(mdp.true_reward, t2, mdp.discount)
            label = 1.0 if rng.random() < bt_probability(r1, r2) else 0.0
            prefs.append(TheoryPreference(traj1=t1, traj2=t2, label=label))
        cset = confidence_set(prefs, fams, beta, mdp.discount)
        hits += 0 in cset.member_indices
    elapsed = time.monotonic() - t0
    ok = hits >= 85 and elapsed < 300
    report(7, "confidence set covers the generating hypothesis", ok)
    assert hits >= 85, f"coverage {hits}/100"
    assert elapsed < 300, f"took {elapsed:.0f}s"


def test_08_pessimistic_values_never_overestimate():
    # deterministic dynamics, exact-model data, exact value tables in the
    # family: every policy's pessimistic estimate stays below its true
    # value, zero violations allowed
    t0 = time.monotonic()
    violations = checks = 0
    for trial in range(50):
        rng = np.random.default_rng(1000 + trial)
        mdp = deterministic_mdp(rng)
        policies = all_deterministic_policies(3, 2)
        rewards = build_reward_family(mdp, n_extra=3, rng=rng)
        qfuncs = np.stack([
            policy_evaluation(mdp, pi, reward=r).q
            for r in rewards for pi in policies
        ])
        fams = FiniteFamilies(rewards=rewards, qfuncs=qfuncs,
                              policies=policies)
        trans = exact_model_transitions(mdp)
        eps = default_epsilon(trans.total, len(policies), qfuncs.shape[0])
        for pi in policies:
            v_hat = bcpe(trans, mdp.true_reward, pi, fams, eps, mdp.discount,
                         mdp.start_state)
            v_true = policy_evaluation(mdp, pi).v[mdp.start_state]
            checks += 1
            violations += v_hat > v_true + 1e-6
    elapsed = time.monotonic() - t0
    ok = violations == 0 and elapsed < 300
    report(8, "pessimistic policy values never overestimate", ok)
    assert violations == 0, f"{violations}/{checks} violations"
    assert elapsed < 300, f"took {elapsed:.0f}s"


def q_family_of_64(mdp, policies, rewards, rng):
    """Optimal tables per reward first, then sampled exact evaluation
    tables, deduplicated in draw order, trimmed to 64."""
    tables = [value_iteration(mdp, reward=r).q for r in rewards]
    seen = {t.tobytes() for t in tables}
    for flat in rng.permutation(len(policies) * rewards.shape[0]):
        if len(tables) == 64:
            break
        p_idx, r_idx = divmod(int(flat), rewards.shape[0])
        q = policy_evaluation(mdp, policies[p_idx], reward=rewards[r_idx]).q
        if q.tobytes() not in seen:
            seen.add(q.tobytes())
            tables.append(q)
    return np.stack(tables)


def test_09_version_space_loop_improves_with_budget():
    # 4-state task, 8 reward hypotheses, 16 policies, 64 value tables:
    # mean mixture suboptimality at budget 32 strictly below budget 4
    t0 = time.monotonic()
    subs = {4: [], 32: []}
    for seed in range(50):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(4, 2, rng, discount=0.9)
        policies = all_deterministic_policies(4, 2)
        rewards = build_reward_family(mdp, n_extra=7, rng=rng, scale=0.25)
        qfuncs = q_family_of_64(mdp, policies, rewards, rng)
        assert rewards.shape[0] == 8
        assert len(policies) == 16
        assert qfuncs.shape[0] == 64
        fams = FiniteFamilies(rewards=rewards, qfuncs=qfuncs,
                              policies=policies)
        spec = BehaviorSpec(n_trajectories=40, horizon=40,
                            expert_fraction=0.0, explore_epsilon=1.0)
        ds = generate_dataset(mdp, spec, seed=seed)
        for budget in (4, 32):
            res = run_theory_loop(mdp, fams, budget, ds,
                                  teacher_mode="stochastic", seed=seed,
                                  horizon=40)
            subs[budget].append(res.suboptimality)
    mean4, mean32 = np.mean(subs[4]), np.mean(subs[32])
    elapsed = time.monotonic() - t0
    ok = mean32 < mean4 and elapsed < 600
    report(9, "version-space loop improves with budget", ok)
    assert mean32 < mean4, f"mean at 32: {mean32:.4f}, at 4: {mean4:.4f}"
    assert elapsed < 600, f"took {elapsed:.0f}s"


def test_10_http_service_reproduces_in_process_run():
    t0 = time.monotonic()
    cfg = ExperimentConfig(
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
    _, metrics, session = run_loop(cfg)
    expected_log = [e.to_json() for e in session.query_log]

    app = create_app(cfg)
    with TestClient(app) as client:
        runner = client.app.state.runner
        for _ in range(cfg.query_budget):
            deadline = time.monotonic() + 30
            while client.get("/api/session").json()["status"] != "awaiting_label":
                assert time.monotonic() < deadline
                time.sleep(0.01)
            query = client.get("/api/query/next").json()
            label = runner.session.answer_with_oracle()
            wire = {1.0: "1", 0.0: "0", 0.5: "tie"}[label]
            resp = client.post(
                f"/api/query/{query['query_id']}/answer", json={"label": wire}
            )
            assert resp.status_code == 202
        deadline = time.monotonic() + 30
        while client.get("/api/session").json()["status"] != "done":
            assert time.monotonic() < deadline
            time.sleep(0.01)
    got_log = [e.to_json() for e in runner.session.query_log]
    same_log = got_log == expected_log
    same_final = (
        runner.session.metrics[-1].suboptimality == metrics[-1].suboptimality
    )
    elapsed = time.monotonic() - t0
    ok = same_log and same_final and elapsed < 120
    report(10, "labeling service reproduces the in-process run", ok)
    assert same_log, "query logs differ"
    assert same_final, "final suboptimality differs"
    assert elapsed < 120, f"took {elapsed:.0f}s"
