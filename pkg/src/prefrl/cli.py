"""Command-line surface: gen-data, run, sweep, theory-run, eval, serve.

Config files are flat key=value text with dotted sections; any key can be
overridden on the command line with --key=value.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from prefrl.config import ExperimentConfig, apply_overrides, load_config


def _split_overrides(extra: tuple[str, ...]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise click.UsageError(f"expected --key=value override, got {item!r}")
        key, value = item[2:].split("=", 1)
        overrides[key] = value
    return overrides


_EXTRA = dict(
    context_settings={"ignore_unknown_options": True, "allow_extra_args": True}
)


@click.group()
def main() -> None:
    """Offline preference-based RL laboratory."""


def _cfg_from(ctx: click.Context, config: str | None) -> ExperimentConfig:
    return load_config(config, _split_overrides(tuple(ctx.args)))


@main.command("gen-data", **_EXTRA)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--mdp-out", type=click.Path(), default=None,
              help="Also write the environment MDP as JSON.")
@click.pass_context
def gen_data(ctx: click.Context, config: str | None, out: str, mdp_out: str | None) -> None:
    """Generate a reward-free offline dataset."""
    from prefrl.datasets import generate_dataset, save_dataset

    cfg = _cfg_from(ctx, config)
    mdp = cfg.environment.build()
    dataset = generate_dataset(mdp, cfg.behavior, seed=cfg.seed)
    save_dataset(dataset, out)
    if mdp_out:
        with open(mdp_out, "w") as f:
            f.write(mdp.to_json())
    click.echo(f"wrote {len(dataset)} trajectories to {out}")


@main.command("run", **_EXTRA)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--metrics-out", type=click.Path(), default=None)
@click.option("--query-log", type=click.Path(), default=None)
@click.pass_context
def run(ctx: click.Context, config: str | None, metrics_out: str | None,
        query_log: str | None) -> None:
    """Run the full query loop with the scripted teacher."""
    from prefrl.experiment import run_loop

    cfg = _cfg_from(ctx, config)
    policy, metrics, session = run_loop(cfg)
    if metrics_out:
        with open(metrics_out, "w") as f:
            for m in metrics:
                f.write(m.to_json() + "\n")
    if query_log:
        with open(query_log, "w") as f:
            for entry in session.query_log:
                f.write(entry.to_json() + "\n")
    final = metrics[-1]
    click.echo(
        f"final suboptimality {final.suboptimality:.6f} "
        f"reward correlation {final.reward_correlation:.4f}"
    )
    if final.suboptimality < 0 or not np.isfinite(final.suboptimality):
        sys.exit(1)


@main.command("sweep", **_EXTRA)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--grid", "grid_json", required=True,
              help='JSON grid of overrides, e.g. \'{"query_budget": [2, 5, 10]}\'')
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def sweep_cmd(ctx: click.Context, config: str | None, grid_json: str,
              seeds: str, out: str) -> None:
    """Run a cross-product sweep and write a tidy CSV."""
    from prefrl.experiment import sweep

    cfg = _cfg_from(ctx, config)
    grid = json.loads(grid_json)
    seed_list = [int(s) for s in seeds.split(",") if s]
    rows = sweep(cfg, grid, seed_list, csv_path=out)
    failures = [r for r in rows if r["error"]]
    click.echo(f"wrote {len(rows)} rows to {out} ({len(failures)} failures)")
    if failures:
        sys.exit(1)


@main.command("theory-run", **_EXTRA)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--budget", default=16, show_default=True)
@click.option("--n-rewards", default=8, show_default=True)
@click.option("--n-qfuncs", default=64, show_default=True)
@click.option("--log-out", type=click.Path(), default=None)
@click.option("--csv-out", type=click.Path(), default=None,
              help="Suboptimality-vs-budget CSV over budgets 1..budget.")
@click.pass_context
def theory_run(ctx: click.Context, config: str | None, budget: int,
               n_rewards: int, n_qfuncs: int, log_out: str | None,
               csv_out: str | None) -> None:
    """Run the version-space query loop on finite hypothesis families."""
    from prefrl.datasets import generate_dataset
    from prefrl.theory import (
        FiniteFamilies,
        all_deterministic_policies,
        build_q_family,
        build_reward_family,
        run_theory_loop,
    )

    cfg = _cfg_from(ctx, config)
    mdp = cfg.environment.build()
    rng = np.random.default_rng(cfg.seed)
    policies = all_deterministic_policies(mdp.n_states, mdp.n_actions, cap=256, rng=rng)
    rewards = build_reward_family(mdp, n_extra=n_rewards - 1, rng=rng)
    qfuncs = build_q_family(mdp, policies, rewards, rng, n_pairs=n_qfuncs)
    fams = FiniteFamilies(rewards=rewards, qfuncs=qfuncs, policies=policies)
    dataset = generate_dataset(mdp, cfg.behavior, seed=cfg.seed)
    result = run_theory_loop(
        mdp, fams, budget, dataset, teacher_mode=cfg.teacher_mode,
        seed=cfg.seed, log_path=log_out,
    )
    if csv_out:
        with open(csv_out, "w") as f:
            f.write("budget,suboptimality\n")
            for rec in result.records:
                f.write(f"{rec.round},{rec.subopt_running}\n")
    click.echo(f"mixture suboptimality {result.suboptimality:.6f}")


@main.command("eval", **_EXTRA)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.pass_context
def eval_cmd(ctx: click.Context, config: str | None) -> None:
    """Run the loop and report the final policy's exact metrics."""
    from prefrl.experiment import eval_policy, run_loop

    cfg = _cfg_from(ctx, config)
    policy, metrics, session = run_loop(cfg)
    _, annotated = session.finalize()
    out = eval_policy(session.mdp, policy, annotated)
    click.echo(json.dumps(out))


@main.command("serve", **_EXTRA)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--static-dir", type=click.Path(exists=True), default=None)
@click.pass_context
def serve(ctx: click.Context, config: str | None, host: str, port: int,
          static_dir: str | None) -> None:
    """Serve the labeling session over HTTP for a human teacher."""
    import uvicorn

    from prefrl.service import create_app

    cfg = _cfg_from(ctx, config)
    app = create_app(cfg, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
