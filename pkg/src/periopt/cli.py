"""Command-line interface: structure generation, relaxation, training,
policy evaluation, and benchmarking.

The PERIOPT_SEED environment variable, when set, overrides any --seed option.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import click
import numpy as np

from .bench import (
    BenchmarkSpec,
    energy_traces,
    gen_testset,
    load_testset,
    make_calculator,
    run_bench,
    write_histogram_csv,
    write_traces_csv,
    minima_histogram,
)
from .crystal import random_structure
from .env import EnvConfig, read_env_config
from .optimizers import METHODS, TerminationPolicy, relax
from .xyz import read_xyz, write_xyz


def effective_seed(seed: int) -> int:
    env = os.environ.get("PERIOPT_SEED")
    return int(env) if env else seed


def parse_species(pairs) -> dict:
    """('Ar:8', 'Xa:4') -> {'Ar': 8, 'Xa': 4}"""
    counts = {}
    for pair in pairs:
        sym, _, n = pair.partition(":")
        if not n:
            raise click.BadParameter(f"expected SYMBOL:COUNT, got {pair!r}")
        counts[sym] = int(n)
    return counts


def env_cfg_from_option(path) -> EnvConfig:
    return read_env_config(path) if path else EnvConfig()


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--species", "-s", multiple=True, required=True,
              help="Composition as SYMBOL:COUNT, repeatable.")
@click.option("--sizes", default="1.0",
              help="Comma-separated composition multipliers, e.g. 1,1.5,2.")
@click.option("--set-size", default=300, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--volume-per-atom", default=37.0, show_default=True)
@click.option("--min-dist", default=2.0, show_default=True)
@click.option("--out", "-o", required=True, type=click.Path())
def gen(species, sizes, set_size, seed, volume_per_atom, min_dist, out):
    """Generate a reproducible test set of random structures."""
    spec = BenchmarkSpec(
        species_counts=parse_species(species),
        sizes=tuple(float(x) for x in sizes.split(",")),
        set_size=set_size,
        seed=effective_seed(seed),
        volume_per_atom=volume_per_atom,
        min_dist=min_dist,
    )
    manifest = gen_testset(spec, out)
    click.echo(f"wrote {spec.set_size * len(spec.sizes)} structures; "
               f"manifest at {manifest}")


@main.command("relax")
@click.argument("structure", type=click.Path(exists=True))
@click.option("--method", "-m", default="BFGS", show_default=True,
              type=click.Choice(METHODS, case_sensitive=False))
@click.option("--calculator", default="lj", show_default=True,
              help="'lj' or 'cmd:<server command>'.")
@click.option("--fmax", default=0.05, show_default=True)
@click.option("--max-steps", default=1000, show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True),
              help="Trained policy checkpoint (MACS only).")
@click.option("--env-config", type=click.Path(exists=True))
@click.option("--out", "-o", type=click.Path(),
              help="Write the relaxed structure here.")
@click.option("--report", type=click.Path(), help="Write a JSON report here.")
def relax_cmd(structure, method, calculator, fmax, max_steps, checkpoint,
              env_config, out, report):
    """Relax one extended-XYZ structure."""
    s = read_xyz(structure)
    calc = make_calculator(calculator)
    policy = None
    env_cfg = env_cfg_from_option(env_config)
    if method.upper() == "MACS":
        if not checkpoint:
            raise click.UsageError("MACS requires --checkpoint")
        from .sac import load_checkpoint

        trainer = load_checkpoint(checkpoint, env_cfg=env_cfg)
        env_cfg = trainer.env_cfg
        policy = trainer.make_policy()
    try:
        result = relax(s, method, calc,
                       TerminationPolicy(fmax=fmax, max_steps=max_steps),
                       policy=policy, env_cfg=env_cfg)
    finally:
        close = getattr(calc, "close", None)
        if close is not None:
            close()
    status = "converged" if result.success else "FAILED"
    click.echo(f"{status}: {result.steps} steps, {result.energy_calls} calls, "
               f"final fmax {result.final_fmax:.6f}")
    if out:
        write_xyz(out, result.final_structure)
    if report:
        with open(report, "w") as fh:
            json.dump(result.to_dict(), fh, indent=2)
            fh.write("\n")
    if not result.success:
        raise SystemExit(1)


@main.command()
@click.option("--species", "-s", multiple=True, required=True)
@click.option("--rounds", default=80000, show_default=True,
              help="Trainer rounds (one env sweep plus one update each).")
@click.option("--envs", default=40, show_default=True)
@click.option("--batch-size", default=8192, show_default=True)
@click.option("--buffer", default=10_000_000, show_default=True)
@click.option("--hidden", default="256,256", show_default=True)
@click.option("--warmup", default=500, show_default=True)
@click.option("--volume-per-atom", default=37.0, show_default=True)
@click.option("--min-dist", default=2.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--env-config", type=click.Path(exists=True))
@click.option("--log", "log_path", type=click.Path())
@click.option("--checkpoint", "-o", required=True, type=click.Path())
def train(species, rounds, envs, batch_size, buffer, hidden, warmup,
          volume_per_atom, min_dist, seed, env_config, log_path, checkpoint):
    """Train the shared policy on randomly generated structures."""
    from .potential import LennardJonesCalculator
    from .sac import TrainerConfig, train as train_loop

    counts = parse_species(species)
    n_atoms = sum(counts.values())
    env_cfg = env_cfg_from_option(env_config)
    cfg = TrainerConfig(
        batch_size=batch_size,
        buffer_capacity=buffer,
        hidden=tuple(int(h) for h in hidden.split(",")),
        warmup_samples=warmup,
        num_envs=envs,
        total_rounds=rounds,
        seed=effective_seed(seed),
    )

    def source(rng):
        return random_structure(counts, n_atoms * volume_per_atom,
                                min_dist, rng)

    trainer = train_loop(source, LennardJonesCalculator, env_cfg, cfg,
                         log_path=log_path, checkpoint_path=checkpoint)
    lengths = trainer.episode_lengths
    if lengths:
        click.echo(f"finished: {len(lengths)} episodes; mean length over the "
                   f"last 50: {np.mean(lengths[-50:]):.1f}")
    else:
        click.echo("finished: no episodes completed")


@main.command("eval")
@click.argument("testset", type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--calculator", default="lj", show_default=True)
@click.option("--fmax", default=0.05, show_default=True)
@click.option("--max-steps", default=1000, show_default=True)
def eval_cmd(testset, checkpoint, calculator, fmax, max_steps):
    """Evaluate a trained policy on a test set (deterministic MEAN actions)."""
    from .sac import load_checkpoint

    trainer = load_checkpoint(checkpoint)
    policy = trainer.make_policy()
    tp = TerminationPolicy(fmax=fmax, max_steps=max_steps)
    total = 0
    won = 0
    steps = []
    for entry, s in load_testset(testset):
        calc = make_calculator(calculator)
        try:
            report = relax(s, "MACS", calc, tp, policy=policy,
                           env_cfg=trainer.env_cfg)
        finally:
            close = getattr(calc, "close", None)
            if close is not None:
                close()
        total += 1
        if report.success:
            won += 1
            steps.append(report.steps)
    rate = 100.0 * won / total if total else 0.0
    mean_steps = f"{np.mean(steps):.1f}" if steps else "n/a"
    click.echo(f"success {won}/{total} ({rate:.1f}%), "
               f"mean steps over successes {mean_steps}")


@main.command("bench")
@click.argument("testset", type=click.Path(exists=True))
@click.option("--methods", default="BFGS,BFGSLS,FIRE,MDMIN,CG,FIRE_BFGSLS",
              show_default=True)
@click.option("--calculator", default="lj", show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True),
              help="Required when MACS is among the methods.")
@click.option("--fmax", default=0.05, show_default=True)
@click.option("--max-steps", default=1000, show_default=True)
@click.option("--deterministic-timing", is_flag=True,
              help="Zero wall times so outputs are byte-reproducible.")
@click.option("--out", "-o", required=True, type=click.Path())
def bench(testset, methods, calculator, checkpoint, fmax, max_steps,
          deterministic_timing, out):
    """Run every method over a test set and write metrics.csv."""
    with open(Path(testset) / "manifest.json") as fh:
        manifest = json.load(fh)
    spec = BenchmarkSpec(**{
        **manifest["spec"],
        "methods": tuple(m.upper() for m in methods.split(",")),
        "calculator": calculator,
        "fmax": fmax,
        "max_steps": max_steps,
    })
    policy = None
    env_cfg = None
    if "MACS" in spec.methods:
        if not checkpoint:
            raise click.UsageError("MACS rows require --checkpoint")
        from .sac import load_checkpoint

        trainer = load_checkpoint(checkpoint)
        policy = trainer.make_policy()
        env_cfg = trainer.env_cfg
    rows = run_bench(spec, testset, out, policy=policy, env_cfg=env_cfg,
                     deterministic_timing=deterministic_timing)
    for row in rows:
        click.echo(",".join(row.as_csv_fields()))
    click.echo(f"metrics written to {Path(out) / 'metrics.csv'}")


@main.command("traces")
@click.argument("bench_dir", type=click.Path(exists=True))
@click.option("--out", "-o", required=True, type=click.Path())
@click.option("--histogram", type=click.Path(),
              help="Also write a final-energy histogram CSV here.")
@click.option("--bins", default=20, show_default=True)
def traces(bench_dir, out, histogram, bins):
    """Aggregate per-run reports into plot-ready trace (and histogram) CSVs."""
    reports_dir = Path(bench_dir) / "reports"
    by_method = {}
    for path in sorted(reports_dir.glob("*.json")):
        with open(path) as fh:
            payload = json.load(fh)
        by_method.setdefault(payload["method"], []).append(payload)
    if not by_method:
        raise click.UsageError(f"no reports found under {reports_dir}")
    write_traces_csv(out, energy_traces(by_method))
    click.echo(f"traces written to {out}")
    if histogram:
        edges, counts = minima_histogram(by_method, bins)
        write_histogram_csv(histogram, edges, counts)
        click.echo(f"histogram written to {histogram}")


if __name__ == "__main__":
    main()
