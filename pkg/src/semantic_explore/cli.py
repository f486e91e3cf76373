"""Command line entry point: ``semantic-explore <verb> CONFIG``."""

from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click

from .env import generate_floorplan
from .episode import cached_world, run_episode
from .full_mapper import GlobalMapBundle
from .harness import Experiment, aggregate, format_table, run_benchmark, seed_list, write_results
from .local_mapper import PatchPrior
from .policy_learn import GoalScorer
from .render import export_floorplan, export_maps

log = logging.getLogger("semantic_explore")


def _seed_option(text):
    """``"3"``, ``"0:20"`` (start:count) or ``"1,4,9"``."""
    if text is None:
        return None
    if ":" in text:
        start, count = text.split(":")
        return {"start": int(start), "count": int(count)}
    return [int(t) for t in text.split(",")]


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
def main(verbose):
    """Active semantic exploration on procedural floorplans."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--worlds", help="World seeds: N, start:count or a comma list.")
def generate(config, worlds):
    """Write floorplans as indexed images with label tables."""
    exp = Experiment.load(config)
    out = exp.output_dir / "floorplans"
    out.mkdir(parents=True, exist_ok=True)
    for seed in seed_list(_seed_option(worlds) or exp.raw.get("worlds"), (exp.episode.world_seed,)):
        grid = generate_floorplan(seed, exp.episode.gen)
        img, _ = export_floorplan(grid, out / f"world_{seed}.png")
        click.echo(str(img))


@main.command("train-prior")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
def train_prior(config):
    """Fit the patch prior on generated training floorplans."""
    exp = Experiment.load(config)
    spec = dict(exp.raw.get("prior", {}))
    spec.pop("path", None)
    worlds = seed_list(spec.pop("train_worlds", None), range(1000, 1020))
    grids = [generate_floorplan(s, exp.episode.gen) for s in worlds]
    t0 = time.perf_counter()
    prior = PatchPrior(window=exp.episode.local_size, sensor=exp.episode.sensor, **spec).fit(grids)
    path = Path(exp.prior_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    prior.save(path)
    click.echo(f"{path} ({prior.keys_.size} context keys, {time.perf_counter() - t0:.1f}s)")


@main.command("train-policy")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
def train_policy(config):
    """Train every goal scorer listed under ``scorers``."""
    exp = Experiment.load(config)
    specs = exp.raw.get("scorers") or []
    if not specs:
        raise click.UsageError("the config lists no scorers to train")
    prior = PatchPrior.load(exp.prior_path)
    for spec in specs:
        spec = dict(spec)
        path = Path(exp.resolve(spec.pop("path")))
        worlds = seed_list(spec.pop("train_worlds", None), (2000, 2001))
        template = exp.episode_config(spec.pop("episode", {}), exp.episode)
        grids = [cached_world(s, template.gen) for s in worlds]
        scorer = GoalScorer(episode_config=template, **spec).fit(grids, prior=prior)
        path.parent.mkdir(parents=True, exist_ok=True)
        scorer.save(path)
        with open(path.with_suffix(".curve.jsonl"), "w") as fh:
            for rec in scorer.curve_:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        click.echo(f"{path} weights={[round(float(w), 4) for w in scorer.weights_]}")


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--policy", help="Policy variant name (from ``policies``) or policy kind.")
@click.option("--world", type=int, help="World seed.")
@click.option("--seed", type=int, help="Start/noise/policy seed.")
@click.option("--trace/--no-trace", default=False, help="Stream a per-step trace.")
def run(config, policy, world, seed, trace):
    """Run a single episode and save its result and maps."""
    exp = Experiment.load(config)
    cfgs = exp.benchmark_configs(policies=[policy] if policy else None,
                                 worlds=[world] if world is not None else None,
                                 seeds=[seed] if seed is not None else None)
    cfg = cfgs[0]
    stem = exp.output_dir / "episodes" / f"{cfg.name}_w{cfg.world_seed}_s{cfg.start_seed}"
    stem.parent.mkdir(parents=True, exist_ok=True)
    if trace:
        cfg = cfg.replace(trace_path=str(stem.with_suffix(".trace.jsonl")))
    result = run_episode(None, cfg, keep_maps=True)
    stem.with_suffix(".json").write_text(result.to_json() + "\n")
    if result.maps is not None:
        result.maps.save(stem.with_suffix(".maps.npz"))
    click.echo(format_table(aggregate([result])), nl=False)
    if result.failed:
        click.echo(result.diagnostic, err=True)
        sys.exit(1)


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--policy", "policies", multiple=True, help="Restrict to these variant names.")
@click.option("--worlds", help="World seeds: start:count or a comma list.")
@click.option("--seeds", help="Episode seeds: start:count or a comma list.")
@click.option("--parallelism", type=int, help="Worker processes.")
def bench(config, policies, worlds, seeds, parallelism):
    """Sweep policy variants over worlds and seeds."""
    exp = Experiment.load(config)
    cfgs = exp.benchmark_configs(policies=list(policies) or None, worlds=_seed_option(worlds),
                                 seeds=_seed_option(seeds))
    bench_result = run_benchmark(cfgs, parallelism or exp.raw.get("parallelism", 1))
    name = exp.raw.get("name", "benchmark")
    jsonl = exp.output_dir / f"{name}.jsonl"
    table = exp.output_dir / f"{name}.txt"
    write_results(bench_result, jsonl, table)
    click.echo(table.read_text(), nl=False)
    if bench_result.failures:
        sys.exit(1)


@main.command()
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--maps", "maps_path", type=click.Path(exists=True, dir_okay=False), help="Saved global maps.")
@click.option("--world", type=int, help="World seed for the ground-truth layer.")
def render(config, maps_path, world):
    """Export saved global maps as palette images with a legend."""
    exp = Experiment.load(config)
    spec = exp.raw.get("render", {})
    maps_path = maps_path or exp.resolve(spec.get("maps"))
    if not maps_path:
        raise click.UsageError("give --maps or render.maps in the config")
    maps = GlobalMapBundle.load(maps_path)
    seed = exp.episode.world_seed if world is None else world
    gt = generate_floorplan(seed, exp.episode.gen)
    if gt.shape != maps.shape:
        gt = None
    out = exp.resolve(spec.get("dir", "render"))
    for key, path in export_maps(maps, gt, out).items():
        click.echo(f"{key}: {path}")


if __name__ == "__main__":
    main()
