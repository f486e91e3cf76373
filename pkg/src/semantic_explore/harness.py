"""Experiment files, benchmark sweeps and result tables."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .episode import EpisodeConfig, EpisodeResult, run_episode

log = logging.getLogger(__name__)

OUTPUT_ENV = "SEMANTIC_EXPLORE_OUTPUT_DIR"
METRIC_KEYS = ("cov_p", "asc_p", "cov_c", "asc_c")
METRIC_TITLES = {"cov_p": "CovP (m2)", "asc_p": "ASCP (m2)", "cov_c": "CovC (m2)", "asc_c": "ASCC (m2)"}

_SEEDS = {
    "oneOf": [
        {"type": "array", "items": {"type": "integer", "minimum": 0}},
        {"type": "object", "required": ["count"], "additionalProperties": False,
         "properties": {"start": {"type": "integer", "minimum": 0}, "count": {"type": "integer", "minimum": 0}}},
    ]
}
_MASK = {"type": "array", "items": {"type": "boolean"}, "minItems": 5, "maxItems": 5}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "output_dir": {"type": "string"},
        "episode": {"type": "object"},
        "worlds": _SEEDS,
        "seeds": _SEEDS,
        "parallelism": {"type": "integer", "minimum": 1},
        "policies": {
            "type": "array", "minItems": 1,
            "items": {"type": "object", "required": ["name"], "properties": {"name": {"type": "string"}}},
        },
        "prior": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "train_worlds": _SEEDS,
                "radius": {"type": "integer", "minimum": 0},
                "reach": {"type": "integer", "minimum": 0},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": ["sensor", "random"]},
                "n_views": {"type": "integer", "minimum": 1},
                "mask_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "scorers": {
            "type": "array",
            "items": {
                "type": "object", "required": ["path"], "additionalProperties": False,
                "properties": {
                    "path": {"type": "string"},
                    "train_worlds": _SEEDS,
                    "feature_mask": _MASK,
                    "feature_radius": {"type": "number", "exclusiveMinimum": 0},
                    "population": {"type": "integer", "minimum": 1},
                    "elite_frac": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "n_iter": {"type": "integer", "minimum": 0},
                    "init_mean": {"type": "array", "items": {"type": "number"}, "minItems": 5, "maxItems": 5},
                    "init_std": {"type": "number", "minimum": 0},
                    "min_std": {"type": "number", "minimum": 0},
                    "seed": {"type": "integer", "minimum": 0},
                    "episode": {"type": "object"},
                },
            },
        },
        "render": {"type": "object", "properties": {"maps": {"type": "string"}, "dir": {"type": "string"}}},
    },
}


def seed_list(spec, default=(0,)) -> list[int]:
    if spec is None:
        return list(default)
    if isinstance(spec, dict):
        start = int(spec.get("start", 0))
        return list(range(start, start + int(spec["count"])))
    return [int(s) for s in spec]


@dataclass
class Experiment:
    """A validated experiment file with paths resolved against the output directory."""

    raw: dict
    output_dir: Path
    episode: EpisodeConfig

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "Experiment":
        jsonschema.validate(raw, EXPERIMENT_SCHEMA)
        out = os.environ.get(OUTPUT_ENV) or raw.get("output_dir") or "."
        out = Path(out)
        if not out.is_absolute():
            out = Path(base_dir) / out
        exp = cls(raw, out, EpisodeConfig())
        exp.episode = exp.episode_config(raw.get("episode", {}))
        return exp

    @classmethod
    def load(cls, path) -> "Experiment":
        path = Path(path)
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw, base_dir=path.parent)

    def resolve(self, p: str | None) -> str | None:
        if p is None:
            return None
        q = Path(p)
        return str(q if q.is_absolute() else self.output_dir / q)

    def episode_config(self, overrides: dict, base: EpisodeConfig | None = None) -> EpisodeConfig:
        d = (base or EpisodeConfig()).to_dict()
        for key, val in overrides.items():
            if key in ("gen", "sensor", "motion") and isinstance(val, dict):
                d[key] = {**d[key], **val}
            else:
                d[key] = val
        if "sensor" in d and "fov" in d["sensor"] and "fov_deg" in overrides.get("sensor", {}):
            d["sensor"].pop("fov")
        for key in ("prior_path", "scorer_path", "trace_path"):
            if d.get(key) is not None and key in overrides:
                d[key] = self.resolve(d[key])
        return EpisodeConfig.from_dict(d).validate()

    @property
    def prior_path(self) -> str:
        spec = self.raw.get("prior", {})
        return self.resolve(spec.get("path") or self.episode.prior_path or "prior.npz")

    def benchmark_configs(self, policies=None, worlds=None, seeds=None) -> list[EpisodeConfig]:
        """Expand policy variants x worlds x seeds, in that nesting order."""
        variants = self.raw.get("policies") or [{"name": self.episode.policy, "policy": self.episode.policy}]
        if policies:
            variants = [v for v in variants if v["name"] in policies]
            if not variants:
                raise ValueError(f"no policy variant named {policies}")
        worlds = seed_list(worlds if worlds is not None else self.raw.get("worlds"), (self.episode.world_seed,))
        seeds = seed_list(seeds if seeds is not None else self.raw.get("seeds"), (self.episode.start_seed,))
        base = self.episode.replace(prior_path=self.episode.prior_path or self.prior_path)
        out = []
        for v in variants:
            over = {k: val for k, val in v.items()}
            over.setdefault("policy", over["name"])
            cfg = self.episode_config(over, base)
            for w in worlds:
                for s in seeds:
                    out.append(cfg.replace(world_seed=w, start_seed=s, noise_seed=s, policy_seed=s))
        return out


# ------------------------------------------------------------------ benchmark

@dataclass
class BenchmarkResult:
    results: list[EpisodeResult]
    rows: list[dict] = field(default_factory=list)

    @property
    def failures(self) -> list[EpisodeResult]:
        return [r for r in self.results if r.failed]

    def by_name(self, name: str) -> list[EpisodeResult]:
        return [r for r in self.results if r.name == name]


_WORKER = {}


def _init_worker(prior, scorers):
    _WORKER["prior"] = prior
    _WORKER["scorers"] = scorers or {}


def _run_one(cfg: EpisodeConfig) -> EpisodeResult:
    prior = _WORKER.get("prior")
    scorer = _WORKER.get("scorers", {}).get(cfg.name)
    return run_episode(None, cfg, prior=prior, scorer=scorer)


def aggregate(results: list[EpisodeResult]) -> list[dict]:
    """Mean and sample standard deviation per config name, in first-seen order."""
    names = list(dict.fromkeys(r.name for r in results))
    rows = []
    for name in names:
        group = [r for r in results if r.name == name]
        ok = [r for r in group if not r.failed]
        row = {"name": name, "policy": group[0].policy, "n": len(ok), "failed": len(group) - len(ok)}
        for key in METRIC_KEYS:
            vals = np.array([getattr(r.metrics, key) for r in ok], float)
            row[key] = {
                "mean": float(vals.mean()) if vals.size else float("nan"),
                "std": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            }
        rows.append(row)
    return rows


def run_benchmark(configs: list[EpisodeConfig], parallelism: int = 1, prior=None, scorers=None) -> BenchmarkResult:
    """Run every config and aggregate per config name.

    ``scorers`` maps variant names to in-memory GoalScorer objects; configs
    without one load ``scorer_path``. Results keep the input order whatever
    the parallelism.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if parallelism == 1 or len(configs) <= 1:
        _init_worker(prior, scorers)
        results = [_run_one(c) for c in configs]
    else:
        with ProcessPoolExecutor(parallelism, initializer=_init_worker, initargs=(prior, scorers)) as pool:
            results = list(pool.map(_run_one, configs))
    for r in results:
        if r.failed:
            log.error("episode %s %s failed: %s", r.name, r.seeds, r.diagnostic.splitlines()[0])
    return BenchmarkResult(results, aggregate(results))


def format_table(rows: list[dict]) -> str:
    header = ["config", "policy", "n", "failed"] + [METRIC_TITLES[k] for k in METRIC_KEYS]
    body = [[r["name"], r["policy"], str(r["n"]), str(r["failed"])]
            + [f"{r[k]['mean']:.2f} +/- {r[k]['std']:.2f}" for k in METRIC_KEYS] for r in rows]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    fmt = lambda line: "  ".join(cell.ljust(w) if i < 2 else cell.rjust(w)
                                 for i, (cell, w) in enumerate(zip(line, widths))).rstrip()
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(b) for b in body]
    return "\n".join(lines) + "\n"


def write_results(bench: BenchmarkResult, jsonl_path, table_path=None):
    """Episode records then one summary record per config, one JSON object per line."""
    jsonl_path = Path(jsonl_path)
    jsonl_path.parent.mkdir(parents=True, exist_ok=True)
    with open(jsonl_path, "w") as fh:
        for r in bench.results:
            fh.write(json.dumps({"type": "episode", **r.to_dict()}, sort_keys=True) + "\n")
        for row in bench.rows:
            fh.write(json.dumps({"type": "summary", **row}, sort_keys=True) + "\n")
        failures = [{"name": r.name, "seeds": r.seeds, "diagnostic": r.diagnostic} for r in bench.failures]
        fh.write(json.dumps({"type": "failures", "episodes": failures}, sort_keys=True) + "\n")
    if table_path is not None:
        text = format_table(bench.rows)
        if bench.failures:
            text += f"\n{len(bench.failures)} episode(s) failed:\n"
            text += "".join(f"  {r.name} {r.seeds}: {r.diagnostic.splitlines()[0]}\n" for r in bench.failures)
        Path(table_path).write_text(text)


def read_results(jsonl_path) -> BenchmarkResult:
    results, rows = [], []
    with open(jsonl_path) as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.pop("type")
            if kind == "episode":
                results.append(EpisodeResult.from_dict(rec))
            elif kind == "summary":
                rows.append(rec)
    return BenchmarkResult(results, rows)
