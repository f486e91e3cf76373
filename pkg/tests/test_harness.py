import json
import os

import numpy as np
import pytest
import yaml
from click.testing import CliRunner
from jsonschema import ValidationError
from PIL import Image

from conftest import DESK_GEN, DESK_WINDOW
from semantic_explore.cli import main
from semantic_explore.env import SemanticGrid
from semantic_explore.episode import EpisodeConfig, run_episode
from semantic_explore.full_mapper import GlobalMapBundle, fuse
from semantic_explore.harness import (OUTPUT_ENV, Experiment, aggregate, format_table, read_results, run_benchmark,
                                      seed_list, write_results)
from semantic_explore.metrics import MetricTracker, compute_metrics
from semantic_explore.policy_learn import GoalScorer
from semantic_explore.render import export_maps, label_image, palette, read_label_image, save_labels
from semantic_explore.validation import GeometryError

from helpers import random_local

# -------------------------------------------------------------------- metrics


def test_empty_maps_score_zero():
    gt = SemanticGrid.from_labels(np.ones((8, 8), np.uint8), 0.0375, n_categories=4)
    m = compute_metrics(GlobalMapBundle.empty((8, 8), 0.0375), gt)
    assert m.values() == {"cov_p": 0.0, "asc_p": 0.0, "cov_c": 0.0, "asc_c": 0.0}


def test_exact_patch_area():
    labels = np.random.default_rng(0).integers(1, 5, (20, 20)).astype(np.uint8)
    gt = SemanticGrid.from_labels(labels, 0.0375, n_categories=6)
    g = GlobalMapBundle.empty((20, 20), 0.0375)
    g.M_proj[5:15, 3:13] = labels[5:15, 3:13]
    m = compute_metrics(g, gt)
    assert m.cov_p == pytest.approx(100 * 0.0375 ** 2)
    assert m.asc_p == m.cov_p


def _random_maps(rng, n=32):
    gt = SemanticGrid.from_labels(rng.integers(0, 5, (n, n)).astype(np.uint8), 0.1, n_categories=5)
    g = GlobalMapBundle(rng.integers(0, 5, (n, n)).astype(np.uint8), rng.integers(0, 5, (n, n)).astype(np.uint8),
                        np.where(rng.random((n, n)) < 0.3, 0.0, rng.random((n, n))), 0.1)
    return g, gt


def _naive(g, gt):
    cov_p = asc_p = cov_c = asc_c = 0
    for i in range(gt.height):
        for j in range(gt.width):
            t = gt.labels[i, j]
            if g.M_proj[i, j] != 0:
                cov_p += 1
                asc_p += g.M_proj[i, j] == t
            if g.M_conf[i, j] > 0 and g.M_cmplt[i, j] != 0:
                cov_c += 1
                asc_c += g.M_cmplt[i, j] == t
    a = g.cell_size ** 2
    return cov_p * a, asc_p * a, cov_c * a, asc_c * a


def test_metrics_match_naive_recount():
    rng = np.random.default_rng(1)
    for _ in range(10):
        g, gt = _random_maps(rng)
        m = compute_metrics(g, gt)
        assert (m.cov_p, m.asc_p, m.cov_c, m.asc_c) == pytest.approx(_naive(g, gt))
        assert m.asc_p <= m.cov_p and m.asc_c <= m.cov_c


def test_tracker_agrees_with_full_recount():
    rng = np.random.default_rng(2)
    g, gt = _random_maps(rng)
    tracker = MetricTracker(gt, g)
    for _ in range(12):
        local = random_local(rng, 8, (rng.integers(0, 25), rng.integers(0, 25)), n_categories=5)
        tracker.before(local.origin, local.size)
        fuse(g, local, inplace=True)
        tracker.after()
        assert tracker.snapshot().values() == pytest.approx(compute_metrics(g, gt).values())


def test_metrics_reject_mismatched_geometry():
    gt = SemanticGrid.from_labels(np.ones((8, 8), np.uint8), 0.1, n_categories=4)
    with pytest.raises(GeometryError):
        compute_metrics(GlobalMapBundle.empty((8, 9), 0.1), gt)
    with pytest.raises(GeometryError):
        compute_metrics(GlobalMapBundle.empty((8, 8), 0.2), gt)


# ------------------------------------------------------------------ benchmark

def _configs(prior_path, policies=("UncertaintyGreedy",), worlds=(3,), seeds=(0,), k=40):
    return [EpisodeConfig(name=p, policy=p, gen=DESK_GEN, local_size=DESK_WINDOW, k=k, world_seed=w,
                          start_seed=s, noise_seed=s, policy_seed=s, prior_path=str(prior_path))
            for p in policies for w in worlds for s in seeds]


@pytest.fixture(scope="module")
def prior_file(tmp_path_factory, desk_prior):
    path = tmp_path_factory.mktemp("prior") / "prior.npz"
    desk_prior.save(path)
    return path


def test_single_config_row_equals_episode(prior_file):
    cfgs = _configs(prior_file)
    bench = run_benchmark(cfgs)
    single = run_episode(None, cfgs[0])
    assert bench.results == [single]
    row = bench.rows[0]
    assert row["n"] == 1 and row["failed"] == 0
    for key, val in single.metrics.values().items():
        assert row[key] == {"mean": val, "std": 0.0}


def test_parallel_run_matches_serial(prior_file):
    cfgs = _configs(prior_file, policies=("UncertaintyGreedy", "Random"), seeds=(0, 1))
    a = run_benchmark(cfgs, parallelism=1)
    b = run_benchmark(cfgs, parallelism=2)
    assert a.results == b.results
    assert a.rows == b.rows


def test_results_files_are_byte_stable(prior_file, tmp_path):
    cfgs = _configs(prior_file, policies=("Frontier", "Random"), seeds=(0, 1))
    for tag in ("a", "b"):
        write_results(run_benchmark(cfgs), tmp_path / f"{tag}.jsonl", tmp_path / f"{tag}.txt")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    back = read_results(tmp_path / "a.jsonl")
    assert len(back.results) == 4
    assert back.rows == json.loads(json.dumps(aggregate(back.results)))


def test_failed_episodes_are_reported_not_raised(tmp_path):
    cfgs = _configs(tmp_path / "missing.npz")
    bench = run_benchmark(cfgs)
    assert len(bench.failures) == 1
    assert bench.rows[0]["failed"] == 1 and bench.rows[0]["n"] == 0
    write_results(bench, tmp_path / "r.jsonl", tmp_path / "r.txt")
    last = json.loads((tmp_path / "r.jsonl").read_text().splitlines()[-1])
    assert last["type"] == "failures" and len(last["episodes"]) == 1
    assert "failed" in (tmp_path / "r.txt").read_text()


def test_table_layout():
    rows = [{"name": "a", "policy": "Random", "n": 2, "failed": 0,
             **{k: {"mean": 1.0, "std": 0.5} for k in ("cov_p", "asc_p", "cov_c", "asc_c")}}]
    lines = format_table(rows).splitlines()
    assert lines[0].startswith("config")
    assert "1.00 +/- 0.50" in lines[2]
    assert len(lines) == 3


def test_parallelism_must_be_positive():
    with pytest.raises(ValueError):
        run_benchmark([], parallelism=0)


# --------------------------------------------------------------- experiments

def test_seed_list_forms():
    assert seed_list(None, (4,)) == [4]
    assert seed_list({"start": 3, "count": 2}) == [3, 4]
    assert seed_list([9, 1]) == [9, 1]


def test_schema_rejects_unknown_keys_and_bad_types():
    with pytest.raises(ValidationError):
        Experiment.from_dict({"bogus": 1})
    with pytest.raises(ValidationError):
        Experiment.from_dict({"parallelism": 0})
    with pytest.raises(ValueError):
        Experiment.from_dict({"episode": {"policy": "Nope"}})


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "elsewhere"))
    exp = Experiment.from_dict({"output_dir": "ignored", "episode": {"prior_path": "p.npz"}})
    assert exp.output_dir == tmp_path / "elsewhere"
    assert exp.episode.prior_path == str(tmp_path / "elsewhere" / "p.npz")


def test_benchmark_configs_expand_variants(tmp_path):
    exp = Experiment.from_dict({"output_dir": str(tmp_path), "worlds": [1, 2], "seeds": {"count": 3},
                                "policies": [{"name": "g", "policy": "UncertaintyGreedy"}, {"name": "Random"}]})
    cfgs = exp.benchmark_configs()
    assert len(cfgs) == 12
    assert [c.name for c in cfgs[:6]] == ["g"] * 6
    assert cfgs[6].policy == "Random"
    assert [(c.world_seed, c.start_seed) for c in cfgs[:3]] == [(1, 0), (1, 1), (1, 2)]
    assert len(exp.benchmark_configs(policies=["Random"], seeds=[5])) == 2


def test_shipped_config_is_valid():
    here = os.path.join(os.path.dirname(__file__), "..", "configs", "desk.yaml")
    exp = Experiment.load(here)
    assert {c.policy for c in exp.benchmark_configs()} == {"UncertaintyGreedy", "Frontier", "Random", "Learned"}


# -------------------------------------------------------------------- render

def test_empty_maps_render_uniform_void(tmp_path):
    files = export_maps(GlobalMapBundle.empty((6, 6), 0.1), None, tmp_path)
    rgb = np.array(Image.open(files["M_proj"]).convert("RGB"))
    assert (rgb == palette()[0]).all()
    assert set(files) == {"M_proj", "M_cmplt", "M_conf", "legend"}


def test_label_image_round_trip(tmp_path):
    labels = np.random.default_rng(3).integers(0, 40, (17, 23)).astype(np.uint8)
    assert np.array_equal(read_label_image(save_labels(labels, tmp_path / "x.png")), labels)


def test_known_map_uses_palette_table(tmp_path):
    labels = np.array([[0, 1], [2, 3]], np.uint8)
    rgb = np.array(label_image(labels).convert("RGB"))
    expected = [(255, 255, 255), (196, 196, 196), (64, 64, 64), (31, 119, 180)]
    assert [tuple(rgb[i, j]) for i in range(2) for j in range(2)] == expected


def test_palette_is_distinct():
    pal = palette()
    assert len({tuple(c) for c in pal}) == len(pal)


def test_export_writes_every_layer_and_legend(tmp_path):
    gt = SemanticGrid.from_labels(np.array([[1, 2], [3, 0]], np.uint8), 0.1, n_categories=5)
    g = GlobalMapBundle(gt.labels.copy(), gt.labels.copy(), np.array([[0.0, 0.5], [1.0, 0.25]]), 0.1)
    files = export_maps(g, gt, tmp_path / "out")
    assert np.array_equal(read_label_image(files["gt"]), gt.labels)
    legend = files["legend"].read_text().splitlines()
    assert legend[0] == "id\tname\tcolour"
    assert legend[1].startswith("0\tvoid\t#ffffff") and len(legend) == 6
    conf = np.array(Image.open(files["M_conf"]))
    assert conf.shape == (2, 2, 3) and not (conf[0, 0] == conf[1, 0]).all()


def test_export_to_unwritable_path_raises(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        export_maps(GlobalMapBundle.empty((2, 2), 0.1), None, blocker / "sub")


# ----------------------------------------------------------------------- CLI

@pytest.fixture
def cli_config(tmp_path, prior_file):
    cfg = {
        "name": "tiny",
        "output_dir": str(tmp_path / "out"),
        "episode": {"gen": {"cell_size": 0.075}, "local_size": DESK_WINDOW, "k": 20, "world_seed": 3},
        "worlds": [3], "seeds": {"count": 2},
        "prior": {"path": str(prior_file), "train_worlds": [1000, 1001], "reach": 24, "n_views": 2},
        "scorers": [{"path": "s.json", "train_worlds": [2000], "population": 2, "n_iter": 1,
                     "episode": {"k": 15}}],
        "policies": [{"name": "greedy", "policy": "UncertaintyGreedy"}, {"name": "rand", "policy": "Random"},
                     {"name": "learned", "policy": "Learned", "scorer_path": "s.json"}],
    }
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_cli_run_and_bench(cli_config, tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["run", str(cli_config), "--policy", "greedy", "--seed", "1", "--trace"])
    assert res.exit_code == 0, res.output
    episodes = sorted(p.name for p in (tmp_path / "out" / "episodes").iterdir())
    assert episodes == ["greedy_w3_s1.json", "greedy_w3_s1.maps.npz", "greedy_w3_s1.trace.jsonl"]
    res = runner.invoke(main, ["bench", str(cli_config), "--policy", "greedy", "--policy", "rand"])
    assert res.exit_code == 0, res.output
    assert "greedy" in res.output and "rand" in res.output
    lines = (tmp_path / "out" / "tiny.jsonl").read_text().splitlines()
    assert sum(json.loads(l)["type"] == "episode" for l in lines) == 4


def test_cli_train_policy_then_render(cli_config, tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["train-policy", str(cli_config)])
    assert res.exit_code == 0, res.output
    assert GoalScorer.load(tmp_path / "out" / "s.json").weights_.shape == (5,)
    assert len((tmp_path / "out" / "s.curve.jsonl").read_text().splitlines()) == 1
    res = runner.invoke(main, ["run", str(cli_config), "--policy", "learned"])
    assert res.exit_code == 0, res.output
    maps = tmp_path / "out" / "episodes" / "learned_w3_s0.maps.npz"
    res = runner.invoke(main, ["render", str(cli_config), "--maps", str(maps), "--world", "3"])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "out" / "render" / "gt.png").exists()


def test_cli_generate_and_train_prior(cli_config, tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["generate", str(cli_config), "--worlds", "5,6"])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "out" / "floorplans" / "world_6.labels.txt").exists()
    doc = yaml.safe_load(cli_config.read_text())
    doc["prior"]["path"] = "fresh_prior.npz"
    cli_config.write_text(yaml.safe_dump(doc))
    res = runner.invoke(main, ["train-prior", str(cli_config)])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "out" / "fresh_prior.npz").exists()


def test_cli_nonzero_exit_on_failed_episode(cli_config, tmp_path):
    doc = yaml.safe_load(cli_config.read_text())
    doc["prior"]["path"] = str(tmp_path / "nowhere.npz")
    cli_config.write_text(yaml.safe_dump(doc))
    res = CliRunner().invoke(main, ["bench", str(cli_config), "--policy", "greedy"])
    assert res.exit_code == 1
    res = CliRunner().invoke(main, ["run", str(cli_config), "--policy", "greedy"])
    assert res.exit_code == 1


def test_cli_env_var_moves_outputs(cli_config, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "moved"))
    res = CliRunner().invoke(main, ["generate", str(cli_config), "--worlds", "5"])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "moved" / "floorplans" / "world_5.png").exists()
