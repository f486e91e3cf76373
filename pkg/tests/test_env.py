import math

import numpy as np
import pytest
from scipy import ndimage

from semantic_explore.env import (FLOOR, VOID, WALL, Action, AgentState, GenConfig, GenerationError, MotionConfig,
                                  SemanticGrid, SensorConfig, generate_floorplan, is_connected, sample_start, sense,
                                  step)

SMALL = GenConfig(cell_size=0.075)


def open_room(n=40, cs=0.1, wall=True):
    labels = np.full((n, n), FLOOR, np.uint8)
    if wall:
        labels[0, :] = labels[-1, :] = labels[:, 0] = labels[:, -1] = WALL
    return SemanticGrid.from_labels(labels, cs, n_categories=6)


def test_generation_is_deterministic():
    a = generate_floorplan(7, SMALL)
    b = generate_floorplan(7, SMALL)
    assert a == b
    assert not np.array_equal(a.labels, generate_floorplan(8, SMALL).labels)


@pytest.mark.parametrize("seed", range(6))
def test_free_space_is_one_component(seed):
    grid = generate_floorplan(seed, SMALL)
    # flood fill from one free cell must reach every free cell
    free = grid.labels == FLOOR
    r, c = np.argwhere(free)[0]
    filled = np.zeros_like(free)
    filled[r, c] = True
    while True:
        grown = ndimage.binary_dilation(filled, structure=ndimage.generate_binary_structure(2, 1)) & free
        if (grown == filled).all():
            break
        filled = grown
    assert (filled == free).all()
    assert is_connected(grid)


def test_world_area_matches_config():
    grid = generate_floorplan(3, SMALL)
    assert grid.height * grid.width * grid.cell_size ** 2 == pytest.approx(SMALL.world_size ** 2)


def test_one_room_without_furniture_has_free_interior():
    cfg = GenConfig(cell_size=0.075, n_rooms=(1, 1), furniture_density=0.0)
    grid = generate_floorplan(7, cfg)
    assert set(np.unique(grid.labels)) <= {VOID, FLOOR, WALL}
    inside = ndimage.binary_fill_holes(grid.labels != VOID) & (grid.labels != WALL)
    assert (grid.labels[inside] == FLOOR).all()


def test_infeasible_config_raises():
    with pytest.raises(GenerationError):
        generate_floorplan(0, GenConfig(world_size=10.0, building_size=(30.0, 40.0)))


def test_obstacles_are_non_floor_labels():
    grid = generate_floorplan(2, SMALL)
    assert np.array_equal(grid.obstacle, grid.labels != FLOOR)


def test_move_forward_advances_one_stride():
    grid = open_room()
    s = AgentState(2.0, 2.0, 0.0)
    t = step(s, Action.MoveForward, grid)
    assert t.x == pytest.approx(2.25)
    assert t.y == pytest.approx(2.0)
    assert t.step == 1


def test_rotations_are_inverse():
    grid = open_room()
    s = AgentState(2.0, 2.0, math.radians(60))
    back = step(step(s, Action.RotateLeft, grid), Action.RotateRight, grid)
    assert back.heading == s.heading
    assert back.step == 2


def test_blocked_move_is_a_noop_on_position():
    grid = open_room(n=40, cs=0.1)
    s = AgentState(3.85, 2.0, 0.0)  # wall occupies x in [3.9, 4.0)
    t = step(s, Action.MoveForward, grid)
    assert (t.x, t.y) == (s.x, s.y)
    assert t.step == 1


def test_random_walk_never_enters_obstacles(rng):
    grid = generate_floorplan(4, SMALL)
    s = sample_start(grid, 0)
    for _ in range(400):
        s = step(s, Action(int(rng.integers(3))), grid)
        assert grid.is_free_at(s.x, s.y)
        assert 0.0 <= s.heading < 2 * math.pi


def test_frontal_ray_hits_wall_at_one_meter():
    grid = open_room(n=60, cs=0.05)
    wall_x = 59 * 0.05
    s = AgentState(wall_x - 1.0, 1.5, 0.0)
    obs = sense(s, grid, SensorConfig(fov=0.0, n_rays=1, p_noise=0.0))
    assert obs.hit[0]
    assert abs(obs.hit_dist[0] - 1.0) <= 0.5 * grid.cell_size + 1e-9


def test_noiseless_labels_match_grid():
    grid = generate_floorplan(5, SMALL)
    s = sample_start(grid, 1)
    obs = sense(s, grid, SensorConfig(p_noise=0.0))
    cs = grid.cell_size
    for a, d, lab, hit in zip(obs.angles, obs.hit_dist, obs.hit_label, obs.hit):
        if not hit:
            continue
        # the hit distance is the ray's entry into the hit cell; nudge inside it
        x = s.x + (d + 1e-6) * math.cos(a)
        y = s.y + (d + 1e-6) * math.sin(a)
        assert grid.labels[int(y // cs), int(x // cs)] == lab


def test_full_noise_never_reports_true_label():
    grid = generate_floorplan(5, SMALL)
    s = sample_start(grid, 1)
    clean = sense(s, grid, SensorConfig(p_noise=0.0), noise_seed=3)
    noisy = sense(s, grid, SensorConfig(p_noise=1.0), noise_seed=3)
    assert clean.hit.any()
    assert np.array_equal(clean.hit, noisy.hit)
    assert (noisy.hit_label[clean.hit] != clean.hit_label[clean.hit]).all()
    assert (noisy.hit_label[clean.hit] != VOID).all()


def test_sensing_is_deterministic_under_seed():
    grid = generate_floorplan(5, SMALL)
    s = sample_start(grid, 2)
    assert sense(s, grid, noise_seed=9) == sense(s, grid, noise_seed=9)


def test_hits_respect_range_and_first_obstacle():
    grid = generate_floorplan(6, SMALL)
    s = sample_start(grid, 4)
    sensor = SensorConfig(max_range=3.0, p_noise=0.0)
    obs = sense(s, grid, sensor)
    assert (obs.hit_dist <= sensor.max_range + 1e-9).all()
    cs = grid.cell_size
    # every sample before the hit lies on free floor
    free_samples = ~obs.sample_hit
    assert (obs.sample_label[free_samples] == FLOOR).all()
    for ray in range(obs.n_rays):
        d = obs.sample_dist[obs.sample_ray == ray]
        if obs.hit[ray]:
            assert d.max() <= obs.hit_dist[ray] + cs


def test_rays_are_evenly_spaced():
    a = SensorConfig(n_rays=8).angles(0.0)
    assert np.allclose(np.diff(a), 2 * math.pi / 8)
    b = SensorConfig(fov=math.pi / 2, n_rays=5).angles(math.pi)
    assert np.allclose(np.diff(b), math.pi / 8)


def test_motion_config_requires_divisible_turn():
    with pytest.raises(ValueError):
        MotionConfig(turn=math.radians(25)).n_headings
