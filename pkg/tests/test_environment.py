import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roimpc.dynamics import BoundViolation
from roimpc.environment import (
    LOG_SCHEMA, EpisodeLog, SpawnFailure, StaleState, TerminationCause, WorldConfig, enforce_boundary,
    episode_reward, layout, spawn, step_world,
)

from conftest import make_world


def pairwise_min(pts):
    d = [math.dist(a, b) for i, a in enumerate(pts) for b in pts[i + 1:]]
    return min(d) if d else math.inf


@pytest.mark.parametrize("layout_id, n_obs, term", [(1, 0, False), (2, 3, False), (3, 3, True)])
def test_layouts(layout_id, n_obs, term):
    cfg = layout(layout_id)
    assert (cfg.n_obstacles, cfg.terminate_on_collision) == (n_obs, term)
    assert (cfg.r_world, cfg.n_predators, cfg.n_preys, cfg.max_steps) == (20.0, 2, 3, 400)
    assert (cfg.d_safe, cfg.r_obs, cfg.capture_radius) == (3.5, 2.5, 2.0)


def test_unknown_layout():
    with pytest.raises(ValueError):
        layout(4)


@pytest.mark.parametrize("kw", [dict(r_world=0), dict(capture_radius=4.0), dict(n_preys=0), dict(max_steps=0)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        WorldConfig(**kw)


@pytest.mark.parametrize("layout_id", [1, 2, 3])
def test_spawn_contract(layout_id):
    cfg = layout(layout_id)
    s = spawn(cfg, 42)
    pts = list(s.predators[:, :2]) + list(s.preys[:, :2]) + list(s.obstacles)
    assert len(s.predators) == 2 and len(s.preys) == 3 and len(s.obstacles) == cfg.n_obstacles
    assert pairwise_min(pts) >= cfg.spawn_min_separation
    assert all(math.hypot(*p) <= cfg.r_world for p in pts)
    assert not s.predators[:, 2:].any() and not s.preys[:, 2:].any()
    assert s.alive.all() and s.step_count == 0 and not s.terminated


def test_spawn_deterministic():
    a, b = spawn(layout(2), 7), spawn(layout(2), 7)
    for x, y in [(a.predators, b.predators), (a.preys, b.preys), (a.obstacles, b.obstacles)]:
        np.testing.assert_array_equal(x, y)
    assert not np.array_equal(spawn(layout(2), 8).preys, a.preys)


def test_spawn_failure():
    with pytest.raises(SpawnFailure):
        spawn(WorldConfig(spawn_min_separation=100.0), 0)


def test_capture_within_radius():
    cfg = layout(1)
    w = make_world([(0, 0), (10, 10)], [(1.5, 0), (-15, 0), (0, -15)])
    new, out = step_world(w, np.zeros((2, 2)), cfg)
    # the prey accelerates away by at most 0.5 m in one step: 1.5 + 0.5 = 2.0 <= capture radius
    assert not new.alive[0] and out.captures_this_step == [0]
    assert new.alive[1:].all()


def test_plain_step_reward():
    cfg = layout(1)
    w = spawn(cfg, 3)
    new, out = step_world(w, np.zeros((2, 2)), cfg)
    assert out.reward == -0.1 and not out.done and new.step_count == 1
    assert w.step_count == 0  # input state untouched


def test_layout3_collision_terminates():
    cfg = layout(3)
    w = make_world([(0, 0), (3.0, 0)], [(15, 0), (-15, 0), (0, 15)], obstacles=[(0, -15), (10, -10), (-10, -10)])
    new, out = step_world(w, np.zeros((2, 2)), cfg)
    assert out.collision_occurred and out.done
    assert new.termination_cause == TerminationCause.COLLISION
    assert out.reward == pytest.approx(-0.1 - 0.1 * (400 - 1))


def test_collision_reported_but_not_terminal_in_layout2():
    cfg = layout(2)
    w = make_world([(0, 0), (3.0, 0)], [(15, 0), (-15, 0), (0, 15)], obstacles=[(0, -15), (10, -10), (-10, -10)])
    _, out = step_world(w, np.zeros((2, 2)), cfg)
    assert out.collision_occurred and not out.done and out.reward == -0.1


def test_obstacle_collision():
    cfg = layout(3)
    w = make_world([(0, 0), (10, 0)], [(15, 5), (-15, 0), (0, 15)], obstacles=[(2.0, 0), (-10, -10), (0, -15)])
    _, out = step_world(w, np.zeros((2, 2)), cfg)
    assert out.collision_occurred and out.done


def test_all_caught_and_stale():
    cfg = layout(1)
    w = make_world([(0, 0), (10, 0)], [(1.0, 0), (11, 0), (-15, 0)], alive=[True, True, False])
    new, out = step_world(w, np.zeros((2, 2)), cfg)
    assert out.done and new.termination_cause == TerminationCause.ALL_CAUGHT
    with pytest.raises(StaleState):
        step_world(new, np.zeros((2, 2)), cfg)


def test_timeout():
    cfg = layout(1, max_steps=3)
    w = spawn(cfg, 0)
    for _ in range(3):
        w, out = step_world(w, np.zeros((2, 2)), cfg)
    assert out.done and w.termination_cause == TerminationCause.TIMEOUT


def test_control_bound_enforced():
    cfg = layout(1)
    with pytest.raises(BoundViolation):
        step_world(spawn(cfg, 0), np.full((2, 2), 0.8), cfg)


def test_enforce_boundary_projects_and_drops_radial_velocity():
    s = np.array([[21.0, 0.0, 1.0, 0.5]])
    enforce_boundary(s, 20.0, 1.5)
    np.testing.assert_allclose(s[0], [20.0, 0.0, 0.0, 0.5])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_random_play_invariants(seed):
    cfg = layout(2)
    rng = np.random.default_rng(seed)
    w = spawn(cfg, seed)
    alive_prev = w.alive.copy()
    for _ in range(60):
        w, out = step_world(w, rng.uniform(-0.75, 0.75, (2, 2)), cfg)
        r = np.hypot(w.predators[:, 0], w.predators[:, 1])
        assert np.all(r <= cfg.r_world + 1e-9)
        live = w.preys[w.alive]
        assert np.all(np.hypot(live[:, 0], live[:, 1]) <= cfg.r_world + 1e-9)
        assert np.all(np.abs(w.predators[:, 2:]) <= cfg.predator.v_max)
        assert not np.any(w.alive & ~alive_prev)
        alive_prev = w.alive.copy()
        assert out.reward == -0.1
        if w.terminated:
            break


def test_same_controls_same_trajectory():
    cfg = layout(2)

    def play():
        rng = np.random.default_rng(5)
        w = spawn(cfg, 11)
        traj = []
        for _ in range(50):
            w, _ = step_world(w, rng.uniform(-0.75, 0.75, (2, 2)), cfg)
            traj.append(np.concatenate([w.predators.ravel(), w.preys.ravel()]))
        return np.array(traj)

    np.testing.assert_array_equal(play(), play())


@pytest.mark.parametrize("rewards, expected", [([-0.1] * 400, -40.0), ([-0.1], -0.1), ([], 0.0)])
def test_episode_reward(rewards, expected):
    assert episode_reward(rewards) == expected


def test_episode_log_roundtrip(tmp_path):
    cfg = layout(1)
    w = spawn(cfg, 1)
    log = EpisodeLog(meta={"seed": 1})
    log.append(0, w)
    w2, out = step_world(w, np.zeros((2, 2)), cfg)
    log.append(1, w2, actions=[np.zeros(2), np.ones(2) * 0.1], reward=out.reward, events={"captures": []})
    p = tmp_path / "ep.jsonl"
    log.write(p)
    back = EpisodeLog.read(p)
    assert back.meta == {"seed": 1} and back.records == log.records
    assert episode_reward(back) == -0.1
    head = p.read_text().splitlines()[0]
    assert LOG_SCHEMA in head and '"version": 1' in head


@pytest.mark.parametrize("text", ["", '{"schema": "other"}\n', '{"schema": "roimpc.episode-log", "version": 99}\n'])
def test_episode_log_rejects(text):
    with pytest.raises(ValueError):
        EpisodeLog.loads(text)
