"""Predator-prey world: spawning, synchronous stepping, captures, collisions, reward.

Agent states are ``(px, py, vx, vy)`` rows; ``WorldState.predators`` has shape
``(n_predators, 4)`` and ``WorldState.preys`` shape ``(n_preys, 4)``.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .dynamics import DynamicsParams, check_control, step
from .prey import PreyHeuristicConfig, prey_control

SPAWN_ATTEMPTS = 10_000
LOG_SCHEMA = "roimpc.episode-log"
LOG_VERSION = 1


class SpawnFailure(RuntimeError):
    """Rejection sampling could not place every entity with the required separation."""


class StaleState(RuntimeError):
    """``step_world`` was called on a terminated episode."""


class TerminationCause(str, enum.Enum):
    ALL_CAUGHT = "AllCaught"
    TIMEOUT = "Timeout"
    COLLISION = "Collision"


@dataclass(frozen=True)
class WorldConfig:
    r_world: float = 20.0
    n_predators: int = 2
    n_preys: int = 3
    n_obstacles: int = 0
    d_safe: float = 3.5
    r_obs: float = 2.5
    capture_radius: float = 2.0
    max_steps: int = 400
    terminate_on_collision: bool = False
    spawn_min_separation: float = 5.0
    predator: DynamicsParams = DynamicsParams(dt=1.0, u_max=0.75, v_max=1.5)
    prey: DynamicsParams = DynamicsParams(dt=1.0, u_max=1.0, v_max=2.5)
    step_penalty: float = -0.1
    rng_seed: int = 0
    prey_heuristic: PreyHeuristicConfig = PreyHeuristicConfig()

    def __post_init__(self):
        if not self.r_world > 0:
            raise ValueError("r_world must be positive")
        if min(self.d_safe, self.r_obs, self.capture_radius, self.spawn_min_separation) <= 0:
            raise ValueError("all radii must be positive")
        if not self.capture_radius < self.d_safe:
            raise ValueError("capture_radius must be below d_safe")
        if self.n_preys < 1 or self.n_predators < 1 or self.n_obstacles < 0:
            raise ValueError("need at least one predator and one prey")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.predator.dt != self.prey.dt:
            raise ValueError("predators and preys must share dt")

    @property
    def dt(self) -> float:
        return self.predator.dt


def layout(layout_id: int, **overrides) -> WorldConfig:
    """Benchmark layouts: 1 open arena, 2 with three obstacles, 3 adds collision termination."""
    if layout_id == 1:
        base = WorldConfig()
    elif layout_id == 2:
        base = WorldConfig(n_obstacles=3)
    elif layout_id == 3:
        base = WorldConfig(n_obstacles=3, terminate_on_collision=True)
    else:
        raise ValueError(f"unknown layout {layout_id!r}; expected 1, 2 or 3")
    return replace(base, **overrides)


@dataclass
class WorldState:
    predators: np.ndarray
    preys: np.ndarray
    alive: np.ndarray
    obstacles: np.ndarray
    step_count: int = 0
    terminated: bool = False
    termination_cause: TerminationCause | None = None

    def copy(self) -> "WorldState":
        return WorldState(
            self.predators.copy(), self.preys.copy(), self.alive.copy(), self.obstacles.copy(),
            self.step_count, self.terminated, self.termination_cause,
        )


@dataclass
class StepOutcome:
    reward: float
    captures_this_step: list[int] = field(default_factory=list)
    collision_occurred: bool = False
    done: bool = False


def _uniform_in_disc(rng: np.random.Generator, radius: float) -> np.ndarray:
    r = radius * math.sqrt(rng.uniform())
    a = 2.0 * math.pi * rng.uniform()
    return np.array([r * math.cos(a), r * math.sin(a)])


def spawn(cfg: WorldConfig, seed: int | None = None) -> WorldState:
    """Place predators, preys and obstacles (in that order) uniformly in the arena, at rest."""
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    total = cfg.n_predators + cfg.n_preys + cfg.n_obstacles
    placed: list[np.ndarray] = []
    attempts = 0
    sep2 = cfg.spawn_min_separation ** 2
    while len(placed) < total:
        if attempts >= SPAWN_ATTEMPTS:
            raise SpawnFailure(
                f"placed {len(placed)}/{total} entities in {SPAWN_ATTEMPTS} attempts "
                f"(r_world={cfg.r_world}, separation={cfg.spawn_min_separation})"
            )
        attempts += 1
        p = _uniform_in_disc(rng, cfg.r_world)
        if all(float((p - q) @ (p - q)) >= sep2 for q in placed):
            placed.append(p)
    pts = np.array(placed).reshape(total, 2)
    npd, npy = cfg.n_predators, cfg.n_preys
    predators = np.zeros((npd, 4))
    predators[:, :2] = pts[:npd]
    preys = np.zeros((npy, 4))
    preys[:, :2] = pts[npd:npd + npy]
    return WorldState(
        predators=predators, preys=preys, alive=np.ones(npy, dtype=bool),
        obstacles=pts[npd + npy:].copy(),
    )


def enforce_boundary(states: np.ndarray, r_world: float, v_max: float) -> None:
    """Project agents outside the disc back onto it and drop their radial velocity (in place)."""
    for s in states:
        rr = math.hypot(s[0], s[1])
        if rr > r_world:
            nx, ny = s[0] / rr, s[1] / rr
            s[0] = nx * r_world
            s[1] = ny * r_world
            vr = s[2] * nx + s[3] * ny
            s[2] -= vr * nx
            s[3] -= vr * ny
            np.clip(s[2:], -v_max, v_max, out=s[2:])


def predator_collision(s: WorldState, cfg: WorldConfig) -> bool:
    """Predator-predator closer than ``d_safe`` or predator-obstacle closer than ``r_obs``."""
    P = s.predators[:, :2]
    n = len(P)
    for i in range(n):
        for j in range(i + 1, n):
            if math.hypot(*(P[i] - P[j])) < cfg.d_safe:
                return True
        for o in s.obstacles:
            if math.hypot(*(P[i] - o)) < cfg.r_obs:
                return True
    return False


def prey_controls(s: WorldState, cfg: WorldConfig) -> np.ndarray:
    out = np.zeros((cfg.n_preys, 2))
    for j in range(cfg.n_preys):
        if s.alive[j]:
            out[j] = prey_control(s.preys[j], s.predators, s.obstacles, cfg.prey_heuristic, cfg.prey, cfg.r_world)
    return out


def step_world(s: WorldState, predator_controls, cfg: WorldConfig) -> tuple[WorldState, StepOutcome]:
    """Advance every agent one step; returns a new state and the shared outcome."""
    if s.terminated:
        raise StaleState("episode already terminated")
    u = np.asarray(predator_controls, dtype=float).reshape(cfg.n_predators, 2)
    check_control(u, cfg.predator.u_max)
    u_prey = prey_controls(s, cfg)

    new = s.copy()
    new.predators = step(s.predators, u, cfg.predator)
    enforce_boundary(new.predators, cfg.r_world, cfg.predator.v_max)
    live = np.flatnonzero(s.alive)
    if len(live):
        new.preys[live] = step(s.preys[live], u_prey[live], cfg.prey)
        moved = new.preys[live]
        enforce_boundary(moved, cfg.r_world, cfg.prey.v_max)
        new.preys[live] = moved
    new.step_count = s.step_count + 1

    captures = []
    for j in live:
        d = np.hypot(new.predators[:, 0] - new.preys[j, 0], new.predators[:, 1] - new.preys[j, 1])
        if np.any(d <= cfg.capture_radius):
            new.alive[j] = False
            captures.append(int(j))

    collision = predator_collision(new, cfg)
    reward = cfg.step_penalty
    cause = None
    if collision and cfg.terminate_on_collision:
        reward += cfg.step_penalty * (cfg.max_steps - new.step_count)
        cause = TerminationCause.COLLISION
    elif not new.alive.any():
        cause = TerminationCause.ALL_CAUGHT
    elif new.step_count >= cfg.max_steps:
        cause = TerminationCause.TIMEOUT
    if cause is not None:
        new.terminated = True
        new.termination_cause = cause
    return new, StepOutcome(reward=reward, captures_this_step=captures,
                            collision_occurred=collision, done=new.terminated)


# ---------------------------------------------------------------------------
# Episode logs


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "as_list"):
        return x.as_list()
    return x


@dataclass
class EpisodeLog:
    """Per-step records plus a header; serialised as JSON lines with a versioned header line."""

    meta: dict = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)

    def append(self, step: int, world: WorldState, actions=None, targets=None, reward: float = 0.0,
               events: dict | None = None, diagnostics=None) -> None:
        rec = {
            "step": int(step),
            "predators": world.predators.tolist(),
            "preys": world.preys.tolist(),
            "alive": [bool(a) for a in world.alive],
            "actions": _jsonable(actions) if actions is not None else None,
            "targets": _jsonable(targets) if targets is not None else None,
            "reward": float(reward),
            "events": _jsonable(events or {}),
        }
        if diagnostics is not None:
            rec["diagnostics"] = _jsonable(diagnostics)
        self.records.append(rec)

    @property
    def rewards(self) -> list[float]:
        return [r["reward"] for r in self.records]

    def header(self) -> dict:
        return {"schema": LOG_SCHEMA, "version": LOG_VERSION, **_jsonable(self.meta)}

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "EpisodeLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty episode log")
        head = json.loads(lines[0])
        if head.get("schema") != LOG_SCHEMA:
            raise ValueError(f"not an episode log (schema={head.get('schema')!r})")
        if head.get("version") != LOG_VERSION:
            raise ValueError(f"unsupported episode-log version {head.get('version')!r}")
        meta = {k: v for k, v in head.items() if k not in ("schema", "version")}
        return cls(meta=meta, records=[json.loads(ln) for ln in lines[1:]])

    @classmethod
    def read(cls, path) -> "EpisodeLog":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def episode_reward(log: EpisodeLog | Iterable[float]) -> float:
    """Sum of per-step rewards (correctly rounded, so 400 steps of -0.1 give exactly -40.0)."""
    rewards = log.rewards if isinstance(log, EpisodeLog) else list(log)
    return math.fsum(rewards)
