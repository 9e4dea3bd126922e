"""Predator-team agents and the single-episode runner.

An agent turns a world state into one control per predator. Policy-driven
agents go through one of three execution schemes:

* ``RoiGuided``: hybrid action -> ROI target -> tracking MPC.
* ``EndToEnd``: the policy's bounded 2-D output is applied directly.
* ``ShieldingMpc``: the policy's 2-D output is filtered by the shielding MPC.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .controllers import MpcWeights, shielding_control, tracking_control
from .environment import (
    EpisodeLog, TerminationCause, WorldConfig, WorldState, episode_reward, spawn, step_world,
)
from .observation import ObservationLayout, encode, global_state
from .policy import HeadMode, PolicyParams, forward_actor, sample_and_logprob, to_control, to_hybrid
from .roi import HybridAction, RoiConfig, map_target, remap_dead_prey
from .solver import DEFAULT_OPTIONS, SolverOptions


class Scheme(str, enum.Enum):
    ROI_GUIDED = "RoiGuided"
    END_TO_END = "EndToEnd"
    SHIELDING = "ShieldingMpc"

    @property
    def head(self) -> HeadMode:
        return HeadMode.HYBRID_ROI if self is Scheme.ROI_GUIDED else HeadMode.CONTINUOUS_2D


@dataclass
class Decision:
    controls: np.ndarray  # (n_predators, 2) applied accelerations
    actions: list  # per predator: HybridAction or raw 2-D control (what the observation reports)
    targets: list  # per predator: ROI target or None
    diagnostics: list = field(default_factory=list)


class Executor:
    """Maps per-predator high-level actions to bounded controls for one scheme.

    Holds the per-agent state that persists across steps within an episode:
    last actions (for observations) and MPC warm starts.
    """

    def __init__(self, scheme: Scheme, cfg: WorldConfig, weights: MpcWeights | None = None,
                 roi: RoiConfig | None = None, options: SolverOptions = DEFAULT_OPTIONS):
        self.scheme = Scheme(scheme)
        self.cfg = cfg
        self.weights = weights or MpcWeights()
        self.roi = roi or RoiConfig()
        self.options = options
        self.reset()

    def reset(self) -> None:
        n = self.cfg.n_predators
        self.last_actions: list = [None] * n
        self.warm: list = [None] * n

    def execute(self, world: WorldState, actions: list) -> Decision:
        cfg = self.cfg
        n = cfg.n_predators
        controls = np.zeros((n, 2))
        targets: list = [None] * n
        diags: list = []
        for i in range(n):
            x = world.predators[i]
            others = [world.predators[j, :2] for j in range(n) if j != i]
            a = actions[i]
            if self.scheme is Scheme.ROI_GUIDED:
                c = remap_dead_prey(a.c, world.alive)
                if c != a.c:
                    a = HybridAction(c, a.r_norm, a.theta_norm)
                tau = map_target(a, world.preys[c, :2], self.roi)
                controls[i], sol = tracking_control(x, tau, others, world.obstacles, self.weights, cfg,
                                                    self.warm[i], self.options)
                self.warm[i] = sol
                targets[i] = tau
                diags.append(sol.diagnostics())
            elif self.scheme is Scheme.SHIELDING:
                u_rl = np.clip(np.asarray(a, dtype=float), -cfg.predator.u_max, cfg.predator.u_max)
                controls[i], sol = shielding_control(x, u_rl, others, world.obstacles, self.weights, cfg,
                                                     self.warm[i], self.options)
                self.warm[i] = sol
                diags.append(sol.diagnostics())
            else:
                controls[i] = np.clip(np.asarray(a, dtype=float), -cfg.predator.u_max, cfg.predator.u_max)
            self.last_actions[i] = a
        return Decision(controls, list(actions), targets, diags)


class Agent:
    """Base agent: ``reset`` at episode start, ``act`` once per step."""

    def reset(self, world: WorldState, rng: np.random.Generator) -> None:
        pass

    def prepare(self, world: WorldState) -> WorldState:
        """Hook run before ``act``; test doubles may edit the world here."""
        return world

    def act(self, world: WorldState, rng: np.random.Generator) -> Decision:
        raise NotImplementedError


class PolicyAgent(Agent):
    """Shared-parameter actor executed through ``scheme``; sampling or deterministic mode."""

    def __init__(self, params: PolicyParams, scheme: Scheme, cfg: WorldConfig, weights: MpcWeights | None = None,
                 roi: RoiConfig | None = None, deterministic: bool = True,
                 options: SolverOptions = DEFAULT_OPTIONS):
        self.params = params
        self.exec = Executor(scheme, cfg, weights, roi, options)
        if params.mode != self.exec.scheme.head:
            raise ValueError(f"policy head {params.mode.value} does not fit scheme {self.exec.scheme.value}")
        self.layout = ObservationLayout.for_world(cfg)
        if params.obs_dim != self.layout.total_length:
            raise ValueError(f"policy expects {params.obs_dim} observation entries, world gives {self.layout.total_length}")
        self.deterministic = deterministic
        self.last = None  # (obs, state, latent, logp, mask) of the latest act()

    def reset(self, world, rng):
        self.exec.reset()

    def observe(self, world: WorldState):
        cfg = self.exec.cfg
        obs = np.stack([encode(world, i, self.exec.last_actions, cfg, self.layout) for i in range(cfg.n_predators)])
        return obs, global_state(obs, world.alive)

    def act(self, world, rng):
        obs, state = self.observe(world)
        mask = world.alive if self.params.mode == HeadMode.HYBRID_ROI else None
        dist = forward_actor(self.params, obs, mask)
        if self.deterministic:
            latent = dist.mode_action()
            logp = None
        else:
            latent, logp = sample_and_logprob(dist, rng)
        if self.params.mode == HeadMode.HYBRID_ROI:
            actions = [to_hybrid(z) for z in latent]
        else:
            actions = [to_control(z, self.params.u_max) for z in latent]
        self.last = (obs, state, latent, logp, None if mask is None else np.array(mask, dtype=bool))
        return self.exec.execute(world, actions)


class RandomRoiAgent(Agent):
    """Uniform alive prey, uniform ``r'`` and ``theta'``, executed through the tracking MPC."""

    def __init__(self, cfg: WorldConfig, weights: MpcWeights | None = None, roi: RoiConfig | None = None,
                 options: SolverOptions = DEFAULT_OPTIONS):
        self.exec = Executor(Scheme.ROI_GUIDED, cfg, weights, roi, options)

    def reset(self, world, rng):
        self.exec.reset()

    def act(self, world, rng):
        alive = np.flatnonzero(world.alive)
        actions = []
        for _ in range(self.exec.cfg.n_predators):
            c = int(alive[rng.integers(len(alive))])
            r, th = rng.uniform(size=2)
            actions.append(HybridAction(c, float(r), float(th)))
        return self.exec.execute(world, actions)


class RandomRawAgent(Agent):
    """Uniform accelerations in the control box, applied directly (or shielded)."""

    def __init__(self, cfg: WorldConfig, scheme: Scheme = Scheme.END_TO_END, weights: MpcWeights | None = None,
                 options: SolverOptions = DEFAULT_OPTIONS):
        self.exec = Executor(scheme, cfg, weights, None, options)

    def reset(self, world, rng):
        self.exec.reset()

    def act(self, world, rng):
        um = self.exec.cfg.predator.u_max
        actions = [rng.uniform(-um, um, size=2) for _ in range(self.exec.cfg.n_predators)]
        return self.exec.execute(world, actions)


class IdleAgent(Agent):
    """Never accelerates."""

    def __init__(self, cfg: WorldConfig):
        self.cfg = cfg

    def act(self, world, rng):
        n = self.cfg.n_predators
        return Decision(np.zeros((n, 2)), [np.zeros(2) for _ in range(n)], [None] * n)


class TeleportAgent(IdleAgent):
    """Test double: before each step, places predator 0 on the lowest-index live prey
    with the same velocity, so that prey is caught at the end of the step."""

    def prepare(self, world):
        world = world.copy()
        j = int(np.flatnonzero(world.alive)[0])
        world.predators[0] = world.preys[j]
        return world


SCRIPTED_AGENTS = ("idle", "random-roi", "random-raw")


def scripted_agent(name: str, cfg: WorldConfig, weights: MpcWeights | None = None,
                   roi: RoiConfig | None = None) -> Agent:
    if name == "idle":
        return IdleAgent(cfg)
    if name == "random-roi":
        return RandomRoiAgent(cfg, weights, roi)
    if name == "random-raw":
        return RandomRawAgent(cfg)
    raise ValueError(f"unknown scripted policy {name!r}; choose from {', '.join(SCRIPTED_AGENTS)}")


@dataclass
class EpisodeResult:
    reward: float
    steps: int
    cause: TerminationCause
    n_captured: int
    collided: bool = False
    log: EpisodeLog | None = None


def episode_seeds(seed: int, n: int) -> list[tuple[int, np.random.Generator]]:
    """Independent (spawn seed, agent rng) pairs for ``n`` episodes."""
    out = []
    for ss in np.random.SeedSequence(seed).spawn(n):
        a, b = ss.spawn(2)
        out.append((int(a.generate_state(1)[0]), np.random.default_rng(b)))
    return out


def run_episode(cfg: WorldConfig, agent: Agent, spawn_seed: int, rng: np.random.Generator,
                record: bool = False, meta: dict | None = None) -> EpisodeResult:
    """Play one episode to termination."""
    world = spawn(cfg, spawn_seed)
    agent.reset(world, rng)
    log = EpisodeLog(meta=dict(meta or {}, spawn_seed=spawn_seed)) if record else None
    if log is not None:
        log.append(0, world, events={"spawn": True})
    rewards = []
    collided = False
    while not world.terminated:
        world = agent.prepare(world)
        d = agent.act(world, rng)
        world, out = step_world(world, d.controls, cfg)
        rewards.append(out.reward)
        collided |= out.collision_occurred
        if log is not None:
            events = {"captures": out.captures_this_step, "collision": out.collision_occurred, "done": out.done}
            if out.done:
                events["cause"] = world.termination_cause.value
            log.append(world.step_count, world, d.actions, d.targets, out.reward, events,
                       d.diagnostics or None)
    return EpisodeResult(episode_reward(rewards), world.step_count, world.termination_cause,
                         int((~world.alive).sum()), collided, log)
