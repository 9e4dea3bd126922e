"""Multi-agent PPO with a shared actor and a centralised critic (CTDE).

Every predator runs the same actor on its own observation; the critic sees
the global state. Rewards are shared, so one advantage stream serves all
agents. In the ROI-guided scheme the MPC belongs to the environment
transition: the learner stores the hybrid action, never the control.
"""
from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .agents import PolicyAgent, RandomRawAgent, RandomRoiAgent, Scheme
from .controllers import MpcWeights
from .environment import WorldConfig, spawn, step_world
from .evaluation import evaluate, normalized_reward
from .observation import ObservationLayout
from .policy import (
    Adam, PolicyParams, actor_grads, clip_grad_norm, critic_grads, forward_actor, forward_critic, init_policy,
    log_prob, save_checkpoint,
)
from .roi import RoiConfig
from .solver import DEFAULT_OPTIONS, SolverOptions

CURVE_COLUMNS = ("env_steps", "mean_eval_reward", "std", "capture_rate", "normalized_reward")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    gamma: float = 0.99
    batch_size: int = 4096
    total_steps: int = 300_000
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    epochs_per_batch: int = 5
    minibatch_count: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    eval_interval: int = 4096
    eval_episodes: int = 10
    n_workers: int = 1
    hidden: tuple[int, ...] = (64, 64)
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be positive")
        if self.batch_size < 1 or self.minibatch_count < 1 or self.batch_size % self.minibatch_count:
            raise ValueError("batch_size must be a positive multiple of minibatch_count")
        if self.n_workers < 1 or self.batch_size % self.n_workers:
            raise ValueError("batch_size must be a positive multiple of n_workers")
        if self.total_steps < 0 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("total_steps >= 0, eval_interval >= 1 and eval_episodes >= 1 required")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class RolloutBatch:
    """Experience from ``T`` environment steps for ``n`` agents.

    ``next_values[t]`` is the critic's value of the state reached after step
    ``t`` (0 when that state is terminal); ``ends[t]`` marks the last step of
    an episode or of a worker segment, where advantage recursion stops.
    """

    obs: np.ndarray  # (T, n, obs_dim)
    states: np.ndarray  # (T, state_dim)
    latent: np.ndarray  # (T, n, action_dim)
    logp: np.ndarray  # (T, n)
    masks: np.ndarray | None  # (T, n_preys) alive mask for the categorical head
    rewards: np.ndarray  # (T, n), identical across agents
    values: np.ndarray  # (T,)
    next_values: np.ndarray  # (T,)
    dones: np.ndarray  # (T,) bool, true terminal states
    ends: np.ndarray  # (T,) bool
    episode_rewards: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.values)

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]

    @staticmethod
    def concat(parts: list["RolloutBatch"]) -> "RolloutBatch":
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        masks = None if parts[0].masks is None else cat("masks")
        return RolloutBatch(cat("obs"), cat("states"), cat("latent"), cat("logp"), masks, cat("rewards"),
                            cat("values"), cat("next_values"), cat("dones"), cat("ends"),
                            [r for p in parts for r in p.episode_rewards])


class RolloutWorker:
    """One environment stream that persists across batches (episodes continue between calls)."""

    def __init__(self, params: PolicyParams, scheme: Scheme, cfg: WorldConfig, seed,
                 weights: MpcWeights | None = None, roi: RoiConfig | None = None,
                 options: SolverOptions = DEFAULT_OPTIONS):
        self.cfg = cfg
        self.agent = PolicyAgent(params, Scheme(scheme), cfg, weights, roi, deterministic=False, options=options)
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        s_spawn, s_act = ss.spawn(2)
        self.spawn_rng = np.random.default_rng(s_spawn)
        self.rng = np.random.default_rng(s_act)
        self.world = None
        self.episode_reward = 0.0

    @property
    def params(self) -> PolicyParams:
        return self.agent.params

    @params.setter
    def params(self, p: PolicyParams) -> None:
        self.agent.params = p

    def _new_episode(self) -> None:
        self.world = spawn(self.cfg, int(self.spawn_rng.integers(2 ** 63)))
        self.agent.reset(self.world, self.rng)
        self.episode_reward = 0.0

    def collect(self, n_steps: int) -> RolloutBatch:
        n = self.cfg.n_predators
        obs, states, latent, logp, masks = [], [], [], [], []
        rewards, dones = np.zeros(n_steps), np.zeros(n_steps, dtype=bool)
        finished = []
        for t in range(n_steps):
            if self.world is None or self.world.terminated:
                self._new_episode()
            d = self.agent.act(self.world, self.rng)
            o, s, z, lp, m = self.agent.last
            obs.append(o)
            states.append(s)
            latent.append(z)
            logp.append(lp)
            masks.append(m)
            self.world, out = step_world(self.world, d.controls, self.cfg)
            rewards[t] = out.reward
            dones[t] = out.done
            self.episode_reward += out.reward
            if out.done:
                finished.append(self.episode_reward)
        states = np.array(states)
        values = np.asarray(forward_critic(self.params, states)).reshape(-1)
        next_values = np.zeros(n_steps)
        next_values[:-1] = values[1:]
        if not self.world.terminated:
            _, s_last = self.agent.observe(self.world)
            next_values[-1] = float(forward_critic(self.params, s_last))
        next_values[dones] = 0.0
        ends = dones.copy()
        ends[-1] = True
        return RolloutBatch(
            obs=np.array(obs), states=states, latent=np.array(latent), logp=np.array(logp),
            masks=None if masks[0] is None else np.array(masks), rewards=np.repeat(rewards[:, None], n, axis=1),
            values=values, next_values=next_values, dones=dones, ends=ends, episode_rewards=finished,
        )


def worker_seeds(seed: int, n_workers: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence([seed, 0x7A11]).spawn(n_workers)


def collect_rollouts(policy: PolicyParams, scheme, env_cfg: WorldConfig, n_steps: int, seed: int = 0, *,
                     weights: MpcWeights | None = None, roi: RoiConfig | None = None,
                     options: SolverOptions = DEFAULT_OPTIONS) -> RolloutBatch:
    """``n_steps`` environment steps from a fresh single worker."""
    return RolloutWorker(policy, scheme, env_cfg, worker_seeds(seed, 1)[0], weights, roi, options).collect(n_steps)


def compute_gae(batch: RolloutBatch, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and returns, shape ``(T,)`` (shared by all agents)."""
    r = batch.rewards[:, 0]
    delta = r + gamma * batch.next_values - batch.values
    adv = np.zeros_like(delta)
    running = 0.0
    for t in range(len(delta) - 1, -1, -1):
        if batch.ends[t]:
            running = 0.0
        running = delta[t] + gamma * lam * running
        adv[t] = running
    return adv, adv + batch.values


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    grad_norm: float

    def to_dict(self) -> dict:
        return asdict(self)


def ppo_loss_weights(logp_new, logp_old, adv, clip_epsilon):
    """Per-sample d(loss)/d(logp) for the clipped surrogate (loss = -mean(min(...))), plus diagnostics."""
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    surr1 = ratio * adv
    surr2 = clipped * adv
    active = surr1 <= surr2
    B = len(adv)
    w = np.where(active, -adv * ratio / B, 0.0)
    loss = -float(np.minimum(surr1, surr2).mean())
    return w, loss, float(np.mean(np.abs(ratio - 1.0) > clip_epsilon))


def ppo_update(params: PolicyParams, batch: RolloutBatch, cfg: TrainConfig, opt: Adam | None = None,
               rng: np.random.Generator | None = None, advantages: np.ndarray | None = None,
               returns: np.ndarray | None = None) -> UpdateStats:
    """Clipped-surrogate PPO epochs over the flattened (step, agent) samples; updates ``params`` in place."""
    opt = opt or Adam(params.arrays(), cfg.learning_rate)
    rng = rng or np.random.default_rng(cfg.seed)
    if advantages is None or returns is None:
        advantages, returns = compute_gae(batch, cfg.gamma, cfg.gae_lambda)
    T, n = batch.n_steps, batch.n_agents
    adv = normalize_advantages(np.repeat(advantages, n))
    ret = np.repeat(returns, n)
    obs = batch.obs.reshape(T * n, -1)
    lat = batch.latent.reshape(T * n, -1)
    old = batch.logp.reshape(-1)
    st = np.repeat(batch.states, n, axis=0)
    masks = None if batch.masks is None else np.repeat(batch.masks, n, axis=0)
    N = T * n
    mb = max(1, N // cfg.minibatch_count)
    hist = []
    for _ in range(cfg.epochs_per_batch):
        perm = rng.permutation(N)
        for k in range(cfg.minibatch_count):
            idx = perm[k * mb:(k + 1) * mb] if k < cfg.minibatch_count - 1 else perm[k * mb:]
            if len(idx) == 0:
                continue
            B = len(idx)
            m = None if masks is None else masks[idx]
            dist = forward_actor(params, obs[idx], m)
            lp = log_prob(dist, lat[idx])
            w_logp, pl, cf = ppo_loss_weights(lp, old[idx], adv[idx], cfg.clip_epsilon)
            ga, g_ls, lp2, ent = actor_grads(params, obs[idx], lat[idx], m, w_logp,
                                             np.full(B, -cfg.entropy_coef / B))
            v = np.asarray(forward_critic(params, st[idx])).reshape(-1)
            gv, _ = critic_grads(params, st[idx], cfg.value_coef * 2.0 * (v - ret[idx]) / B)
            grads = list(ga) + [g_ls] + list(gv)
            gn = clip_grad_norm(grads, cfg.max_grad_norm)
            opt.step(grads)
            hist.append((pl, float(np.mean((v - ret[idx]) ** 2)), float(ent.mean()),
                         float(np.mean(old[idx] - lp)), cf, gn))
    h = np.array(hist)
    return UpdateStats(*(float(x) for x in h.mean(axis=0)))


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class CurvePoint:
    env_steps: int
    mean_eval_reward: float
    std: float
    capture_rate: float
    normalized_reward: float

    def row(self) -> list:
        return [self.env_steps, repr(self.mean_eval_reward), repr(self.std), repr(self.capture_rate),
                repr(self.normalized_reward)]


@dataclass
class TrainingRun:
    params: PolicyParams
    curve: list[CurvePoint]
    checkpoints: list[str]
    updates: list[UpdateStats]
    metrics: dict


def write_curve(path, curve: list[CurvePoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for p in curve:
            w.writerow(p.row())


def read_curve(path) -> list[CurvePoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [CurvePoint(int(r["env_steps"]), float(r["mean_eval_reward"]), float(r["std"]),
                       float(r["capture_rate"]), float(r["normalized_reward"])) for r in rows]


def new_policy(scheme, env_cfg: WorldConfig, train_cfg: TrainConfig) -> PolicyParams:
    lay = ObservationLayout.for_world(env_cfg)
    return init_policy(Scheme(scheme).head, lay.total_length, env_cfg.n_predators * lay.total_length + env_cfg.n_preys,
                       env_cfg.n_preys, env_cfg.predator.u_max, hidden=train_cfg.hidden, seed=train_cfg.seed)


def train(scheme, env_cfg: WorldConfig, train_cfg: TrainConfig, *, out_dir=None,
          weights: MpcWeights | None = None, roi: RoiConfig | None = None,
          options: SolverOptions = DEFAULT_OPTIONS, params: PolicyParams | None = None,
          meta: dict | None = None, log=None) -> TrainingRun:
    """Train for ``total_steps`` environment steps with periodic deterministic evaluation.

    Writes ``curve.csv`` and ``checkpoints/*.npz`` under ``out_dir`` when given.
    ``meta`` is merged into every checkpoint header; ``log`` is an optional
    callable receiving one progress string per update.
    """
    scheme = Scheme(scheme)
    cfg = train_cfg
    params = params or new_policy(scheme, env_cfg, cfg)
    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = None
    if out is not None:
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    checkpoints: list[str] = []
    meta = dict(meta or {}, scheme=scheme.value, train=cfg.to_dict())

    def checkpoint(name: str) -> None:
        if ckpt_dir is not None:
            p = ckpt_dir / name
            save_checkpoint(p, params, dict(meta, env_steps=steps))
            checkpoints.append(os.fspath(p))

    curve: list[CurvePoint] = []
    eval_seed = cfg.seed + 10_007

    def eval_point() -> None:
        rep = evaluate(params, scheme, env_cfg, cfg.eval_episodes, eval_seed, weights=weights, roi=roi,
                       options=options)
        curve.append(CurvePoint(steps, rep.mean_episode_reward, rep.std_episode_reward, rep.full_capture_rate,
                                float(normalized_reward(rep.mean_episode_reward, env_cfg.max_steps,
                                                        env_cfg.step_penalty))))

    steps = 0
    updates: list[UpdateStats] = []
    checkpoint("initial.npz")
    t0 = time.perf_counter()
    if cfg.total_steps > 0:
        eval_point()
        workers = [RolloutWorker(params, scheme, env_cfg, s, weights, roi, options)
                   for s in worker_seeds(cfg.seed, cfg.n_workers)]
        opt = Adam(params.arrays(), cfg.learning_rate)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x0BA7]))
        last_eval = 0
        last_ckpt = 0
        while steps < cfg.total_steps:
            n = min(cfg.batch_size, cfg.total_steps - steps)
            per = [n // cfg.n_workers + (1 if i < n % cfg.n_workers else 0) for i in range(cfg.n_workers)]
            batch = RolloutBatch.concat([w.collect(k) for w, k in zip(workers, per) if k > 0])
            steps += n
            stats = ppo_update(params, batch, cfg, opt, rng)
            updates.append(stats)
            if log is not None:
                ep = f"{np.mean(batch.episode_rewards):.2f}" if batch.episode_rewards else "n/a"
                log(f"steps={steps} train_ep_reward={ep} " + " ".join(f"{k}={v:.4g}" for k, v in stats.to_dict().items()))
            if steps - last_eval >= cfg.eval_interval or steps >= cfg.total_steps:
                eval_point()
                last_eval = steps
            if cfg.checkpoint_every and steps - last_ckpt >= cfg.checkpoint_every:
                checkpoint(f"step_{steps:09d}.npz")
                last_ckpt = steps
    checkpoint("final.npz")
    if out is not None:
        write_curve(out / "curve.csv", curve)
    metrics = {"env_steps": steps, "wall_time_s": time.perf_counter() - t0, "n_updates": len(updates)}
    if curve:
        metrics["final_eval_reward"] = curve[-1].mean_eval_reward
    return TrainingRun(params, curve, checkpoints, updates, metrics)


def random_policy_baseline(scheme, env_cfg: WorldConfig, n_episodes: int, seed: int = 0, *,
                           weights: MpcWeights | None = None, roi: RoiConfig | None = None,
                           options: SolverOptions = DEFAULT_OPTIONS):
    """Uniform-random actions executed through ``scheme`` (reference level for training curves)."""
    scheme = Scheme(scheme)
    if scheme is Scheme.ROI_GUIDED:
        agent = RandomRoiAgent(env_cfg, weights, roi, options)
    else:
        agent = RandomRawAgent(env_cfg, scheme, weights, options)
    return evaluate(agent, scheme, env_cfg, n_episodes, seed)
