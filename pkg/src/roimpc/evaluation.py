"""Frozen-policy evaluation: capture/collision metrics, learning-speed and ROI-radius studies.

Metrics
-------
``full_capture_rate``  percent of episodes in which every prey was caught.
``avg_capture_time``   steps until the last capture, averaged over fully
                       successful episodes only; ``None`` when there are none.
``collisions_per_1000`` collision terminations scaled to 1,000 episodes
                       (always 0 in layouts that do not terminate on collision).
``contacts_per_1000``  episodes with any predator collision event, terminating
                       or not, scaled to 1,000 episodes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .agents import Agent, EpisodeResult, PolicyAgent, Scheme, episode_seeds, run_episode
from .controllers import MpcWeights
from .environment import TerminationCause, WorldConfig
from .policy import PolicyParams
from .roi import RoiConfig
from .solver import DEFAULT_OPTIONS, SolverOptions


@dataclass
class EvalReport:
    scheme: str
    layout: str
    n_episodes: int
    full_capture_rate: float
    avg_capture_time: float | None
    collisions_per_1000: float
    mean_episode_reward: float
    roi_radius_policy: str = "fixed"
    std_episode_reward: float = 0.0
    n_full_captures: int = 0
    n_timeouts: int = 0
    n_collision_terminations: int = 0
    mean_preys_caught: float = 0.0
    contacts_per_1000: float = 0.0
    episodes: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.full_capture_rate <= 100.0:
            raise ValueError("full_capture_rate must be a percentage")
        if self.n_full_captures + self.n_timeouts + self.n_collision_terminations != self.n_episodes:
            raise ValueError("termination counts do not add up to n_episodes")

    # serialisation --------------------------------------------------------
    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "episodes"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("episodes")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        known = set(cls.columns())
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def csv_row(self) -> list[str]:
        d = self.to_dict()
        return ["" if d[c] is None else repr(d[c]) if isinstance(d[c], float) else str(d[c]) for c in self.columns()]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        w.writerow(self.csv_row())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        rows = list(csv.reader(io.StringIO(text)))
        head, row = rows[0], rows[1]
        types = {f.name: f.type for f in fields(cls)}
        d: dict = {}
        for k, v in zip(head, row):
            t = str(types.get(k, "str"))
            if v == "":
                d[k] = None
            elif t.startswith("int"):
                d[k] = int(v)
            elif t.startswith("float"):
                d[k] = float(v)
            else:
                d[k] = v
        return cls.from_dict(d)


def summarize(results: Sequence[EpisodeResult], scheme: str, layout: str,
              roi_radius_policy: str = "fixed", keep: bool = False) -> EvalReport:
    n = len(results)
    if n == 0:
        raise ValueError("no episodes to summarise")
    full = [r for r in results if r.cause == TerminationCause.ALL_CAUGHT]
    rewards = np.array([r.reward for r in results])
    times = [r.steps for r in full]
    return EvalReport(
        scheme=scheme, layout=layout, n_episodes=n,
        full_capture_rate=100.0 * len(full) / n,
        avg_capture_time=float(np.mean(times)) if times else None,
        collisions_per_1000=1000.0 * sum(r.cause == TerminationCause.COLLISION for r in results) / n,
        mean_episode_reward=float(rewards.mean()),
        roi_radius_policy=roi_radius_policy,
        std_episode_reward=float(rewards.std()),
        n_full_captures=len(full),
        n_timeouts=sum(r.cause == TerminationCause.TIMEOUT for r in results),
        n_collision_terminations=sum(r.cause == TerminationCause.COLLISION for r in results),
        mean_preys_caught=float(np.mean([r.n_captured for r in results])),
        contacts_per_1000=1000.0 * sum(r.collided for r in results) / n,
        episodes=list(results) if keep else [],
    )


def _layout_name(cfg: WorldConfig, layout: str | int | None) -> str:
    if layout is not None:
        return str(layout)
    return f"custom(r_world={cfg.r_world:g}, obstacles={cfg.n_obstacles})"


def _agent(policy, scheme, cfg, weights, roi, options) -> Agent:
    if isinstance(policy, Agent):
        return policy
    if isinstance(policy, PolicyParams):
        return PolicyAgent(policy, Scheme(scheme), cfg, weights, roi, deterministic=True, options=options)
    raise TypeError("policy must be PolicyParams or an Agent")


def _run(agent: Agent, cfg: WorldConfig, n_episodes: int, seed: int, radii=None, keep_logs: bool = False):
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    results = []
    for k, (spawn_seed, rng) in enumerate(episode_seeds(seed, n_episodes)):
        if radii is not None:
            agent.exec.roi = RoiConfig(r_roi=float(radii[k]))
        results.append(run_episode(cfg, agent, spawn_seed, rng, record=keep_logs,
                                   meta={"episode": k} if keep_logs else None))
    return results


def evaluate(policy, scheme, layout_cfg: WorldConfig, n_episodes: int, seed: int = 0, *,
             weights: MpcWeights | None = None, roi: RoiConfig | None = None,
             options: SolverOptions = DEFAULT_OPTIONS, layout: str | int | None = None,
             keep_logs: bool = False) -> EvalReport:
    """Evaluate a frozen policy (distribution mode) or a scripted agent over ``n_episodes``."""
    agent = _agent(policy, scheme, layout_cfg, weights, roi, options)
    results = _run(agent, layout_cfg, n_episodes, seed, keep_logs=keep_logs)
    return summarize(results, Scheme(scheme).value, _layout_name(layout_cfg, layout),
                     keep=True)


def roi_generalization(policy, layout_cfg: WorldConfig, radius_min: float, radius_max: float,
                       n_episodes: int, seed: int = 0, *, weights: MpcWeights | None = None,
                       options: SolverOptions = DEFAULT_OPTIONS, layout: str | int | None = None,
                       keep_logs: bool = False) -> EvalReport:
    """ROI-guided evaluation with a fresh ``r_roi ~ U[radius_min, radius_max]`` per episode.

    Radii come from their own stream, so the episodes themselves match a
    fixed-radius ``evaluate`` with the same seed.
    """
    if not 0 < radius_min <= radius_max:
        raise ValueError("need 0 < radius_min <= radius_max")
    agent = _agent(policy, Scheme.ROI_GUIDED, layout_cfg, weights, None, options)
    if not hasattr(agent, "exec") or agent.exec.scheme is not Scheme.ROI_GUIDED:
        raise ValueError("ROI generalisation needs an ROI-guided agent")
    radius_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5015]))
    radii = radius_rng.uniform(radius_min, radius_max, size=n_episodes)
    original = agent.exec.roi
    try:
        results = _run(agent, layout_cfg, n_episodes, seed, radii=radii, keep_logs=keep_logs)
    finally:
        agent.exec.roi = original
    return summarize(results, Scheme.ROI_GUIDED.value, _layout_name(layout_cfg, layout),
                     roi_radius_policy=f"randomized({radius_min:g},{radius_max:g})", keep=True)


# ---------------------------------------------------------------------------
# Learning-curve statistics


def normalized_reward(reward, max_steps: int, step_penalty: float = -0.1):
    """Map an episode reward to ``1 + R / (|step_penalty| T)``: 0 for a full timeout, 1 for instant capture."""
    return 1.0 + np.asarray(reward, dtype=float) / (abs(step_penalty) * max_steps)


def moving_average(values, window: int = 10) -> np.ndarray:
    """Trailing mean over up to ``window`` previous values (shorter at the start)."""
    v = np.asarray(values, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def plateau(values, tail: float = 0.1) -> float:
    v = np.asarray(values, dtype=float)
    k = max(1, int(math.ceil(tail * len(v))))
    return float(v[-k:].mean())


def steps_to_fraction(steps, values, fraction: float = 0.8, window: int = 10, tail: float = 0.1) -> int:
    """First step at which the smoothed curve reaches ``fraction`` of its final plateau.

    Meaningful for curves where larger is better and the plateau is positive,
    such as the normalised reward.
    """
    s = np.asarray(steps)
    v = np.asarray(values, dtype=float)
    if len(v) == 0 or len(s) != len(v):
        raise ValueError("need a non-empty curve with one value per step")
    target = fraction * plateau(v, tail)
    sm = moving_average(v, window)
    hit = np.flatnonzero(sm >= target - 1e-12)
    return int(s[hit[0]]) if len(hit) else int(s[-1])


def bootstrap_mean_diff(a, b, n_boot: int = 10_000, seed: int = 0, level: float = 0.95) -> tuple[float, float, float]:
    """Mean of ``a - b`` (independent samples) with a percentile bootstrap interval."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rng = np.random.default_rng(seed)
    ia = rng.integers(len(a), size=(n_boot, len(a)))
    ib = rng.integers(len(b), size=(n_boot, len(b)))
    d = a[ia].mean(axis=1) - b[ib].mean(axis=1)
    lo, hi = np.quantile(d, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(a.mean() - b.mean()), float(lo), float(hi)
