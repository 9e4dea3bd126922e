"""Fixed-length, normalised polar observation vector for each predator.

Canonical order (every entry lies in ``[-1, 1]``)::

    own position          rho / r_world, phi / pi
    own velocity          |v| / (sqrt2 v_max), phi_v / pi
    own last action       3 entries
    partner last action   3 entries
    partner relative pos  rho / (2 r_world), phi / pi
    partner relative vel  |dv| / (2 sqrt2 v_max), phi / pi
    per prey              alive, rho / (2 r_world), phi / pi, |v| / (sqrt2 v_max_prey)
    per obstacle          rho / (2 r_world), phi / pi

A hybrid action is encoded as ``(c / (C - 1), 2 r' - 1, 2 theta' - 1)`` and a
raw control as ``(ax / u_max, ay / u_max, 0)``; a missing action is all zeros.
Speeds are divided by ``sqrt(2) v_max`` because velocity bounds are
component-wise, so the largest reachable speed is ``sqrt(2) v_max``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import WorldConfig, WorldState
from .roi import HybridAction

ZERO_RADIUS = 1e-9
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class ObservationLayout:
    n_preys: int
    n_obstacles: int = 0
    include_obstacles: bool = True

    @property
    def total_length(self) -> int:
        return 4 + 3 + 3 + 4 + 4 * self.n_preys + (2 * self.n_obstacles if self.include_obstacles else 0)

    @classmethod
    def for_world(cls, cfg: WorldConfig) -> "ObservationLayout":
        return cls(n_preys=cfg.n_preys, n_obstacles=cfg.n_obstacles, include_obstacles=cfg.n_obstacles > 0)

    def field_names(self) -> list[str]:
        names = ["own_rho", "own_phi", "own_speed", "own_heading"]
        names += ["own_act_0", "own_act_1", "own_act_2", "partner_act_0", "partner_act_1", "partner_act_2"]
        names += ["partner_rho", "partner_phi", "partner_dspeed", "partner_dheading"]
        for j in range(self.n_preys):
            names += [f"prey{j}_alive", f"prey{j}_rho", f"prey{j}_phi", f"prey{j}_speed"]
        if self.include_obstacles:
            for w in range(self.n_obstacles):
                names += [f"obs{w}_rho", f"obs{w}_phi"]
        return names

    def descriptor(self) -> dict:
        """Run-metadata description of the layout."""
        return {
            "n_preys": self.n_preys,
            "n_obstacles": self.n_obstacles,
            "include_obstacles": self.include_obstacles,
            "total_length": self.total_length,
            "fields": self.field_names(),
        }


def _polar(dx: float, dy: float, r_norm: float) -> tuple[float, float]:
    rho = math.hypot(dx, dy)
    if rho < ZERO_RADIUS:
        return 0.0, 0.0
    return min(1.0, rho / r_norm), math.atan2(dy, dx) / math.pi


def encode_action(action, n_preys: int, u_max: float) -> tuple[float, float, float]:
    if action is None:
        return 0.0, 0.0, 0.0
    if isinstance(action, HybridAction):
        c = action.c / (n_preys - 1) if n_preys > 1 else 0.0
        return c, 2.0 * action.r_norm - 1.0, 2.0 * action.theta_norm - 1.0
    a = np.asarray(action, dtype=float).reshape(2)
    return (float(np.clip(a[0] / u_max, -1.0, 1.0)), float(np.clip(a[1] / u_max, -1.0, 1.0)), 0.0)


def encode(world: WorldState, agent_id: int, last_actions, cfg: WorldConfig,
           layout: ObservationLayout | None = None) -> np.ndarray:
    """Observation of predator ``agent_id``; ``last_actions[i]`` is predator i's last action or None."""
    lay = layout or ObservationLayout.for_world(cfg)
    R = cfg.r_world
    vmax = cfg.predator.v_max
    n_pred = len(world.predators)
    me = world.predators[agent_id]
    out = np.zeros(lay.total_length)

    out[0:2] = _polar(me[0], me[1], R)
    out[2:4] = _polar(me[2], me[3], SQRT2 * vmax)
    acts = list(last_actions) if last_actions is not None else [None] * n_pred
    out[4:7] = encode_action(acts[agent_id], cfg.n_preys, cfg.predator.u_max)
    if n_pred > 1:
        partner_id = (agent_id + 1) % n_pred
        other = world.predators[partner_id]
        out[7:10] = encode_action(acts[partner_id], cfg.n_preys, cfg.predator.u_max)
        out[10:12] = _polar(other[0] - me[0], other[1] - me[1], 2.0 * R)
        out[12:14] = _polar(other[2] - me[2], other[3] - me[3], 2.0 * SQRT2 * vmax)
    i = 14
    for j in range(lay.n_preys):
        if world.alive[j]:
            p = world.preys[j]
            out[i] = 1.0
            out[i + 1:i + 3] = _polar(p[0] - me[0], p[1] - me[1], 2.0 * R)
            out[i + 3] = min(1.0, math.hypot(p[2], p[3]) / (SQRT2 * cfg.prey.v_max))
        i += 4
    if lay.include_obstacles:
        for w in range(lay.n_obstacles):
            o = world.obstacles[w]
            out[i:i + 2] = _polar(o[0] - me[0], o[1] - me[1], 2.0 * R)
            i += 2
    return out


def global_state(observations, alive) -> np.ndarray:
    """Critic input: all predators' observations followed by the prey alive flags."""
    return np.concatenate([np.concatenate([np.asarray(o, dtype=float) for o in observations]),
                           np.asarray(alive, dtype=float)])
