"""Deterministic prey evasion heuristic.

Each prey scans a polar grid of candidate positions around itself, picks the
one farthest (in the min-over-predators sense) from the predators, and
accelerates toward it. When the straight path to that candidate passes too
close to a predator the prey instead flees directly away from the nearest
predator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .dynamics import DynamicsParams


@dataclass(frozen=True)
class PreyHeuristicConfig:
    n_radii: int = 5
    n_angles: int = 16
    candidate_max_radius: float = 8.0
    unsafe_path_margin: float = 3.5

    def __post_init__(self):
        if self.n_radii < 1 or self.n_angles < 4:
            raise ValueError("prey grid needs n_radii >= 1 and n_angles >= 4")
        if self.candidate_max_radius <= 0 or self.unsafe_path_margin < 0:
            raise ValueError("prey grid radius must be positive")


@lru_cache(maxsize=32)
def _grid(n_radii: int, n_angles: int, max_radius: float):
    radii = max_radius * np.arange(1, n_radii + 1) / n_radii
    ang = 2.0 * np.pi * np.arange(n_angles) / n_angles
    return radii, np.cos(ang), np.sin(ang)


def candidate_grid(prey_pos, cfg: PreyHeuristicConfig, r_world: float) -> np.ndarray:
    """All candidates in scan order (radius-major), clipped to the arena disc; shape ``(R*A, 2)``."""
    radii, c, s = _grid(cfg.n_radii, cfg.n_angles, cfg.candidate_max_radius)
    pts = np.asarray(prey_pos, dtype=float)[:2] + np.stack(
        [np.outer(radii, c).ravel(), np.outer(radii, s).ravel()], axis=1
    )
    rr = np.hypot(pts[:, 0], pts[:, 1])
    out = rr > r_world
    pts[out] *= (r_world / rr[out])[:, None]
    return pts


def select_target(prey, predators, obstacles, cfg: PreyHeuristicConfig, r_world: float) -> np.ndarray:
    """Grid candidate maximising the minimal predator distance.

    Ties (within 1e-9) go to the smallest (radius index, angle index).
    ``obstacles`` are accepted for interface symmetry and ignored: preys keep
    clear of obstacles only through the arena clipping.
    """
    preds = np.ascontiguousarray(np.asarray(predators, dtype=float).reshape(-1, 4)[:, :2])
    if len(preds) == 0:
        raise ValueError("select_target needs at least one predator")
    radii, c, s = _grid(cfg.n_radii, cfg.n_angles, cfg.candidate_max_radius)
    _, x, y, _ = kernels.backend.prey_scan(float(prey[0]), float(prey[1]), preds, radii, c, s, float(r_world))
    return np.array([x, y])


def _segment_distance(a, b, p) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*(p - a)))
    t = min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.hypot(*(a + t * ab - p)))


def is_path_unsafe(prey, target, predators, obstacles, cfg: PreyHeuristicConfig) -> bool:
    """True iff the segment prey->target passes strictly within the margin of a predator."""
    a = np.asarray(prey, dtype=float)[:2]
    b = np.asarray(target, dtype=float)[:2]
    for pred in np.asarray(predators, dtype=float).reshape(-1, 4):
        if _segment_distance(a, b, pred[:2]) < cfg.unsafe_path_margin:
            return True
    return False


def _bang_bang(direction, u_max: float) -> np.ndarray:
    m = max(abs(direction[0]), abs(direction[1]))
    if m == 0.0 or not math.isfinite(m):
        return np.zeros(2)
    return np.array([direction[0] / m, direction[1] / m]) * u_max


def prey_control(prey, predators, obstacles, cfg: PreyHeuristicConfig, dyn: DynamicsParams,
                 r_world: float, alive: bool = True) -> np.ndarray:
    """Acceleration command for one prey, component-wise within ``dyn.u_max``."""
    if not alive:
        return np.zeros(2)
    predators = np.asarray(predators, dtype=float).reshape(-1, 4)
    if len(predators) == 0:
        return np.zeros(2)
    prey = np.asarray(prey, dtype=float)
    target = select_target(prey, predators, obstacles, cfg, r_world)
    if is_path_unsafe(prey, target, predators, obstacles, cfg):
        d = np.hypot(predators[:, 0] - prey[0], predators[:, 1] - prey[1])
        nearest = predators[int(np.argmin(d))]
        return _bang_bang(prey[:2] - nearest[:2], dyn.u_max)
    return _bang_bang(target - prey[:2], dyn.u_max)
