"""Region-of-interest targeting: hybrid action -> continuous target point."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """A normalised action component lies outside [0, 1]."""


@dataclass(frozen=True)
class HybridAction:
    c: int
    r_norm: float
    theta_norm: float

    def as_list(self) -> list:
        return [int(self.c), float(self.r_norm), float(self.theta_norm)]


@dataclass(frozen=True)
class RoiConfig:
    r_roi: float = 10.0

    def __post_init__(self):
        if not self.r_roi > 0:
            raise ValueError("r_roi must be positive")


def map_target(a: HybridAction, prey_pos, roi: RoiConfig) -> np.ndarray:
    """Target ``prey + r_norm * r_roi * (cos 2 pi theta_norm, sin 2 pi theta_norm)``.

    The result may lie outside the arena; the tracking MPC handles the boundary.
    """
    if not (0.0 <= a.r_norm <= 1.0) or not (0.0 <= a.theta_norm <= 1.0):
        raise DomainError(f"normalised ROI action out of [0, 1]: {a}")
    r = a.r_norm * roi.r_roi
    th = 2.0 * math.pi * a.theta_norm
    return np.array([prey_pos[0] + r * math.cos(th), prey_pos[1] + r * math.sin(th)])


def remap_dead_prey(c: int, alive: Sequence[bool]) -> int:
    """``c`` if that prey is alive, else the cyclically nearest alive index (ties to the lower)."""
    n = len(alive)
    if not any(alive):
        raise ValueError("no prey alive")
    if alive[c]:
        return int(c)
    for dist in range(1, n):
        hits = [i for i in ((c - dist) % n, (c + dist) % n) if alive[i]]
        if hits:
            return min(hits)
    raise AssertionError("unreachable")
