"""Discrete-time double-integrator dynamics shared by predators and preys.

States are ``(px, py, vx, vy)`` arrays, controls are ``(ax, ay)`` arrays.
Functions accept a single agent (shape ``(4,)``) or a stack of agents
(shape ``(n, 4)`` with controls ``(n, 2)``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

BOUND_TOL = 1e-9


class BoundViolation(ValueError):
    """A control exceeds the component-wise acceleration bound."""


@dataclass(frozen=True)
class DynamicsParams:
    dt: float = 1.0
    u_max: float = 0.75
    v_max: float = 1.5

    def __post_init__(self):
        if not (self.dt > 0 and self.u_max > 0 and self.v_max > 0):
            raise ValueError(f"dynamics parameters must be positive: {self}")


def transition_matrices(dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(A, B)`` of the double integrator for step ``dt``."""
    A = np.array(
        [[1.0, 0.0, dt, 0.0], [0.0, 1.0, 0.0, dt], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    )
    B = np.array([[0.5 * dt * dt, 0.0], [0.0, 0.5 * dt * dt], [dt, 0.0], [0.0, dt]])
    return A, B


def check_control(u: np.ndarray, u_max: float) -> None:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise BoundViolation(f"non-finite control {u}")
    worst = float(np.max(np.abs(u))) if u.size else 0.0
    if worst > u_max + BOUND_TOL:
        raise BoundViolation(f"control component {worst:.6g} exceeds u_max={u_max}")


def step(x, u, p: DynamicsParams) -> np.ndarray:
    """Advance one step: ``A x + B u`` followed by component-wise velocity clamping."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    check_control(u, p.u_max)
    dt = p.dt
    out = np.empty_like(x)
    out[..., 0] = x[..., 0] + dt * x[..., 2] + 0.5 * dt * dt * u[..., 0]
    out[..., 1] = x[..., 1] + dt * x[..., 3] + 0.5 * dt * dt * u[..., 1]
    out[..., 2] = x[..., 2] + dt * u[..., 0]
    out[..., 3] = x[..., 3] + dt * u[..., 1]
    if math.isfinite(p.v_max):
        np.clip(out[..., 2:], -p.v_max, p.v_max, out=out[..., 2:])
    return out


def rollout(x0, us: Sequence, p: DynamicsParams) -> np.ndarray:
    """States ``x_0 .. x_N`` obtained by applying ``us`` in order; shape ``(N + 1, 4)``."""
    x = np.asarray(x0, dtype=float)
    states = [x.copy()]
    for u in us:
        x = step(x, u, p)
        states.append(x)
    return np.stack(states)


def speed(x) -> float:
    x = np.asarray(x, dtype=float)
    return math.hypot(x[2], x[3])
