"""Tracking and shielding MPC controllers for the predators.

Both controllers keep out of a disc of radius ``d_safe`` around every other
predator (its current position held fixed over the horizon) and a disc of
radius ``r_obs`` around every obstacle, with quartic slack penalties.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import check_control
from .environment import WorldConfig
from .solver import (
    DEFAULT_OPTIONS, KeepOut, MpcProblem, MpcSolution, SolverOptions, SolveStatus, solve, warm_shift,
)


@dataclass(frozen=True)
class MpcWeights:
    """Cost weights (diagonals) and penalty constants.

    ``tracking_stages`` selects which predicted positions carry the tracking
    cost: ``"shifted"`` weighs ``p_1 .. p_N`` (the positions the controls can
    influence), ``"printed"`` weighs ``p_0 .. p_{N-1}``.
    """

    Q: tuple[float, float] = (100.0, 100.0)
    R: tuple[float, float] = (0.1, 0.1)
    R0: tuple[float, float] = (100.0, 100.0)
    RS: tuple[float, float] = (100.0, 100.0)
    horizon: int = 5
    w_sep: float = 1000.0
    w_obs: float = 1000.0
    eps_sep: float = 1.0
    eps_obs: float = 1.0
    q: float = 4.0
    tracking_stages: str = "shifted"

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(*self.Q, *self.R, *self.R0, *self.RS) <= 0:
            raise ValueError("weight diagonals must be positive")
        if min(self.w_sep, self.w_obs, self.eps_sep, self.eps_obs) <= 0 or self.q < 1:
            raise ValueError("penalty weights/normalisers must be positive and q >= 1")
        if self.tracking_stages not in ("shifted", "printed"):
            raise ValueError("tracking_stages must be 'shifted' or 'printed'")


def keepouts(others: Sequence, obstacles: Sequence, w: MpcWeights, cfg: WorldConfig) -> list[KeepOut]:
    out = [KeepOut((float(o[0]), float(o[1])), cfg.d_safe ** 2, w.w_sep, w.eps_sep, w.q) for o in others]
    out += [KeepOut((float(o[0]), float(o[1])), cfg.r_obs ** 2, w.w_obs, w.eps_obs, w.q) for o in obstacles]
    return out


def tracking_problem(x, tau, others, obstacles, w: MpcWeights, cfg: WorldConfig) -> MpcProblem:
    N = w.horizon
    pos_w = np.zeros((N + 1, 2))
    if w.tracking_stages == "shifted":
        pos_w[1:] = w.Q
    else:
        pos_w[:N] = w.Q
    return MpcProblem(
        horizon=N, x0=np.asarray(x, dtype=float)[:4], dyn=cfg.predator, r_world=cfg.r_world,
        target=np.asarray(tau, dtype=float)[:2], pos_weights=pos_w, u_weights=np.tile(w.R, (N, 1)),
        keepouts=keepouts(others, obstacles, w, cfg),
    )


def shielding_problem(x, u_rl, others, obstacles, w: MpcWeights, cfg: WorldConfig) -> MpcProblem:
    N = w.horizon
    u_w = np.tile(w.RS, (N, 1))
    u_w[0] = w.R0
    u_ref = np.zeros((N, 2))
    u_ref[0] = np.asarray(u_rl, dtype=float)[:2]
    return MpcProblem(
        horizon=N, x0=np.asarray(x, dtype=float)[:4], dyn=cfg.predator, r_world=cfg.r_world,
        u_weights=u_w, u_ref=u_ref, keepouts=keepouts(others, obstacles, w, cfg),
    )


def _first_control(sol: MpcSolution, u_max: float) -> np.ndarray:
    if sol.status == SolveStatus.INFEASIBLE:
        return np.zeros(2)
    return np.clip(sol.controls[0], -u_max, u_max)


def _warm(warm: MpcSolution | None, p: MpcProblem) -> MpcSolution | None:
    if warm is None or warm.controls.shape != (p.horizon, 2):
        return None
    return warm_shift(warm, p)


def tracking_control(x, tau, others, obstacles, w: MpcWeights, cfg: WorldConfig,
                     warm: MpcSolution | None = None,
                     options: SolverOptions = DEFAULT_OPTIONS) -> tuple[np.ndarray, MpcSolution]:
    """First control of the tracking MPC toward ``tau``; zero control if the solve is Infeasible.

    ``warm`` is the previous step's solution; it is shifted by one stage
    before being used as the initial guess.
    """
    p = tracking_problem(x, tau, others, obstacles, w, cfg)
    sol = solve(p, _warm(warm, p), options)
    return _first_control(sol, cfg.predator.u_max), sol


def shielding_control(x, u_rl, others, obstacles, w: MpcWeights, cfg: WorldConfig,
                      warm: MpcSolution | None = None,
                      options: SolverOptions = DEFAULT_OPTIONS) -> tuple[np.ndarray, MpcSolution]:
    """First control of the safety filter that stays as close as possible to ``u_rl``."""
    check_control(u_rl, cfg.predator.u_max)
    p = shielding_problem(x, u_rl, others, obstacles, w, cfg)
    sol = solve(p, _warm(warm, p), options)
    return _first_control(sol, cfg.predator.u_max), sol
