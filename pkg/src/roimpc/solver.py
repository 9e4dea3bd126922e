"""Finite-horizon soft-constrained MPC solver.

The problem is solved in reduced space: states are eliminated through the
linear double-integrator dynamics and each soft constraint's slack is
eliminated in closed form, ``xi = max(0, r^2 - |p - c|^2)``, which is the
optimum for any penalty that is increasing in ``xi``. What remains is a
box-constrained problem over the ``2N`` controls, plus the convex hard
constraints (velocity bounds and the arena disc), which are enforced with an
augmented Lagrangian around a projected Newton inner solver (the exact
Hessian is cheap for ``2N`` variables and, unlike quasi-Newton updates, is
unaffected by the stiff penalty terms).
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .dynamics import DynamicsParams


class SolveStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class KeepOut:
    """Soft constraint ``|p_k - center|^2 >= radius_sq - xi_k`` penalised by ``weight * (xi/eps)^q``."""

    center: tuple[float, float]
    radius_sq: float
    weight: float = 1000.0
    eps: float = 1.0
    q: float = 4.0

    def __post_init__(self):
        if not (self.radius_sq > 0 and self.weight > 0 and self.eps > 0 and self.q >= 1):
            raise ValueError(f"invalid keep-out {self}")


@dataclass
class MpcProblem:
    """Quadratic tracking/effort cost, quartic keep-out penalties, hard bounds.

    ``pos_weights[k]`` weighs ``p_k - target`` for ``k = 0..N``;
    ``u_weights[k]`` weighs ``u_k - u_ref[k]`` for ``k = 0..N-1``.
    """

    horizon: int
    x0: np.ndarray
    dyn: DynamicsParams
    r_world: float
    target: np.ndarray = field(default_factory=lambda: np.zeros(2))
    pos_weights: np.ndarray | None = None
    u_weights: np.ndarray | None = None
    u_ref: np.ndarray | None = None
    keepouts: Sequence[KeepOut] = ()
    bound_mode: str = "component"

    def __post_init__(self):
        N = int(self.horizon)
        if N < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = N
        self.x0 = np.asarray(self.x0, dtype=float).reshape(4)
        self.target = np.asarray(self.target, dtype=float).reshape(2)
        if self.pos_weights is None:
            self.pos_weights = np.zeros((N + 1, 2))
        if self.u_weights is None:
            self.u_weights = np.zeros((N, 2))
        if self.u_ref is None:
            self.u_ref = np.zeros((N, 2))
        self.pos_weights = np.asarray(self.pos_weights, dtype=float).reshape(N + 1, 2)
        self.u_weights = np.asarray(self.u_weights, dtype=float).reshape(N, 2)
        self.u_ref = np.asarray(self.u_ref, dtype=float).reshape(N, 2)
        if np.any(self.pos_weights < 0) or np.any(self.u_weights < 0):
            raise ValueError("cost weights must be positive semidefinite")
        if self.bound_mode not in ("component", "norm"):
            raise ValueError(f"bound_mode must be 'component' or 'norm', got {self.bound_mode!r}")
        self.keepouts = tuple(self.keepouts)


@dataclass
class MpcSolution:
    controls: np.ndarray  # (N, 2)
    states: np.ndarray  # (N + 1, 4)
    slacks: np.ndarray  # (M, N + 1)
    objective: float
    status: SolveStatus
    iterations: int = 0
    kkt_residual: float = math.nan
    max_violation: float = 0.0
    solve_time: float = 0.0

    def diagnostics(self) -> dict:
        return {
            "status": self.status.value,
            "iterations": self.iterations,
            "kkt": self.kkt_residual,
            "violation": self.max_violation,
            "active_keepouts": int(np.sum(np.any(self.slacks > 0, axis=1))) if self.slacks.size else 0,
        }


@dataclass(frozen=True)
class SolverOptions:
    tol_kkt: float = 1e-5
    tol_feas: float = 1e-6
    max_outer: int = 15
    max_inner: int = 50
    rho0: float = 100.0
    multistart: bool = True
    near_active_ratio: float = 1.1  # re-solve from extra starts if any d^2 < ratio * r^2
    n_directions: int = 8


DEFAULT_OPTIONS = SolverOptions()


def pack_problem(p: MpcProblem) -> dict:
    """Flat array form consumed by the kernels."""
    M = len(p.keepouts)
    return dict(
        x0=np.ascontiguousarray(p.x0),
        dt=float(p.dyn.dt),
        pos_w=np.ascontiguousarray(p.pos_weights),
        tau=np.ascontiguousarray(p.target),
        u_w=np.ascontiguousarray(p.u_weights),
        u_ref=np.ascontiguousarray(p.u_ref),
        centers=np.array([k.center for k in p.keepouts], dtype=float).reshape(M, 2),
        r2=np.array([k.radius_sq for k in p.keepouts], dtype=float),
        wts=np.array([k.weight for k in p.keepouts], dtype=float),
        eps=np.array([k.eps for k in p.keepouts], dtype=float),
        qexp=np.array([k.q for k in p.keepouts], dtype=float),
    )


def objective_and_gradient(p: MpcProblem, controls, backend=None) -> tuple[float, np.ndarray]:
    """Objective (with slacks at their closed-form optimum) and its gradient in the controls."""
    kb = backend or kernels.backend
    u = np.ascontiguousarray(np.asarray(controls, dtype=float).reshape(-1))
    d = pack_problem(p)
    return kb.objective(
        u, d["x0"], d["dt"], d["pos_w"], d["tau"], d["u_w"], d["u_ref"],
        d["centers"], d["r2"], d["wts"], d["eps"], d["qexp"],
    )


def predict_states(x0, controls, dt: float) -> np.ndarray:
    """Unclamped open-loop prediction ``x_{k+1} = A x_k + B u_k``."""
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    N = len(controls)
    xs = np.empty((N + 1, 4))
    xs[0] = x0
    h = 0.5 * dt * dt
    for k in range(N):
        x = xs[k]
        u = controls[k]
        xs[k + 1, 0] = x[0] + dt * x[2] + h * u[0]
        xs[k + 1, 1] = x[1] + dt * x[3] + h * u[1]
        xs[k + 1, 2] = x[2] + dt * u[0]
        xs[k + 1, 3] = x[3] + dt * u[1]
    return xs


def slacks_for(p: MpcProblem, states: np.ndarray) -> np.ndarray:
    M = len(p.keepouts)
    out = np.zeros((M, len(states)))
    for j, ko in enumerate(p.keepouts):
        d2 = np.sum((states[:, :2] - np.asarray(ko.center)) ** 2, axis=1)
        out[j] = np.maximum(0.0, ko.radius_sq - d2)
    return out


def hard_violation(p: MpcProblem, states: np.ndarray, controls: np.ndarray) -> float:
    """Largest violation of the control, velocity and arena bounds (0 when feasible)."""
    umax, vmax = p.dyn.u_max, p.dyn.v_max
    v = states[1:, 2:]
    if p.bound_mode == "norm":
        cu = np.linalg.norm(controls, axis=1) - umax
        cv = np.linalg.norm(v, axis=1) - vmax
    else:
        cu = np.abs(controls) - umax
        cv = np.abs(v) - vmax
    ca = np.linalg.norm(states[1:, :2], axis=1) - p.r_world
    return float(max(0.0, cu.max(initial=0.0), cv.max(initial=0.0), ca.max(initial=0.0)))


def _starts(p: MpcProblem, opts: SolverOptions) -> list[np.ndarray]:
    N = p.horizon
    umax = p.dyn.u_max
    starts = [np.zeros(2 * N)]
    for i in range(opts.n_directions):
        phi = 2.0 * math.pi * i / opts.n_directions
        c, s = math.cos(phi), math.sin(phi)
        if p.bound_mode == "norm":
            a = umax * np.array([c, s])
        else:
            a = umax * np.array([c, s]) / max(abs(c), abs(s))
        starts.append(np.tile(a, N))
    return starts


def _near_active(p: MpcProblem, states: np.ndarray, ratio: float) -> bool:
    for ko in p.keepouts:
        d2 = np.sum((states[1:, :2] - np.asarray(ko.center)) ** 2, axis=1)
        if np.any(d2 < ratio * ko.radius_sq):
            return True
    return False


def solve(
    p: MpcProblem,
    warm_start: MpcSolution | None = None,
    options: SolverOptions = DEFAULT_OPTIONS,
    backend=None,
) -> MpcSolution:
    """Solve ``p``; returns controls in application order plus predicted states and slacks."""
    t0 = time.perf_counter()
    kb = backend or kernels.backend
    N = p.horizon
    if math.hypot(p.x0[0], p.x0[1]) > p.r_world + options.tol_feas or not np.all(np.isfinite(p.x0)):
        controls = np.zeros((N, 2))
        states = predict_states(p.x0, controls, p.dyn.dt)
        return MpcSolution(
            controls=controls, states=states, slacks=slacks_for(p, states),
            objective=float(objective_and_gradient(p, controls, kb)[0]),
            status=SolveStatus.INFEASIBLE, solve_time=time.perf_counter() - t0,
        )

    d = pack_problem(p)
    norm_mode = 1 if p.bound_mode == "norm" else 0

    def run(u0):
        return kb.solve_al(
            np.ascontiguousarray(u0, dtype=float), d["x0"], d["dt"], d["pos_w"], d["tau"],
            d["u_w"], d["u_ref"], d["centers"], d["r2"], d["wts"], d["eps"], d["qexp"],
            float(p.dyn.u_max), float(p.dyn.v_max), float(p.r_world), norm_mode,
            options.rho0, options.max_outer, options.max_inner, options.tol_kkt,
            0.1 * options.tol_feas,
        )

    if warm_start is not None and warm_start.status != SolveStatus.INFEASIBLE and warm_start.controls.shape == (N, 2):
        u0 = warm_start.controls.reshape(-1)
    else:
        u0 = np.zeros(2 * N)

    best = run(u0)
    iters = best[4]
    if options.multistart and p.keepouts:
        states = predict_states(p.x0, best[0], p.dyn.dt)
        if _near_active(p, states, options.near_active_ratio):
            for s in _starts(p, options):
                cand = run(s)
                iters += cand[4]
                if _better(cand, best, options.tol_feas):
                    best = cand

    u, f, kkt, viol, _, _, converged = best
    controls = np.asarray(u, dtype=float).reshape(N, 2)
    states = predict_states(p.x0, controls, p.dyn.dt)
    viol = hard_violation(p, states, controls)
    status = SolveStatus.CONVERGED if converged and viol <= options.tol_feas else SolveStatus.MAX_ITER
    return MpcSolution(
        controls=controls, states=states, slacks=slacks_for(p, states), objective=float(f),
        status=status, iterations=int(iters), kkt_residual=float(kkt), max_violation=viol,
        solve_time=time.perf_counter() - t0,
    )


def _better(a, b, tol_feas) -> bool:
    fa, fb = a[3] <= tol_feas, b[3] <= tol_feas
    if fa != fb:
        return fa
    if not fa:
        return a[3] < b[3]
    return a[1] < b[1] - 1e-12 * max(1.0, abs(b[1]))


def warm_shift(prev: MpcSolution, p: MpcProblem) -> MpcSolution:
    """Receding-horizon initial guess: drop the applied control, repeat the last one."""
    N = p.horizon
    if prev.status == SolveStatus.INFEASIBLE or prev.controls.shape != (N, 2):
        controls = np.zeros((N, 2))
    else:
        controls = np.concatenate([prev.controls[1:], prev.controls[-1:]], axis=0)
    states = predict_states(p.x0, controls, p.dyn.dt)
    f, _ = objective_and_gradient(p, controls)
    return MpcSolution(
        controls=controls, states=states, slacks=slacks_for(p, states), objective=float(f),
        status=prev.status if prev.status != SolveStatus.INFEASIBLE else SolveStatus.MAX_ITER,
        max_violation=hard_violation(p, states, controls),
    )
