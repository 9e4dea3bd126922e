import math

import numpy as np
import pytest

from roimpc.environment import WorldState

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_world(predators, preys, obstacles=(), alive=None) -> WorldState:
    """World from position lists (velocities zero unless 4-vectors are given)."""
    def rows(items, n):
        out = np.zeros((n, 4))
        for i, it in enumerate(items):
            it = np.asarray(it, dtype=float)
            out[i, :len(it)] = it
        return out

    P = rows(predators, len(predators))
    Y = rows(preys, len(preys))
    return WorldState(P, Y, np.ones(len(preys), bool) if alive is None else np.asarray(alive, bool),
                      np.asarray(obstacles, dtype=float).reshape(-1, 2))


def random_problem(rng, horizon=5, max_keepouts=2, r_world=20.0, bound_mode="component", weights=None):
    """Random tracking MPC instance: state in the arena, target nearby, 0..max_keepouts keep-outs."""
    from roimpc.controllers import MpcWeights
    from roimpc.dynamics import DynamicsParams
    from roimpc.solver import KeepOut, MpcProblem

    w = weights or MpcWeights(horizon=horizon)
    rr = r_world * 0.9 * math.sqrt(rng.uniform())
    a = rng.uniform(0, 2 * math.pi)
    x0 = np.array([rr * math.cos(a), rr * math.sin(a), *rng.uniform(-1.5, 1.5, 2)])
    tau = x0[:2] + rng.uniform(-15, 15, 2)
    kos = []
    for _ in range(int(rng.integers(0, max_keepouts + 1))):
        c = x0[:2] + rng.uniform(-6, 6, 2)
        r = float(rng.choice([3.5, 2.5]))
        kos.append(KeepOut((float(c[0]), float(c[1])), r * r, w.w_sep, w.eps_sep, w.q))
    pos_w = np.zeros((horizon + 1, 2))
    pos_w[1:] = w.Q
    return MpcProblem(horizon=horizon, x0=x0, dyn=DynamicsParams(1.0, 0.75, 1.5), r_world=r_world,
                      target=tau, pos_weights=pos_w, u_weights=np.tile(w.R, (horizon, 1)), keepouts=kos,
                      bound_mode=bound_mode)


def grid_best(p, n=41):
    """Best objective over an n x n control grid for a horizon-1 problem (hard bounds respected)."""
    from roimpc.solver import hard_violation, objective_and_gradient, predict_states

    g = np.linspace(-p.dyn.u_max, p.dyn.u_max, n)
    best = math.inf
    for ax in g:
        for ay in g:
            u = np.array([[ax, ay]])
            if hard_violation(p, predict_states(p.x0, u, p.dyn.dt), u) > 0:
                continue
            best = min(best, objective_and_gradient(p, u)[0])
    return best


def logprob_grad_error(params, obs, latent, mask=None, w_ent=0.0, h=1e-6, n_coords=40, rng=None):
    """Relative error between analytic and central-difference gradients of logp + w_ent * H.

    Checks ``n_coords`` randomly chosen actor coordinates plus both log-std entries.
    """
    from roimpc.policy import actor_grads, entropy, forward_actor, log_prob

    rng = rng or np.random.default_rng(0)
    ones = np.ones(np.atleast_2d(obs).shape[0])

    def scalar():
        d = forward_actor(params, obs, mask)
        return float(np.sum(log_prob(d, latent) + w_ent * entropy(d)))

    g_actor, g_ls, _, _ = actor_grads(params, obs, latent, mask, ones, w_ent * ones)
    arrays = params.actor.params() + [params.log_std]
    grads = g_actor + [g_ls]
    sizes = np.array([a.size for a in arrays])
    picks = [(len(arrays) - 1, 0), (len(arrays) - 1, 1)]
    for flat in rng.choice(sizes[:-1].sum(), size=n_coords, replace=False):
        k = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        picks.append((k, int(flat - (sizes[:k].sum()))))
    ana, num = [], []
    for k, j in picks:
        a, j = arrays[k], np.unravel_index(j, arrays[k].shape)  # weights may be non-contiguous
        old = a[j]
        a[j] = old + h
        fp = scalar()
        a[j] = old - h
        fm = scalar()
        a[j] = old
        num.append((fp - fm) / (2 * h))
        ana.append(grads[k][j])
    ana, num = np.array(ana), np.array(num)
    return float(np.linalg.norm(ana - num) / max(np.linalg.norm(num), 1e-8))
