import math

import numpy as np
import pytest

from roimpc import kernels
from roimpc.dynamics import DynamicsParams
from roimpc.solver import (
    KeepOut, MpcProblem, SolveStatus, SolverOptions, hard_violation, objective_and_gradient, pack_problem,
    predict_states, slacks_for, solve, warm_shift,
)

from conftest import grid_best, random_problem

DYN = DynamicsParams(1.0, 0.75, 1.5)
BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


def tracking(x0, tau, N=1, keepouts=(), Q=100.0, R=0.1):
    pw = np.zeros((N + 1, 2))
    pw[1:] = Q
    return MpcProblem(N, np.asarray(x0, float), DYN, 20.0, target=np.asarray(tau, float), pos_weights=pw,
                      u_weights=np.full((N, 2), R), keepouts=keepouts)


def test_target_at_rest_gives_zero():
    sol = solve(tracking([3, 4, 0, 0], [3, 4]))
    assert sol.status == SolveStatus.CONVERGED
    np.testing.assert_allclose(sol.controls, 0.0, atol=1e-6)


def test_far_target_saturates_and_matches_grid():
    p = tracking([0, 0, 0, 0], [100, 0])
    sol = solve(p)
    np.testing.assert_allclose(sol.controls[0], [0.75, 0.0], atol=1e-4)
    assert sol.objective <= grid_best(p, 81) + 1e-6


def test_keepout_between_agent_and_target_vs_grid():
    ko = KeepOut((2.0, 0.0), 1.5 ** 2, weight=1e4)
    p = tracking([0, 0, 0, 0], [4, 0], N=2, keepouts=[ko])
    sol = solve(p)
    clear = np.hypot(sol.states[:, 0] - 2.0, sol.states[:, 1])
    assert clear.min() >= 1.5 - 1.0
    free = solve(tracking([0, 0, 0, 0], [4, 0], N=2))
    assert sol.objective >= free.objective
    g = np.linspace(-0.75, 0.75, 21)
    best = math.inf
    for a in g:
        for b in g:
            for c in g:
                for d in g:
                    u = np.array([[a, b], [c, d]])
                    if hard_violation(p, predict_states(p.x0, u, 1.0), u) == 0:
                        best = min(best, objective_and_gradient(p, u)[0])
    assert sol.objective <= best + 1e-6


@pytest.mark.parametrize("backend", BACKENDS)
def test_gradient_matches_finite_differences(backend, rng):
    kb = kernels.get_backend(backend)
    for _ in range(100):
        p = random_problem(rng, horizon=5)
        u = rng.uniform(-0.75, 0.75, 10)
        f, g = objective_and_gradient(p, u, kb)
        h = 1e-6
        fd = np.array([(objective_and_gradient(p, u + h * e, kb)[0] - objective_and_gradient(p, u - h * e, kb)[0])
                       / (2 * h) for e in np.eye(10)])
        assert np.linalg.norm(fd - g) <= 1e-4 * max(1.0, np.linalg.norm(g))


def test_hessian_matches_finite_differences(rng):
    kb = kernels.backend
    for _ in range(30):
        p = random_problem(rng, horizon=3)
        d = pack_problem(p)
        args = (d["x0"], d["dt"], d["pos_w"], d["tau"], d["u_w"], d["u_ref"], d["centers"], d["r2"], d["wts"],
                d["eps"], d["qexp"])
        u = rng.uniform(-0.75, 0.75, 6)
        H = kb.objective_hessian(u, *args)
        h = 1e-6
        fd = np.array([(kb.objective(u + h * e, *args)[1] - kb.objective(u - h * e, *args)[1]) / (2 * h)
                       for e in np.eye(6)])
        assert np.allclose(H, H.T, atol=1e-9)
        assert np.linalg.norm(fd - H) <= 1e-4 * max(1.0, np.linalg.norm(H))


def test_backends_bitwise_identical(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    for _ in range(15):
        p = random_problem(rng)
        a, b = solve(p, backend=py), solve(p, backend=cy)
        assert np.array_equal(a.controls, b.controls) and a.objective == b.objective
        assert a.iterations == b.iterations


@pytest.mark.parametrize("mode", ["component", "norm"])
def test_random_solves_feasible_and_slacks_closed_form(mode, rng):
    for _ in range(60):
        p = random_problem(rng, bound_mode=mode)
        sol = solve(p)
        assert sol.status == SolveStatus.CONVERGED
        assert hard_violation(p, sol.states, sol.controls) <= 1e-6
        assert np.all(sol.slacks >= -1e-9)
        np.testing.assert_allclose(sol.slacks, slacks_for(p, sol.states), atol=1e-6)
        for j, ko in enumerate(p.keepouts):
            g = np.sum((sol.states[:, :2] - ko.center) ** 2, axis=1) - ko.radius_sq
            assert np.all(g + sol.slacks[j] >= -1e-6)


def test_states_follow_dynamics(rng):
    p = random_problem(rng)
    sol = solve(p)
    np.testing.assert_allclose(sol.states, predict_states(p.x0, sol.controls, 1.0), atol=0)


def test_outside_arena_is_infeasible():
    sol = solve(tracking([25, 0, 0, 0], [0, 0]))
    assert sol.status == SolveStatus.INFEASIBLE
    np.testing.assert_array_equal(sol.controls, 0.0)


def test_penalty_monotonicity(rng):
    counts = {}
    for W in (10.0, 1000.0):
        r = np.random.default_rng(77)
        n = 0
        for _ in range(100):
            p = random_problem(r, max_keepouts=2)
            p.keepouts = tuple(KeepOut(k.center, k.radius_sq, W, k.eps, k.q) for k in p.keepouts)
            sol = solve(p)
            n += int(np.sum(sol.slacks > 1e-6))
        counts[W] = n
    assert counts[1000.0] <= counts[10.0]


def test_near_kink_is_stable():
    # start exactly on the keep-out boundary, where the penalty is C1 but not C2
    ko = KeepOut((3.5, 0.0), 3.5 ** 2)
    p = tracking([0, 0, 0, 0], [10, 0], N=5, keepouts=[ko])
    sol = solve(p)
    assert sol.status == SolveStatus.CONVERGED and np.isfinite(sol.objective)


def test_warm_shift_examples():
    p = tracking([0, 0, 0, 0], [5, 0], N=3)
    prev = solve(p)
    prev.controls = np.array([[0.1, 0.0], [0.2, 0.0], [0.3, 0.0]])
    ws = warm_shift(prev, p)
    np.testing.assert_array_equal(ws.controls, [[0.2, 0.0], [0.3, 0.0], [0.3, 0.0]])
    np.testing.assert_array_equal(ws.states, predict_states(p.x0, ws.controls, 1.0))
    prev.status = SolveStatus.INFEASIBLE
    np.testing.assert_array_equal(warm_shift(prev, p).controls, 0.0)
    zero = solve(tracking([0, 0, 0, 0], [0, 0], N=3))
    np.testing.assert_allclose(warm_shift(zero, p).states, zero.states, atol=1e-6)


def test_warm_start_reaches_same_optimum(rng):
    p = random_problem(rng, max_keepouts=0)
    cold = solve(p)
    warm = solve(p, warm_start=cold)
    np.testing.assert_allclose(warm.controls, cold.controls, atol=1e-5)


def test_problem_validation():
    with pytest.raises(ValueError):
        MpcProblem(0, np.zeros(4), DYN, 20.0)
    with pytest.raises(ValueError):
        MpcProblem(1, np.zeros(4), DYN, 20.0, bound_mode="box")
    with pytest.raises(ValueError):
        KeepOut((0, 0), -1.0)


def test_diagnostics_record():
    d = solve(tracking([0, 0, 0, 0], [5, 5], N=5)).diagnostics()
    assert set(d) == {"status", "iterations", "kkt", "violation", "active_keepouts"}


def test_options_respected():
    sol = solve(tracking([0, 0, 0, 0], [50, 50], N=5), options=SolverOptions(max_outer=1, max_inner=1))
    assert sol.status in (SolveStatus.CONVERGED, SolveStatus.MAX_ITER)
    assert np.all(np.abs(sol.controls) <= 0.75 + 1e-12)
