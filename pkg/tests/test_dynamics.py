import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roimpc.dynamics import BoundViolation, DynamicsParams, check_control, rollout, step, transition_matrices

P = DynamicsParams(dt=1.0, u_max=0.75, v_max=1.5)
UNCLAMPED = DynamicsParams(dt=1.0, u_max=0.75, v_max=math.inf)

finite = st.floats(-50, 50, allow_nan=False)
ctrl = st.floats(-0.75, 0.75, allow_nan=False)


@pytest.mark.parametrize(
    "x, u, expected",
    [
        ((0, 0, 0, 0), (0, 0), (0, 0, 0, 0)),
        ((0, 0, 0, 0), (1, 0), (0.5, 0, 1, 0)),
        ((0, 0, 2, 0), (0, 0), (2, 0, 2, 0)),
    ],
)
def test_step_examples(x, u, expected):
    p = DynamicsParams(dt=1.0, u_max=1.0, v_max=math.inf)
    np.testing.assert_array_equal(step(x, u, p), expected)


def test_step_rejects_large_control():
    with pytest.raises(BoundViolation):
        step(np.zeros(4), (2.0, 0.0), P)


def test_bound_tolerance_is_tight():
    check_control(np.array([0.75 + 5e-10, 0.0]), 0.75)
    with pytest.raises(BoundViolation):
        check_control(np.array([0.75 + 1e-8, 0.0]), 0.75)
    with pytest.raises(BoundViolation):
        check_control(np.array([np.nan, 0.0]), 0.75)


def test_step_matches_printed_matrices():
    A, B = transition_matrices(1.0)
    x = np.array([1.0, -2.0, 0.3, -0.4])
    u = np.array([0.5, -0.25])
    np.testing.assert_allclose(step(x, u, UNCLAMPED), A @ x + B @ u, rtol=0, atol=1e-15)


def test_velocity_clamped_componentwise():
    out = step(np.array([0, 0, 1.4, -1.4]), np.array([0.75, -0.75]), P)
    assert out[2] == 1.5 and out[3] == -1.5


def test_batched_step_equals_rowwise(rng):
    X = rng.uniform(-5, 5, (6, 4))
    U = rng.uniform(-0.75, 0.75, (6, 2))
    np.testing.assert_array_equal(step(X, U, P), np.stack([step(x, u, P) for x, u in zip(X, U)]))


def test_rollout_examples():
    np.testing.assert_array_equal(rollout(np.zeros(4), [(0, 0)] * 5, P), np.zeros((6, 4)))
    xs = rollout(np.array([0, 0, 1.0, 0]), [(0, 0)] * 3, P)
    np.testing.assert_array_equal(xs[:, 0], [0, 1, 2, 3])
    p = DynamicsParams(dt=1.0, u_max=1.0, v_max=2.0)
    # hand composition: (0.5, 0, 1, 0) then 0.5 + 1 - 0.5 = 1.0 with velocity back to 0
    np.testing.assert_array_equal(rollout(np.zeros(4), [(1, 0), (-1, 0)], p)[-1], [1.0, 0, 0, 0])


def test_rollout_propagates_bound_violation():
    with pytest.raises(BoundViolation):
        rollout(np.zeros(4), [(0, 0), (1.0, 0)], P)


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=4, max_size=4),
       st.lists(ctrl, min_size=2, max_size=2), st.lists(ctrl, min_size=2, max_size=2))
def test_linearity_without_clamping(x1, x2, u1, u2):
    x1, x2, u1, u2 = map(np.array, (x1, x2, u1, u2))
    us = np.clip(u1 + u2, -0.75, 0.75)
    u2 = us - u1
    lhs = step(x1 + x2, u1 + u2, UNCLAMPED)
    rhs = step(x1, u1, UNCLAMPED) + step(x2, u2, UNCLAMPED) - step(np.zeros(4), np.zeros(2), UNCLAMPED)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2), st.integers(1, 20))
def test_zero_input_conserves_velocity(v, n):
    x = np.array([0.0, 0.0, *v])
    xs = rollout(x, [(0.0, 0.0)] * n, P)
    np.testing.assert_array_equal(xs[:, 2:], np.tile(v, (n + 1, 1)))
    np.testing.assert_allclose(np.diff(xs[:, 0]), v[0], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(ctrl, min_size=2, max_size=2), min_size=1, max_size=10))
def test_rollout_is_step_composition(us):
    x = np.array([1.0, 2.0, 0.5, -0.5])
    xs = rollout(x, us, P)
    cur = x
    for k, u in enumerate(us):
        cur = step(cur, u, P)
        assert np.array_equal(xs[k + 1], cur)


def test_params_validated():
    with pytest.raises(ValueError):
        DynamicsParams(dt=0.0)
