import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roimpc.policy import (
    Adam, CheckpointError, HeadMode, ShapeMismatch, clip_grad_norm, critic_grads, entropy, forward_actor,
    forward_critic, init_policy, load_checkpoint, log_prob, sample_and_logprob, save_checkpoint, to_control,
    to_hybrid,
)

from conftest import logprob_grad_error

OBS, STATE, C = 26, 55, 3


def hybrid(seed=0):
    return init_policy(HeadMode.HYBRID_ROI, OBS, STATE, C, seed=seed)


def continuous(seed=0):
    return init_policy(HeadMode.CONTINUOUS_2D, OBS, STATE, C, seed=seed)


def perturbed(params, rng, scale=0.3):
    """Move parameters away from the near-zero initial head so gradients are non-trivial."""
    for a in params.arrays():
        a += scale * rng.standard_normal(a.shape)
    return params


def test_init_categorical_is_near_uniform(rng):
    d = forward_actor(hybrid(), rng.uniform(-1, 1, (50, OBS)))
    assert np.abs(d.probs - 1 / C).max() < 0.02


def test_init_is_seeded():
    a, b, c = hybrid(1), hybrid(1), hybrid(2)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert not np.array_equal(a.actor.weights[0], c.actor.weights[0])


def test_orthogonal_hidden_layers():
    w = hybrid().actor.weights[1]
    np.testing.assert_allclose(w.T @ w, 2.0 * np.eye(w.shape[1]), atol=1e-10)


def test_mask_zeroes_probability(rng):
    p = perturbed(hybrid(), rng)
    d = forward_actor(p, rng.uniform(-1, 1, (20, OBS)), mask=[True, False, True])
    assert np.all(d.probs[:, 1] == 0.0)
    np.testing.assert_allclose(d.probs.sum(axis=1), 1.0)
    a, lp = sample_and_logprob(d, rng)
    assert np.all(a[:, 0] != 1) and np.all(np.isfinite(lp))


def test_mask_excluding_everything_rejected(rng):
    with pytest.raises(ValueError):
        forward_actor(hybrid(), np.zeros(OBS), mask=[False] * C)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_samples_map_into_unit_interval(seed):
    rng = np.random.default_rng(seed)
    p = perturbed(hybrid(), rng, 1.0)
    d = forward_actor(p, rng.uniform(-1, 1, (16, OBS)))
    a, lp = sample_and_logprob(d, rng)
    for row in a:
        h = to_hybrid(row)
        assert 0 <= h.c < C and 0.0 <= h.r_norm <= 1.0 and 0.0 <= h.theta_norm <= 1.0
    assert np.all(np.isfinite(lp))


def test_continuous_samples_bounded(rng):
    p = perturbed(continuous(), rng, 1.0)
    a, lp = sample_and_logprob(forward_actor(p, rng.uniform(-1, 1, (200, OBS))), rng)
    u = np.array([to_control(r, p.u_max) for r in a])
    assert np.all(np.abs(u) <= p.u_max) and np.all(np.isfinite(lp))


def test_categorical_frequencies_match_probs(rng):
    p = perturbed(hybrid(), rng, 0.5)
    obs = rng.uniform(-1, 1, OBS)
    d = forward_actor(p, np.tile(obs, (20000, 1)))
    a, _ = sample_and_logprob(d, rng)
    freq = np.bincount(a[:, 0].astype(int), minlength=C) / len(a)
    np.testing.assert_allclose(freq, d.probs[0], atol=0.015)


def test_logprob_finite_at_extreme_latents():
    p = continuous()
    d = forward_actor(p, np.zeros(OBS))
    for z in (-40.0, -5.0, 0.0, 5.0, 40.0):
        assert np.isfinite(log_prob(d, np.array([z, -z]))).all()
    h = forward_actor(hybrid(), np.zeros(OBS))
    assert np.isfinite(log_prob(h, np.array([0.0, 60.0, -60.0]))).all()


def test_logprob_matches_gaussian_density_for_latent():
    p = continuous()
    d = forward_actor(p, np.zeros(OBS))
    z = np.array([0.3, -0.2])
    u = p.u_max * np.tanh(z)
    gauss = -0.5 * ((z - d.mean[0]) ** 2).sum() - math.log(2 * math.pi)
    jac = np.log(p.u_max * (1 - np.tanh(z) ** 2)).sum()
    assert log_prob(d, z)[0] == pytest.approx(gauss - jac, rel=1e-12)
    assert np.all(np.abs(u) < p.u_max)


def test_entropy_at_init():
    d = forward_actor(hybrid(), np.zeros(OBS))
    expected = math.log(C) + 2 * 0.5 * (1 + math.log(2 * math.pi))
    assert entropy(d)[0] == pytest.approx(expected, abs=1e-3)


def test_critic_zero_state_is_zero():
    assert forward_critic(hybrid(), np.zeros(STATE)) == 0.0


def test_batched_equals_per_row(rng):
    p = perturbed(hybrid(), rng)
    obs = rng.uniform(-1, 1, (7, OBS))
    st_ = rng.uniform(-1, 1, (7, STATE))
    d = forward_actor(p, obs)
    v = forward_critic(p, st_)
    for i in range(7):
        di = forward_actor(p, obs[i])
        np.testing.assert_allclose(di.probs[0], d.probs[i], rtol=1e-12)
        np.testing.assert_allclose(di.mean[0], d.mean[i], rtol=1e-12)
        assert forward_critic(p, st_[i]) == pytest.approx(v[i], rel=1e-12)


@pytest.mark.parametrize("mode", [HeadMode.HYBRID_ROI, HeadMode.CONTINUOUS_2D])
@pytest.mark.parametrize("w_ent", [0.0, 0.5])
def test_actor_gradients_match_finite_differences(rng, mode, w_ent):
    p = perturbed(init_policy(mode, OBS, STATE, C, seed=3), rng)
    obs = rng.uniform(-1, 1, (4, OBS))
    mask = [True, True, False] if mode == HeadMode.HYBRID_ROI else None
    a, _ = sample_and_logprob(forward_actor(p, obs, mask), rng)
    assert logprob_grad_error(p, obs, a, mask, w_ent=w_ent, rng=rng) < 1e-3


def test_critic_gradients_match_finite_differences(rng):
    p = perturbed(hybrid(), rng)
    s = rng.uniform(-1, 1, (3, STATE))
    w = rng.standard_normal(3)
    g, _ = critic_grads(p, s, w)
    h = 1e-6
    for k, arr in enumerate(p.critic.params()):
        for flat in rng.choice(arr.size, size=min(5, arr.size), replace=False):
            j = np.unravel_index(flat, arr.shape)
            old = arr[j]
            arr[j] = old + h
            fp = float(w @ forward_critic(p, s))
            arr[j] = old - h
            fm = float(w @ forward_critic(p, s))
            arr[j] = old
            assert g[k][j] == pytest.approx((fp - fm) / (2 * h), rel=1e-4, abs=1e-7)


def test_checkpoint_round_trip_bitwise(tmp_path, rng):
    p = perturbed(hybrid(), rng)
    save_checkpoint(tmp_path / "p.npz", p, {"scheme": "RoiGuided"})
    q, meta = load_checkpoint(tmp_path / "p.npz")
    assert meta == {"scheme": "RoiGuided"} and q.mode == p.mode and q.n_preys == C
    assert all(np.array_equal(x, y) for x, y in zip(p.arrays(), q.arrays()))
    obs = rng.uniform(-1, 1, (5, OBS))
    assert np.array_equal(forward_actor(p, obs).probs, forward_actor(q, obs).probs)


def test_corrupt_checkpoint_rejected(tmp_path):
    f = tmp_path / "bad.npz"
    f.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(f)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")


@pytest.mark.parametrize("bad", [np.zeros(OBS + 1), np.zeros((2, 3, OBS))])
def test_shape_mismatch(bad):
    with pytest.raises(ShapeMismatch):
        forward_actor(hybrid(), bad)


def test_critic_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        forward_critic(hybrid(), np.zeros(OBS))


def test_adam_minimises_quadratic():
    x = np.array([3.0, -2.0])
    opt = Adam([x], lr=0.1)
    for _ in range(500):
        opt.step([2 * x])
    assert np.abs(x).max() < 1e-2


def test_clip_grad_norm():
    g = [np.array([3.0]), np.array([4.0])]
    assert clip_grad_norm(g, 0.5) == 5.0
    assert math.hypot(g[0][0], g[1][0]) == pytest.approx(0.5)
    g2 = [np.array([0.1])]
    clip_grad_norm(g2, 0.5)
    assert g2[0][0] == 0.1
