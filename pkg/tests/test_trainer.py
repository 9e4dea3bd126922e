import math

import numpy as np
import pytest

from roimpc.agents import Scheme
from roimpc.environment import layout
from roimpc.policy import forward_actor, forward_critic, init_policy, load_checkpoint, sample_and_logprob, to_hybrid, HeadMode
from roimpc.trainer import (
    CurvePoint, RolloutBatch, TrainConfig, collect_rollouts, compute_gae, new_policy, normalize_advantages,
    ppo_loss_weights, ppo_update, read_curve, train, write_curve,
)

OBS, STATE, C, N_AG = 6, 8, 3, 2


def synthetic_batch(T, rewards=None, values=None, next_values=None, dones=None, ends=None, params=None, rng=None):
    rng = rng or np.random.default_rng(0)
    z = lambda *s: np.zeros(s)  # noqa: E731
    rewards = z(T) if rewards is None else np.asarray(rewards, float)
    dones = np.zeros(T, bool) if dones is None else np.asarray(dones, bool)
    ends = dones.copy() if ends is None else np.asarray(ends, bool)
    obs = rng.uniform(-1, 1, (T, N_AG, OBS))
    states = rng.uniform(-1, 1, (T, STATE))
    if params is not None:
        dist = forward_actor(params, obs.reshape(T * N_AG, OBS))
        lat, lp = sample_and_logprob(dist, rng)
        lat, lp = lat.reshape(T, N_AG, -1), lp.reshape(T, N_AG)
    else:
        lat, lp = z(T, N_AG, 3), z(T, N_AG)
    return RolloutBatch(obs, states, lat, lp, None, np.repeat(rewards[:, None], N_AG, axis=1),
                        z(T) if values is None else np.asarray(values, float),
                        z(T) if next_values is None else np.asarray(next_values, float), dones, ends)


def test_gae_single_terminal_step():
    b = synthetic_batch(1, rewards=[-0.1], dones=[True])
    adv, ret = compute_gae(b, 0.99, 0.95)
    assert adv[0] == pytest.approx(-0.1) and ret[0] == pytest.approx(-0.1)


def test_gae_all_zero():
    adv, ret = compute_gae(synthetic_batch(5, ends=[0, 0, 0, 0, 1]), 0.99, 0.95)
    assert not adv.any() and not ret.any()


def test_gae_lambda_zero_is_td_residual(rng):
    T = 20
    r, v, nv = rng.normal(size=T), rng.normal(size=T), rng.normal(size=T)
    b = synthetic_batch(T, r, v, nv, ends=[0] * (T - 1) + [1])
    adv, _ = compute_gae(b, 0.9, 0.0)
    np.testing.assert_allclose(adv, r + 0.9 * nv - v)


def test_gae_lambda_one_is_discounted_return_minus_value():
    T = 4
    r = np.array([1.0, 2.0, 3.0, 4.0])
    v = np.array([0.5, 0.1, 0.2, 0.3])
    nv = np.r_[v[1:], 0.0]
    b = synthetic_batch(T, r, v, nv, dones=[0, 0, 0, 1])
    adv, ret = compute_gae(b, 0.5, 1.0)
    disc = [sum(r[k] * 0.5 ** (k - t) for k in range(t, T)) for t in range(T)]
    np.testing.assert_allclose(ret, disc)


def test_gae_stops_at_episode_ends():
    b = synthetic_batch(3, rewards=[1.0, 5.0, 0.0], dones=[True, False, False], ends=[True, False, True])
    adv, _ = compute_gae(b, 0.99, 0.95)
    assert adv[0] == pytest.approx(1.0)


def test_normalize_advantages(rng):
    a = normalize_advantages(rng.normal(3.0, 5.0, 1000))
    assert abs(a.mean()) < 1e-12 and a.std() == pytest.approx(1.0, abs=1e-6)


def test_infinite_clip_is_vanilla_policy_gradient(rng):
    lp_new, lp_old, adv = rng.normal(size=50), rng.normal(size=50), rng.normal(size=50)
    w, loss, _ = ppo_loss_weights(lp_new, lp_old, adv, math.inf)
    ratio = np.exp(lp_new - lp_old)
    np.testing.assert_allclose(w, -adv * ratio / 50)
    assert loss == pytest.approx(-np.mean(ratio * adv))


def test_clipped_samples_have_no_gradient():
    w, _, frac = ppo_loss_weights(np.log([1.5, 0.5, 1.5, 0.5]), np.zeros(4), np.array([1.0, -1.0, -1.0, 1.0]), 0.2)
    assert w[0] == 0 and w[1] == 0 and w[2] != 0 and w[3] != 0
    assert frac == 1.0


def test_zero_advantages_only_entropy_moves_actor():
    p = init_policy(HeadMode.HYBRID_ROI, OBS, STATE, C, seed=0)
    b = synthetic_batch(64, params=p)
    before = [a.copy() for a in p.actor.params()] + [p.log_std.copy()]
    cfg = TrainConfig(batch_size=64, minibatch_count=1, epochs_per_batch=1, entropy_coef=0.0, learning_rate=1e-2)
    ppo_update(p, b, cfg, advantages=np.zeros(64), returns=np.zeros(64))
    assert all(np.array_equal(x, y) for x, y in zip(before, p.actor.params() + [p.log_std]))
    ppo_update(p, b, TrainConfig(batch_size=64, minibatch_count=1, epochs_per_batch=1, learning_rate=1e-2),
               advantages=np.zeros(64), returns=np.zeros(64))
    assert np.all(p.log_std > before[-1])


def test_value_loss_decreases():
    wins = 0
    for trial in range(20):
        rng = np.random.default_rng(trial)
        p = init_policy(HeadMode.HYBRID_ROI, OBS, STATE, C, seed=trial)
        b = synthetic_batch(128, params=p, rng=rng)
        ret = rng.normal(size=128)
        mse = lambda: float(np.mean((forward_critic(p, b.states) - ret) ** 2))  # noqa: E731
        before = mse()
        ppo_update(p, b, TrainConfig(batch_size=128), advantages=rng.normal(size=128), returns=ret,
                   rng=np.random.default_rng(trial))
        wins += mse() < before
    assert wins >= 18


def test_config_validation():
    assert TrainConfig().batch_size == 4096 and TrainConfig().learning_rate == 5e-4
    for kw in (dict(gamma=1.0), dict(gae_lambda=1.5), dict(batch_size=10, minibatch_count=4), dict(clip_epsilon=0)):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


@pytest.mark.parametrize("scheme", [Scheme.ROI_GUIDED, Scheme.END_TO_END])
def test_collect_rollouts_shape_and_rewards(scheme):
    cfg = layout(1)
    p = new_policy(scheme, cfg, TrainConfig())
    b = collect_rollouts(p, scheme, cfg, 10, seed=0)
    assert b.obs.shape == (10, 2, p.obs_dim) and b.states.shape == (10, p.state_dim)
    assert b.rewards.shape == (10, 2) and np.all(b.rewards == -0.1)
    assert np.all(np.isfinite(b.logp)) and b.ends[-1]
    if scheme is Scheme.ROI_GUIDED:
        for z in b.latent.reshape(-1, 3):
            h = to_hybrid(z)
            assert 0 <= h.c < cfg.n_preys and 0 <= h.r_norm <= 1 and 0 <= h.theta_norm <= 1


def test_collect_rollouts_deterministic():
    cfg = layout(1)
    p = new_policy(Scheme.ROI_GUIDED, cfg, TrainConfig())
    a = collect_rollouts(p, Scheme.ROI_GUIDED, cfg, 15, seed=3)
    b = collect_rollouts(p, Scheme.ROI_GUIDED, cfg, 15, seed=3)
    assert np.array_equal(a.latent, b.latent) and np.array_equal(a.obs, b.obs)


def test_zero_steps_training(tmp_path):
    run = train(Scheme.END_TO_END, layout(1), TrainConfig(total_steps=0), out_dir=tmp_path)
    assert run.curve == [] and run.updates == []
    assert (tmp_path / "checkpoints" / "initial.npz").exists()
    assert read_curve(tmp_path / "curve.csv") == []
    init = new_policy(Scheme.END_TO_END, layout(1), TrainConfig())
    q, meta = load_checkpoint(tmp_path / "checkpoints" / "final.npz")
    assert all(np.array_equal(x, y) for x, y in zip(init.arrays(), q.arrays()))
    assert meta["scheme"] == "EndToEnd" and meta["env_steps"] == 0


def test_short_training_run_is_reproducible(tmp_path):
    cfg = layout(1, max_steps=30)
    tc = TrainConfig(total_steps=128, batch_size=64, eval_interval=64, eval_episodes=2, seed=5)
    a = train(Scheme.END_TO_END, cfg, tc, out_dir=tmp_path / "a")
    b = train(Scheme.END_TO_END, cfg, tc, out_dir=tmp_path / "b")
    assert [c.env_steps for c in a.curve] == [0, 64, 128]
    assert (tmp_path / "a" / "curve.csv").read_text() == (tmp_path / "b" / "curve.csv").read_text()
    assert all(np.array_equal(x, y) for x, y in zip(a.params.arrays(), b.params.arrays()))


def test_curve_round_trip(tmp_path):
    curve = [CurvePoint(0, -40.0, 0.0, 0.0, 0.0), CurvePoint(4096, -12.3, 4.5, 30.0, 0.6925)]
    write_curve(tmp_path / "c.csv", curve)
    assert read_curve(tmp_path / "c.csv") == curve
