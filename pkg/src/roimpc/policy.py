"""Shared decentralised actor and centralised critic as small numpy MLPs.

Action heads
------------
``HybridRoi``: masked categorical over preys plus two independent
sigmoid-squashed Gaussians for ``(r', theta')`` on the open interval (0, 1).
``Continuous2D``: a tanh-squashed 2-D Gaussian scaled to ``[-u_max, u_max]^2``.

Sampled actions are stored in *latent* form so log-probabilities never need
an inverse squash: ``[c, z_r, z_theta]`` for the hybrid head and
``[z_x, z_y]`` for the continuous head. Log-std parameters are
state-independent.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .roi import HybridAction

CHECKPOINT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


class ShapeMismatch(ValueError):
    """Input vector length does not match the network."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, corrupt or of an unsupported version."""


class HeadMode(str, enum.Enum):
    HYBRID_ROI = "HybridRoi"
    CONTINUOUS_2D = "Continuous2D"


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    w = q if n_in >= n_out else q.T
    return gain * w[:n_in, :n_out]


@dataclass
class MLP:
    """Fully connected network; ``weights[i]`` has shape ``(n_in, n_out)``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    @classmethod
    def init(cls, rng: np.random.Generator, sizes, out_gain: float, activation: str = "tanh") -> "MLP":
        if activation not in ("tanh", "relu"):
            raise ValueError(f"unsupported activation {activation!r}")
        ws, bs = [], []
        for i in range(len(sizes) - 1):
            gain = out_gain if i == len(sizes) - 2 else math.sqrt(2.0)
            ws.append(_orthogonal(rng, sizes[i], sizes[i + 1], gain))
            bs.append(np.zeros(sizes[i + 1]))
        return cls(ws, bs, activation)

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h) if self.activation == "tanh" else np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout: np.ndarray) -> list[np.ndarray]:
        """Gradients ``[dW0, db0, dW1, db1, ...]`` of ``sum(dout * output)``."""
        grads = []
        d = dout
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(d.sum(axis=0))
            grads.append(acts[i].T @ d)
            if i > 0:
                d = d @ self.weights[i].T
                a = acts[i]
                d = d * (1.0 - a * a) if self.activation == "tanh" else d * (a > 0.0)
        grads.reverse()
        return grads


@dataclass
class PolicyParams:
    mode: HeadMode
    n_preys: int
    u_max: float
    actor: MLP
    critic: MLP
    log_std: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def obs_dim(self) -> int:
        return self.actor.n_in

    @property
    def state_dim(self) -> int:
        return self.critic.n_in

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.actor.weights[:-1])

    def arrays(self) -> list[np.ndarray]:
        """Every trainable array, in a fixed order shared with the gradient lists."""
        return self.actor.params() + [self.log_std] + self.critic.params()

    def names(self) -> list[str]:
        a = [f"actor_{k}{i}" for i in range(len(self.actor.weights)) for k in ("W", "b")]
        c = [f"critic_{k}{i}" for i in range(len(self.critic.weights)) for k in ("W", "b")]
        return a + ["log_std"] + c

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.mode, self.n_preys, self.u_max,
            MLP([w.copy() for w in self.actor.weights], [b.copy() for b in self.actor.biases], self.actor.activation),
            MLP([w.copy() for w in self.critic.weights], [b.copy() for b in self.critic.biases], self.critic.activation),
            self.log_std.copy(),
        )


def init_policy(mode: HeadMode, obs_dim: int, state_dim: int, n_preys: int, u_max: float = 0.75,
                hidden=(64, 64), activation: str = "tanh", seed: int = 0,
                head_gain: float = 0.01, log_std_init: float = 0.0) -> PolicyParams:
    mode = HeadMode(mode)
    rng = np.random.default_rng(seed)
    out = n_preys + 2 if mode == HeadMode.HYBRID_ROI else 2
    actor = MLP.init(rng, [obs_dim, *hidden, out], head_gain, activation)
    critic = MLP.init(rng, [state_dim, *hidden, 1], 1.0, activation)
    return PolicyParams(mode, n_preys, float(u_max), actor, critic, np.full(2, float(log_std_init)))


# ---------------------------------------------------------------------------
# Distributions


@dataclass
class ActionDistribution:
    mode: HeadMode
    mean: np.ndarray  # (B, 2) latent means
    log_std: np.ndarray  # (2,)
    u_max: float
    logits: np.ndarray | None = None  # (B, C), masked entries are -inf
    probs: np.ndarray | None = None  # (B, C)

    @property
    def batch(self) -> int:
        return self.mean.shape[0]

    def mode_action(self) -> np.ndarray:
        """Deterministic latent action: categorical argmax and Gaussian means."""
        if self.mode == HeadMode.HYBRID_ROI:
            return np.column_stack([np.argmax(self.probs, axis=1).astype(float), self.mean])
        return self.mean.copy()


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != dim:
        raise ShapeMismatch(f"{what} has shape {x.shape}, expected (..., {dim})")
    return x2, single


def _masked_softmax(logits: np.ndarray, mask: np.ndarray | None):
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
        if not np.all(mask.any(axis=1)):
            raise ValueError("mask excludes every prey")
        logits = np.where(mask, logits, -np.inf)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return logits, e / e.sum(axis=1, keepdims=True)


def forward_actor(params: PolicyParams, obs, mask=None) -> ActionDistribution:
    x, _ = _as_batch(obs, params.obs_dim, "observation")
    out, _ = params.actor.forward(x)
    return _distribution(params, out, mask)


def _distribution(params: PolicyParams, out: np.ndarray, mask) -> ActionDistribution:
    if params.mode == HeadMode.HYBRID_ROI:
        C = params.n_preys
        logits, probs = _masked_softmax(out[:, :C], mask)
        return ActionDistribution(params.mode, out[:, C:C + 2], params.log_std, params.u_max, logits, probs)
    return ActionDistribution(params.mode, out[:, :2], params.log_std, params.u_max)


def forward_critic(params: PolicyParams, state) -> np.ndarray | float:
    x, single = _as_batch(state, params.state_dim, "global state")
    v = params.critic.forward(x)[0][:, 0]
    return float(v[0]) if single else v


def _gauss_logp(z, mean, log_std):
    s = (z - mean) * np.exp(-log_std)
    return -0.5 * s * s - log_std - 0.5 * LOG_2PI


def log_prob(dist: ActionDistribution, latent) -> np.ndarray:
    """Log density (log mass for the prey index) of latent actions, shape ``(B,)``."""
    a = np.asarray(latent, dtype=float).reshape(dist.batch, -1)
    if dist.mode == HeadMode.HYBRID_ROI:
        c = a[:, 0].astype(int)
        z = a[:, 1:3]
        with np.errstate(divide="ignore"):
            lm = np.log(dist.probs[np.arange(dist.batch), c])
        # density of s = sigmoid(z): log N(z) - log s'(z), with log s'(z) = -softplus(-z) - softplus(z)
        ld = _gauss_logp(z, dist.mean, dist.log_std) + _softplus(-z) + _softplus(z)
        return lm + ld.sum(axis=1)
    z = a[:, :2]
    # density of u = u_max tanh(z): log N(z) - log(u_max (1 - tanh(z)^2))
    log_jac = math.log(dist.u_max) + 2.0 * (math.log(2.0) - z - _softplus(-2.0 * z))
    return (_gauss_logp(z, dist.mean, dist.log_std) - log_jac).sum(axis=1)


def entropy(dist: ActionDistribution) -> np.ndarray:
    """Categorical entropy plus the entropy of the latent Gaussians."""
    h = np.full(dist.batch, float(np.sum(dist.log_std + 0.5 * (1.0 + LOG_2PI))))
    if dist.mode == HeadMode.HYBRID_ROI:
        p = dist.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
        h = h - plogp.sum(axis=1)
    return h


def sample_and_logprob(dist: ActionDistribution, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw latent actions and their log-probabilities."""
    B = dist.batch
    z = dist.mean + np.exp(dist.log_std) * rng.standard_normal((B, 2))
    if dist.mode == HeadMode.HYBRID_ROI:
        cdf = np.cumsum(dist.probs, axis=1)
        u = rng.uniform(size=(B, 1))
        c = np.minimum((u >= cdf).sum(axis=1), dist.probs.shape[1] - 1)
        # never land on a zero-probability (masked) index through rounding at the top of the cdf
        for b in range(B):
            while dist.probs[b, c[b]] == 0.0:
                c[b] -= 1
        a = np.column_stack([c.astype(float), z])
    else:
        a = z
    return a, log_prob(dist, a)


def to_hybrid(latent) -> HybridAction:
    a = np.asarray(latent, dtype=float).reshape(3)
    s = _sigmoid(a[1:3])
    return HybridAction(int(a[0]), float(s[0]), float(s[1]))


def to_control(latent, u_max: float) -> np.ndarray:
    return u_max * np.tanh(np.asarray(latent, dtype=float).reshape(2))


# ---------------------------------------------------------------------------
# Gradients


def actor_grads(params: PolicyParams, obs, latent, mask, w_logp, w_ent):
    """Gradients of ``sum_b (w_logp[b] * logp_b + w_ent[b] * H_b)`` w.r.t. actor params and log_std.

    Returns ``(grads_actor_list, grad_log_std, logp, entropy)``.
    """
    x, _ = _as_batch(obs, params.obs_dim, "observation")
    out, acts = params.actor.forward(x)
    dist = _distribution(params, out, mask)
    a = np.asarray(latent, dtype=float).reshape(dist.batch, -1)
    w_logp = np.asarray(w_logp, dtype=float).reshape(-1)
    w_ent = np.broadcast_to(np.asarray(w_ent, dtype=float), (dist.batch,))
    logp = log_prob(dist, a)
    ent = entropy(dist)
    inv_var = np.exp(-2.0 * params.log_std)
    dout = np.zeros_like(out)
    if dist.mode == HeadMode.HYBRID_ROI:
        C = params.n_preys
        z = a[:, 1:3]
        c = a[:, 0].astype(int)
        p = dist.probs
        onehot = np.zeros_like(p)
        onehot[np.arange(dist.batch), c] = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            logp_cat = np.where(p > 0.0, np.log(np.where(p > 0.0, p, 1.0)), 0.0)
        h_cat = -(p * logp_cat).sum(axis=1, keepdims=True)
        dout[:, :C] = w_logp[:, None] * (onehot - p) + w_ent[:, None] * (-p * (logp_cat + h_cat))
        mslice = slice(C, C + 2)
    else:
        z = a[:, :2]
        mslice = slice(0, 2)
    diff = z - dist.mean
    dout[:, mslice] = w_logp[:, None] * diff * inv_var
    g_log_std = (w_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) + w_ent.sum()
    return params.actor.backward(acts, dout), g_log_std, logp, ent


def critic_grads(params: PolicyParams, state, w_v):
    """Gradients of ``sum_b w_v[b] * V_b`` and the values themselves."""
    x, _ = _as_batch(state, params.state_dim, "global state")
    out, acts = params.critic.forward(x)
    return params.critic.backward(acts, np.asarray(w_v, dtype=float).reshape(-1, 1)), out[:, 0]


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, params: PolicyParams, meta: dict | None = None) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "mode": params.mode.value,
        "n_preys": params.n_preys,
        "u_max": params.u_max,
        "activation": params.actor.activation,
        "n_actor_layers": len(params.actor.weights),
        "n_critic_layers": len(params.critic.weights),
        "meta": meta or {},
    }
    arrays = dict(zip(params.names(), params.arrays()))
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    try:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
            act = header["activation"]
            na, nc = header["n_actor_layers"], header["n_critic_layers"]
            actor = MLP([z[f"actor_W{i}"].copy() for i in range(na)], [z[f"actor_b{i}"].copy() for i in range(na)], act)
            critic = MLP([z[f"critic_W{i}"].copy() for i in range(nc)], [z[f"critic_b{i}"].copy() for i in range(nc)], act)
            params = PolicyParams(HeadMode(header["mode"]), int(header["n_preys"]), float(header["u_max"]),
                                  actor, critic, z["log_std"].copy())
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot load checkpoint {path}: {e}") from e
    return params, header["meta"]


# ---------------------------------------------------------------------------
# Optimiser


class Adam:
    def __init__(self, arrays: list[np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-5):
        self.arrays = arrays
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        """Gradient *descent* step, updating the arrays in place."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm > 0:
        s = max_norm / (total + 1e-12)
        for g in grads:
            g *= s
    return total
