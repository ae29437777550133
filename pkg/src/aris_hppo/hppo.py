"""Hybrid-action PPO: shared state encoder, discrete and continuous actor heads, shared critic.

Both actor heads read the same encoder output. Each head has its own
clipped surrogate objective; the encoder receives the sum of both heads'
gradients plus the critic's in a single backward pass.

Continuous actions are tanh-squashed Gaussians. The buffer stores the
pre-squash sample ``u`` so that log-probabilities can be recomputed exactly
under the updated policy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import ConfigError, check_positive_int, check_states
from .env import HOVER, N_MANEUVERS, CompNomaEnv, HybridAction
from .neural import Adam, DenseNet, checkpoint_bytes, parse_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


# -- distributions -----------------------------------------------------------

def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_entropy(logits):
    logp = log_softmax(logits)
    return -np.sum(np.exp(logp) * logp, axis=-1)


def tanh_log_det(u):
    """log(1 - tanh(u)^2), computed stably."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def squashed_gaussian_log_prob(u, mean, log_std):
    """Log-density of ``a = tanh(u)`` where ``u ~ N(mean, exp(log_std)^2)``."""
    std = np.exp(log_std)
    z = (u - mean) / std
    gauss = np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)
    return gauss - np.sum(tanh_log_det(u), axis=-1)


def gaussian_entropy(log_std):
    return float(np.sum(log_std + 0.5 + _HALF_LOG_2PI))


def squashed_entropy(mean, log_std, noise):
    """Reparameterized estimate of the entropy of ``tanh(u)``, ``u = mean + std * noise``.

    The Gaussian entropy alone grows without bound as the std increases,
    while the squashed action's entropy is bounded; the tanh Jacobian term
    penalizes saturating the squash.

    Returns:
        (estimate, d/d mean per sample, d/d log_std), the mean gradient
        already divided by the batch size.
    """
    std = np.exp(log_std)
    u = mean + std * noise
    n = u.shape[0]
    h = gaussian_entropy(log_std) + float(np.sum(tanh_log_det(u)) / n)
    d_u = -2.0 * np.tanh(u) / n
    return h, d_u, 1.0 + np.sum(d_u * std * noise, axis=0)


# -- advantage estimation and losses ----------------------------------------

def compute_gae(rewards, values, dones, gamma, lam):
    """Generalized advantage estimation over a time-major rollout.

    Args:
        rewards: (T, ...) rewards.
        values: (T + 1, ...) value estimates; the last row bootstraps the
            state after the final step.
        dones: (T, ...) True where the episode ended at that step.

    Returns:
        (advantages, returns), both shaped like ``rewards``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if values.shape[0] != rewards.shape[0] + 1 or dones.shape != rewards.shape:
        raise ValueError(f"misaligned GAE inputs: rewards {rewards.shape}, values {values.shape}, "
                         f"dones {dones.shape}")
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in reversed(range(rewards.shape[0])):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    return adv, adv + values[:-1]


def explained_variance(predicted, target):
    """1 - Var(target - predicted) / Var(target), pooled over objectives."""
    var = np.var(target)
    return float(1.0 - np.var(target - predicted) / var) if var > 0 else float("nan")


def normalize_advantages(adv, eps=1e-12):
    adv = np.asarray(adv, dtype=np.float64)
    std = adv.std()
    return (adv - adv.mean()) / (std if std > eps else 1.0)


def surrogate_loss(log_prob_new, log_prob_old, advantage, clip_eps):
    """Clipped surrogate loss and its gradient w.r.t. ``log_prob_new``.

    Returns:
        (loss, grad, clip_fraction) with loss ``-mean(min(rho*A, clip(rho)*A))``.
    """
    ratio = np.exp(log_prob_new - log_prob_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_obj = ratio * advantage
    obj = np.minimum(unclipped_obj, clipped * advantage)
    n = max(ratio.size, 1)
    # gradient flows only where the unclipped branch attains the min
    active = unclipped_obj <= clipped * advantage
    grad = np.where(active, -unclipped_obj / n, 0.0)
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip_eps)) if ratio.size else 0.0
    return float(-obj.mean()), grad, clip_frac


# -- policy ------------------------------------------------------------------

class HybridPolicy:
    """Encoder + discrete head + continuous head (+ log-std) + critics.

    Args:
        state_dim: Input width.
        n_discrete: Number of maneuvers, or 0 to drop the discrete head.
        n_continuous: Width of the continuous head.
        n_objectives: Number of critics (one per reward objective).
    """

    def __init__(self, state_dim, n_discrete, n_continuous, n_objectives=1, encoder_widths=(64, 64),
                 head_widths=(64,), critic_widths=(64, 64), init_log_std=np.log(0.5), rng=None):
        rng = np.random.default_rng(rng)
        self.encoder = DenseNet.mlp(state_dim, list(encoder_widths), None, rng)
        z = self.encoder.out_dim
        self.discrete_head = (DenseNet.mlp(z, list(head_widths), n_discrete, rng, out_gain=0.01)
                              if n_discrete else None)
        self.continuous_head = DenseNet.mlp(z, list(head_widths), n_continuous, rng, out_gain=0.01)
        self.log_std = np.full(n_continuous, float(init_log_std))
        self.critics = [DenseNet.mlp(z, list(critic_widths), 1, rng, out_gain=1.0)
                        for _ in range(n_objectives)]
        # critics predict returns standardized by these running statistics
        self.value_mean = np.zeros(n_objectives)
        self.value_std = np.ones(n_objectives)
        self.value_count = np.zeros(1)

    @property
    def nets(self):
        out = {"encoder": self.encoder, "continuous_head": self.continuous_head}
        if self.discrete_head is not None:
            out["discrete_head"] = self.discrete_head
        for i, c in enumerate(self.critics):
            out[f"critic_{i}"] = c
        return out

    def parameters(self):
        params = []
        for net in self.nets.values():
            params += net.parameters()
        return params + [self.log_std]

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters())

    def touch(self):
        for net in self.nets.values():
            net.touch()

    def forward(self, X):
        z, tape_e = self.encoder.forward(X)
        out = {"z": z, "tape_e": tape_e}
        if self.discrete_head is not None:
            out["logits"], out["tape_d"] = self.discrete_head.forward(z)
        out["mean"], out["tape_c"] = self.continuous_head.forward(z)
        vals, tapes = [], []
        for c in self.critics:
            v, t = c.forward(z)
            vals.append(v[:, 0])
            tapes.append(t)
        out["values"] = np.stack(vals, axis=-1)
        out["tape_v"] = tapes
        return out

    def backward(self, fwd, d_logits, d_mean, d_values):
        """Backprop head gradients through the shared encoder; returns grads in parameters() order."""
        grads = {}
        dz = np.zeros_like(fwd["z"])
        if self.discrete_head is not None:
            g, dzi = self.discrete_head.backward(fwd["tape_d"], d_logits)
            grads["discrete_head"] = g
            dz += dzi
        g, dzi = self.continuous_head.backward(fwd["tape_c"], d_mean)
        grads["continuous_head"] = g
        dz += dzi
        for i, (c, t) in enumerate(zip(self.critics, fwd["tape_v"])):
            g, dzi = c.backward(t, d_values[:, i:i + 1])
            grads[f"critic_{i}"] = g
            dz += dzi
        grads["encoder"], _ = self.encoder.backward(fwd["tape_e"], dz)
        out = []
        for name in self.nets:
            out += grads[name]
        return out

    def denormalize(self, values):
        return self.value_mean + self.value_std * values

    def update_value_stats(self, returns):
        """Fold a batch of raw returns (N, n_objectives) into the running
        statistics, rescaling each critic's output layer so its denormalized
        predictions are unchanged."""
        returns = np.asarray(returns, dtype=np.float64)
        n_old, n_new = float(self.value_count[0]), returns.shape[0]
        total = n_old + n_new
        mu_b, var_b = returns.mean(axis=0), returns.var(axis=0)
        old_mean, old_std = self.value_mean.copy(), self.value_std.copy()
        delta = mu_b - old_mean
        mean = old_mean + delta * n_new / total
        m2 = old_std ** 2 * n_old + var_b * n_new + delta ** 2 * n_old * n_new / total
        std = np.sqrt(np.maximum(m2 / total, 1e-8))
        for k, critic in enumerate(self.critics):
            critic.weights[-1][:, 0] *= old_std[k] / std[k]
            critic.biases[-1][0] = (old_std[k] * critic.biases[-1][0] + old_mean[k] - mean[k]) / std[k]
            critic.touch()
        self.value_mean[:], self.value_std[:], self.value_count[0] = mean, std, total

    def normalize_returns(self, returns):
        return (returns - self.value_mean) / self.value_std

    def _arrays(self):
        return {"log_std": self.log_std, "value_mean": self.value_mean,
                "value_std": self.value_std, "value_count": self.value_count}

    def to_bytes(self):
        return checkpoint_bytes(self.nets, self._arrays())

    def save(self, path):
        save_checkpoint(path, self.nets, self._arrays())

    @classmethod
    def from_bytes(cls, data):
        nets, arrays = parse_checkpoint(data)
        policy = cls.__new__(cls)
        policy.encoder = nets["encoder"]
        policy.discrete_head = nets.get("discrete_head")
        policy.continuous_head = nets["continuous_head"]
        policy.critics = [nets[k] for k in sorted(nets) if k.startswith("critic_")]
        policy.log_std = arrays["log_std"].copy()
        n_obj = len(policy.critics)
        policy.value_mean = arrays.get("value_mean", np.zeros(n_obj)).copy()
        policy.value_std = arrays.get("value_std", np.ones(n_obj)).copy()
        policy.value_count = arrays.get("value_count", np.zeros(1)).copy()
        return policy


def sample_actions(policy: HybridPolicy, X, rng, deterministic=False):
    """Sample (or take the mode of) both heads for a batch of states.

    Returns a dict with ``maneuver``, ``u`` (pre-squash), ``action``
    (tanh(u)), ``logp_d``, ``logp_c`` and denormalized ``values``.
    """
    fwd = policy.forward(X)
    n = X.shape[0]
    if policy.discrete_head is not None:
        logp_all = log_softmax(fwd["logits"])
        if deterministic:
            maneuver = np.argmax(logp_all, axis=-1)
        else:
            cdf = np.cumsum(np.exp(logp_all), axis=-1)
            draws = rng.random(n)[:, None]
            maneuver = np.minimum((draws > cdf).sum(axis=-1), logp_all.shape[1] - 1)
        logp_d = logp_all[np.arange(n), maneuver]
    else:
        maneuver = np.full(n, HOVER)
        logp_d = np.zeros(n)
    mean = fwd["mean"]
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    if deterministic:
        noise = np.zeros_like(mean)
    else:
        noise = rng.standard_normal(mean.shape)
    u = mean + np.exp(log_std) * noise
    return {
        "maneuver": maneuver, "u": u, "noise": noise, "action": np.tanh(u), "logp_d": logp_d,
        "logp_c": squashed_gaussian_log_prob(u, mean, log_std),
        "values": policy.denormalize(fwd["values"]),
    }


def act(policy: HybridPolicy, state, rng):
    """Sample one hybrid action batch: (action_dict, values, logp_d, logp_c)."""
    out = sample_actions(policy, np.atleast_2d(state), rng)
    return out, out["values"], out["logp_d"], out["logp_c"]


# -- rollout storage ---------------------------------------------------------

class RolloutBuffer:
    """Fixed-capacity, time-major on-policy storage for ``n_envs`` parallel envs."""

    def __init__(self, n_steps, n_envs, state_dim, n_continuous, n_objectives):
        self.n_steps, self.n_envs = n_steps, n_envs
        self.states = np.zeros((n_steps, n_envs, state_dim))
        self.maneuvers = np.zeros((n_steps, n_envs), dtype=np.int64)
        self.u = np.zeros((n_steps, n_envs, n_continuous))
        self.noise = np.zeros((n_steps, n_envs, n_continuous))
        self.rewards = np.zeros((n_steps, n_envs, n_objectives))
        self.values = np.zeros((n_steps, n_envs, n_objectives))
        self.logp_d = np.zeros((n_steps, n_envs))
        self.logp_c = np.zeros((n_steps, n_envs))
        self.dones = np.zeros((n_steps, n_envs), dtype=bool)
        self.pos = 0

    def __len__(self):
        return self.pos * self.n_envs

    @property
    def full(self):
        return self.pos == self.n_steps

    def add(self, state, maneuver, u, noise, reward, value, logp_d, logp_c, done):
        if self.full:
            raise RuntimeError("rollout buffer is full")
        t = self.pos
        self.states[t], self.maneuvers[t], self.u[t], self.noise[t] = state, maneuver, u, noise
        self.rewards[t] = np.reshape(reward, (self.n_envs, -1))
        self.values[t] = value
        self.logp_d[t], self.logp_c[t], self.dones[t] = logp_d, logp_c, done
        self.pos += 1

    def clear(self):
        self.pos = 0


@dataclass
class UpdateBatch:
    states: np.ndarray
    maneuvers: np.ndarray
    u: np.ndarray
    noise: np.ndarray        # standard-normal draws behind u (entropy estimate)
    logp_d: np.ndarray
    logp_c: np.ndarray
    advantages: np.ndarray   # (N, n_objectives), normalized per objective
    returns: np.ndarray      # (N, n_objectives)

    def __len__(self):
        return self.states.shape[0]

    def subset(self, idx):
        return UpdateBatch(self.states[idx], self.maneuvers[idx], self.u[idx], self.noise[idx],
                           self.logp_d[idx],
                           self.logp_c[idx], self.advantages[idx], self.returns[idx])


def prepare_batch(buffer: RolloutBuffer, last_values, gamma, lam):
    """Run GAE per objective, normalize advantages, flatten time and env axes."""
    if buffer.pos == 0:
        raise ValueError("cannot update from an empty rollout buffer")
    T = buffer.pos
    vals = np.concatenate([buffer.values[:T], last_values[None]], axis=0)
    dones = np.repeat(buffer.dones[:T, :, None], buffer.rewards.shape[-1], axis=-1)
    adv, ret = compute_gae(buffer.rewards[:T], vals, dones, gamma, lam)
    flat = lambda a: a.reshape((T * buffer.n_envs,) + a.shape[2:])
    adv = flat(adv)
    adv = np.column_stack([normalize_advantages(adv[:, k]) for k in range(adv.shape[1])])
    return UpdateBatch(flat(buffer.states[:T]), flat(buffer.maneuvers[:T]), flat(buffer.u[:T]),
                       flat(buffer.noise[:T]),
                       flat(buffer.logp_d[:T]), flat(buffer.logp_c[:T]), adv, flat(ret))


@dataclass
class LossTerms:
    total: float
    policy_d: float
    policy_c: float
    value: float
    entropy_d: float
    entropy_c: float
    approx_kl: float
    clip_frac_d: float
    clip_frac_c: float


def hppo_loss_and_grads(policy: HybridPolicy, batch: UpdateBatch, clip_eps, value_coef,
                        entropy_coef):
    """Combined H-PPO loss on one minibatch and its gradient for every parameter.

    total = L_clip(discrete) + L_clip(continuous) + c_v * MSE(values)
            - c_e * (H_discrete + H_continuous)

    Per-objective advantages are summed with equal weight.
    """
    n = len(batch)
    fwd = policy.forward(batch.states)
    adv = batch.advantages.sum(axis=1)

    # discrete head
    d_logits = None
    loss_d = ent_d = kl_d = cf_d = 0.0
    if policy.discrete_head is not None:
        logp_all = log_softmax(fwd["logits"])
        probs = np.exp(logp_all)
        logp_new = logp_all[np.arange(n), batch.maneuvers]
        loss_d, g_logp, cf_d = surrogate_loss(logp_new, batch.logp_d, adv, clip_eps)
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), batch.maneuvers] = 1.0
        d_logits = g_logp[:, None] * (onehot - probs)
        ent_each = -np.sum(probs * logp_all, axis=-1)
        ent_d = float(ent_each.mean())
        # dH/dz_j = -p_j (log p_j + H)
        d_logits += (entropy_coef / n) * probs * (logp_all + ent_each[:, None])
        log_ratio = logp_new - batch.logp_d
        kl_d = float(np.mean(np.expm1(log_ratio) - log_ratio))

    # continuous head
    mean = fwd["mean"]
    raw_log_std = policy.log_std
    log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
    inside = (raw_log_std >= LOG_STD_MIN) & (raw_log_std <= LOG_STD_MAX)
    std = np.exp(log_std)
    logp_c_new = squashed_gaussian_log_prob(batch.u, mean, log_std)
    loss_c, g_logp_c, cf_c = surrogate_loss(logp_c_new, batch.logp_c, adv, clip_eps)
    z = (batch.u - mean) / std
    d_mean = g_logp_c[:, None] * z / std
    d_log_std = np.sum(g_logp_c[:, None] * (z * z - 1.0), axis=0)
    ent_c, d_ent_mean, d_ent_log_std = squashed_entropy(mean, log_std, batch.noise)
    d_mean -= entropy_coef * d_ent_mean
    d_log_std -= entropy_coef * d_ent_log_std
    d_log_std = np.where(inside, d_log_std, 0.0)
    log_ratio_c = logp_c_new - batch.logp_c
    kl_c = float(np.mean(np.expm1(log_ratio_c) - log_ratio_c))

    # critics
    err = fwd["values"] - batch.returns
    loss_v = float(np.sum(np.mean(err * err, axis=0)))
    d_values = value_coef * 2.0 * err / n

    grads = policy.backward(fwd, d_logits, d_mean, d_values) + [d_log_std]
    total = loss_d + loss_c + value_coef * loss_v - entropy_coef * (ent_d + ent_c)
    terms = LossTerms(total, loss_d, loss_c, loss_v, ent_d, ent_c, kl_d + kl_c, cf_d, cf_c)
    return terms, grads


def hppo_loss(policy, batch, clip_eps, value_coef, entropy_coef):
    """Scalar combined loss (no gradients); used by finite-difference checks."""
    n = len(batch)
    fwd = policy.forward(batch.states)
    adv = batch.advantages.sum(axis=1)
    total = 0.0
    if policy.discrete_head is not None:
        logp_all = log_softmax(fwd["logits"])
        logp_new = logp_all[np.arange(n), batch.maneuvers]
        total += surrogate_loss(logp_new, batch.logp_d, adv, clip_eps)[0]
        total -= entropy_coef * float(categorical_entropy(fwd["logits"]).mean())
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    logp_c = squashed_gaussian_log_prob(batch.u, fwd["mean"], log_std)
    total += surrogate_loss(logp_c, batch.logp_c, adv, clip_eps)[0]
    total -= entropy_coef * squashed_entropy(fwd["mean"], log_std, batch.noise)[0]
    err = fwd["values"] - batch.returns
    total += value_coef * float(np.sum(np.mean(err * err, axis=0)))
    return total


@dataclass
class TrainStats:
    """Per-epoch averages from one update cycle."""

    total_loss: list = field(default_factory=list)
    policy_loss_d: list = field(default_factory=list)
    policy_loss_c: list = field(default_factory=list)
    value_loss: list = field(default_factory=list)
    entropy_d: list = field(default_factory=list)
    entropy_c: list = field(default_factory=list)
    approx_kl: list = field(default_factory=list)
    clip_frac_d: list = field(default_factory=list)
    clip_frac_c: list = field(default_factory=list)
    explained_variance: float = float("nan")

    def append(self, terms: list[LossTerms]):
        for name, key in (("total_loss", "total"), ("policy_loss_d", "policy_d"),
                          ("policy_loss_c", "policy_c"), ("value_loss", "value"),
                          ("entropy_d", "entropy_d"), ("entropy_c", "entropy_c"),
                          ("approx_kl", "approx_kl"), ("clip_frac_d", "clip_frac_d"),
                          ("clip_frac_c", "clip_frac_c")):
            getattr(self, name).append(float(np.mean([getattr(t, key) for t in terms])))

    def last(self, name):
        values = getattr(self, name)
        return values[-1] if values else 0.0


def update(policy: HybridPolicy, optimizer: Adam, batch: UpdateBatch, n_epochs, minibatch_size,
           clip_eps, value_coef, entropy_coef, rng) -> TrainStats:
    """Multi-epoch minibatch PPO update on one on-policy batch."""
    if len(batch) == 0:
        raise ValueError("cannot update from an empty batch")
    stats = TrainStats()
    n = len(batch)
    for _ in range(n_epochs):
        perm = rng.permutation(n)
        terms = []
        for start in range(0, n, minibatch_size):
            mb = batch.subset(perm[start:start + minibatch_size])
            t, grads = hppo_loss_and_grads(policy, mb, clip_eps, value_coef, entropy_coef)
            optimizer.step(grads)
            terms.append(t)
        stats.append(terms)
    return stats


# -- training curve ----------------------------------------------------------

CURVE_COLUMNS = ("episode", "cum_reward", "moving_avg", "clip_frac_d", "clip_frac_c",
                 "entropy_d", "entropy_c", "approx_kl")
EPISODE_COLUMNS = ("episode", "mean_sum_rate", "mean_effective_sum_rate", "oob_rate",
                   "sic_violation_rate", "violation_rate", "final_x", "final_y")


@dataclass
class TrainingCurve:
    rows: list = field(default_factory=list)
    episode_rows: list = field(default_factory=list)
    window: int = 50

    def add(self, cum_reward, stats: TrainStats | None, metrics: dict):
        ep = len(self.rows) + 1
        rewards = [r[1] for r in self.rows] + [float(cum_reward)]
        ma = float(np.mean(rewards[-self.window:]))
        s = stats or TrainStats()
        self.rows.append((ep, float(cum_reward), ma, s.last("clip_frac_d"), s.last("clip_frac_c"),
                          s.last("entropy_d"), s.last("entropy_c"), s.last("approx_kl")))
        self.episode_rows.append((ep, *(float(metrics[k]) for k in EPISODE_COLUMNS[1:])))

    @property
    def cum_rewards(self):
        return np.array([r[1] for r in self.rows])

    @property
    def moving_avg(self):
        return np.array([r[2] for r in self.rows])

    def column(self, name):
        if name in CURVE_COLUMNS:
            return np.array([r[CURVE_COLUMNS.index(name)] for r in self.rows])
        return np.array([r[EPISODE_COLUMNS.index(name)] for r in self.episode_rows])

    def plateau_window(self, fraction=0.2):
        n = len(self.rows)
        return slice(n - max(int(round(fraction * n)), 2), n)

    def plateau_value(self, name="cum_reward", fraction=0.2):
        return float(np.mean(self.column(name)[self.plateau_window(fraction)]))

    def has_plateaued(self, fraction=0.2, tolerance=0.02):
        """Linear drift of the moving average over the last ``fraction`` of
        episodes stays within ``tolerance`` of the window's mean level."""
        return plateau_detected(self.moving_avg, fraction, tolerance)


def plateau_detected(curve, fraction=0.2, tolerance=0.02):
    curve = np.asarray(curve, dtype=np.float64)
    k = max(int(round(fraction * len(curve))), 2)
    if len(curve) < k:
        return False
    tail = curve[-k:]
    x = np.arange(k, dtype=np.float64)
    slope = np.polyfit(x, tail, 1)[0]
    drift = abs(slope) * (k - 1)
    return bool(drift <= tolerance * abs(tail.mean()))


# -- estimator ---------------------------------------------------------------

class HPPO(BaseEstimator):
    """Hybrid-action PPO agent with a scikit-learn style interface.

    ``fit(env)`` trains on a :class:`CompNomaEnv` (the variant and reward
    design are read from the env's config); ``predict(X)`` returns the
    deterministic hybrid action for a batch of states.

    Args:
        n_episodes: Training budget in environment episodes.
        rollout_steps: Transitions per update cycle, summed over parallel envs.
        minibatch_size, n_epochs: PPO update schedule.
        clip_eps: Probability-ratio clip range.
        gamma, gae_lambda: Discount and GAE parameters.
        learning_rate, max_grad_norm: Adam step size and global-norm clip.
        value_coef, entropy_coef: Loss weights.
        encoder_widths, head_widths, critic_widths: Hidden layer widths.
        init_log_std: Initial exploration log-std of the continuous head.
        ma_window: Moving-average window of the training curve.
        random_state: Seed for initialization, sampling and env streams.
    """

    def __init__(self, n_episodes=2000, rollout_steps=2048, minibatch_size=64, n_epochs=10,
                 clip_eps=0.2, gamma=0.99, gae_lambda=0.95, learning_rate=3e-4,
                 max_grad_norm=0.5, value_coef=0.5, entropy_coef=0.01, encoder_widths=(64, 64),
                 head_widths=(64,), critic_widths=(64, 64), init_log_std=float(np.log(0.5)),
                 ma_window=50, random_state=None):
        self.n_episodes = n_episodes
        self.rollout_steps = rollout_steps
        self.minibatch_size = minibatch_size
        self.n_epochs = n_epochs
        self.clip_eps = clip_eps
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.learning_rate = learning_rate
        self.max_grad_norm = max_grad_norm
        self.value_coef = value_coef
        self.entropy_coef = entropy_coef
        self.encoder_widths = encoder_widths
        self.head_widths = head_widths
        self.critic_widths = critic_widths
        self.init_log_std = init_log_std
        self.ma_window = ma_window
        self.random_state = random_state

    def _validate_params(self, env):
        try:
            for name in ("n_episodes", "rollout_steps", "minibatch_size", "n_epochs"):
                check_positive_int(getattr(self, name), name)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 < self.clip_eps:
            raise ConfigError(f"clip_eps must be positive, got {self.clip_eps}")
        if self.rollout_steps % env.n_envs:
            raise ConfigError(f"rollout_steps ({self.rollout_steps}) must be a multiple of "
                              f"n_envs ({env.n_envs})")

    def _init_policy(self, env, rng):
        n_obj = 3 if env.config.reward_design == "MULTI" else 1
        self.n_features_in_ = env.state_dim
        self.continuous_mask_ = env.controlled_mask
        self.n_objectives_ = n_obj
        self.policy_ = HybridPolicy(
            env.state_dim, N_MANEUVERS if env.has_maneuver else 0, int(self.continuous_mask_.sum()),
            n_obj, self.encoder_widths, self.head_widths, self.critic_widths, self.init_log_std, rng)

    def _full_continuous(self, a):
        full = np.zeros((a.shape[0], self.continuous_mask_.size))
        full[:, self.continuous_mask_] = a
        return full

    def fit(self, env: CompNomaEnv, y=None, checkpoint_path=None, callback=None):
        """Train on ``env`` until ``n_episodes`` episodes have completed.

        Args:
            env: Vectorized environment; its ``n_envs`` instances run in lockstep.
            checkpoint_path: Optional path for the final policy checkpoint.
            callback: Optional ``callback(agent, update_index, stats)`` after each update.
        """
        self._validate_params(env)
        seeds = np.random.SeedSequence(self.random_state).spawn(3)
        init_rng, sample_rng, update_rng = (np.random.default_rng(s) for s in seeds)
        env_seed = int(seeds[0].generate_state(1)[0])
        self._init_policy(env, init_rng)
        policy = self.policy_
        optimizer = Adam(policy.parameters(), lr=self.learning_rate, clip_norm=self.max_grad_norm,
                         owners=policy.nets.values())
        n_steps = self.rollout_steps // env.n_envs
        buffer = RolloutBuffer(n_steps, env.n_envs, env.state_dim,
                               policy.continuous_head.out_dim, self.n_objectives_)
        curve = TrainingCurve(window=self.ma_window)
        self.update_stats_ = []
        stats = None

        state = env.reset(seed=env_seed)
        ep = _EpisodeAccumulator(env.n_envs)
        n_updates = 0
        while len(curve.rows) < self.n_episodes:
            out = sample_actions(policy, state, sample_rng)
            action = HybridAction(out["maneuver"], self._full_continuous(out["action"]))
            step = env.step(action)
            buffer.add(state, out["maneuver"], out["u"], out["noise"], step.reward, out["values"],
                       out["logp_d"], out["logp_c"], step.done)
            ep.add(step)
            state = step.next_state
            if step.done:
                for cum, metrics in ep.finish(step.positions, env.topology):
                    if len(curve.rows) < self.n_episodes:
                        curve.add(cum, stats, metrics)
                state = env.reset()
            if buffer.full and len(curve.rows) < self.n_episodes:
                last_values = policy.denormalize(policy.forward(state)["values"])
                batch = prepare_batch(buffer, last_values, self.gamma, self.gae_lambda)
                ev = explained_variance(buffer.values[:buffer.pos].reshape(batch.returns.shape),
                                        batch.returns)
                policy.update_value_stats(batch.returns)
                batch.returns = policy.normalize_returns(batch.returns)
                stats = update(policy, optimizer, batch, self.n_epochs, self.minibatch_size,
                               self.clip_eps, self.value_coef, self.entropy_coef, update_rng)
                stats.explained_variance = ev
                buffer.clear()
                n_updates += 1
                self.update_stats_.append(stats)
                if callback is not None:
                    callback(self, n_updates, stats)
                logger.debug("update %d: episodes=%d ma=%.4f kl=%.4f", n_updates, len(curve.rows),
                             curve.rows[-1][2] if curve.rows else float("nan"),
                             stats.last("approx_kl"))
        buffer.clear()
        self.curve_ = curve
        self.n_updates_ = n_updates
        if checkpoint_path is not None:
            policy.save(checkpoint_path)
        return self

    def _check_fitted(self):
        if not hasattr(self, "policy_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("HPPO instance is not fitted yet; call fit() first")

    def predict(self, X):
        """Deterministic hybrid action (argmax maneuver, tanh of the mean)."""
        self._check_fitted()
        X = check_states(X, self.n_features_in_)
        out = sample_actions(self.policy_, X, None, deterministic=True)
        return HybridAction(out["maneuver"], self._full_continuous(out["action"]))

    def sample(self, X, rng):
        self._check_fitted()
        X = check_states(X, self.n_features_in_)
        out = sample_actions(self.policy_, X, rng)
        return HybridAction(out["maneuver"], self._full_continuous(out["action"]))

    def value(self, X):
        self._check_fitted()
        fwd = self.policy_.forward(check_states(X, self.n_features_in_))
        return self.policy_.denormalize(fwd["values"])

    def load_policy(self, path_or_bytes, env: CompNomaEnv):
        """Attach a checkpointed policy; ``env`` supplies state/action layout."""
        data = path_or_bytes
        if not isinstance(data, (bytes, bytearray)):
            with open(path_or_bytes, "rb") as fh:
                data = fh.read()
        self.policy_ = HybridPolicy.from_bytes(data)
        self.n_features_in_ = env.state_dim
        self.continuous_mask_ = env.controlled_mask
        self.n_objectives_ = len(self.policy_.critics)
        return self


class _EpisodeAccumulator:
    """Tracks per-env episode sums between resets."""

    def __init__(self, n_envs):
        self.n_envs = n_envs
        self._reset()

    def _reset(self):
        self.cum = np.zeros(self.n_envs)
        self.rate = np.zeros(self.n_envs)
        self.eff = np.zeros(self.n_envs)
        self.oob = np.zeros(self.n_envs)
        self.sic = np.zeros(self.n_envs)
        self.any = np.zeros(self.n_envs)
        self.steps = 0

    def add(self, step):
        r = np.asarray(step.reward)
        self.cum += r.sum(axis=-1) if r.ndim == 2 else r
        bw = step.report.bandwidth_hz
        self.rate += step.report.sum_rate / bw
        self.eff += step.report.effective_sum_rate / bw
        self.oob += step.violations.out_of_area
        self.sic += step.violations.sic_violation
        self.any += step.violations.any
        self.steps += 1

    def finish(self, positions, topology):
        n = max(self.steps, 1)
        out = []
        for e in range(self.n_envs):
            out.append((self.cum[e], {
                "mean_sum_rate": self.rate[e] / n, "mean_effective_sum_rate": self.eff[e] / n,
                "oob_rate": self.oob[e] / n, "sic_violation_rate": self.sic[e] / n,
                "violation_rate": self.any[e] / n,
                "final_x": positions[e, 0], "final_y": positions[e, 1],
            }))
        self._reset()
        return out
