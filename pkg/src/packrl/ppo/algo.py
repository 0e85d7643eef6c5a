"""Core PPO arithmetic: advantages, the clipped loss with its gradients, Adam and the learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .policy import ActorCritic, gaussian_entropy, gaussian_log_prob, noise_z


class TrainingDiverged(FloatingPointError):
    """A loss or gradient became non-finite."""


def gae(rewards, values, dones, last_value, discount: float, lam: float):
    """Generalized advantage estimates and returns.

    ``rewards``, ``values`` and ``dones`` are aligned along axis 0 (time);
    ``dones[t]`` marks that the episode ended after step ``t``, which cuts both
    the bootstrap and the advantage recursion. ``last_value`` bootstraps the
    state after the final step.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not rewards.shape == values.shape == dones.shape:
        raise ValueError(f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    last_value = np.asarray(last_value, dtype=float)
    if last_value.shape != rewards.shape[1:]:
        raise ValueError(f"last_value shape {last_value.shape} does not match {rewards.shape[1:]}")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in reversed(range(T)):
        next_value = last_value if t == T - 1 else values[t + 1]
        alive = 1.0 - dones[t]
        delta = rewards[t] + discount * next_value * alive - values[t]
        running = delta + discount * lam * alive * running
        adv[t] = running
    return adv, adv + values


def lr_schedule(step: int, total_steps: int, lr0: float) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 - step / total_steps)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


class ReturnScaler:
    """Divides rewards by the running std of each environment's discounted return.

    Keeps value targets near unit scale whatever the penalty weights are. The
    running statistics use the parallel-variance update over every reward seen.
    """

    def __init__(self, n_envs: int, discount: float, eps: float = 1e-8):
        self.discount = discount
        self.eps = eps
        self.ret = np.zeros(n_envs)
        self.count = eps
        self.mean = 0.0
        self.var = 1.0

    def _update(self, x: np.ndarray) -> None:
        n = x.size
        b_mean, b_var = float(x.mean()), float(x.var())
        delta = b_mean - self.mean
        total = self.count + n
        self.mean += delta * n / total
        m2 = self.var * self.count + b_var * n + delta**2 * self.count * n / total
        self.var = m2 / total
        self.count = total

    def __call__(self, rewards: np.ndarray, dones: np.ndarray) -> np.ndarray:
        self.ret = self.ret * self.discount + rewards
        self._update(self.ret)
        self.ret = np.where(dones, 0.0, self.ret)
        return rewards / np.sqrt(self.var + self.eps)


@dataclass
class Batch:
    obs: np.ndarray
    u: np.ndarray  # pre-squash action
    logp: np.ndarray  # log-prob of u under the behaviour policy
    adv: np.ndarray
    returns: np.ndarray
    prev_noise: np.ndarray | None = None  # unit exploration noise of the previous step

    def __len__(self) -> int:
        return len(self.u)

    def take(self, idx) -> "Batch":
        prev = None if self.prev_noise is None else self.prev_noise[idx]
        return Batch(self.obs[idx], self.u[idx], self.logp[idx], self.adv[idx], self.returns[idx], prev)


@dataclass
class LossInfo:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float


def ppo_loss(
    model: ActorCritic, batch: Batch, clip: float, value_coef: float, entropy_coef: float, rho: float = 0.0
):
    """Clipped-surrogate loss and its gradient for every model parameter.

    loss = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) + c_v mean((V - R)^2) - c_e H

    ``rho`` is the exploration-noise correlation the batch was sampled with.
    """
    n = len(batch)
    mu, pi_acts = model.pi.forward(batch.obs)
    mu = mu[:, 0]
    lo, hi = model.log_std_bounds
    raw_log_std = model.log_std[0]
    log_std = min(max(raw_log_std, lo), hi)
    prev = 0.0 if batch.prev_noise is None else batch.prev_noise
    logp = gaussian_log_prob(batch.u, mu, log_std, prev, rho)
    ratio = np.exp(logp - batch.logp)
    A = batch.adv
    surr1 = ratio * A
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * A
    policy_loss = -np.mean(np.minimum(surr1, surr2))

    v, v_acts = model.v.forward(batch.obs)
    v = v[:, 0]
    err = v - batch.returns
    value_loss = np.mean(err * err)
    entropy = gaussian_entropy(log_std, rho)
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    if not np.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss: policy {policy_loss}, value {value_loss}, log_std {raw_log_std}, "
            f"max |ratio| {np.max(np.abs(ratio)) if ratio.size else 0.0}"
        )

    # d loss / d logp: only samples whose unclipped term is the minimum carry gradient
    active = surr1 <= surr2
    d_logp = np.where(active, -A * ratio, 0.0) / n
    # z is the standardized innovation; w = (u - mu) / (sigma k) is its mean-dependent part
    k = math.sqrt(1.0 - rho * rho)
    z = noise_z(batch.u, mu, log_std, prev, rho)
    w = (batch.u - mu) * np.exp(-log_std) / k
    d_mu = d_logp * z * np.exp(-log_std) / k
    g_pi = model.pi.backward(pi_acts, d_mu[:, None])
    inside = lo < raw_log_std < hi
    d_log_std = np.sum(d_logp * (z * w - 1.0)) - entropy_coef if inside else 0.0
    g_v = model.v.backward(v_acts, (value_coef * 2.0 * err / n)[:, None])
    grads = [*g_pi, np.array([d_log_std]), *g_v]

    log_ratio = logp - batch.logp
    info = LossInfo(
        loss=float(loss),
        policy_loss=float(policy_loss),
        value_loss=float(value_loss),
        entropy=entropy,
        approx_kl=float(np.mean((ratio - 1.0) - log_ratio)),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > clip)),
    )
    return loss, grads, info


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float) -> None:
    """In-place Adam update with bias correction."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


__all__ = [
    "AdamState",
    "Batch",
    "LossInfo",
    "TrainingDiverged",
    "adam_step",
    "clip_grad_norm",
    "gae",
    "lr_schedule",
    "normalize_advantages",
    "ppo_loss",
]
