"""Gaussian actor-critic with a tanh-squashed action.

The policy samples ``u ~ N(mu(s), sigma)`` and acts with ``a = tanh(u)``, so
actions always lie in (-1, 1). Log-probabilities are taken in ``u`` space;
the squashing Jacobian depends only on ``u`` and cancels in probability
ratios, so PPO works with stored ``u`` directly.

Exploration noise may be temporally correlated: the unit noise follows an
AR(1) process ``e_t = rho e_{t-1} + sqrt(1 - rho^2) xi_t``, so each sample is
Gaussian given the previous noise value, which is stored with the sample.
With ``rho = 0`` this is the ordinary independent Gaussian policy.
"""

from __future__ import annotations

import math

import numpy as np

from .nn import MLP

LOG_2PI = math.log(2.0 * math.pi)


class ActorCritic:
    def __init__(
        self,
        obs_size: int,
        hidden=(256, 256),
        rng: np.random.Generator | None = None,
        log_std_init: float = -0.5,
        log_std_bounds: tuple[float, float] = (-5.0, 1.0),
        mean_bias: float = 0.0,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_size = int(obs_size)
        self.hidden = tuple(int(h) for h in hidden)
        self.pi = MLP((obs_size, *self.hidden, 1), rng, out_gain=0.01)
        self.v = MLP((obs_size, *self.hidden, 1), rng, out_gain=1.0)
        self.pi.params[-1][:] = mean_bias
        self.log_std = np.full(1, float(log_std_init))
        self.log_std_bounds = (float(log_std_bounds[0]), float(log_std_bounds[1]))

    # parameters are exposed as one flat list: policy trunk, log-std, value trunk

    @property
    def params(self) -> list[np.ndarray]:
        return [*self.pi.params, self.log_std, *self.v.params]

    def set_params(self, values) -> None:
        values = list(values)
        if len(values) != len(self.params):
            raise ValueError(f"expected {len(self.params)} parameter arrays, got {len(values)}")
        for dst, src in zip(self.params, values):
            if dst.shape != np.shape(src):
                raise ValueError(f"shape mismatch {dst.shape} vs {np.shape(src)}")
            dst[...] = src

    def param_names(self) -> list[str]:
        names = []
        for i in range(self.pi.n_layers):
            names += [f"pi.W{i}", f"pi.b{i}"]
        names.append("log_std")
        for i in range(self.v.n_layers):
            names += [f"v.W{i}", f"v.b{i}"]
        return names

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def clamped_log_std(self) -> np.ndarray:
        lo, hi = self.log_std_bounds
        return np.clip(self.log_std, lo, hi)

    # -- inference ------------------------------------------------------------

    def mean(self, obs: np.ndarray) -> np.ndarray:
        mu, _ = self.pi.forward(np.atleast_2d(obs))
        return mu[:, 0]

    def value(self, obs: np.ndarray) -> np.ndarray:
        v, _ = self.v.forward(np.atleast_2d(obs))
        return v[:, 0]

    def log_prob(self, obs: np.ndarray, u: np.ndarray, prev_noise=0.0, rho: float = 0.0) -> np.ndarray:
        mu = self.mean(obs)
        return gaussian_log_prob(u, mu, self.clamped_log_std()[0], prev_noise, rho)

    def act(self, obs: np.ndarray, rng: np.random.Generator, prev_noise=None, rho: float = 0.0):
        """Sampled pre-squash ``u``, action ``tanh(u)``, log-prob of ``u``, value and the unit noise used."""
        obs = np.atleast_2d(obs)
        mu = self.mean(obs)
        log_std = self.clamped_log_std()[0]
        prev = np.zeros_like(mu) if prev_noise is None else np.asarray(prev_noise, dtype=float)
        noise = rho * prev + math.sqrt(1.0 - rho * rho) * rng.standard_normal(mu.shape)
        u = mu + np.exp(log_std) * noise
        return u, np.tanh(u), gaussian_log_prob(u, mu, log_std, prev, rho), self.value(obs), noise

    def act_deterministic(self, obs: np.ndarray) -> np.ndarray:
        return np.tanh(self.mean(obs))


def noise_z(u, mu, log_std, prev_noise=0.0, rho: float = 0.0):
    """Standardized innovation of ``u`` given the previous unit noise."""
    k = math.sqrt(1.0 - rho * rho)
    return (u - mu) * np.exp(-log_std) / k - rho * np.asarray(prev_noise) / k


def gaussian_log_prob(u, mu, log_std, prev_noise=0.0, rho: float = 0.0):
    z = noise_z(u, mu, log_std, prev_noise, rho)
    return -0.5 * z * z - log_std - 0.5 * math.log(1.0 - rho * rho) - 0.5 * LOG_2PI


def gaussian_entropy(log_std, rho: float = 0.0) -> float:
    """Entropy of one sample given the previous noise value."""
    return float(0.5 + 0.5 * LOG_2PI + log_std + 0.5 * math.log(1.0 - rho * rho))
