"""Fully connected tanh networks with hand-written reverse-mode gradients."""

from __future__ import annotations

import numpy as np


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


class MLP:
    """``sizes = (n_in, h1, ..., n_out)``; tanh on hidden layers, linear output.

    Parameters live in ``params`` as ``[W0, b0, W1, b1, ...]`` with ``W`` of shape
    ``(fan_in, fan_out)``.
    """

    def __init__(self, sizes, rng: np.random.Generator, out_gain: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        self.params: list[np.ndarray] = []
        n = len(self.sizes) - 1
        for i in range(n):
            gain = out_gain if i == n - 1 else np.sqrt(2.0)
            self.params.append(orthogonal(rng, self.sizes[i], self.sizes[i + 1], gain))
            self.params.append(np.zeros(self.sizes[i + 1]))

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x: np.ndarray):
        """Output and the activations needed by :meth:`backward`."""
        acts = [x]
        h = x
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W + b
            h = np.tanh(z) if i < self.n_layers - 1 else z
            acts.append(h)
        return h, acts

    def backward(self, acts, d_out: np.ndarray) -> list[np.ndarray]:
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        delta = d_out
        for i in reversed(range(self.n_layers)):
            h_in = acts[i]
            W = self.params[2 * i]
            grads[2 * i] = h_in.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ W.T) * (1.0 - acts[i] ** 2)
        return grads

    def n_params(self) -> int:
        return sum(p.size for p in self.params)
