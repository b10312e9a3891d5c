"""Adaptive gradient updates with decoupled weight decay and per-group rates."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


class AdamW:
    """Adam with decoupled weight decay over a dict of named arrays.

    Each parameter name has its own learning rate, which is how the encoder
    and CRF groups get their separate rates while sharing one step counter.
    Updates are in place and deterministic.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rates: dict[str, float],
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        missing = set(params) - set(learning_rates)
        if missing:
            raise ConfigError(f"no learning rate for parameters: {sorted(missing)}")
        if any(lr <= 0 for lr in learning_rates.values()):
            raise ConfigError("learning rates must be > 0")
        self.params = params
        self.lr = dict(learning_rates)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ConfigError(f"gradient shape mismatch for {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p
            p -= self.lr[name] * update


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint norm is at most max_norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total
