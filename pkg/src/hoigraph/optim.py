"""Adaptive-moment gradient descent over a ParamStore."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tape import ParamStore


class AdamOptimizer:
    """First/second-moment adaptive updates with bias correction."""

    def __init__(self, params: ParamStore, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        if learning_rate < 0:
            raise ContractError(f"learning_rate must be nonnegative, got {learning_rate}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ContractError("beta1 and beta2 must lie in [0, 1)")
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self._step_count = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        """Apply one update from the gradients currently held in the store."""
        self._step_count += 1
        t = self._step_count
        scale = self.learning_rate * np.sqrt(1.0 - self.beta2 ** t) / (1.0 - self.beta1 ** t)
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p._set_data(p.data - scale * m / (np.sqrt(v) + self.epsilon))
