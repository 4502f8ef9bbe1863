"""Adam optimizer over named parameters."""
from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from .tensor import Parameter


class Adam:
    """Standard Adam with bias correction.

    A step where any parameter gradient contains a non-finite value is
    skipped entirely (no parameter moves, no moment update); the event is
    counted in ``skipped_steps`` and reported through ``warnings``.
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self.skipped_steps = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> bool:
        """Apply one update; returns False if the step was skipped."""
        grads = []
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                self.skipped_steps += 1
                warnings.warn(f"non-finite gradient in {p.name}; step skipped", RuntimeWarning)
                return False
            grads.append(g)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True
