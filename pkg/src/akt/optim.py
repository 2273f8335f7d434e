"""Adam with bias correction and global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, NumericsError


def clip_gradient_norm(grads, max_norm):
    """Scale a set of gradient arrays so their global L2 norm is <= max_norm.

    Returns the pre-clip norm. ``max_norm=inf`` leaves everything untouched.
    Scaling happens in place.
    """
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if math.isfinite(max_norm) and total > max_norm > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


class Adam:
    """Adam over a named parameter dict.

    State per parameter: first/second moment arrays shaped like the parameter
    plus a shared step counter. Clipping (when the max norm is finite) runs
    before the moment updates.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 max_grad_norm=math.inf):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericsError(f"non-finite gradient for parameter {name!r}")
            grads[name] = np.array(g, copy=True)

        clip_gradient_norm(list(grads.values()), self.max_grad_norm)

        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * update.astype(p.data.dtype, copy=False)
