"""SGD with step decay and Adam, updating :class:`Parameter` values in place."""

import numpy as np

from ..errors import ConfigError, TrainingError


class Optimizer:
    """Base class. ``decay`` shrinks the learning rate as lr / (1 + decay * t)."""

    kind = None

    def __init__(self, params, lr=1e-3, decay=0.0):
        if not lr > 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if decay < 0:
            raise ConfigError(f"decay must be nonnegative, got {decay}")
        self.params = list(params)
        self.lr = float(lr)
        self.decay = float(decay)
        self.t = 0

    def current_lr(self):
        return self.lr / (1.0 + self.decay * self.t)

    def step(self, grads):
        for p in self.params:
            if p.name not in grads:
                raise ConfigError(f"missing gradient for {p.name}")
            if not np.all(np.isfinite(grads[p.name])):
                raise TrainingError(
                    f"non-finite gradient for {p.name} at step {self.t + 1}",
                    param=p.name, step=self.t + 1)
        lr = self.current_lr()
        self.t += 1
        for p in self.params:
            self._update(p, grads[p.name], lr)

    def _update(self, p, g, lr):
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd"

    def _update(self, p, g, lr):
        p.value -= lr * g


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr=1e-3, decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr, decay)
        self.betas = betas
        self.eps = eps
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def _update(self, p, g, lr):
        b1, b2 = self.betas
        m = self.m[p.name]
        v = self.v[p.name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** self.t)
        v_hat = v / (1 - b2 ** self.t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind, params, lr=1e-3, decay=0.0):
    if kind == "sgd":
        return SGD(params, lr=lr, decay=decay)
    if kind == "adam":
        return Adam(params, lr=lr, decay=decay)
    raise ConfigError(f"unknown optimizer {kind!r}")
